"""Exact enumeration oracle for small masked-diffusion instances.

Conventions
-----------
* A cell mask ``M`` is an integer bitmask over the ``n = L * ell`` cells of a
  sub-token grid (cell ``i * ell + j`` is bit ``i * ell + j``); a set bit means
  the cell is *unmasked*. ``P_a(M) = a**|M| * (1 - a)**(n - |M|)``.
* ``S[M]`` is the entropy (nats) of the data marginal over the cells in ``M``.
  Everything the optimal loss depends on is a polynomial in ``a`` with
  coefficients built from ``S``.
* Entropies are reported in bits, losses (NELBO) in nats.
"""
from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import backend
from .errors import BudgetExceeded, IncompatibleBases, NotNormalized, RouteMismatch
from .kernels import LINEAR, MASK, alpha_value
from .subtok import base_for

DEFAULT_BUDGET = 4096
PAIR_LIMIT = 1 << 24
LN2 = math.log(2.0)


def enumeration_budget(budget=None):
    if budget is not None:
        return int(budget)
    env = os.environ.get("PRIMELAB_BUDGET")
    return int(env) if env else DEFAULT_BUDGET


def h_nats(a):
    """Binary entropy -(1-a)ln(1-a) - a ln a, continuous at 0 and 1."""
    a = float(a)
    out = 0.0
    if 0.0 < a < 1.0:
        out = -(1.0 - a) * math.log1p(-a) - a * math.log(a)
    return out


def h_bits(a):
    return h_nats(a) / LN2


def entropy_bits(p):
    p = np.asarray(p, dtype=np.float64)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def zipf_probs(V, exponent=1.0):
    w = 1.0 / np.arange(1, V + 1, dtype=np.float64) ** exponent
    return w / w.sum()


@dataclass(frozen=True, eq=False)
class TokenDist:
    """Explicit distribution over ``X^L`` stored as a flat C-ordered table."""

    V: int
    L: int
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if p.shape[0] != self.V**self.L:
            raise ValueError(f"table has {p.shape[0]} entries, expected V^L = {self.V ** self.L}")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise NotNormalized("probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise NotNormalized(f"probabilities sum to {p.sum():.15g}")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def single(cls, p):
        p = np.asarray(p, dtype=np.float64)
        return cls(p.shape[0], 1, p / p.sum())

    @classmethod
    def product(cls, p, L):
        p = np.asarray(p, dtype=np.float64)
        p = p / p.sum()
        table = p
        for _ in range(L - 1):
            table = np.multiply.outer(table, p)
        return cls(p.shape[0], L, table.reshape(-1))

    @classmethod
    def markov(cls, init, trans, L):
        init = np.asarray(init, dtype=np.float64)
        trans = np.asarray(trans, dtype=np.float64)
        table = init / init.sum()
        trans = trans / trans.sum(axis=1, keepdims=True)
        for _ in range(L - 1):
            table = table[..., :, None] * trans[(None,) * (table.ndim - 1)]
        table = table.reshape(-1)
        return cls(init.shape[0], L, table / table.sum())

    @classmethod
    def uniform(cls, V, L=1):
        return cls(V, L, np.full(V**L, 1.0 / V**L))

    def check_budget(self, budget=None):
        limit = enumeration_budget(budget)
        if self.V**self.L > limit:
            raise BudgetExceeded(f"V^L = {self.V ** self.L} exceeds enumeration budget {limit}")

    def support(self):
        """``(sequences (K, L), probs (K,))`` over the positive-probability states."""
        idx = np.flatnonzero(self.probs > 0)
        seqs = np.stack(np.unravel_index(idx, (self.V,) * self.L), axis=1) if self.L else idx[:, None]
        return seqs.astype(np.int64), self.probs[idx]

    def entropy_nats(self):
        p = self.probs[self.probs > 0]
        return float(-(p * np.log(p)).sum())

    def describe(self):
        return {"V": self.V, "L": self.L}


@dataclass(frozen=True)
class Quadrature:
    """Gauss-Legendre rule on (0, 1) in the substituted variable s = alpha."""

    nodes: int = 64

    @cached_property
    def rule(self):
        x, w = np.polynomial.legendre.leggauss(self.nodes)
        return (x + 1.0) / 2.0, w / 2.0

    def integrate(self, f):
        s, w = self.rule
        return float(sum(wi * f(si) for si, wi in zip(s, w)))


class Instance:
    """A token distribution pushed through a subtokenizer.

    Holds the support's digit codes and the subset-entropy table; every
    oracle quantity is derived from these.
    """

    def __init__(self, q: TokenDist, st, budget=None):
        if q.V != st.vocab_size:
            raise ValueError(f"TokenDist V={q.V} != subtokenizer V={st.vocab_size}")
        q.check_budget(budget)
        self.q = q
        self.st = st
        self.L, self.ell, self.b = q.L, st.ell, st.base
        self.n = self.L * self.ell
        if self.n > 24:
            raise BudgetExceeded(f"{self.n} cells is beyond exact enumeration")
        seqs, probs = q.support()
        self.seqs = seqs
        self.p = probs
        self.codes = st.digits[seqs].reshape(len(probs), self.n)
        self.popcount = np.array([bin(m).count("1") for m in range(1 << self.n)], dtype=np.int64)

    @cached_property
    def code_index(self):
        weights = self.b ** np.arange(self.n - 1, -1, -1, dtype=np.int64)
        return self.codes @ weights

    @cached_property
    def subset_entropy(self):
        """S[M] in nats via the compiled lattice kernel."""
        size = self.b**self.n
        if size > (1 << 26):
            raise BudgetExceeded(f"code space b^n = {size} too large for the subset lattice")
        joint = np.zeros(size, dtype=np.float64)
        np.add.at(joint, self.code_index, self.p)
        return backend.subset_entropies(joint, self.n, self.b)

    @cached_property
    def data_entropy(self):
        return float(-(self.p * np.log(self.p)).sum())

    def mask_probs(self, a):
        k = self.popcount
        return a**k * (1.0 - a) ** (self.n - k)

    def _projection_keys(self, mask, codes=None):
        codes = self.codes if codes is None else codes
        keep = [c for c in range(self.n) if (mask >> c) & 1]
        if not keep:
            return np.zeros(codes.shape[0], dtype=np.int64)
        w = self.b ** np.arange(len(keep) - 1, -1, -1, dtype=np.int64)
        return codes[:, keep] @ w

    def pair_log_marginals(self):
        """e[M] = E_q[log q(y0 restricted to M)] by explicit pair enumeration."""
        if self.p.shape[0] * (1 << self.n) > PAIR_LIMIT:
            raise BudgetExceeded("pair enumeration over (y0, mask) exceeds the pair limit")
        e = np.empty(1 << self.n)
        for mask in range(1 << self.n):
            keys = self._projection_keys(mask)
            _, inv = np.unique(keys, return_inverse=True)
            inv = np.asarray(inv).reshape(-1)
            totals = np.bincount(inv, weights=self.p)
            e[mask] = float(np.dot(self.p, np.log(totals[inv])))
        return e

    # -- per-alpha quantities from the subset table --------------------------
    def entropy_yt_fast(self, a):
        """H(y_t) in nats = n*h(a) + sum_M P_a(M) S[M]."""
        return self.n * h_nats(a) + float(np.dot(self.mask_probs(a), self.subset_entropy))

    def joint_entropy_y0_yt(self, a):
        """H(y_0, y_t) = H(y_0) + H(y_t | y_0), the latter being n*h(a)."""
        return self.data_entropy + self.n * h_nats(a)

    def cross_entropy_joint(self, a):
        S = self.subset_entropy
        return float(S[-1] - np.dot(self.mask_probs(a), S))

    @cached_property
    def _factorized_terms(self):
        S = self.subset_entropy
        full = (1 << self.n) - 1
        out = np.zeros(1 << self.n)
        for mask in range(full):
            for c in range(self.n):
                if not (mask >> c) & 1:
                    out[mask] += S[mask | (1 << c)] - S[mask]
        return out

    def cross_entropy_factorized(self, a):
        """Sum over masked cells of the per-cell posterior entropy, averaged over masks."""
        return float(np.dot(self.mask_probs(a), self._factorized_terms))


def instance(q, st, budget=None):
    return Instance(q, st, budget)


# -- entropies --------------------------------------------------------------
def entropy_yt(q, st, a, budget=None):
    """H(y_t) in bits by summing q(y0) q_a(yt | y0) over every (y0, mask) pair."""
    inst = Instance(q, st, budget)
    if not 0.0 <= a <= 1.0:
        raise ValueError("alpha outside [0, 1]")
    n, b = inst.n, inst.b
    if (b + 1) ** n >= 1 << 62:
        raise BudgetExceeded("grid state space does not fit a 64-bit key")
    radix = (b + 1) ** np.arange(n - 1, -1, -1, dtype=np.int64)
    keys, probs = [], []
    for mask in range(1 << n):
        pm = a ** inst.popcount[mask] * (1.0 - a) ** (n - inst.popcount[mask])
        if pm == 0.0:
            continue
        cells = inst.codes.copy()
        for c in range(n):
            if not (mask >> c) & 1:
                cells[:, c] = b
        keys.append(cells @ radix)
        probs.append(inst.p * pm)
    keys = np.concatenate(keys)
    probs = np.concatenate(probs)
    _, inv = np.unique(keys, return_inverse=True)
    totals = np.bincount(np.asarray(inv).reshape(-1), weights=probs)
    return entropy_bits(totals)


def entropy_bound(L, ell, b, a):
    """L*ell*(h(a) + a*log2 b) in bits."""
    return L * ell * (h_bits(a) + a * math.log2(b))


def expected_log_kernel(q, st, a, budget=None):
    """E[log q_a(y_t | y_0)] in nats by pair enumeration."""
    inst = Instance(q, st, budget)
    total = 0.0
    for mask in range(1 << inst.n):
        k = inst.popcount[mask]
        pm = a**k * (1.0 - a) ** (inst.n - k)
        if pm > 0.0:
            total += float(inst.p.sum()) * pm * math.log(pm)
    return total


def expected_log_kernel_closed_form(L, ell, a):
    terms = 0.0
    if 0.0 < a < 1.0:
        terms = (1.0 - a) * math.log1p(-a) + a * math.log(a)
    return L * ell * terms


def cell_entropy_yt(q, st, a, row, col, budget=None):
    """H(y_t^{row,col}) in nats by enumerating masks and the support."""
    inst = Instance(q, st, budget)
    cell = row * inst.ell + col
    dist = np.zeros(inst.b + 1)
    for mask in range(1 << inst.n):
        k = inst.popcount[mask]
        pm = a**k * (1.0 - a) ** (inst.n - k)
        if (mask >> cell) & 1:
            dist[: inst.b] += pm * np.bincount(inst.codes[:, cell], weights=inst.p, minlength=inst.b)
        else:
            dist[inst.b] += pm
    p = dist[dist > 0]
    return float(-(p * np.log(p)).sum())


def cell_entropy_closed_form(q, st, a, row, col, budget=None):
    """a * H(y_0^{row,col}) + h(a) in nats."""
    inst = Instance(q, st, budget)
    marg = np.bincount(inst.codes[:, row * inst.ell + col], weights=inst.p, minlength=inst.b)
    p = marg[marg > 0]
    return a * float(-(p * np.log(p)).sum()) + h_nats(a)


# -- optimal loss -----------------------------------------------------------
def optimal_nelbo(q, st, quad=None, budget=None, head="joint", posterior_route=None, tolerance=1e-6):
    """Infimum of the weighted cross-entropy objective over denoisers.

    ``head="joint"`` takes the infimum over joint posteriors p(y0 | yt);
    ``head="factorized"`` over per-cell factorized posteriors. Returns a dict
    with ``value`` and the two independently computed routes (nats):

    * ``route_decomposition``: H(y0, yt) - H(yt) from the subset-entropy
      lattice (for the factorized head: the per-cell entropy increments).
    * ``route_posterior``: expected negative log Bayes posterior from explicit
      (y0, mask) pair enumeration; ``None`` when skipped.

    Integrals are taken in s = alpha as  int_0^1 CE(s) / (1 - s) ds.
    """
    quad = quad or Quadrature()
    inst = Instance(q, st, budget)
    if head not in ("joint", "factorized"):
        raise ValueError(f"unknown head {head!r}")
    if head == "joint":
        route_a = quad.integrate(lambda s: (inst.joint_entropy_y0_yt(s) - inst.entropy_yt_fast(s)) / (1.0 - s))
    else:
        route_a = quad.integrate(lambda s: inst.cross_entropy_factorized(s) / (1.0 - s))
    if posterior_route is None:
        posterior_route = inst.p.shape[0] * (1 << inst.n) <= PAIR_LIMIT
    route_b = None
    if posterior_route:
        e = inst.pair_log_marginals()
        plogp = float(np.dot(inst.p, np.log(inst.p)))
        if head == "joint":
            per_mask = e - plogp
        else:
            per_mask = np.zeros_like(e)
            for mask in range((1 << inst.n) - 1):
                for c in range(inst.n):
                    if not (mask >> c) & 1:
                        per_mask[mask] += e[mask] - e[mask | (1 << c)]
        route_b = quad.integrate(lambda s: float(np.dot(inst.mask_probs(s), per_mask)) / (1.0 - s))
        if abs(route_a - route_b) > tolerance:
            raise RouteMismatch(f"routes disagree: {route_a!r} vs {route_b!r}")
    return {
        "value": route_a if route_b is None else route_b,
        "route_decomposition": route_a,
        "route_posterior": route_b,
        "head": head,
    }


def loglik_profile(q, st, t_grid, schedule=LINEAR, budget=None):
    """E[log q(y0 | yt)] (nats) at each t; the unweighted integrand."""
    inst = Instance(q, st, budget)
    return np.array([0.0 - inst.cross_entropy_joint(alpha_value(schedule, t)) for t in t_grid])


# -- coarsening and exact identity checks --------------------------------------
def _check_nesting(st, factor):
    if factor < 1 or st.ell % factor:
        raise IncompatibleBases(f"factor {factor} does not divide ell={st.ell}")
    if factor == st.ell:
        return
    coarse = base_for(st.vocab_size, st.ell // factor)
    if st.base**factor != coarse:
        raise IncompatibleBases(f"b={st.base}^{factor} != coarse base {coarse}")


def coarsen(yt, st, factor):
    """Collapse each group of ``factor`` cells: its value if fully unmasked, else MASK.

    With ``factor == ell`` the output column holds token ids.
    """
    _check_nesting(st, factor)
    yt = np.asarray(yt, dtype=np.int64)
    L = yt.shape[0]
    groups = yt.reshape(L, st.ell // factor, factor)
    w = st.base ** np.arange(factor - 1, -1, -1, dtype=np.int64)
    masked = np.any(groups == MASK, axis=-1)
    values = groups @ w
    if factor == st.ell:
        values = np.where(masked, 0, values)
        if np.any(values[~masked] >= st.vocab_size):
            raise ValueError("unused code in a fully unmasked group")
        values = st.inv_perm[np.minimum(values, st.vocab_size - 1)]
    return np.where(masked, MASK, values)


def token_posterior(q):
    """Return ``F(x0, xt) = -log q(x0 | xt)`` for the token distribution ``q``."""
    seqs, probs = q.support()
    lookup = {tuple(int(v) for v in s): float(p) for s, p in zip(seqs, probs)}
    cache = {}

    def neg_log_posterior(x0, xt):
        xt = tuple(int(v) for v in xt)
        if xt not in cache:
            obs = np.array([v != MASK for v in xt])
            ok = np.all(seqs[:, obs] == np.asarray(xt)[obs], axis=1) if obs.any() else np.ones(len(probs), bool)
            cache[xt] = float(probs[ok].sum())
        return -math.log(lookup[tuple(int(v) for v in x0)] / cache[xt])

    return neg_log_posterior


def lemma_a1_check(q, st, F, t, schedule=LINEAR, budget=None):
    """Both sides of E_{q_a(x0,xt)}[F(x0,xt)] = E_{q_a~(y0,yt)}[F(f^-1(y0), g(yt))]."""
    q.check_budget(budget)
    a = alpha_value(schedule, t)
    seqs, probs = q.support()
    L = q.L
    lhs = 0.0
    for tmask in range(1 << L):
        k = bin(tmask).count("1")
        pm = a**k * (1.0 - a) ** (L - k)
        if pm == 0.0:
            continue
        for x0, px in zip(seqs, probs):
            xt = tuple(int(x0[i]) if (tmask >> i) & 1 else MASK for i in range(L))
            lhs += px * pm * F(tuple(int(v) for v in x0), xt)
    inst = Instance(q, st, budget)
    a_sub = a ** (1.0 / st.ell)
    rhs = 0.0
    for cmask in range(1 << inst.n):
        pm = a_sub ** inst.popcount[cmask] * (1.0 - a_sub) ** (inst.n - inst.popcount[cmask])
        if pm == 0.0:
            continue
        keep = np.array([(cmask >> c) & 1 for c in range(inst.n)], dtype=bool)
        for code, py in zip(inst.codes, inst.p):
            grid = np.where(keep, code, MASK).reshape(L, st.ell)
            x0 = tuple(int(v) for v in st.inv_perm[code.reshape(L, st.ell) @ (st.base ** np.arange(st.ell - 1, -1, -1))])
            xt = tuple(int(v) for v in coarsen(grid, st, st.ell)[:, 0])
            rhs += py * pm * F(x0, xt)
    return {"lhs": lhs, "rhs": rhs}


def schedule_integral(F, schedule, quad=None):
    """I(alpha) = int_0^1 alpha'/(1 - alpha) F(alpha) dt, by quadrature in t."""
    quad = quad or Quadrature()

    def integrand(t):
        a, da = schedule.__call__(t)
        return da / (1.0 - a) * F(a)

    return quad.integrate(integrand)


def lemma_a3_check(F, s1, s2, quad=None):
    return {"I1": schedule_integral(F, s1, quad), "I2": schedule_integral(F, s2, quad)}


def _coarse_mask(mask, L, ell, factor):
    out = 0
    for i in range(L):
        for g in range(ell // factor):
            cells = [i * ell + g * factor + k for k in range(factor)]
            if all((mask >> c) & 1 for c in cells):
                for c in cells:
                    out |= 1 << c
    return out


def kl_equality_gap(q, st, ell_tilde, t, schedule=LINEAR, budget=None):
    """E_{q_a~(yt)}[KL(q(y0 | yt) || q(y0 | g(yt)))] in nats with a~ = a^(1/ell_tilde).

    Since both posteriors are q restricted to a consistency set, the KL for a
    cell mask M is S[M] - S[M'] where M' keeps only fully unmasked groups.
    """
    _check_nesting(st, ell_tilde)
    inst = Instance(q, st, budget)
    a = alpha_value(schedule, t) ** (1.0 / ell_tilde)
    S = inst.subset_entropy
    coarse = np.array([_coarse_mask(m, inst.L, inst.ell, ell_tilde) for m in range(1 << inst.n)])
    return float(np.dot(inst.mask_probs(a), S - S[coarse]))


def kl_equality_gap_enumerated(q, st, ell_tilde, t, schedule=LINEAR, budget=None):
    """Same quantity by explicit (y0, mask) enumeration of both posteriors."""
    _check_nesting(st, ell_tilde)
    inst = Instance(q, st, budget)
    a = alpha_value(schedule, t) ** (1.0 / ell_tilde)
    total = 0.0
    for mask in range(1 << inst.n):
        pm = a ** inst.popcount[mask] * (1.0 - a) ** (inst.n - inst.popcount[mask])
        if pm == 0.0:
            continue
        fine = inst._projection_keys(mask)
        coarse = inst._projection_keys(_coarse_mask(mask, inst.L, inst.ell, ell_tilde))
        _, ia = np.unique(fine, return_inverse=True)
        _, ib = np.unique(coarse, return_inverse=True)
        ia = np.asarray(ia).reshape(-1)
        ib = np.asarray(ib).reshape(-1)
        ta = np.bincount(ia, weights=inst.p)[ia]
        tb = np.bincount(ib, weights=inst.p)[ib]
        # log of q(y0|fine) / q(y0|coarse) = log(tb / ta), taken on the support
        on = inst.p > 0
        total += pm * float(np.dot(inst.p[on], np.log(tb[on]) - np.log(ta[on])))
    return total


def marginalize_group(joint, b, ell_tilde):
    """Per-position marginals of a joint over the ``b**ell_tilde`` codes of a token group."""
    joint = np.asarray(joint, dtype=np.float64)
    if joint.shape != (b**ell_tilde,):
        raise ValueError(f"joint must have {b ** ell_tilde} entries")
    if abs(joint.sum() - 1.0) > 1e-12 or np.any(joint < 0):
        raise NotNormalized(f"joint sums to {joint.sum():.15g}")
    table = joint.reshape((b,) * ell_tilde)
    return [table.sum(axis=tuple(k for k in range(ell_tilde) if k != j)) for j in range(ell_tilde)]


# -- assignment search ------------------------------------------------------
def position_entropies(probs, perm, ell):
    """Per-position sub-token entropies (bits) of ``probs`` under ``perm``."""
    probs = np.asarray(probs, dtype=np.float64)
    V = probs.shape[0]
    b = base_for(V, ell)
    digits = backend.base_digits(np.asarray(perm, dtype=np.int64), b, ell)
    return np.array([entropy_bits(np.bincount(digits[:, j], weights=probs, minlength=b)) for j in range(ell)])


def best_assignment_bruteforce(probs, ell, max_vocab=10, chunk=200_000):
    """Exhaustive search for the perm maximizing the summed position entropies.

    Ties go to the lexicographically smallest perm (``perm[x]`` = new index of
    token ``x``).
    """
    probs = np.asarray(probs, dtype=np.float64)
    V = probs.shape[0]
    if V > max_vocab:
        raise BudgetExceeded(f"V={V} > {max_vocab}: {V}! permutations")
    b = base_for(V, ell)
    digits = backend.base_digits(np.arange(V), b, ell)
    best_val, best_perm = -math.inf, None
    perms = itertools.permutations(range(V))
    while True:
        block = np.array(list(itertools.islice(perms, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        total = np.zeros(block.shape[0])
        for j in range(ell):
            d = digits[block, j]
            for v in range(b):
                m = ((d == v) * probs).sum(axis=1)
                with np.errstate(divide="ignore", invalid="ignore"):
                    total -= np.where(m > 0, m * np.log2(m), 0.0)
        top = float(total.max())
        k = int(np.flatnonzero(total >= top - 1e-12)[0])
        if top > best_val + 1e-12:
            best_val, best_perm = float(total[k]), block[k].copy()
    return {"perm": best_perm, "total_entropy_bits": best_val, "avg_entropy_bits": best_val / ell}


# -- exact posterior for samplers ---------------------------------------------
def exact_posterior(q, st, budget=None):
    """Callable ``grid -> (L, ell, b)`` per-cell marginals of q(y0 | yt)."""
    inst = Instance(q, st, budget)
    codes = inst.codes
    cache = {}

    def posterior(grid):
        grid = np.asarray(grid, dtype=np.int64).reshape(-1)
        key = grid.tobytes()
        hit = cache.get(key)
        if hit is not None:
            return hit
        obs = grid != MASK
        ok = np.all(codes[:, obs] == grid[obs], axis=1) if obs.any() else np.ones(codes.shape[0], bool)
        w = inst.p * ok
        z = w.sum()
        if z <= 0:
            raise ValueError("grid is impossible under the data distribution")
        w = w / z
        out = np.stack([np.bincount(codes[:, c], weights=w, minlength=inst.b) for c in range(inst.n)])
        out = out.reshape(inst.L, inst.ell, inst.b)
        cache[key] = out
        return out

    return posterior

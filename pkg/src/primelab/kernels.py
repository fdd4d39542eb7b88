"""Masking schedules and the forward/reverse kernels over sub-token grids.

Grids are ``int64`` arrays of shape ``(L, ell)`` (or ``(B, L, ell)`` for
batches) holding digits in ``[0, b)`` or :data:`MASK`.

All randomness is drawn from keyed splitmix64 substreams: the uniform used by
cell ``(row, col)`` at step ``step`` depends only on ``(seed, tag, step, row,
col)``, never on iteration order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    CarryOverViolation,
    InvalidCode,
    PosteriorShapeError,
    TimeOrderError,
    TimeOutOfRange,
)

MASK = -1

TAG_MASK = 1
TAG_UNMASK = 2
TAG_DRAW = 3
TAG_REDRAW = 4

MAX_REDRAWS = 16

_G = np.uint64(0x9E3779B97F4A7C15)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _C1
    z = (z ^ (z >> np.uint64(27))) * _C2
    return z ^ (z >> np.uint64(31))


def keyed_uniform(seed, tag, step, shape):
    """Uniforms in [0, 1) over a ``(..., L, ell)`` grid.

    ``seed`` may be a scalar or an array broadcasting against the leading
    batch dimension of ``shape``.
    """
    rows, cols = shape[-2], shape[-1]
    seed = np.asarray(seed, dtype=np.uint64)
    if seed.ndim:
        seed = seed.reshape(seed.shape + (1, 1))
    r = np.arange(rows, dtype=np.uint64)[:, None]
    c = np.arange(cols, dtype=np.uint64)[None, :]
    with np.errstate(over="ignore"):
        h = _mix64(seed ^ _mix64(np.uint64(tag) + _G))
        h = _mix64(h ^ _mix64(np.uint64(step) + _G * np.uint64(2)))
        h = _mix64(h ^ _mix64(r + _G * np.uint64(3)))
        h = _mix64(h ^ _mix64(c + _G * np.uint64(4)))
    u = (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
    return np.broadcast_to(u, shape)


@dataclass(frozen=True)
class Schedule:
    """Strictly decreasing alpha: [0,1] -> [0,1] with alpha(0)=1, alpha(1)=0."""

    kind: str = "linear"
    power: float = 1.0
    base: "Schedule | None" = None
    root: int = 1

    def __post_init__(self):
        if self.kind not in ("linear", "power", "root_substituted"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "power" and not self.power > 0:
            raise ValueError("power schedule needs k > 0")
        if self.kind == "root_substituted" and (self.base is None or self.root < 1):
            raise ValueError("root_substituted needs a base schedule and root >= 1")

    @classmethod
    def linear(cls):
        return cls("linear")

    @classmethod
    def powered(cls, k):
        return cls("power", power=float(k))

    def rooted(self, ell_tilde):
        """alpha(t) ** (1/ell_tilde)."""
        return Schedule("root_substituted", base=self, root=int(ell_tilde))

    def __call__(self, t):
        return alpha(self, t)

    def weight(self, t):
        """Loss weight w(t) = alpha'(t) / (alpha(t) - 1)."""
        _, da = alpha(self, t)
        return -da / one_minus_alpha(self, t)

    def __str__(self):
        if self.kind == "linear":
            return "linear"
        if self.kind == "power":
            return f"power({self.power:g})"
        return f"root({self.base}, {self.root})"


LINEAR = Schedule.linear()


def alpha(s, t):
    """Return ``(alpha(t), alpha'(t))``."""
    t = float(t)
    if not 0.0 <= t <= 1.0 or math.isnan(t):
        raise TimeOutOfRange(f"t={t} outside [0, 1]")
    if s.kind == "linear":
        return 1.0 - t, -1.0
    if s.kind == "power":
        k = s.power
        u = 1.0 - t
        if u > 0.0:
            return u**k, -k * u ** (k - 1.0)
        return 0.0, (-1.0 if k == 1.0 else 0.0 if k > 1.0 else -math.inf)
    a, da = alpha(s.base, t)
    r = 1.0 / s.root
    if a == 0.0:
        return 0.0, (da if r == 1.0 else -math.inf)
    return a**r, r * a ** (r - 1.0) * da


def one_minus_alpha(s, t):
    """1 - alpha(t) without cancellation (exactly t for the linear schedule)."""
    t = float(t)
    if s.kind == "linear":
        return t
    if s.kind == "power":
        return -math.expm1(s.power * math.log1p(-t)) if t < 1.0 else 1.0
    a = alpha_value(s.base, t)
    return -math.expm1(math.log(a) / s.root) if a > 0.0 else 1.0


def alpha_value(s, t):
    return alpha(s, t)[0]


def mask_grid(L, ell):
    return np.full((L, ell), MASK, dtype=np.int64)


def forward_mask(y0, s, t, seed, step=0):
    """Mask each cell independently with probability ``1 - alpha(t)``."""
    y0 = np.asarray(y0, dtype=np.int64)
    if np.any(y0 == MASK):
        raise ValueError("forward_mask expects a mask-free grid")
    a = alpha_value(s, t)
    u = keyed_uniform(seed, TAG_MASK, step, y0.shape)
    return np.where(u >= a, MASK, y0)


def unmask_probability(s, s_time, t_time):
    a_s = alpha_value(s, s_time)
    a_t = alpha_value(s, t_time)
    return (a_s - a_t) / (1.0 - a_t)


def reverse_step(yt, y0_draw, s, s_time, t_time, seed, step=0):
    """One reverse transition from ``t_time`` to ``s_time < t_time``.

    Unmasked cells are copied; each masked cell takes ``y0_draw``'s value with
    probability ``(alpha_s - alpha_t) / (1 - alpha_t)``.
    """
    if not s_time < t_time:
        raise TimeOrderError(f"need s < t, got s={s_time}, t={t_time}")
    yt = np.asarray(yt, dtype=np.int64)
    y0_draw = np.asarray(y0_draw, dtype=np.int64)
    if y0_draw.shape != yt.shape:
        raise ValueError("y0_draw and yt shapes differ")
    if np.any(y0_draw == MASK):
        raise ValueError("y0_draw must be mask-free")
    observed = yt != MASK
    if np.any(y0_draw[observed] != yt[observed]):
        raise CarryOverViolation("y0_draw contradicts an unmasked cell")
    p = unmask_probability(s, s_time, t_time)
    u = keyed_uniform(seed, TAG_UNMASK, step, yt.shape)
    reveal = (~observed) & (u < p)
    return np.where(reveal, y0_draw, yt)


def _draw_cells(probs, u):
    """Inverse-CDF categorical draw per cell; ``probs`` is ``(..., b)``."""
    cdf = np.cumsum(probs, axis=-1)
    cdf[..., -1] = np.inf
    return (u[..., None] >= cdf).sum(axis=-1).astype(np.int64)


def _check_probs(probs, shape, b):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != tuple(shape) + (b,):
        raise PosteriorShapeError(f"posterior returned shape {probs.shape}, expected {tuple(shape) + (b,)}")
    return probs


def _posterior_batch(posterior, grids, b):
    """Evaluate ``posterior`` once per distinct grid in the batch."""
    B = grids.shape[0]
    flat = grids.reshape(B, -1)
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    out = np.empty(grids.shape + (b,), dtype=np.float64)
    for k, row in enumerate(uniq):
        grid = row.reshape(grids.shape[1:])
        out[inverse == k] = _check_probs(posterior(grid), grid.shape, b)
    return out


def _best_valid_code(st, row_probs):
    """Valid code maximizing the product of per-cell probabilities."""
    codes = st.digits  # (V, ell), row x = code of token x
    with np.errstate(divide="ignore"):
        logp = np.log(row_probs)
    scores = logp[np.arange(st.ell)[None, :], codes].sum(axis=1)
    return int(np.argmax(scores))


def sample_many(posterior, st, L, K, s, seeds):
    """Ancestral sampling for a batch of independent seeds.

    Each sample is identical to ``sample(..., seed=seeds[i])``; the batch only
    shares posterior evaluations between identical grids.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    seeds = np.asarray(seeds, dtype=np.uint64).reshape(-1)
    B, ell, b = seeds.shape[0], st.ell, st.base
    y = np.full((B, L, ell), MASK, dtype=np.int64)
    for k in range(1, K + 1):
        t_time = 1.0 - (k - 1) / K
        s_time = 1.0 - k / K
        probs = _posterior_batch(posterior, y, b)
        draw = _draw_cells(probs, keyed_uniform(seeds, TAG_DRAW, k, y.shape))
        draw = np.where(y != MASK, y, draw)
        p = unmask_probability(s, s_time, t_time)
        u = keyed_uniform(seeds, TAG_UNMASK, k, y.shape)
        y = np.where((y == MASK) & (u < p), draw, y)
    weights = b ** np.arange(ell - 1, -1, -1, dtype=np.int64)
    tokens = st.code_to_token[y @ weights]
    for i, row in zip(*np.nonzero(tokens < 0)):
        tokens[i, row] = _repair_row(posterior, st, y[i], row, int(seeds[i]), K)
    return tokens


def _repair_row(posterior, st, grid, row, seed, K):
    grid = grid.copy()
    grid[row] = MASK
    probs = _check_probs(posterior(grid), grid.shape, st.base)[row]
    weights = st.base ** np.arange(st.ell - 1, -1, -1, dtype=np.int64)
    for r in range(MAX_REDRAWS):
        u = keyed_uniform(seed, TAG_REDRAW, K + 1 + r, grid.shape)[row]
        code = _draw_cells(probs, u)
        token = st.code_to_token[int(code @ weights)]
        if token >= 0:
            return int(token)
    token = _best_valid_code(st, probs)
    if token < 0:
        raise InvalidCode("no valid code has positive probability")
    return token


def sample(posterior, st, L, K, s, seed):
    """Draw one length-``L`` token sequence by ``K`` uniform reverse steps from t=1."""
    return sample_many(posterior, st, L, K, s, [seed])[0]

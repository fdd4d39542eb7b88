"""Verification suites over the oracle's default instances.

Each check is a dict ``{instance, check, lhs, rhs, tolerance, pass}``; a check
passes when ``|lhs - rhs| <= tolerance`` (``relation == "eq"``) or
``lhs <= rhs + tolerance`` (``relation == "le"``).
"""
from __future__ import annotations

import math

import numpy as np

from . import oracle
from .kernels import LINEAR, MASK, Schedule
from .subtok import build, with_perm

ALPHA_GRID = np.linspace(0.0, 1.0, 21)
SKEWED = (0.5, 0.25, 0.15, 0.10)


def _check(instance, name, lhs, rhs, tol, relation="eq"):
    lhs, rhs = float(lhs), float(rhs)
    ok = abs(lhs - rhs) <= tol if relation == "eq" else lhs <= rhs + tol
    return {"instance": instance, "check": name, "lhs": lhs, "rhs": rhs, "tolerance": tol, "relation": relation, "pass": bool(ok)}


def default_instances():
    """(label, TokenDist, [ell values]) with ell lists forming nested-base chains where possible."""
    zipf16 = oracle.zipf_probs(16)
    rng = np.random.default_rng(5)
    trans = rng.dirichlet(np.ones(4), size=4)
    return [
        ("uniform V=2 L=1", oracle.TokenDist.uniform(2, 1), [1]),
        ("product-uniform V=4 L=1", oracle.TokenDist.uniform(4, 1), [1, 2]),
        ("product-uniform V=4 L=2", oracle.TokenDist.uniform(4, 2), [1, 2]),
        ("skewed V=4 L=1", oracle.TokenDist.single(SKEWED), [1, 2]),
        ("zipf V=16 L=1", oracle.TokenDist.single(zipf16), [1, 2, 4]),
        ("markov V=4 L=2", oracle.TokenDist.markov(np.full(4, 0.25), trans, 2), [1, 2]),
        ("zipf V=8 L=2", oracle.TokenDist.product(oracle.zipf_probs(8), 2), [1, 3]),
    ]


def suite_prop2(budget=None):
    out = []
    for label, q, ells in default_instances():
        for ell in ells:
            st = build(q.V, ell)
            uniform = label.startswith(("uniform", "product-uniform"))
            for a in ALPHA_GRID:
                h = oracle.entropy_yt(q, st, a, budget)
                bound = oracle.entropy_bound(q.L, ell, st.base, a)
                tag = f"{label} ell={ell} alpha={a:.2f}"
                out.append(_check(tag, "entropy_le_bound", h, bound, 1e-9, "le"))
                if uniform:
                    out.append(_check(tag, "entropy_eq_bound_uniform", h, bound, 1e-9))
    return out


def suite_prop1(budget=None):
    out = []
    for label, q, ells in default_instances():
        for ell in ells:
            res = oracle.optimal_nelbo(q, build(q.V, ell), budget=budget, tolerance=math.inf)
            tag = f"{label} ell={ell}"
            out.append(_check(tag, "route_agreement", res["route_decomposition"], res["route_posterior"], 1e-8))
            if q.L == 1 and ell == 1:
                out.append(_check(tag, "single_token_equals_entropy", res["value"], q.entropy_nats(), 1e-8))
    return out


def suite_prop3(budget=None):
    out = []
    for label, q, ells in default_instances():
        values = [oracle.optimal_nelbo(q, build(q.V, ell), budget=budget)["value"] for ell in ells]
        for (e1, v1), (e2, v2) in zip(zip(ells, values), zip(ells[1:], values[1:])):
            if build(q.V, e2).base ** (e2 // e1) != build(q.V, e1).base or e2 % e1:
                continue
            out.append(_check(f"{label} ell {e1}->{e2}", "nelbo_non_increasing", v2, v1, 1e-8, "le"))
    return out


def _all_mask_indicator(x0, xt):
    return float(all(v == MASK for v in xt))


def suite_lemmas(budget=None):
    out = []
    quad = oracle.Quadrature()
    skewed = oracle.TokenDist.single(SKEWED)
    markov = default_instances()[5][1]
    st_skewed = build(4, 2)
    st_markov = build(4, 2)
    for label, q, st in (("skewed V=4 L=1 ell=2", skewed, st_skewed), ("markov V=4 L=2 ell=2", markov, st_markov)):
        for fname, F in (
            ("F=1", lambda x0, xt: 1.0),
            ("F=all_masked", _all_mask_indicator),
            ("F=-log q(x0|xt)", oracle.token_posterior(q)),
        ):
            for t in (0.25, 0.5, 0.8):
                r = oracle.lemma_a1_check(q, st, F, t, budget=budget)
                out.append(_check(f"{label} {fname} t={t}", "lemma_a1", r["lhs"], r["rhs"], 1e-10))
    ce_inst = oracle.Instance(skewed, st_skewed, budget)
    for fname, F in (
        ("F=s^2(1-s)", lambda s: s * s * (1.0 - s)),
        ("F=0", lambda s: 0.0),
        ("F=CE(s)", ce_inst.cross_entropy_joint),
    ):
        for k in (2, 3):
            r = oracle.lemma_a3_check(F, LINEAR, Schedule.powered(k), quad)
            out.append(_check(f"{fname} linear vs power({k})", "lemma_a3", r["I1"], r["I2"], 1e-6))
    nelbo = oracle.optimal_nelbo(skewed, st_skewed, budget=budget)["value"]
    r = oracle.lemma_a3_check(ce_inst.cross_entropy_joint, LINEAR, Schedule.powered(3), quad)
    out.append(_check("skewed V=4 ell=2", "lemma_a3_matches_nelbo", -r["I2"], nelbo, 1e-8))
    for label, q, ells in default_instances():
        for ell in ells:
            st = build(q.V, ell)
            for a in (0.0, 0.3, 0.7, 1.0):
                lhs = oracle.expected_log_kernel(q, st, a, budget)
                rhs = oracle.expected_log_kernel_closed_form(q.L, ell, a)
                out.append(_check(f"{label} ell={ell} alpha={a}", "lemma_a5", lhs, rhs, 1e-10))
                for row, col in {(0, 0), (q.L - 1, ell - 1)}:
                    lhs = oracle.cell_entropy_yt(q, st, a, row, col, budget)
                    rhs = oracle.cell_entropy_closed_form(q, st, a, row, col, budget)
                    out.append(_check(f"{label} ell={ell} alpha={a} cell=({row},{col})", "lemma_a6", lhs, rhs, 1e-10))
    for label, q, ells in default_instances():
        if 2 not in ells or q.V != 4:
            continue
        st = build(q.V, 2)
        for t in (0.2, 0.5, 0.9):
            gap = oracle.kl_equality_gap(q, st, 2, t, budget=budget)
            ref = oracle.kl_equality_gap_enumerated(q, st, 2, t, budget=budget)
            tag = f"{label} ell=2 t={t}"
            out.append(_check(tag, "kl_gap_nonnegative", 0.0, gap, 1e-12, "le"))
            out.append(_check(tag, "kl_gap_two_routes", gap, ref, 1e-10))
        if label.startswith("product-uniform"):
            v1 = oracle.optimal_nelbo(q, build(q.V, 1), budget=budget)["value"]
            v2 = oracle.optimal_nelbo(q, st, budget=budget)["value"]
            out.append(_check(f"{label} ell 1 vs 2", "nelbo_equal_product_uniform", v2, v1, 1e-8))
    return out


def suite_technique1(budget=None):
    out = []
    p = oracle.zipf_probs(8)
    q = oracle.TokenDist.single(p)
    best = oracle.best_assignment_bruteforce(p, 3)
    v_best = oracle.optimal_nelbo(q, with_perm(8, 3, best["perm"]), budget=budget)["value"]
    v_id = oracle.optimal_nelbo(q, build(8, 3), budget=budget)["value"]
    out.append(_check("zipf V=8 ell=3", "best_perm_nelbo_lt_identity", v_best, v_id - 1e-6, 0.0, "le"))
    r = oracle.best_assignment_bruteforce(np.array([0.4, 0.3, 0.2, 0.1]), 2)
    out.append(_check("V=4 ell=2 (0.4,0.3,0.2,0.1)", "best_assignment_entropy", r["total_entropy_bits"], 1.0 + _h2(0.6), 1e-12))
    return out


def _h2(p):
    return -(p * math.log2(p) + (1 - p) * math.log2(1 - p))


SUITES = {
    "prop1": suite_prop1,
    "prop2": suite_prop2,
    "prop3": suite_prop3,
    "lemmas": suite_lemmas,
    "technique1": suite_technique1,
}


def run_suite(name, budget=None):
    names = list(SUITES) if name == "all" else [name]
    if any(n not in SUITES for n in names):
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(['all', *SUITES])}")
    checks = []
    for n in names:
        for c in SUITES[n](budget):
            c["suite"] = n
            checks.append(c)
    return {"suites": names, "n_checks": len(checks), "n_failed": sum(not c["pass"] for c in checks), "checks": checks}

"""Singular values by one-sided Jacobi rotations, and the stable rank."""
from __future__ import annotations

import csv
import math

import numpy as np

from .errors import CorruptFile, NonFinite, ZeroMatrix

TOL = 1e-15
MAX_SWEEPS = 100


def _as_matrix(m):
    a = np.array(m, dtype=np.float64, copy=True)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFinite("matrix has NaN or infinite entries")
    return a


def singular_values(m, tol=TOL, max_sweeps=MAX_SWEEPS):
    """Descending singular values of ``m`` (min(rows, cols) of them).

    Columns are orthogonalized pairwise until every pair's cosine is below
    ``tol``; the column norms are then the singular values.
    """
    a = _as_matrix(m)
    if a.shape[0] < a.shape[1]:
        a = a.T.copy()
    n = a.shape[1]
    scale = np.abs(a).max()
    if scale == 0.0:
        return np.zeros(n)
    a /= scale
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                ap, aq = a[:, p], a[:, q]
                alpha = ap @ ap
                beta = aq @ aq
                gamma = ap @ aq
                if gamma == 0.0 or abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated = True
                diff = beta - alpha
                if abs(diff) > 1e150 * abs(gamma):
                    t = gamma / diff  # 1/(2 zeta) without overflow
                else:
                    zeta = diff / (2.0 * gamma)
                    t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                a[:, p] = new_p
        if not rotated:
            break
    sv = np.sqrt((a * a).sum(axis=0)) * scale
    return np.sort(sv)[::-1]


def frobenius_sq(m):
    a = _as_matrix(m)
    return float((a * a).sum())


def stable_rank(m):
    """||M||_F^2 / ||M||_2^2, clipped into [1, min(rows, cols)]."""
    a = _as_matrix(m)
    sv = singular_values(a)
    if sv[0] == 0.0:
        raise ZeroMatrix("stable rank of the zero matrix is undefined")
    r = float((sv / sv[0]) @ (sv / sv[0]))
    return min(max(r, 1.0), float(min(a.shape)))


def read_matrix_csv(path):
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for k, row in enumerate(csv.reader(fh), 1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise CorruptFile(f"{path}:{k}: {exc}") from exc
    if not rows or len({len(r) for r in rows}) != 1:
        raise CorruptFile(f"{path}: rows must be non-empty and of equal length")
    return np.array(rows)


def checkpoint_matrices(path):
    """Named 2-D weight blocks from a trainer checkpoint (W1 and each W2[j])."""
    from .trainer import load_checkpoint

    model, _ = load_checkpoint(path)
    out = {"W1": model.params["W1"]}
    for j, block in enumerate(model.params["W2"]):
        out[f"W2[{j}]"] = block
    return out

"""Power-law loss estimator L(N, D) = E + A/N^alphaN + B/D^betaD and its compute-optimal split.

The scaling exponents are called ``alphaN``/``betaD`` so they do not collide
with the masking schedule.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import CorruptFile, DegenerateFit, InsufficientData

HUBER_DELTA = 1e-3
EXP_BOUNDS = (0.01, 2.0)
INIT_EXPONENTS = (0.2, 0.3, 0.4)
INIT_LOG_COEF = (2.0, 4.0, 6.0)
INIT_E_FRACTIONS = (0.5, 0.9)


@dataclass(frozen=True)
class ScalingPoint:
    N: float
    D: float
    loss: float

    def __post_init__(self):
        if not (self.N > 0 and self.D > 0 and self.loss > 0):
            raise ValueError(f"N, D and loss must be positive, got {self}")


@dataclass(frozen=True)
class ScalingFit:
    E: float
    A: float
    B: float
    alphaN: float
    betaD: float
    objective: float = math.nan
    residuals: tuple = field(default=(), repr=False)

    @property
    def a_hat(self):
        return self.betaD / (self.alphaN + self.betaD)

    @property
    def b_hat(self):
        return 1.0 - self.a_hat

    @property
    def G(self):
        return (self.alphaN * self.A / (self.betaD * self.B)) ** (1.0 / (self.alphaN + self.betaD))

    def to_dict(self):
        out = asdict(self)
        out["residuals"] = list(self.residuals)
        out.update(a_hat=self.a_hat, b_hat=self.b_hat, G=self.G)
        return out


# Loss-table coefficients reported for the three model families.
REFERENCE_FITS = {
    "arm": ScalingFit(E=1.97, A=400.0, B=400.0, alphaN=0.35, betaD=0.28),
    "mdm": ScalingFit(E=2.23, A=400.0, B=400.0, alphaN=0.35, betaD=0.26),
    "prime-v2": ScalingFit(E=1.30, A=400.0, B=400.0, alphaN=0.37, betaD=0.26),
}


def predict_loss(f, N, D):
    N = np.asarray(N, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    out = f.E + f.A * N ** (-f.alphaN) + f.B * D ** (-f.betaD)
    return float(out) if out.ndim == 0 else out


def exponents(f):
    return {"a_hat": f.a_hat, "b_hat": f.b_hat, "G": f.G}


def optimal_allocation(f, C):
    """N_opt = G (C/6)^a_hat and D_opt = (C/6) / N_opt."""
    if not C > 0:
        raise ValueError("compute budget must be positive")
    budget = C / 6.0
    n_opt = f.G * budget**f.a_hat
    return {"N_opt": n_opt, "D_opt": budget / n_opt}


def huber(r, delta=HUBER_DELTA):
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def _arrays(points):
    N = np.array([p.N for p in points], dtype=np.float64)
    D = np.array([p.D for p in points], dtype=np.float64)
    y = np.array([p.loss for p in points], dtype=np.float64)
    return N, D, y


def _check_span(N, D):
    if N.size < 6:
        raise InsufficientData(f"need at least 6 points, got {N.size}")
    for name, v in (("N", N), ("D", D)):
        if math.log10(v.max() / v.min()) < 2.0 - 1e-9:
            raise InsufficientData(f"{name} spans fewer than 2 decades")


def fit(points, delta=HUBER_DELTA, trace=None, max_polish=20):
    """Huber-on-log-residual fit by multi-start Nelder-Mead over a fixed grid.

    Grid starts run at a loose tolerance; the best is then re-launched at a
    tight one until the objective stops improving, which resets the simplex
    after premature shrinkage. If ``trace`` is a list, the
    objective at each iteration's best vertex is appended per start.
    """
    points = list(points)
    N, D, y = _arrays(points)
    _check_span(N, D)
    logN, logD, logy = np.log(N), np.log(D), np.log(y)
    ymin = float(y.min())

    def objective(x):
        E, la, lb, a, b = x
        pred = E + np.exp(la - a * logN) + np.exp(lb - b * logD)
        if not np.all(pred > 0):
            return math.inf
        return float(huber(np.log(pred) - logy, delta).sum())

    bounds = [(0.0, ymin), (None, None), (None, None), EXP_BOUNDS, EXP_BOUNDS]
    coarse = {"xatol": 1e-6, "fatol": 1e-12, "maxfev": 3000, "adaptive": True}
    fine = {"xatol": 1e-12, "fatol": 1e-22, "maxiter": 40000, "maxfev": 40000, "adaptive": True}

    def run(x0, opts):
        history = []
        cb = (lambda xk: history.append(objective(xk))) if trace is not None else None
        res = minimize(objective, x0, method="Nelder-Mead", bounds=bounds, options=opts, callback=cb)
        if trace is not None:
            trace.append({"start": [float(v) for v in x0], "objective": history})
        return res

    best = None
    for a0, b0, lc, ef in itertools.product(INIT_EXPONENTS, INIT_EXPONENTS, INIT_LOG_COEF, INIT_E_FRACTIONS):
        res = run(np.array([ef * ymin, lc, lc, a0, b0]), coarse)
        if best is None or res.fun < best.fun:
            best = res
    for _ in range(max_polish):
        res = run(best.x, fine)
        if not res.fun < best.fun:
            break
        best = res
    E, la, lb, a, b = (float(v) for v in best.x)
    tol = 1e-7
    hits = []
    if E <= tol * ymin or E >= ymin * (1 - tol):
        hits.append(f"E={E:.6g}")
    for name, v in (("alphaN", a), ("betaD", b)):
        if v <= EXP_BOUNDS[0] + tol or v >= EXP_BOUNDS[1] - tol:
            hits.append(f"{name}={v:.6g}")
    if hits:
        raise DegenerateFit("fit hit a bound: " + ", ".join(hits))
    f = ScalingFit(E, math.exp(la), math.exp(lb), a, b, float(best.fun))
    resid = tuple(float(r) for r in np.log(predict_loss(f, N, D)) - logy)
    return ScalingFit(E, f.A, f.B, a, b, float(best.fun), resid)


def synthetic_points(f, n_grid=(4, 6), n_range=(1e7, 1e10), d_range=(1e9, 1e12), noise=0.0, seed=0):
    """Points on a log grid of (N, D) pairs with multiplicative lognormal noise."""
    rng = np.random.default_rng(seed)
    Ns = np.geomspace(*n_range, n_grid[0])
    Ds = np.geomspace(*d_range, n_grid[1])
    pts = []
    for n_, d_ in itertools.product(Ns, Ds):
        loss = predict_loss(f, n_, d_)
        if noise:
            loss *= math.exp(noise * rng.standard_normal())
        pts.append(ScalingPoint(float(n_), float(d_), float(loss)))
    return pts


def read_points_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != ["N", "D", "loss"]:
            raise CorruptFile(f"{path}: header must be N,D,loss")
        pts = []
        for k, row in enumerate(reader, 2):
            try:
                pts.append(ScalingPoint(float(row["N"]), float(row["D"]), float(row["loss"])))
            except (TypeError, ValueError) as exc:
                raise CorruptFile(f"{path}:{k}: {exc}") from exc
    return pts


def points_csv(points):
    lines = ["N,D,loss"] + [f"{p.N!r},{p.D!r},{p.loss!r}" for p in points]
    return "\n".join(lines) + "\n"


def fit_json(f, points):
    doc = f.to_dict()
    doc["points"] = [{"N": p.N, "D": p.D, "loss": p.loss, "residual": r} for p, r in zip(points, f.residuals)]
    return json.dumps(doc, indent=2) + "\n"


def read_fit_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
            return ScalingFit(float(doc["E"]), float(doc["A"]), float(doc["B"]), float(doc["alphaN"]), float(doc["betaD"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CorruptFile(f"{path}: not a fit document ({exc})") from exc


def iso_loss_table(f, compute_grid, n_points=25, span=100.0):
    """Rows (C, N, D, loss) along each iso-FLOP line, N swept around N_opt."""
    rows = []
    for C in compute_grid:
        n_opt = optimal_allocation(f, C)["N_opt"]
        for n_ in np.geomspace(n_opt / span**0.5, n_opt * span**0.5, n_points):
            d_ = C / (6.0 * n_)
            rows.append({"C": float(C), "N": float(n_), "D": float(d_), "loss": predict_loss(f, n_, d_)})
    return rows

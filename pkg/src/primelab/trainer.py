"""A tiny factorized denoiser over sub-token grids, trained with hand-written backprop.

Architecture, per token row i of a grid with cells y[i, j]::

    u_i = sum_j E[j, y[i, j]] + P[i]          (MASK uses value index b)
    c_i = u_i + mean_k u_k
    z_i = tanh(W1 c_i + bias1)
    logits[i, j] = W2[j] z_i + bias2[j]

Every masked cell gets softmax(logits[i, j]); unmasked cells are carried over
as point masses.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import subtok as subtok_mod
from .errors import BudgetExceeded, CorruptFile, DivergenceDetected, ShapeMismatch
from .kernels import LINEAR, MASK, TAG_MASK, Schedule, alpha, keyed_uniform
from .oracle import Instance, Quadrature, TokenDist, enumeration_budget, exact_posterior

PARAM_NAMES = ("E", "P", "W1", "bias1", "W2", "bias2")
CHECKPOINT_VERSION = 1


@dataclass
class ToyModel:
    L: int
    ell: int
    b: int
    d: int
    h: int
    params: dict

    @classmethod
    def init(cls, L, ell, b, d, h, seed=0, scale=0.1):
        rng = np.random.default_rng(seed)
        shapes = cls.shapes(L, ell, b, d, h)
        params = {}
        for name, shape in shapes.items():
            if name.startswith("bias"):
                params[name] = np.zeros(shape)
            else:
                fan_in = {"E": 1, "P": 1, "W1": d, "W2": h}[name]
                params[name] = rng.normal(0.0, scale / math.sqrt(fan_in) if fan_in > 1 else scale, size=shape)
        return cls(L, ell, b, d, h, params)

    @classmethod
    def zeros(cls, L, ell, b, d, h):
        return cls(L, ell, b, d, h, {k: np.zeros(s) for k, s in cls.shapes(L, ell, b, d, h).items()})

    @staticmethod
    def shapes(L, ell, b, d, h):
        return {
            "E": (ell, b + 1, d),
            "P": (L, d),
            "W1": (h, d),
            "bias1": (h,),
            "W2": (ell, b, h),
            "bias2": (ell, b),
        }

    def copy(self):
        return replace(self, params={k: v.copy() for k, v in self.params.items()})

    def n_params(self):
        return sum(v.size for v in self.params.values())

    def check_grid(self, yt):
        yt = np.asarray(yt, dtype=np.int64)
        if yt.ndim == 2:
            yt = yt[None]
        if yt.ndim != 3 or yt.shape[1:] != (self.L, self.ell):
            raise ShapeMismatch(f"grid shape {yt.shape} does not match (B, {self.L}, {self.ell})")
        if np.any((yt != MASK) & ((yt < 0) | (yt >= self.b))):
            raise ShapeMismatch("cell value outside [0, b) and not MASK")
        return yt


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_cache(m, yt):
    p = m.params
    idx = np.where(yt == MASK, m.b, yt)
    u = p["P"][None].copy()
    for j in range(m.ell):
        u = u + p["E"][j][idx[:, :, j]]
    c = u + u.mean(axis=1, keepdims=True)
    z = np.tanh(c @ p["W1"].T + p["bias1"])
    logits = np.einsum("blh,jvh->bljv", z, p["W2"]) + p["bias2"]
    return {"idx": idx, "c": c, "z": z, "logits": logits}


def forward_logits(m, yt):
    yt = m.check_grid(yt)
    return _forward_cache(m, yt)["logits"]


def forward(m, yt):
    """Per-cell categoricals ``(B, L, ell, b)``; a 2-D grid gives ``(L, ell, b)``."""
    single = np.asarray(yt).ndim == 2
    yt = m.check_grid(yt)
    probs = _softmax(_forward_cache(m, yt)["logits"])
    observed = yt != MASK
    onehot = np.eye(m.b)[np.where(observed, yt, 0)]
    probs = np.where(observed[..., None], onehot, probs)
    return probs[0] if single else probs


def _backward(m, cache, dlogits):
    p = m.params
    z, c, idx = cache["z"], cache["c"], cache["idx"]
    g = {}
    g["W2"] = np.einsum("bljv,blh->jvh", dlogits, z)
    g["bias2"] = dlogits.sum(axis=(0, 1))
    dz = np.einsum("bljv,jvh->blh", dlogits, p["W2"])
    dpre = dz * (1.0 - z * z)
    g["W1"] = np.einsum("blh,bld->hd", dpre, c)
    g["bias1"] = dpre.sum(axis=(0, 1))
    dc = dpre @ p["W1"]
    du = dc + dc.mean(axis=1, keepdims=True)
    g["P"] = du.sum(axis=0)
    gE = np.zeros_like(p["E"])
    flat = du.reshape(-1, m.d)
    for j in range(m.ell):
        np.add.at(gE[j], idx[:, :, j].reshape(-1), flat)
    g["E"] = gE
    return g


def _alpha_vec(schedule, t):
    pairs = np.array([alpha(schedule, float(v)) for v in t])
    return pairs[:, 0], pairs[:, 1]


def draw_times(rng, n, t_floor):
    return t_floor + (1.0 - t_floor) * rng.random(n)


def masked_loss(m, y0, yt, weights, need_grad=True):
    """Mean over the batch of weight * sum of masked-cell NLL, with gradients."""
    yt = m.check_grid(yt)
    y0 = m.check_grid(y0)
    cache = _forward_cache(m, yt)
    logits = cache["logits"]
    z = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logz
    masked = yt == MASK
    nll = -np.take_along_axis(logp, y0[..., None], axis=-1)[..., 0]
    per_example = weights * (nll * masked).sum(axis=(1, 2))
    B = y0.shape[0]
    loss = float(per_example.mean())
    if not need_grad:
        return loss, None, per_example
    probs = np.exp(logp)
    onehot = np.eye(m.b)[y0]
    dlogits = (probs - onehot) * (masked * (weights / B)[:, None, None])[..., None]
    return loss, _backward(m, cache, dlogits), per_example


def corrupt(y0, schedule, t, seeds, step):
    """Forward-mask a batch; example k uses keyed stream ``seeds[k]``."""
    a, _ = _alpha_vec(schedule, t)
    u = keyed_uniform(np.asarray(seeds, dtype=np.uint64), TAG_MASK, step, y0.shape)
    return np.where(u >= a[:, None, None], MASK, y0)


def loss_mc(m, y0_batch, s=LINEAR, seed=0, t_floor=1e-3, step=0, t=None, need_grad=True):
    """Monte Carlo weighted cross-entropy with w(t) = alpha'/(alpha - 1)."""
    y0 = m.check_grid(y0_batch)
    B = y0.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, int(step)])
    drawn = draw_times(rng, B, t_floor)
    t = drawn if t is None else np.asarray(t, dtype=np.float64)
    seeds = rng.integers(0, 2**63, size=B, dtype=np.uint64)
    yt = corrupt(y0, s, t, seeds, step)
    w = np.array([s.weight(float(v)) for v in t])
    loss, grads, _ = masked_loss(m, y0, yt, w, need_grad)
    return {"loss": loss, "grads": grads, "t": t, "yt": yt}


@dataclass
class TrainConfig:
    V: int
    ell: int
    L: int
    d: int = 32
    h: int = 64
    strategy: str = "identity"
    st_seed: int | None = None
    steps: int = 5000
    batch: int = 64
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    t_floor: float = 1e-3
    init_scale: float = 0.1
    schedule: Schedule = field(default=LINEAR)

    def __post_init__(self):
        for name in ("V", "ell", "L", "d", "h", "steps", "batch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not 0.0 < self.t_floor <= 0.1:
            raise ValueError("t_floor must lie in (0, 0.1]")

    def subtokenizer(self, counts=None):
        return subtok_mod.build(self.V, self.ell, self.strategy, seed=self.st_seed, counts=counts)

    def to_dict(self):
        out = asdict(self)
        out["schedule"] = str(self.schedule)
        return out


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def update(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class MarkovSource:
    """Sticky first-order chain: stay with probability ``stay``, else jump to a Zipf draw."""

    def __init__(self, V, L, stay=0.6, exponent=1.0):
        self.V, self.L = V, L
        w = np.arange(1, V + 1, dtype=np.float64) ** -exponent
        self.init = w / w.sum()
        self.trans = stay * np.eye(V) + (1.0 - stay) * self.init[None, :]
        self.trans /= self.trans.sum(axis=1, keepdims=True)
        self._cum_init = np.cumsum(self.init)
        self._cum_trans = np.cumsum(self.trans, axis=1)

    def dist(self):
        return TokenDist.markov(self.init, self.trans, self.L)

    def sample(self, n, rng):
        u = rng.random((n, self.L))
        x = np.empty((n, self.L), dtype=np.int64)
        x[:, 0] = np.minimum(np.searchsorted(self._cum_init, u[:, 0], side="right"), self.V - 1)
        for i in range(1, self.L):
            rows = self._cum_trans[x[:, i - 1]]
            x[:, i] = np.minimum((u[:, i : i + 1] >= rows).sum(axis=1), self.V - 1)
        return x


def train(cfg, data, st=None, log_every=1):
    """Adam on ``loss_mc``. ``data(n, rng)`` returns an ``(n, L)`` token batch."""
    st = st or cfg.subtokenizer()
    if st.vocab_size != cfg.V or st.ell != cfg.ell:
        raise ShapeMismatch("subtokenizer does not match the config")
    model = ToyModel.init(cfg.L, cfg.ell, st.base, cfg.d, cfg.h, seed=cfg.seed, scale=cfg.init_scale)
    opt = Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed)
    history = []
    initial = None
    streak = 0
    for step in range(cfg.steps):
        tokens = data(cfg.batch, rng)
        y0 = st.digits[tokens]
        out = loss_mc(model, y0, cfg.schedule, seed=cfg.seed, t_floor=cfg.t_floor, step=step)
        loss = out["loss"]
        if not math.isfinite(loss):
            raise DivergenceDetected(f"non-finite loss at step {step}")
        if initial is None:
            initial = loss
        streak = streak + 1 if loss > 10.0 * initial else 0
        if streak >= 100:
            raise DivergenceDetected(f"loss above 10x its initial value for 100 steps (step {step})")
        if cfg.lr > 0:
            opt.update(model.params, out["grads"])
        if step % log_every == 0 or step == cfg.steps - 1:
            history.append((step, loss))
    return {"model": model, "history": history, "subtokenizer": st}


# -- evaluation --------------------------------------------------------------
class PosteriorModel:
    """Wraps a ``grid -> (L, ell, b)`` posterior so it evaluates like a model."""

    def __init__(self, posterior, L, ell, b):
        self.posterior, self.L, self.ell, self.b = posterior, L, ell, b

    @classmethod
    def exact(cls, q, st, budget=None):
        return cls(exact_posterior(q, st, budget), q.L, st.ell, st.base)

    def predict(self, yt):
        yt = np.asarray(yt, dtype=np.int64)
        return np.stack([self.posterior(g) for g in yt])


def predict(model, yt):
    if isinstance(model, PosteriorModel):
        return model.predict(yt)
    return forward(model, yt)


def _cell_nll(model, y0, yt):
    probs = predict(model, yt)
    picked = np.take_along_axis(probs, y0[..., None], axis=-1)[..., 0]
    with np.errstate(divide="ignore"):
        return np.where(yt == MASK, -np.log(picked), 0.0).sum(axis=(1, 2))


def eval_nelbo_exact(model, q, st, quad=None, budget=None, chunk=4096):
    """Expected weighted NLL over every (y0, mask) pair at the quadrature nodes."""
    quad = quad or Quadrature()
    inst = Instance(q, st, budget)
    n = inst.n
    if inst.p.shape[0] * (1 << n) > enumeration_budget(budget) * 4096:
        raise BudgetExceeded("exact evaluation over (y0, mask) pairs exceeds the budget")
    masks = np.arange(1 << n)
    keep = ((masks[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
    per_mask = np.zeros(1 << n)
    codes = inst.codes
    pairs_y = np.repeat(np.arange(codes.shape[0]), 1 << n)
    pairs_m = np.tile(masks, codes.shape[0])
    for lo in range(0, pairs_y.size, chunk):
        ys, ms = pairs_y[lo : lo + chunk], pairs_m[lo : lo + chunk]
        y0 = codes[ys]
        yt = np.where(keep[ms], y0, MASK)
        nll = _cell_nll(model, y0.reshape(-1, inst.L, inst.ell), yt.reshape(-1, inst.L, inst.ell))
        np.add.at(per_mask, ms, inst.p[ys] * nll)
    return quad.integrate(lambda s: float(np.dot(inst.mask_probs(s), per_mask)) / (1.0 - s))


def eval_nelbo_mc(model, y0_source, st, L, quad=None, samples_per_node=256, seed=0):
    """MC estimate at the quadrature nodes; returns ``(value, standard_error)``.

    ``y0_source(n, rng)`` supplies token sequences (a sampler or a held-out set).
    """
    quad = quad or Quadrature()
    nodes, weights = quad.rule
    rng = np.random.default_rng(seed)
    value, var = 0.0, 0.0
    for k, (s, w) in enumerate(zip(nodes, weights)):
        tokens = y0_source(samples_per_node, rng)
        y0 = st.digits[tokens]
        u = keyed_uniform(rng.integers(0, 2**63, size=samples_per_node, dtype=np.uint64), TAG_MASK, k, y0.shape)
        yt = np.where(u >= s, MASK, y0)
        nll = _cell_nll(model, y0, yt)
        scale = w / (1.0 - s)
        value += scale * float(nll.mean())
        var += scale**2 * float(nll.var(ddof=1)) / samples_per_node
    return value, math.sqrt(var)


def eval_nelbo(model, q=None, st=None, quad=None, budget=None, source=None, samples_per_node=256, seed=0):
    """Exact when ``q`` is enumerable, else MC over ``source`` (or samples of ``q``)."""
    if q is not None:
        try:
            return {"value": eval_nelbo_exact(model, q, st, quad, budget), "stderr": 0.0, "method": "exact"}
        except BudgetExceeded:
            if source is None:
                seqs, probs = q.support()
                cum = np.cumsum(probs)

                def source(n, rng):
                    return seqs[np.minimum(np.searchsorted(cum, rng.random(n), side="right"), len(probs) - 1)]

    if source is None:
        raise ValueError("need an enumerable TokenDist or a sequence source")
    value, se = eval_nelbo_mc(model, source, st, model.L, quad, samples_per_node, seed)
    return {"value": value, "stderr": se, "method": "mc"}


def held_out_source(tokens):
    tokens = np.asarray(tokens, dtype=np.int64)

    def source(n, rng):
        return tokens[rng.integers(0, tokens.shape[0], size=n)]

    return source


# -- gradient check ------------------------------------------------------------
def gradcheck(m, y0, s=LINEAR, seed=0, n_checks=20, h=1e-5, check_seed=0):
    """Compare analytic and central-difference gradients on random coordinates."""
    base = loss_mc(m, y0, s, seed=seed)
    t = base["t"]
    rng = np.random.default_rng(check_seed)
    names = list(PARAM_NAMES)
    sizes = np.array([m.params[k].size for k in names], dtype=np.float64)
    rows = []
    for _ in range(n_checks):
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        flat = int(rng.integers(m.params[name].size))
        pos = np.unravel_index(flat, m.params[name].shape)
        analytic = float(base["grads"][name][pos])
        orig = m.params[name][pos]
        m.params[name][pos] = orig + h
        up = loss_mc(m, y0, s, seed=seed, t=t, need_grad=False)["loss"]
        m.params[name][pos] = orig - h
        down = loss_mc(m, y0, s, seed=seed, t=t, need_grad=False)["loss"]
        m.params[name][pos] = orig
        numeric = (up - down) / (2.0 * h)
        rel = abs(analytic - numeric) / (abs(analytic) + 1e-8)
        rows.append({"param": name, "index": [int(v) for v in pos], "analytic": analytic, "numeric": numeric, "rel_err": rel})
    return rows


# -- persistence ------------------------------------------------------------------
def checkpoint_dict(m, st=None, cfg=None):
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "dims": {"L": m.L, "ell": m.ell, "b": m.b, "d": m.d, "h": m.h},
        "params": {k: m.params[k].tolist() for k in PARAM_NAMES},
    }
    if st is not None:
        doc["subtokenizer"] = st.to_dict()
    if cfg is not None:
        doc["config"] = cfg.to_dict()
    return doc


def save_checkpoint(path, m, st=None, cfg=None):
    subtok_mod.atomic_write_text(path, json.dumps(checkpoint_dict(m, st, cfg)) + "\n")


def load_checkpoint(path):
    """Return ``(model, subtokenizer or None)``."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if int(doc["format_version"]) != CHECKPOINT_VERSION:
            raise CorruptFile(f"unsupported checkpoint version {doc['format_version']}")
        dims = {k: int(v) for k, v in doc["dims"].items()}
        shapes = ToyModel.shapes(dims["L"], dims["ell"], dims["b"], dims["d"], dims["h"])
        params = {}
        for k, shape in shapes.items():
            arr = np.asarray(doc["params"][k], dtype=np.float64)
            if arr.shape != shape:
                raise CorruptFile(f"parameter {k} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise CorruptFile(f"parameter {k} has non-finite entries")
            params[k] = arr
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CorruptFile):
            raise
        raise CorruptFile(f"{path}: malformed checkpoint ({exc})") from exc
    st = subtok_mod.Subtokenizer.from_dict(doc["subtokenizer"]) if "subtokenizer" in doc else None
    return ToyModel(dims["L"], dims["ell"], dims["b"], dims["d"], dims["h"], params), st


def history_csv(history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss"])
    for step, loss in history:
        w.writerow([step, repr(float(loss))])
    return buf.getvalue()

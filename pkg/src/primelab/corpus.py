"""Token frequency ingestion and sub-token entropy audits.

Inputs are pre-tokenized ids: either a newline-delimited id stream or a TSV
frequency table (``token_id<TAB>count``, ids strictly increasing).
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import CorruptFile, EmptyCounts, TokenOutOfRange
from .subtok import atomic_write_text, base_for, build

CHUNK = 1 << 16


@dataclass(frozen=True, eq=False)
class TokenCounts:
    V: int
    counts: np.ndarray
    total: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (self.V,):
            raise ValueError(f"counts must have length {self.V}")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if int(counts.sum()) != int(self.total):
            raise ValueError("total does not equal the sum of counts")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "total", int(self.total))

    @classmethod
    def from_counts(cls, counts):
        counts = np.asarray(counts, dtype=np.int64)
        return cls(counts.shape[0], counts, int(counts.sum()))

    def __eq__(self, other):
        return isinstance(other, TokenCounts) and self.V == other.V and np.array_equal(self.counts, other.counts)

    def probs(self):
        if self.total <= 0:
            raise EmptyCounts("no tokens counted")
        return self.counts / float(self.total)


def count_tokens(stream, V, chunk=CHUNK):
    """Histogram an iterable of ids without materializing it."""
    counts = np.zeros(V, dtype=np.int64)
    it = iter(stream)
    offset = 0
    while True:
        block = np.fromiter(itertools.islice(it, chunk), dtype=np.int64)
        if block.size == 0:
            break
        part, bad = backend.count_ids(block, V)
        if part is None:
            pos = offset + bad
            raise TokenOutOfRange(f"token id {int(block[bad])} at position {pos} outside [0, {V})", pos)
        counts += part
        offset += block.size
    return TokenCounts(V, counts, offset)


def merge_counts(parts):
    parts = list(parts)
    if not parts:
        raise ValueError("nothing to merge")
    V = parts[0].V
    if any(p.V != V for p in parts):
        raise ValueError("shards disagree on V")
    total = np.zeros(V, dtype=np.int64)
    for p in parts:
        total += p.counts
    return TokenCounts(V, total, int(total.sum()))


def count_shards(shards, V):
    """Count disjoint shards independently and add the histograms."""
    return merge_counts(count_tokens(s, V) for s in shards)


def token_cdf(c):
    if c.total <= 0:
        raise EmptyCounts("CDF of an empty histogram")
    cdf = np.cumsum(c.counts, dtype=np.float64) / float(c.total)
    cdf[-1] = 1.0
    return cdf


def cdf_deviation(c):
    """Max absolute gap between the CDF and the uniform diagonal k/V."""
    cdf = token_cdf(c)
    diag = np.arange(1, c.V + 1) / c.V
    return float(np.max(np.abs(cdf - diag)))


def _entropy_bits(p):
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum()) if p.size else 0.0


def subtoken_entropies(c, st):
    """Per-position entropy (bits) of the sub-token marginals under ``st``."""
    if c.V != st.vocab_size:
        raise ValueError(f"counts V={c.V} != subtokenizer V={st.vocab_size}")
    p = c.probs()
    per = np.array(
        [_entropy_bits(np.bincount(st.digits[:, j], weights=p, minlength=st.base)) for j in range(st.ell)]
    )
    per = np.clip(per, 0.0, math.log2(st.base))
    return {"per_position": per, "average": float(per.mean())}


def entropy_report(c, ell, seeds=(0,)):
    """Rows for identity, each random seed, greedy and the analytic maximum."""
    rows = []
    plans = [("identity", None)] + [("random", int(s)) for s in seeds] + [("greedy", None)]
    for strategy, seed in plans:
        st = build(c.V, ell, strategy, seed=seed, counts=c.counts if strategy == "greedy" else None)
        res = subtoken_entropies(c, st)
        rows.append(
            {
                "strategy": strategy,
                "seed": seed,
                "average_bits": res["average"],
                "per_position_bits": [float(v) for v in res["per_position"]],
            }
        )
    b = base_for(c.V, ell)
    rows.append({"strategy": "maximum", "seed": None, "average_bits": math.log2(b), "per_position_bits": [math.log2(b)] * ell})
    return rows


def zipf_probs(V, exponent=1.0):
    w = np.arange(1, V + 1, dtype=np.float64) ** -float(exponent)
    return w / w.sum()


def zipf_ids(V, n, exponent=1.0, seed=0):
    """``n`` ids drawn i.i.d. with p(x) proportional to (x+1)^-exponent."""
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(zipf_probs(V, exponent))
    ids = np.searchsorted(cdf, rng.random(n), side="right")
    return np.minimum(ids, V - 1).astype(np.int64)


# -- file formats ------------------------------------------------------------
def read_id_stream(path):
    """Yield ids from a newline-delimited file; blank lines are skipped."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield int(line)
            except ValueError as exc:
                raise CorruptFile(f"{path}:{lineno}: not an integer id: {line!r}") from exc


def write_id_stream(path, ids):
    atomic_write_text(path, "".join(f"{int(v)}\n" for v in ids))


def read_frequency_tsv(path, V=None):
    ids, vals = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            try:
                tid, cnt = int(parts[0]), int(parts[1])
            except (ValueError, IndexError) as exc:
                raise CorruptFile(f"{path}:{lineno}: expected token_id<TAB>count") from exc
            if len(parts) != 2 or cnt < 0 or tid < 0:
                raise CorruptFile(f"{path}:{lineno}: malformed row")
            if ids and tid <= ids[-1]:
                raise CorruptFile(f"{path}:{lineno}: ids must be strictly increasing")
            ids.append(tid)
            vals.append(cnt)
    if V is None:
        V = ids[-1] + 1 if ids else 0
    counts = np.zeros(V, dtype=np.int64)
    if ids:
        if ids[-1] >= V:
            raise TokenOutOfRange(f"token id {ids[-1]} outside [0, {V})", len(ids) - 1)
        counts[np.asarray(ids)] = vals
    return TokenCounts(V, counts, int(counts.sum()))


def write_frequency_tsv(path, c, skip_zero=True):
    lines = [f"{i}\t{int(n)}\n" for i, n in enumerate(c.counts) if n or not skip_zero]
    atomic_write_text(path, "".join(lines))


def rows_to_csv(rows, fields):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in fields})
    return buf.getvalue()


def report_rows_csv(rows):
    """One CSV row per (strategy, position) plus an ``avg`` row per strategy."""
    flat = []
    for r in rows:
        for j, h in enumerate(r["per_position_bits"]):
            flat.append({"strategy": r["strategy"], "seed": r["seed"], "position": j, "bits": repr(float(h))})
        flat.append({"strategy": r["strategy"], "seed": r["seed"], "position": "avg", "bits": repr(float(r["average_bits"]))})
    return rows_to_csv(flat, ["strategy", "seed", "position", "bits"])


def report_json(rows):
    return json.dumps(rows, indent=2) + "\n"

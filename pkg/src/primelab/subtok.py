"""Subtokenizers: token id -> permuted index -> fixed-length base-b digit code.

A :class:`Subtokenizer` is two lookup tables (``perm`` and the digit table)
plus their inverses. It is immutable once built.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import (
    CorruptFile,
    EmptyCounts,
    GranularityTooLarge,
    IncompatibleBases,
    InvalidCode,
    TokenOutOfRange,
)

FORMAT_VERSION = 1
STRATEGIES = ("identity", "random", "greedy", "custom")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def ceil_log2(n):
    return (int(n) - 1).bit_length()


def base_for(vocab_size, ell):
    """Smallest integer b with b**ell >= vocab_size, i.e. ceil(V ** (1/ell))."""
    b = max(1, int(round(vocab_size ** (1.0 / ell))))
    while b**ell < vocab_size:
        b += 1
    while b > 1 and (b - 1) ** ell >= vocab_size:
        b -= 1
    return b


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def perm_checksum(perm) -> str:
    raw = np.asarray(perm, dtype="<i8").tobytes()
    return f"{fnv1a64(raw):016x}"


def greedy_permutation(counts):
    """Alternate most/least frequent tokens onto consecutive new indices.

    Tokens are ranked by count (descending, ties by ascending id); rank
    sequence 0, V-1, 1, V-2, ... receives new indices 0, 1, 2, 3, ...
    """
    counts = np.asarray(counts)
    vocab_size = counts.shape[0]
    order = np.lexsort((np.arange(vocab_size), -counts.astype(np.float64)))
    ranks = np.empty(vocab_size, dtype=np.int64)
    lo, hi = 0, vocab_size - 1
    k = 0
    while lo <= hi:
        ranks[k] = lo
        k += 1
        if hi != lo:
            ranks[k] = hi
            k += 1
        lo += 1
        hi -= 1
    perm = np.empty(vocab_size, dtype=np.int64)
    perm[order[ranks]] = np.arange(vocab_size)
    return perm


@dataclass(frozen=True, eq=False)
class Subtokenizer:
    vocab_size: int
    ell: int
    base: int
    perm: np.ndarray
    strategy: str = "identity"
    seed: int | None = None
    format_version: int = FORMAT_VERSION
    inv_perm: np.ndarray = field(init=False, repr=False)
    digits: np.ndarray = field(init=False, repr=False)
    code_to_token: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        perm.setflags(write=False)
        object.__setattr__(self, "perm", perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.shape[0])
        inv.setflags(write=False)
        object.__setattr__(self, "inv_perm", inv)
        table = backend.base_digits(perm, self.base, self.ell)
        table.setflags(write=False)
        object.__setattr__(self, "digits", table)
        lookup = np.full(self.base**self.ell, -1, dtype=np.int64)
        lookup[perm] = np.arange(perm.shape[0])
        lookup.setflags(write=False)
        object.__setattr__(self, "code_to_token", lookup)

    @property
    def n_codes(self):
        return self.base**self.ell

    def __eq__(self, other):
        if not isinstance(other, Subtokenizer):
            return NotImplemented
        return (
            self.vocab_size == other.vocab_size
            and self.ell == other.ell
            and self.base == other.base
            and self.strategy == other.strategy
            and self.seed == other.seed
            and np.array_equal(self.perm, other.perm)
        )

    def __hash__(self):
        return hash((self.vocab_size, self.ell, self.base, self.perm.tobytes()))

    def check(self):
        """Raise :class:`CorruptFile` if any structural invariant is broken."""
        V = self.vocab_size
        if V < 2 or self.ell < 1:
            raise CorruptFile(f"bad dimensions V={V} ell={self.ell}")
        if self.base != base_for(V, self.ell):
            raise CorruptFile(f"base {self.base} != ceil(V^(1/ell)) = {base_for(V, self.ell)}")
        if self.perm.shape != (V,) or not np.array_equal(np.sort(self.perm), np.arange(V)):
            raise CorruptFile("perm is not a permutation of [0, V)")
        if self.strategy not in STRATEGIES:
            raise CorruptFile(f"unknown strategy {self.strategy!r}")
        if self.strategy == "identity" and not np.array_equal(self.perm, np.arange(V)):
            raise CorruptFile("identity strategy with non-identity perm")
        if self.strategy == "random":
            if self.seed is None:
                raise CorruptFile("random strategy without seed")
            if not np.array_equal(self.perm, backend.fisher_yates(V, self.seed)):
                raise CorruptFile("perm does not match its seed")

    # -- persistence -------------------------------------------------------
    def to_dict(self):
        return {
            "format_version": self.format_version,
            "V": self.vocab_size,
            "ell": self.ell,
            "b": self.base,
            "strategy": self.strategy,
            "seed": self.seed,
            "perm": [int(v) for v in self.perm],
            "checksum": perm_checksum(self.perm),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def save(self, path):
        atomic_write_text(path, self.to_json() + "\n")

    @classmethod
    def from_dict(cls, doc):
        try:
            version = int(doc["format_version"])
            perm = np.asarray(doc["perm"], dtype=np.int64)
            checksum = doc["checksum"]
            st = cls(
                vocab_size=int(doc["V"]),
                ell=int(doc["ell"]),
                base=int(doc["b"]),
                perm=perm,
                strategy=doc["strategy"],
                seed=None if doc.get("seed") is None else int(doc["seed"]),
                format_version=version,
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise CorruptFile(f"malformed subtokenizer document: {exc}") from exc
        if version != FORMAT_VERSION:
            raise CorruptFile(f"unsupported format_version {version}")
        if checksum != perm_checksum(perm):
            raise CorruptFile("perm checksum mismatch")
        st.check()
        return st

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorruptFile(f"{path}: not JSON ({exc})") from exc
        return cls.from_dict(doc)


def build(vocab_size, ell, strategy="identity", seed=None, counts=None):
    """Build a subtokenizer with ``b = ceil(V ** (1/ell))``.

    ``strategy`` is ``"identity"``, ``"random"`` (needs ``seed``) or
    ``"greedy"`` (needs ``counts``).
    """
    V = int(vocab_size)
    ell = int(ell)
    if V < 2:
        raise ValueError("vocab_size must be >= 2")
    if ell < 1:
        raise ValueError("ell must be >= 1")
    if ell > ceil_log2(V):
        raise GranularityTooLarge(f"ell={ell} exceeds ceil(log2 V)={ceil_log2(V)}")
    if strategy == "identity":
        perm = np.arange(V, dtype=np.int64)
        seed = None
    elif strategy == "random":
        if seed is None:
            raise ValueError("random strategy needs a seed")
        seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        perm = backend.fisher_yates(V, seed)
    elif strategy == "greedy":
        if counts is None:
            raise ValueError("greedy strategy needs counts")
        counts = np.asarray(counts)
        if counts.shape != (V,):
            raise ValueError(f"counts must have length {V}")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if not np.any(counts > 0):
            raise EmptyCounts("greedy assignment needs at least one positive count")
        perm = greedy_permutation(counts)
        seed = None
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return Subtokenizer(V, ell, base_for(V, ell), perm, strategy, seed)


def with_perm(vocab_size, ell, perm):
    """Subtokenizer over an explicit permutation, e.g. a brute-force optimum."""
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (vocab_size,) or not np.array_equal(np.sort(perm), np.arange(vocab_size)):
        raise ValueError("perm is not a permutation")
    strategy = "identity" if np.array_equal(perm, np.arange(vocab_size)) else "custom"
    return Subtokenizer(int(vocab_size), int(ell), base_for(vocab_size, ell), perm, strategy, None)


def encode(st, x):
    x = int(x)
    if not 0 <= x < st.vocab_size:
        raise TokenOutOfRange(f"token {x} outside [0, {st.vocab_size})")
    return [int(d) for d in st.digits[x]]


def encode_many(st, tokens):
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= st.vocab_size):
        bad = int(np.flatnonzero((tokens < 0) | (tokens >= st.vocab_size))[0])
        raise TokenOutOfRange(f"token at flat position {bad} outside [0, {st.vocab_size})", bad)
    return st.digits[tokens]


def code_value(code, b):
    value = 0
    for d in code:
        value = value * b + int(d)
    return value


def decode(st, code):
    code = list(code)
    if len(code) != st.ell:
        raise InvalidCode(f"code length {len(code)} != ell={st.ell}")
    if any(not 0 <= int(d) < st.base for d in code):
        raise InvalidCode(f"digit outside [0, {st.base})")
    value = code_value(code, st.base)
    if value >= st.vocab_size:
        raise InvalidCode(f"code value {value} >= V={st.vocab_size}")
    return int(st.inv_perm[value])


def decode_many(st, codes):
    """Decode an ``(..., ell)`` digit array; raises on any unused code."""
    codes = np.asarray(codes, dtype=np.int64)
    if codes.shape[-1] != st.ell or codes.min(initial=0) < 0 or codes.max(initial=0) >= st.base:
        raise InvalidCode("codes have wrong length or out-of-range digits")
    weights = st.base ** np.arange(st.ell - 1, -1, -1, dtype=np.int64)
    values = codes @ weights
    tokens = st.code_to_token[values]
    if np.any(tokens < 0):
        raise InvalidCode("unused code in batch")
    return tokens


def refine(st1, code, ell2):
    """Split each base-b1 digit into ``ell2/ell1`` base-b2 digits (MSB first)."""
    ell1 = st1.ell
    if ell2 % ell1:
        raise IncompatibleBases(f"ell2={ell2} is not a multiple of ell1={ell1}")
    ratio = ell2 // ell1
    b2 = base_for(st1.vocab_size, ell2)
    if b2**ratio != st1.base:
        raise IncompatibleBases(f"b1={st1.base} != b2^{ratio} with b2={b2}")
    out = []
    for d in code:
        d = int(d)
        if not 0 <= d < st1.base:
            raise InvalidCode(f"digit {d} outside [0, {st1.base})")
        out.extend(int(v) for v in backend.base_digits([d], b2, ratio)[0])
    return out


def regranulate(st, ell2):
    """The subtokenizer at granularity ``ell2`` sharing ``st``'s permutation."""
    return Subtokenizer(st.vocab_size, ell2, base_for(st.vocab_size, ell2), st.perm, st.strategy, st.seed)


def atomic_write_text(path, text):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

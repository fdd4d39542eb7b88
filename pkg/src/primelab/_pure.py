"""Pure-Python/NumPy implementations of the hot kernels.

Every function here has a twin in ``_native.pyx`` with the same signature and
bit-identical results; ``primelab.backend`` picks one at import time.
"""
import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64_next(state):
    """Advance a splitmix64 state; returns ``(new_state, output)``."""
    state = (state + GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def fisher_yates(n, seed):
    arr = list(range(n))
    state = int(seed) & MASK64
    for i in range(n - 1, 0, -1):
        bound = i + 1
        threshold = (1 << 64) % bound
        while True:
            state, r = splitmix64_next(state)
            if r >= threshold:
                break
        j = r % bound
        arr[i], arr[j] = arr[j], arr[i]
    return np.asarray(arr, dtype=np.int64)


def base_digits(values, b, ell):
    values = np.asarray(values, dtype=np.int64)
    out = np.empty((values.shape[0], ell), dtype=np.int64)
    rest = values.copy()
    for j in range(ell - 1, -1, -1):
        out[:, j] = rest % b
        rest //= b
    return out


def count_ids(ids, vocab_size):
    ids = np.asarray(ids, dtype=np.int64)
    bad = np.flatnonzero((ids < 0) | (ids >= vocab_size))
    if bad.size:
        return None, int(bad[0])
    return np.bincount(ids, minlength=vocab_size).astype(np.int64), -1


def _entropy(t):
    p = t[t > 0]
    return float(-(p * np.log(p)).sum())


def subset_entropies(joint, n, b):
    """Entropy (nats) of the marginal over every subset of the ``n`` cells.

    ``joint`` is the flat C-ordered table over ``b**n`` codes, cell 0 most
    significant. Bit ``j`` of the output index set means cell ``j`` is kept.
    """
    full = np.asarray(joint, dtype=np.float64).reshape((b,) * n) if n else np.asarray(joint, dtype=np.float64)
    out = np.zeros(1 << n, dtype=np.float64)

    def visit(t, kept, mask, limit):
        out[mask] = _entropy(t)
        for r, j in enumerate(kept):
            if j >= limit:
                break
            visit(t.sum(axis=r), kept[:r] + kept[r + 1:], mask & ~(1 << j), j)

    visit(full, tuple(range(n)), (1 << n) - 1, n)
    return out

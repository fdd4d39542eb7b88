# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_pure.py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport log
from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t _mix(uint64_t* state) nogil:
    state[0] += GOLDEN
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def fisher_yates(Py_ssize_t n, seed):
    cdef uint64_t state = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef cnp.ndarray[int64_t, ndim=1] out = np.arange(n, dtype=np.int64)
    cdef int64_t[::1] arr = out
    cdef Py_ssize_t i, j
    cdef uint64_t bound, threshold, r
    cdef int64_t tmp
    with nogil:
        i = n - 1
        while i > 0:
            bound = <uint64_t>(i + 1)
            threshold = (<uint64_t>0 - bound) % bound
            while True:
                r = _mix(&state)
                if r >= threshold:
                    break
            j = <Py_ssize_t>(r % bound)
            tmp = arr[i]
            arr[i] = arr[j]
            arr[j] = tmp
            i -= 1
    return out


def base_digits(values, int64_t b, Py_ssize_t ell):
    cdef const int64_t[::1] vals = np.ascontiguousarray(values, dtype=np.int64)
    cdef Py_ssize_t m = vals.shape[0]
    out_arr = np.empty((m, ell), dtype=np.int64)
    cdef int64_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef int64_t rest
    with nogil:
        for i in range(m):
            rest = vals[i]
            j = ell - 1
            while j >= 0:
                out[i, j] = rest % b
                rest = rest // b
                j -= 1
    return out_arr


def count_ids(ids, int64_t vocab_size):
    cdef const int64_t[::1] data = np.ascontiguousarray(ids, dtype=np.int64)
    counts_arr = np.zeros(vocab_size, dtype=np.int64)
    cdef int64_t[::1] counts = counts_arr
    cdef Py_ssize_t i, bad = -1
    cdef int64_t v
    with nogil:
        for i in range(data.shape[0]):
            v = data[i]
            if v < 0 or v >= vocab_size:
                bad = i
                break
            counts[v] += 1
    if bad >= 0:
        return None, int(bad)
    return counts_arr, -1


cdef double _entropy(double* t, long long size) nogil:
    cdef double acc = 0.0
    cdef long long i
    for i in range(size):
        if t[i] > 0.0:
            acc -= t[i] * log(t[i])
    return acc


cdef void _visit(double** bufs, int** kept, int depth, int k, long long mask,
                 int limit, int b, long long* powb, double* out) nogil:
    cdef double* t = bufs[depth]
    out[mask] = _entropy(t, powb[k])
    cdef double* child = bufs[depth + 1]
    cdef int* ck = kept[depth + 1]
    cdef int r, j, q, v
    cdef long long o, i, outer, inner, base
    cdef double s
    for r in range(k):
        j = kept[depth][r]
        if j >= limit:
            break
        outer = powb[r]
        inner = powb[k - 1 - r]
        for o in range(outer):
            base = o * b * inner
            for i in range(inner):
                s = 0.0
                for v in range(b):
                    s += t[base + v * inner + i]
                child[o * inner + i] = s
        q = 0
        for v in range(k):
            if v != r:
                ck[q] = kept[depth][v]
                q += 1
        _visit(bufs, kept, depth + 1, k - 1, mask & ~(1LL << j), j, b, powb, out)


def subset_entropies(joint, int n, int b):
    cdef const double[::1] src = np.ascontiguousarray(joint, dtype=np.float64).ravel()
    out_arr = np.zeros(1 << n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef long long* powb = <long long*>malloc((n + 1) * sizeof(long long))
    cdef double** bufs = <double**>malloc((n + 1) * sizeof(double*))
    cdef int** kept = <int**>malloc((n + 1) * sizeof(int*))
    cdef int d, j
    cdef long long i
    try:
        powb[0] = 1
        for d in range(1, n + 1):
            powb[d] = powb[d - 1] * b
        for d in range(n + 1):
            bufs[d] = <double*>malloc(powb[n - d] * sizeof(double))
            kept[d] = <int*>malloc((n + 1) * sizeof(int))
        for i in range(powb[n]):
            bufs[0][i] = src[i]
        for j in range(n):
            kept[0][j] = j
        with nogil:
            _visit(bufs, kept, 0, n, (1LL << n) - 1, n, b, powb, &out[0])
    finally:
        for d in range(n + 1):
            free(bufs[d])
            free(kept[d])
        free(bufs)
        free(kept)
        free(powb)
    return out_arr

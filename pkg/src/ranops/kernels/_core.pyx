# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: the fast twin of ``ranops.kernels.pure``.

Same tokenizer, same FNV-1a hashing, same summation order, same clipping
rules.  Any change here must be mirrored in ``pure.py``; the parity tests
assert bit-identical float64 output across both backends.
"""

from libc.math cimport sqrt

import numpy as np

cdef unsigned long long _FNV_OFFSET = 0xCBF29CE484222325ULL
cdef unsigned long long _FNV_PRIME = 0x100000001B3ULL


def tokenize(str text):
    """Split ``text`` into lowercase ASCII alphanumeric tokens."""
    cdef list tokens = []
    cdef list current = []
    cdef Py_ssize_t i, n = len(text)
    cdef Py_UCS4 ch
    cdef int code
    for i in range(n):
        ch = text[i]
        code = <int> ch
        if 65 <= code <= 90:  # A-Z
            code += 32
        if 97 <= code <= 122 or 48 <= code <= 57:  # a-z, 0-9
            current.append(chr(code))
        elif current:
            tokens.append("".join(current))
            current = []
    if current:
        tokens.append("".join(current))
    return tokens


cdef unsigned long long _fnv1a(str token):
    cdef unsigned long long h = _FNV_OFFSET
    cdef bytes raw = token.encode("ascii")
    cdef unsigned char b
    for b in raw:
        h = (h ^ <unsigned long long> b) * _FNV_PRIME
    return h


def embed_text(str text, int dim):
    """Feature-hash ``text`` into a unit-norm float64 vector of length ``dim``."""
    vec = np.zeros(dim, dtype=np.float64)
    cdef double[::1] buf = vec
    cdef unsigned long long h
    cdef Py_ssize_t bucket
    cdef double sign, acc, norm
    cdef int i
    for token in tokenize(text):
        h = _fnv1a(token)
        bucket = <Py_ssize_t> (h % <unsigned long long> dim)
        sign = 1.0 if ((h >> 62) & 1ULL) == 0 else -1.0
        buf[bucket] += sign
    acc = 0.0
    for i in range(dim):
        acc += buf[i] * buf[i]
    if acc == 0.0:
        buf[0] = 1.0
        return vec
    norm = sqrt(acc)
    for i in range(dim):
        buf[i] = buf[i] / norm
    return vec


def dot_scores(matrix, query):
    """Dot product of every row of ``matrix`` (n, d) against ``query`` (d,)."""
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    query = np.ascontiguousarray(query, dtype=np.float64)
    cdef double[:, ::1] m = matrix
    cdef double[::1] q = query
    cdef Py_ssize_t n = m.shape[0]
    cdef Py_ssize_t d = m.shape[1]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] scores = out
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += m[i, j] * q[j]
        scores[i] = acc
    return out


def waterfill(guaranteed, max_rate, demand, double capacity):
    """Allocate ``capacity`` across traffic classes (see the pure twin)."""
    guaranteed = np.ascontiguousarray(guaranteed, dtype=np.float64)
    max_rate = np.ascontiguousarray(max_rate, dtype=np.float64)
    demand = np.ascontiguousarray(demand, dtype=np.float64)
    cdef double[::1] gv = guaranteed
    cdef double[::1] mv = max_rate
    cdef double[::1] dv = demand
    cdef Py_ssize_t n = gv.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] alloc = out
    cdef Py_ssize_t i
    cdef double granted = 0.0
    cdef double unmet_total = 0.0
    cdef double cap_i, g, unmet, residual, share

    for i in range(n):
        cap_i = mv[i] if mv[i] < dv[i] else dv[i]
        g = gv[i]
        if g > cap_i:
            g = cap_i
        alloc[i] = g
        granted += g
        unmet = dv[i] - g
        if unmet > 0.0:
            unmet_total += unmet

    residual = capacity - granted
    if residual <= 0.0 or unmet_total <= 0.0:
        return out

    for i in range(n):
        unmet = dv[i] - alloc[i]
        if unmet <= 0.0:
            continue
        cap_i = mv[i] if mv[i] < dv[i] else dv[i]
        share = alloc[i] + residual * unmet / unmet_total
        alloc[i] = share if share < cap_i else cap_i
    return out

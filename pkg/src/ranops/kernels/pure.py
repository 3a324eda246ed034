"""Pure-Python kernels: the reference twin of ``ranops.kernels._core``.

Three hot loops live here: the hashing text embedder, the dense cosine
scan used by the retrieval index, and the water-filling throughput
allocator used by the simulator.  The compiled extension implements the
same arithmetic in the same order, so both backends produce bit-identical
float64 results (IEEE-754 doubles either way).  Keep the two files in
lockstep; the parity tests compare them for exact equality.

Tokenization is deliberately ASCII-only (A-Z folded to a-z, a-z0-9 kept,
everything else is a separator) so the compiled scanner and the Python
scanner agree on every input, including exotic Unicode.
"""

import math

import numpy as np

# FNV-1a, 64-bit
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def tokenize(text):
    """Split ``text`` into lowercase ASCII alphanumeric tokens."""
    tokens = []
    current = []
    for ch in text:
        code = ord(ch)
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


def _fnv1a(token):
    h = _FNV_OFFSET
    for b in token.encode("ascii"):
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def embed_text(text, dim):
    """Feature-hash ``text`` into a unit-norm float64 vector of length ``dim``.

    Each token lands in bucket ``hash % dim`` with a sign taken from bit 62
    of the hash (signed feature hashing keeps collision bias centered).
    A text with no tokens maps to the canonical first basis vector so the
    result is always unit norm.
    """
    vec = np.zeros(dim, dtype=np.float64)
    buf = vec  # same object; mirrors the memoryview in the compiled twin
    for token in tokenize(text):
        h = _fnv1a(token)
        bucket = h % dim
        sign = 1.0 if (h >> 62) & 1 == 0 else -1.0
        buf[bucket] += sign
    acc = 0.0
    for i in range(dim):
        acc += buf[i] * buf[i]
    if acc == 0.0:
        buf[0] = 1.0
        return vec
    norm = math.sqrt(acc)
    for i in range(dim):
        buf[i] = buf[i] / norm
    return vec


def dot_scores(matrix, query):
    """Dot product of every row of ``matrix`` (n, d) against ``query`` (d,).

    Rows and the query are unit vectors, so the result is the cosine
    similarity per row.  Summation runs in ascending column order to match
    the compiled twin exactly.
    """
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    query = np.ascontiguousarray(query, dtype=np.float64)
    n, d = matrix.shape
    scores = np.empty(n, dtype=np.float64)
    for i in range(n):
        acc = 0.0
        row = matrix[i]
        for j in range(d):
            acc += row[j] * query[j]
        scores[i] = acc
    return scores


def waterfill(guaranteed, max_rate, demand, capacity):
    """Allocate ``capacity`` across traffic classes.

    Guarantees are served first (never more than a class's demand or cap),
    then the residual capacity is split proportionally to each class's
    unmet demand, and every allocation is clipped at ``min(demand, max)``.
    Returns a float64 allocation vector; the sum never exceeds capacity.
    """
    guaranteed = np.ascontiguousarray(guaranteed, dtype=np.float64)
    max_rate = np.ascontiguousarray(max_rate, dtype=np.float64)
    demand = np.ascontiguousarray(demand, dtype=np.float64)
    n = guaranteed.shape[0]
    alloc = np.empty(n, dtype=np.float64)
    capacity = float(capacity)

    granted = 0.0
    unmet_total = 0.0
    for i in range(n):
        cap_i = max_rate[i] if max_rate[i] < demand[i] else demand[i]
        g = guaranteed[i]
        if g > cap_i:
            g = cap_i
        alloc[i] = g
        granted += g
        unmet = demand[i] - g
        if unmet > 0.0:
            unmet_total += unmet

    residual = capacity - granted
    if residual <= 0.0 or unmet_total <= 0.0:
        return alloc

    for i in range(n):
        unmet = demand[i] - alloc[i]
        if unmet <= 0.0:
            continue
        cap_i = max_rate[i] if max_rate[i] < demand[i] else demand[i]
        share = alloc[i] + residual * unmet / unmet_total
        alloc[i] = share if share < cap_i else cap_i
    return alloc

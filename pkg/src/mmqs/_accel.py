"""Numeric kernels with a numba path and a pure-numpy fallback.

Set ``MMQS_DISABLE_NUMBA=1`` to force the numpy implementations. Both variants
are always importable as ``*_numpy`` / ``*_numba`` so they can be compared;
the un-suffixed names are the ones selected for this process.
"""
import os

import numpy as np

_DISABLED = os.environ.get("MMQS_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional speedup
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not _DISABLED


# -- numpy reference path ------------------------------------------------------

def lcs_length_numpy(a, b):
    """Length of the longest common subsequence of two int arrays.

    One vectorised pass per row of ``a``: a match extends the diagonal, and a
    running maximum carries the best value along the row.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.size == 0 or b.size == 0:
        return 0
    prev = np.zeros(b.size + 1, dtype=np.int64)
    for tok in a:
        cand = np.maximum(prev[1:], np.where(b == tok, prev[:-1] + 1, 0))
        row = np.empty_like(prev)
        row[0] = 0
        np.maximum.accumulate(cand, out=row[1:])
        prev = row
    return int(prev[-1])


def cosine_rows_numpy(matrix, vec):
    matrix = np.asarray(matrix, dtype=np.float64)
    vec = np.asarray(vec, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", matrix, matrix)) * np.sqrt(vec @ vec)
    sims = (matrix @ vec) / norms
    return np.clip(sims, -1.0, 1.0)


# -- numba path -----------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _lcs_length_jit(a, b):
        m = a.shape[0]
        n = b.shape[0]
        prev = np.zeros(n + 1, dtype=np.int64)
        cur = np.zeros(n + 1, dtype=np.int64)
        for i in range(m):
            ai = a[i]
            for j in range(1, n + 1):
                if ai == b[j - 1]:
                    cur[j] = prev[j - 1] + 1
                elif prev[j] >= cur[j - 1]:
                    cur[j] = prev[j]
                else:
                    cur[j] = cur[j - 1]
            prev, cur = cur, prev
        return prev[n]

    @numba.njit(cache=True, nogil=True)
    def _cosine_rows_jit(matrix, vec):
        rows, dim = matrix.shape
        vv = 0.0
        for d in range(dim):
            vv += vec[d] * vec[d]
        out = np.empty(rows, dtype=np.float64)
        for r in range(rows):
            dot = 0.0
            mm = 0.0
            for d in range(dim):
                dot += matrix[r, d] * vec[d]
                mm += matrix[r, d] * matrix[r, d]
            s = dot / (np.sqrt(mm) * np.sqrt(vv))
            if s > 1.0:
                s = 1.0
            elif s < -1.0:
                s = -1.0
            out[r] = s
        return out

    def lcs_length_numba(a, b):
        a = np.ascontiguousarray(a, dtype=np.int64)
        b = np.ascontiguousarray(b, dtype=np.int64)
        if a.size == 0 or b.size == 0:
            return 0
        return int(_lcs_length_jit(a, b))

    def cosine_rows_numba(matrix, vec):
        matrix = np.ascontiguousarray(matrix, dtype=np.float64)
        vec = np.ascontiguousarray(vec, dtype=np.float64)
        return _cosine_rows_jit(matrix, vec)

else:  # pragma: no cover
    lcs_length_numba = lcs_length_numpy
    cosine_rows_numba = cosine_rows_numpy


if USE_NUMBA:
    lcs_length = lcs_length_numba
    cosine_rows = cosine_rows_numba
else:
    lcs_length = lcs_length_numpy
    cosine_rows = cosine_rows_numpy


def backend_name():
    return "numba" if USE_NUMBA else "numpy"

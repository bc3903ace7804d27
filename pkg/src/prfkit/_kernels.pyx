# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled top-k cosine kernel.

Fused score-and-select over the row matrix: one pass, float64
accumulation, no n-sized scratch sort. Contract matches _kernels_py.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"


def topk_dot(const float[:, ::1] rows, const float[::1] query, Py_ssize_t k):
    """Return (indices, scores) of the k highest dot products.

    Ties break toward the lower row index, so on an id-sorted matrix the
    order is total. Selection is insertion into a k-slot shortlist, O(n*k)
    worst case; k is small in practice.
    """
    cdef Py_ssize_t n = rows.shape[0]
    cdef Py_ssize_t d = rows.shape[1]
    if k > n:
        k = n
    best_idx_arr = np.empty(k, dtype=np.int64)
    best_score_arr = np.empty(k, dtype=np.float32)
    cdef long long[::1] best_idx = best_idx_arr
    cdef float[::1] best_score = best_score_arr
    cdef Py_ssize_t filled = 0
    cdef Py_ssize_t i, j, pos
    cdef double acc
    cdef float score

    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += <double> rows[i, j] * <double> query[j]
        score = <float> acc
        if filled == k:
            if score <= best_score[k - 1]:
                # Ties lose to the incumbent floor, which has a lower index.
                continue
            pos = k - 1
        else:
            pos = filled
            filled += 1
        while pos > 0 and score > best_score[pos - 1]:
            best_score[pos] = best_score[pos - 1]
            best_idx[pos] = best_idx[pos - 1]
            pos -= 1
        best_score[pos] = score
        best_idx[pos] = i
    return best_idx_arr[:filled], best_score_arr[:filled]

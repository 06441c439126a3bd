# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: fused LSTM gate nonlinearities and rank counting.

Gate columns are laid out as [input | forget | output | candidate], each H wide.
"""
import numpy as np

from libc.math cimport exp, tanh


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def lstm_gates_forward(const double[:, ::1] z, const double[:, ::1] c_prev):
    cdef Py_ssize_t B = z.shape[0]
    cdef Py_ssize_t H = c_prev.shape[1]
    if z.shape[1] != 4 * H or c_prev.shape[0] != B:
        raise ValueError("lstm_gates_forward: shape mismatch")
    gates_np = np.empty((B, 4 * H))
    c_np = np.empty((B, H))
    tc_np = np.empty((B, H))
    h_np = np.empty((B, H))
    cdef double[:, ::1] gates = gates_np
    cdef double[:, ::1] c = c_np
    cdef double[:, ::1] tc = tc_np
    cdef double[:, ::1] h = h_np
    cdef Py_ssize_t b, k
    cdef double ig, fg, og, cand
    with nogil:
        for b in range(B):
            for k in range(H):
                ig = _sigmoid(z[b, k])
                fg = _sigmoid(z[b, H + k])
                og = _sigmoid(z[b, 2 * H + k])
                cand = tanh(z[b, 3 * H + k])
                gates[b, k] = ig
                gates[b, H + k] = fg
                gates[b, 2 * H + k] = og
                gates[b, 3 * H + k] = cand
                c[b, k] = fg * c_prev[b, k] + ig * cand
                tc[b, k] = tanh(c[b, k])
                h[b, k] = og * tc[b, k]
    return gates_np, c_np, tc_np, h_np


def lstm_gates_backward(
    const double[:, ::1] gates,
    const double[:, ::1] c_prev,
    const double[:, ::1] tanh_c,
    const double[:, ::1] dh,
    const double[:, ::1] dc,
):
    cdef Py_ssize_t B = gates.shape[0]
    cdef Py_ssize_t H = c_prev.shape[1]
    if gates.shape[1] != 4 * H:
        raise ValueError("lstm_gates_backward: shape mismatch")
    dz_np = np.empty((B, 4 * H))
    dcp_np = np.empty((B, H))
    cdef double[:, ::1] dz = dz_np
    cdef double[:, ::1] dcp = dcp_np
    cdef Py_ssize_t b, k
    cdef double ig, fg, og, cand, t, dct
    with nogil:
        for b in range(B):
            for k in range(H):
                ig = gates[b, k]
                fg = gates[b, H + k]
                og = gates[b, 2 * H + k]
                cand = gates[b, 3 * H + k]
                t = tanh_c[b, k]
                dct = dc[b, k] + dh[b, k] * og * (1.0 - t * t)
                dz[b, k] = dct * cand * ig * (1.0 - ig)
                dz[b, H + k] = dct * c_prev[b, k] * fg * (1.0 - fg)
                dz[b, 2 * H + k] = dh[b, k] * t * og * (1.0 - og)
                dz[b, 3 * H + k] = dct * ig * (1.0 - cand * cand)
                dcp[b, k] = dct * fg
    return dz_np, dcp_np


def ranks_from_scores(const double[::1] scores, const long long[::1] positions):
    """1-based rank of each position under (score desc, index asc) ordering."""
    cdef Py_ssize_t z = scores.shape[0]
    cdef Py_ssize_t m = positions.shape[0]
    out_np = np.empty(m, dtype=np.int64)
    cdef long long[::1] out = out_np
    cdef Py_ssize_t i, j
    cdef long long p, r
    cdef double s
    with nogil:
        for i in range(m):
            p = positions[i]
            s = scores[p]
            r = 1
            # ties count only when they come earlier in index order
            for j in range(p):
                r += scores[j] >= s
            for j in range(p + 1, z):
                r += scores[j] > s
            out[i] = r
    return out_np


def cumulative_counts(const long long[::1] ranks, Py_ssize_t z):
    """R[j] = number of ranks <= j, for j = 0..z."""
    out_np = np.zeros(z + 1, dtype=np.int64)
    cdef long long[::1] out = out_np
    cdef Py_ssize_t i, n = ranks.shape[0]
    cdef long long r
    for i in range(n):
        r = ranks[i]
        if r < 1 or r > z:
            raise ValueError(f"rank {r} outside [1, {z}]")
        out[r] += 1
    with nogil:
        for i in range(1, z + 1):
            out[i] += out[i - 1]
    return out_np

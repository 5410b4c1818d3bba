"""Batched power-contraction kernels.

Batches are (B, n) arrays holding one vector per row. Every output row is
accumulated in a fixed order that depends only on the tensor and that row,
never on batch width or on the other rows. This is what makes a trial's
trajectory bitwise reproducible whether it runs alone or inside a batch
(BLAS gemm does not guarantee that). numba leaves FMA contraction off unless
fastmath is requested, and it is not.
"""

import numpy as np
from numba import njit

_CHUNK = 32


@njit(cache=True, nogil=True)
def _load_chunk(X, rows, r0, m, buf):
    n = X.shape[1]
    for bb in range(m):
        r = rows[r0 + bb]
        for c in range(n):
            buf[c, bb] = X[r, c]
    for bb in range(m, _CHUNK):
        for c in range(n):
            buf[c, bb] = 0.0


@njit(cache=True, nogil=True)
def bilinear_order3(T, Y, W, rows, out):
    """out[r, i] = sum_j Y[r, j] sum_c T[i, j, c] W[r, c] for r in ``rows``.

    T is C-contiguous with shape (n0, n1, n2); Y has n1 columns and W has n2.
    Passing Y = W = X gives the power contraction T(:, x, x). Two j-slices are
    processed per pass for register reuse; the per-row summation order is
    still plain left to right.
    """
    n0, n1, n2 = T.shape
    R = rows.shape[0]
    Yc = np.zeros((n1, _CHUNK))
    Wc = np.zeros((n2, _CHUNK))
    w0 = np.empty(_CHUNK)
    w1 = np.empty(_CHUNK)
    o = np.empty(_CHUNK)
    for r0 in range(0, R, _CHUNK):
        m = min(_CHUNK, R - r0)
        _load_chunk(Y, rows, r0, m, Yc)
        _load_chunk(W, rows, r0, m, Wc)
        for i in range(n0):
            for bb in range(_CHUNK):
                o[bb] = 0.0
            j = 0
            while j + 1 < n1:
                for bb in range(_CHUNK):
                    w0[bb] = 0.0
                    w1[bb] = 0.0
                for c in range(n2):
                    t0 = T[i, j, c]
                    t1 = T[i, j + 1, c]
                    for bb in range(_CHUNK):
                        v = Wc[c, bb]
                        w0[bb] += t0 * v
                        w1[bb] += t1 * v
                for bb in range(_CHUNK):
                    o[bb] += w0[bb] * Yc[j, bb]
                    o[bb] += w1[bb] * Yc[j + 1, bb]
                j += 2
            if j < n1:
                for bb in range(_CHUNK):
                    w0[bb] = 0.0
                for c in range(n2):
                    t0 = T[i, j, c]
                    for bb in range(_CHUNK):
                        w0[bb] += t0 * Wc[c, bb]
                for bb in range(_CHUNK):
                    o[bb] += w0[bb] * Yc[j, bb]
            for bb in range(m):
                out[rows[r0 + bb], i] = o[bb]
    return out


@njit(cache=True, nogil=True)
def symmetric_order3(T, X, rows, out):
    """out[r] = T(:, X[r], X[r]) for an exactly symmetric (n, n, n) tensor.

    The partial sums w_ij = sum_c T[i, j, c] x_c form a symmetric matrix, so
    only j <= i is computed. With T bitwise symmetric, w_ji is bitwise equal
    to w_ij and the output matches :func:`bilinear_order3` exactly.
    """
    n = T.shape[0]
    R = rows.shape[0]
    Xc = np.zeros((n, _CHUNK))
    wb = np.empty((n * (n + 1) // 2, _CHUNK))
    o = np.empty(_CHUNK)
    for r0 in range(0, R, _CHUNK):
        m = min(_CHUNK, R - r0)
        _load_chunk(X, rows, r0, m, Xc)
        for i in range(n):
            base = i * (i + 1) // 2
            j = 0
            while j + 1 <= i:
                p = base + j
                for bb in range(_CHUNK):
                    wb[p, bb] = 0.0
                    wb[p + 1, bb] = 0.0
                for c in range(n):
                    t0 = T[i, j, c]
                    t1 = T[i, j + 1, c]
                    for bb in range(_CHUNK):
                        v = Xc[c, bb]
                        wb[p, bb] += t0 * v
                        wb[p + 1, bb] += t1 * v
                j += 2
            if j == i:
                p = base + j
                for bb in range(_CHUNK):
                    wb[p, bb] = 0.0
                for c in range(n):
                    t0 = T[i, j, c]
                    for bb in range(_CHUNK):
                        wb[p, bb] += t0 * Xc[c, bb]
        for i in range(n):
            base = i * (i + 1) // 2
            for bb in range(_CHUNK):
                o[bb] = 0.0
            for j in range(n):
                p = base + j if j <= i else j * (j + 1) // 2 + i
                for bb in range(_CHUNK):
                    o[bb] += wb[p, bb] * Xc[j, bb]
            for bb in range(m):
                out[rows[r0 + bb], i] = o[bb]
    return out


@njit(cache=True, nogil=True)
def leave_one_order4(T, X, rows, out):
    """out[r] = T(:, X[r], X[r], X[r]) for every r in ``rows``; T is C-contiguous (n, n, n, n)."""
    n = T.shape[0]
    R = rows.shape[0]
    Vc = np.empty((n, _CHUNK))
    w = np.empty(_CHUNK)
    u = np.empty(_CHUNK)
    o = np.empty(_CHUNK)
    for r0 in range(0, R, _CHUNK):
        m = min(_CHUNK, R - r0)
        for bb in range(m):
            r = rows[r0 + bb]
            for c in range(n):
                Vc[c, bb] = X[r, c]
        for i in range(n):
            for bb in range(m):
                o[bb] = 0.0
            for j in range(n):
                for bb in range(m):
                    u[bb] = 0.0
                for l in range(n):
                    for bb in range(m):
                        w[bb] = 0.0
                    for c in range(n):
                        t = T[i, j, l, c]
                        for bb in range(m):
                            w[bb] += t * Vc[c, bb]
                    for bb in range(m):
                        u[bb] += w[bb] * Vc[l, bb]
                for bb in range(m):
                    o[bb] += u[bb] * Vc[j, bb]
            for bb in range(m):
                out[rows[r0 + bb], i] = o[bb]
    return out


@njit(cache=True, nogil=True)
def row_dots(X, Y, rows, out):
    """out[r] = <X[r], Y[r]> summed left to right."""
    n = X.shape[1]
    for q in range(rows.shape[0]):
        r = rows[q]
        acc = 0.0
        for i in range(n):
            acc += X[r, i] * Y[r, i]
        out[r] = acc
    return out

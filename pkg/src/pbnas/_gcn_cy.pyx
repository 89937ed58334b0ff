# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled graph-convolution kernels.

Contract mirrors `_gcn_np`: batched float64 arrays, relu activation,
parameter gradients summed over the batch. The matrices here are tiny
(L is the DAG node count, single digits), so flat loops beat BLAS
dispatch overhead.
"""

import numpy as np

from libc.string cimport memset


def conv_forward(double[:, :, ::1] ahat, double[:, :, ::1] h, double[:, ::1] w):
    """relu((ahat @ h) @ w) for a batch: (B,L,L) x (B,L,din) x (din,dout)."""
    cdef Py_ssize_t B = h.shape[0]
    cdef Py_ssize_t L = h.shape[1]
    cdef Py_ssize_t din = h.shape[2]
    cdef Py_ssize_t dout = w.shape[1]
    if ahat.shape[0] != B or ahat.shape[1] != L or ahat.shape[2] != L:
        raise ValueError("ahat shape inconsistent with h")
    if w.shape[0] != din:
        raise ValueError("w rows inconsistent with h feature width")
    out_arr = np.empty((B, L, dout), dtype=np.float64)
    tmp_arr = np.empty((L, din), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, ::1] tmp = tmp_arr
    cdef Py_ssize_t b, i, j, k, o
    cdef double a, s
    with nogil:
        for b in range(B):
            memset(&tmp[0, 0], 0, L * din * sizeof(double))
            for i in range(L):
                for k in range(L):
                    a = ahat[b, i, k]
                    if a != 0.0:
                        for j in range(din):
                            tmp[i, j] += a * h[b, k, j]
            for i in range(L):
                for o in range(dout):
                    s = 0.0
                    for j in range(din):
                        s += tmp[i, j] * w[j, o]
                    out[b, i, o] = s if s > 0.0 else 0.0
    return out_arr


def conv_backward(double[:, :, ::1] ahat, double[:, :, ::1] h_prev,
                  double[:, :, ::1] h_post, double[:, ::1] w,
                  double[:, :, ::1] g_post, bint need_g_ahat=False):
    """Backward pass of conv_forward; see the numpy twin for semantics."""
    cdef Py_ssize_t B = h_prev.shape[0]
    cdef Py_ssize_t L = h_prev.shape[1]
    cdef Py_ssize_t din = h_prev.shape[2]
    cdef Py_ssize_t dout = w.shape[1]
    if (ahat.shape[0] != B or ahat.shape[1] != L or ahat.shape[2] != L
            or h_post.shape[0] != B or h_post.shape[1] != L
            or h_post.shape[2] != dout or g_post.shape[0] != B
            or g_post.shape[1] != L or g_post.shape[2] != dout
            or w.shape[0] != din):
        raise ValueError("inconsistent shapes in conv_backward")
    g_w_arr = np.zeros((din, dout), dtype=np.float64)
    g_prev_arr = np.empty((B, L, din), dtype=np.float64)
    gz_arr = np.empty((L, dout), dtype=np.float64)
    gm_arr = np.empty((L, dout), dtype=np.float64)
    m_arr = np.empty((L, dout), dtype=np.float64)
    g_ahat_arr = np.empty((B, L, L), dtype=np.float64) if need_g_ahat else None
    cdef double[:, ::1] g_w = g_w_arr
    cdef double[:, :, ::1] g_prev = g_prev_arr
    cdef double[:, ::1] gz = gz_arr
    cdef double[:, ::1] gm = gm_arr
    cdef double[:, ::1] m = m_arr
    cdef double[:, :, ::1] g_ahat = g_ahat_arr if need_g_ahat else g_prev_arr
    cdef Py_ssize_t b, i, j, k, o
    cdef double s
    with nogil:
        for b in range(B):
            for i in range(L):
                for o in range(dout):
                    gz[i, o] = g_post[b, i, o] if h_post[b, i, o] > 0.0 else 0.0
            # gm = ahat[b]^T @ gz
            memset(&gm[0, 0], 0, L * dout * sizeof(double))
            for k in range(L):
                for i in range(L):
                    s = ahat[b, k, i]
                    if s != 0.0:
                        for o in range(dout):
                            gm[i, o] += s * gz[k, o]
            # g_w += h_prev[b]^T @ gm
            for i in range(L):
                for j in range(din):
                    s = h_prev[b, i, j]
                    if s != 0.0:
                        for o in range(dout):
                            g_w[j, o] += s * gm[i, o]
            # g_prev[b] = gm @ w^T
            for i in range(L):
                for j in range(din):
                    s = 0.0
                    for o in range(dout):
                        s += gm[i, o] * w[j, o]
                    g_prev[b, i, j] = s
            if need_g_ahat:
                # m = h_prev[b] @ w ; g_ahat[b] = gz @ m^T
                for i in range(L):
                    for o in range(dout):
                        s = 0.0
                        for j in range(din):
                            s += h_prev[b, i, j] * w[j, o]
                        m[i, o] = s
                for i in range(L):
                    for k in range(L):
                        s = 0.0
                        for o in range(dout):
                            s += gz[i, o] * m[k, o]
                        g_ahat[b, i, k] = s
    return g_w_arr, g_prev_arr, g_ahat_arr

"""Pure-numpy graph-convolution kernels (fallback backend).

Same contract as the compiled backend in `_gcn_cy`: batched float64
C-contiguous arrays, rectifier activation, gradients summed over the
batch. `ahat` is the degree-normalized adjacency with self-loops.
"""

import numpy as np


def conv_forward(ahat, h, w):
    """relu((ahat @ h) @ w) for a batch: (B,L,L) x (B,L,din) x (din,dout)."""
    m = np.matmul(ahat, h)
    b, l, din = m.shape
    out = m.reshape(b * l, din) @ w
    out = out.reshape(b, l, w.shape[1])
    np.maximum(out, 0.0, out=out)
    return out


def conv_backward(ahat, h_prev, h_post, w, g_post, need_g_ahat=False):
    """Backward pass of conv_forward.

    Returns (g_w, g_prev, g_ahat): g_w summed over the batch, g_prev the
    gradient w.r.t. h_prev, g_ahat the gradient w.r.t. ahat (or None).
    The relu mask is taken from the post-activation (h_post > 0).
    """
    gz = np.where(h_post > 0.0, g_post, 0.0)
    gm = np.matmul(ahat.transpose(0, 2, 1), gz)
    b, l, din = h_prev.shape
    dout = w.shape[1]
    g_w = h_prev.reshape(b * l, din).T @ gm.reshape(b * l, dout)
    g_prev = (gm.reshape(b * l, dout) @ w.T).reshape(b, l, din)
    g_ahat = None
    if need_g_ahat:
        m = (h_prev.reshape(b * l, din) @ w).reshape(b, l, dout)
        g_ahat = np.matmul(gz, m.transpose(0, 2, 1))
    return g_w, g_prev, g_ahat

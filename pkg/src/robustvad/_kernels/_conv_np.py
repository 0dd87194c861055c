"""Pure-numpy conv2d kernels (im2col forward, dilated-transpose backward).

Layout convention (shared with the compiled backend):
    x  : (B, H, W, Cin)        float64, C-contiguous
    w  : (KH, KW, Cin, Cout)   float64
    b  : (Cout,)               float64
    y  : (B, Ho, Wo, Cout)     with Ho = (H + 2*pad - KH)//stride + 1
"""

import numpy as np


def _im2col(xp, kh, kw, stride):
    # xp already padded: (B, Hp, Wp, Ci) -> flat (B*Ho*Wo, kh*kw*Ci)
    v = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    v = v[:, ::stride, ::stride]  # (B, Ho, Wo, Ci, kh, kw)
    b_, ho, wo = v.shape[:3]
    cols = np.ascontiguousarray(v.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(b_ * ho * wo, -1), ho, wo


def conv2d_forward(x, w, b, stride, pad):
    kh, kw, _, co = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    y = cols @ w.reshape(-1, co)
    if b is not None:
        y += b
    return y.reshape(x.shape[0], ho, wo, co)


def conv2d_backward_input(gy, w, stride, pad, height, width):
    """Gradient wrt x: stride-1 correlation of the stride-dilated gy with the
    spatially flipped, in/out-channel-swapped kernel."""
    bsz, ho, wo, co = gy.shape
    kh, kw, _, _ = w.shape
    hd, wd = (ho - 1) * stride + 1, (wo - 1) * stride + 1
    gyd = np.zeros((bsz, height + kh - 1, width + kw - 1, co), dtype=gy.dtype)
    top, left = kh - 1 - pad, kw - 1 - pad
    gyd[:, top : top + hd : stride, left : left + wd : stride] = gy
    wf = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    return conv2d_forward(gyd, wf, None, 1, 0)


def conv2d_backward_params(x, gy, kh, kw, stride, pad):
    """Gradients wrt (w, b), summed over the batch."""
    bsz, ho, wo, co = gy.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    cols, ho2, wo2 = _im2col(xp, kh, kw, stride)
    assert (ho, wo) == (ho2, wo2)
    gflat = gy.reshape(-1, co)
    gw = (cols.T @ gflat).reshape(kh, kw, x.shape[3], co)
    gb = gflat.sum(axis=0)
    return gw, gb

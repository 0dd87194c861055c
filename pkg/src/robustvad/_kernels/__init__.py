"""Conv2d kernel backend selection.

Env var ROBUSTVAD_KERNELS:
    auto     (default) route each op to the faster implementation: the BLAS
             im2col path wins the forward and weight-gradient ops, the
             compiled extension wins the input-gradient op (the hot op inside
             attack loops). Falls back to all-numpy when the extension is
             missing.
    compiled require the Cython extension for every op, ImportError if missing
    numpy    force the pure-numpy implementation for every op

benchmarks/bench_kernels.py measures both backends per op; the auto routing
above matches what it reports.
"""

import os

import numpy as _np

from robustvad._kernels import _conv_np
from robustvad.errors import ConfigurationError

_choice = os.environ.get("ROBUSTVAD_KERNELS", "auto").lower()
if _choice not in ("auto", "compiled", "numpy"):
    raise ConfigurationError(f"ROBUSTVAD_KERNELS must be auto|compiled|numpy, got {_choice!r}")

try:
    from robustvad._kernels import _conv_cy
except ImportError:
    _conv_cy = None
    if _choice == "compiled":
        raise

if _choice == "numpy" or _conv_cy is None:
    BACKEND = "numpy"
    _fwd, _bwd_in, _bwd_par = (_conv_np.conv2d_forward,
                               _conv_np.conv2d_backward_input,
                               _conv_np.conv2d_backward_params)
elif _choice == "compiled":
    BACKEND = "compiled"
    _fwd, _bwd_in, _bwd_par = (_conv_cy.conv2d_forward,
                               _conv_cy.conv2d_backward_input,
                               _conv_cy.conv2d_backward_params)
else:
    BACKEND = "auto"
    _fwd, _bwd_in, _bwd_par = (_conv_np.conv2d_forward,
                               _conv_cy.conv2d_backward_input,
                               _conv_np.conv2d_backward_params)


def _f64c(a):
    return _np.ascontiguousarray(a, dtype=_np.float64)


def conv2d_forward(x, w, b, stride, pad):
    """y[b,oy,ox,f] = bias[f] + sum_{ky,kx,c} x[b, oy*s+ky-pad, ox*s+kx-pad, c] * w[ky,kx,c,f]."""
    return _fwd(_f64c(x), _f64c(w), b if b is None else _f64c(b), stride, pad)


def conv2d_backward_input(gy, w, stride, pad, height, width):
    """Gradient of sum(gy * y) wrt x, for x of spatial size (height, width)."""
    return _bwd_in(_f64c(gy), _f64c(w), stride, pad, height, width)


def conv2d_backward_params(x, gy, kh, kw, stride, pad):
    """Gradients of sum(gy * y) wrt (w, b), summed over the batch."""
    return _bwd_par(_f64c(x), _f64c(gy), kh, kw, stride, pad)


def load_backend(name):
    """Return the raw module for an explicit backend name (used by benchmarks/tests)."""
    if name == "numpy":
        return _conv_np
    if name == "compiled":
        if _conv_cy is None:
            raise ConfigurationError("compiled kernel extension is not built")
        return _conv_cy
    raise ConfigurationError(f"unknown kernel backend {name!r}")

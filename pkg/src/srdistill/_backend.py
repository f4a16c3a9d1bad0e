"""Kernel backend selection.

The compiled Cython module is preferred; the numpy module is the fallback.
Set ``SRDISTILL_PURE_PYTHON=1`` before import to force the fallback.
"""

import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("SRDISTILL_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend forced")
    from . import _ckernels as _impl
    BACKEND = "compiled"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

IMPLEMENTATIONS = {"python": _pykernels}
if BACKEND == "compiled":
    IMPLEMENTATIONS["compiled"] = _impl


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv3x3_forward(x, w, bias, impl=None):
    """3x3 zero-padded 'same' convolution on NHWC input.

    ``w`` has shape (9*C_in, C_out), rows ordered (ky, kx, c_in).
    """
    impl = impl or _impl
    return impl.conv3x3_forward(_f64(x), _f64(w), _f64(bias))


def conv3x3_backward(x, w, dy, impl=None):
    """Return (dx, dw, db) for :func:`conv3x3_forward`."""
    impl = impl or _impl
    return impl.conv3x3_backward(_f64(x), _f64(w), _f64(dy))


def apply_taps(src, index, weight, impl=None):
    impl = impl or _impl
    return impl.apply_taps(_f64(src), np.ascontiguousarray(index, dtype=np.int64), _f64(weight))


def nearest_centroid(x, centroids, impl=None):
    impl = impl or _impl
    return impl.nearest_centroid(_f64(x), _f64(centroids))

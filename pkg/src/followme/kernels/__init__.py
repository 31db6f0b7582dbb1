"""Convolution kernel backends.

The compiled Cython core is preferred when importable; otherwise the numpy
implementation in pyconv is used. FOLLOWME_KERNELS=python|compiled|auto
overrides the choice (compiled raises if the extension is unavailable).

Both backends compute the same same-padded 2D cross-correlation; see
benchmarks/bench_kernels.py for a speed comparison.
"""

import os

import numpy as np

from ..exceptions import ConfigError
from . import pyconv
from .pyconv import _check_conv_args

try:
    from . import _convcore
except ImportError:
    _convcore = None


def _select_backend():
    choice = os.environ.get("FOLLOWME_KERNELS", "auto").lower()
    if choice not in ("auto", "python", "compiled"):
        raise ConfigError(f"FOLLOWME_KERNELS must be auto|python|compiled, got {choice!r}")
    if choice == "python":
        return "python"
    if choice == "compiled":
        if _convcore is None:
            raise ConfigError("FOLLOWME_KERNELS=compiled but the extension is not built")
        return "compiled"
    return "compiled" if _convcore is not None else "python"


BACKEND = _select_backend()


def _as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x, w, b):
    """Same-padded cross-correlation: x[B,Cin,H,W], w[Cout,Cin,KH,KW], b[Cout]."""
    if BACKEND == "python":
        return pyconv.conv2d_forward(x, w, b)
    _check_conv_args(x, w, b)
    return _convcore.conv2d_forward(_as_f64(x), _as_f64(w), _as_f64(b))


def conv2d_backward(x, w, dy):
    """Backward of conv2d_forward: returns (dx, dw, db)."""
    if BACKEND == "python":
        return pyconv.conv2d_backward(x, w, dy)
    return _convcore.conv2d_backward(_as_f64(x), _as_f64(w), _as_f64(dy))

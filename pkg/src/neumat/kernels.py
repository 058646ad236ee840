"""Backend selection for the hot loops.

The compiled extension is used when it imports; setting
``NEUMAT_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _fallback

try:
    if os.environ.get("NEUMAT_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _kernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _fallback
    BACKEND = "python"

knn_interpolate = _impl.knn_interpolate
filter_valid = _impl.filter_valid

__all__ = ["BACKEND", "knn_interpolate", "filter_valid"]

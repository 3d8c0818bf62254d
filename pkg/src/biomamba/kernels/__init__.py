"""Selective-scan kernels with a compiled core and a numpy fallback.

The compiled extension is used when it has been built and
``BIOMAMBA_PURE_PYTHON`` is not set; otherwise the numpy reference runs.
``BACKEND`` names the active implementation.
"""
import os

from . import _scan_py as python_backend
from ._scan_py import SERIES_THRESHOLD, coef_exact, coef_series, zoh, zoh_partials

compiled_backend = None
if not os.environ.get("BIOMAMBA_PURE_PYTHON"):
    try:
        from . import _scan_ext as compiled_backend
    except ImportError:
        compiled_backend = None

if compiled_backend is not None:
    scan_forward = compiled_backend.scan_forward
    scan_backward = compiled_backend.scan_backward
    BACKEND = "cython"
else:
    scan_forward = python_backend.scan_forward
    scan_backward = python_backend.scan_backward
    BACKEND = "numpy"

__all__ = [
    "BACKEND", "SERIES_THRESHOLD", "coef_exact", "coef_series", "compiled_backend", "python_backend",
    "scan_backward", "scan_forward", "zoh", "zoh_partials",
]

"""Biosignal classification with spectro-temporal tokens, bidirectional selective SSMs and sparse FFNs."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]

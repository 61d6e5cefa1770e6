"""Hybrid graph-convolutional joint-trajectory prediction with an
out-of-distribution benchmark harness."""

__version__ = "0.1.0"

from .kernels import ACTIVE_BACKEND

__all__ = ["ACTIVE_BACKEND", "__version__"]

"""Numerical laboratory for quantitative stability of Fokker-Planck equations."""

from ._kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]

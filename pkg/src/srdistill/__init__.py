"""Distilling small super-resolution training sets with a toy conditional diffusion model."""

from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]

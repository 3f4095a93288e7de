"""Spectral-Galerkin controllability toolkit for 3D Navier-Stokes on the torus."""

from nscontrol.kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]

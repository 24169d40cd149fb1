"""Simulation and verification of time-base-generator driven multi-agent optimization."""

from .kernels import BACKEND_NAME, HAVE_EXTENSION

__all__ = ["BACKEND_NAME", "HAVE_EXTENSION"]
__version__ = "0.1.0"

"""Nonparametric estimation from current status data with survey nonresponse."""

__version__ = "0.1.0"

from ._backend import using_numba

__all__ = ["using_numba", "__version__"]

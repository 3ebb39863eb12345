"""Canopy height from LIDAR full waveforms: residual 1D CNN, Gaussian NLL, deep ensembles."""

__version__ = "0.1.0"

from .errors import CanopyError, DataError

__all__ = ["CanopyError", "DataError", "__version__"]

"""Dissipative perturbation theory for scalar phi^4 fields."""
from .kernels import ThermalParams

__version__ = "0.1.0"
__all__ = ["ThermalParams", "__version__"]

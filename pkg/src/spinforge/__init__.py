"""spinforge: simulation and pulse-optimization toolkit for small
strongly-coupled nuclear-spin systems."""

__version__ = "0.1.0"

from .spinsys import SpinSystem, malonic_system

__all__ = ["SpinSystem", "malonic_system", "__version__"]

"""Policies learned from demonstrations: a Kalman-filter-trained recurrent MLP,
gradient-trained baselines, bootstrap ensembles and a synthetic
needle-insertion task."""

__version__ = "0.1.0"

from .errors import (ConfigError, DivergenceError, DlfdError, InputError, NumericalError, ParseError,
                     ShapeError, SimulationError, UsageError)
from .kernels import BACKEND

__all__ = [
    "__version__", "BACKEND", "DlfdError", "ConfigError", "UsageError", "ShapeError", "InputError",
    "ParseError", "SimulationError", "NumericalError", "DivergenceError",
]

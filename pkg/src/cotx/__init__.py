"""Conditional optimal transport through sample-based minimax fitting."""

from .core import (ComposedMap, ConditionedDataset, CotxError, DataError, DimensionError, DivergenceError,
                   NumericalError, evaluate_map, push_forward)
from .minimax import FitDiagnostics, MinimaxConfig, fit, fit_unconditional

__version__ = "0.1.0"

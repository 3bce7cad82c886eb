"""Input validation helpers shared by the estimators and free functions."""
from __future__ import annotations

import numpy as np

ROW_SUM_TOL = 1e-9


class EdgePowerError(ValueError):
    """Base class for all package errors."""


class DimensionMismatchError(EdgePowerError):
    pass


class InvalidMatrixError(EdgePowerError):
    pass


class NonUniqueStationaryError(EdgePowerError):
    pass


class InfeasiblePerturbationError(EdgePowerError):
    pass


class UnknownStateError(EdgePowerError):
    pass


def as_square_array(values, name: str = "matrix") -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise InvalidMatrixError(f"{name} must be a non-empty square 2-D array, got shape {arr.shape}")
    return arr


def as_vector(values, name: str = "vector") -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise EdgePowerError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def check_transition_matrix(values) -> np.ndarray:
    """Return `values` as a float array, raising InvalidMatrixError on any violation.

    Accepts a TransitionMatrix, nested lists or an ndarray.
    """
    from .markov import TransitionMatrix, validate_matrix

    m = values if isinstance(values, TransitionMatrix) else TransitionMatrix(values)
    report = validate_matrix(m)
    if not report.ok:
        raise InvalidMatrixError(str(report))
    return m.entries


def check_same_length(a, b, what: str = "arguments") -> None:
    if len(a) != len(b):
        raise DimensionMismatchError(f"{what} have different lengths: {len(a)} != {len(b)}")


def check_probability(value: float, name: str = "probability") -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise EdgePowerError(f"{name} must lie in [0, 1], got {value}")
    return value

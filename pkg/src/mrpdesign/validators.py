"""Converters and validators shared by the `attrs` domain types.

Validators follow the `attrs` signature `(instance, attribute, value)` and raise
`mrpdesign` errors, so that invalid objects can never be constructed.
"""
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError

SYMMETRY_TOL = 1e-12


def frozen_array(value) -> np.ndarray:
    """Copy `value` to a read-only float array"""
    arr = np.array(value, dtype=float)
    arr.flags.writeable = False
    return arr


def frozen_vector(value) -> np.ndarray:
    """Copy `value` to a read-only 1-D float array"""
    return frozen_array(np.ravel(np.asarray(value, dtype=float)))


def symmetrized(value) -> np.ndarray:
    """Read-only copy of (A + Aᵀ)/2"""
    arr = np.asarray(value, dtype=float)
    return frozen_array(0.5 * (arr + arr.T))


def symmetrized_tuple(values: Sequence) -> tuple:
    """Symmetrizes each matrix of a sequence and returns them as a tuple"""
    return tuple(symmetrized(v) for v in values)


def validate_finite(instance, attribute, value) -> None:
    """Checks that every entry of an array is finite"""
    if not np.all(np.isfinite(value)):
        raise DataError(f"{attribute.name} must only contain finite values")


def validate_matrix(instance, attribute, value) -> None:
    """Checks that the value is a 2-D array"""
    if np.ndim(value) != 2:
        raise DataError(f"{attribute.name} must be a matrix, got ndim={np.ndim(value)}")


def validate_square(instance, attribute, value) -> None:
    """Checks that the value is a square matrix"""
    validate_matrix(instance, attribute, value)
    if value.shape[0] != value.shape[1]:
        raise DataError(f"{attribute.name} must be square, got shape {value.shape}")


def validate_symmetric(instance, attribute, value) -> None:
    """Checks symmetry to :data:`SYMMETRY_TOL`, relative to the largest entry"""
    validate_square(instance, attribute, value)
    scale = max(1.0, float(np.max(np.abs(value), initial=0.0)))
    if np.max(np.abs(value - value.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise DataError(f"{attribute.name} must be symmetric")


def validate_positive(instance, attribute, value) -> None:
    """Checks a scalar is strictly positive"""
    if not value > 0:
        raise ConfigError(f"{attribute.name} must be positive, got {value!r}")


def validate_at_least_one(instance, attribute, value) -> None:
    """Checks an integer is at least one"""
    if int(value) < 1:
        raise ConfigError(f"{attribute.name} must be >= 1, got {value!r}")


def validate_nonzero_rows(instance, attribute, value) -> None:
    """Checks that no row of a matrix is identically zero"""
    validate_matrix(instance, attribute, value)
    if value.shape[0] and np.any(np.all(value == 0, axis=1)):
        zero_rows = np.flatnonzero(np.all(value == 0, axis=1)).tolist()
        raise DataError(f"{attribute.name} has all-zero rows {zero_rows}")


def validate_one_of(choices: Sequence[str]):
    """Builds a validator accepting only the given choices"""

    def _validate(instance, attribute, value) -> None:
        if value not in choices:
            raise ConfigError(
                f"{attribute.name} must be one of {tuple(choices)}, got {value!r}"
            )

    return _validate

"""Exceptions and input validation helpers shared by every module."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array


class SqfnError(Exception):
    """Base class for all errors raised by :mod:`sqfn`."""


class DomainError(SqfnError, ValueError):
    """A point, ball or field lies outside the region where it is defined."""


class ArgumentError(SqfnError, ValueError):
    """An argument violates its documented precondition."""


class ConfigurationError(SqfnError, ValueError):
    """A configuration cannot produce a trustworthy result."""


class ResourceError(SqfnError, MemoryError):
    """A configured size cap would be exceeded."""


class NumericError(SqfnError, ArithmeticError):
    """A numerical routine failed to converge."""


class ConsistencyError(SqfnError, ArithmeticError):
    """Two independent evaluation routes disagree beyond tolerance."""


class FitError(SqfnError, RuntimeError):
    """No candidate on a search ladder validates the data."""


class ConstructionError(SqfnError, ValueError):
    """An object cannot be built with the requested properties."""


def check_field(f, node_count: int, *, name: str = "field", allow_nd: bool = True) -> np.ndarray:
    """Validate a grid field and return it as a float64 array.

    Accepts shape ``(N,)`` (scalar), ``(N, n)`` (vector valued) or, when
    ``allow_nd``, ``(N, n, P)`` (a batch of ``P`` vector fields).
    """
    arr = check_array(
        f,
        ensure_2d=False,
        allow_nd=allow_nd,
        dtype=np.float64,
        ensure_min_samples=1,
        input_name=name,
    )
    if arr.shape[0] != node_count:
        raise ArgumentError(f"{name} has {arr.shape[0]} rows, grid has {node_count} nodes")
    return arr


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ArgumentError(f"{name} must be positive, got {value!r}")
    return value


def as_point(x, d: int, name: str = "point") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if arr.shape != (d,):
        raise ArgumentError(f"{name} must have {d} coordinates, got shape {arr.shape}")
    return arr


class SingularityError(DomainError):
    """A kernel or norm is evaluated exactly at its singular point."""

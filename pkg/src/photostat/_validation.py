"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError, DomainError
from .series import CoherenceSeries
from .tagstore import TagStream


def check_stream(stream) -> TagStream:
    if not isinstance(stream, TagStream):
        raise TypeError(f"expected a TagStream, got {type(stream).__name__}")
    return stream.validate()


def check_series(series, kind=None) -> CoherenceSeries:
    if not isinstance(series, CoherenceSeries):
        raise TypeError(f"expected a CoherenceSeries, got {type(series).__name__}")
    if kind is not None and series.kind != kind:
        raise ConfigError(f"expected a {kind} series, got {series.kind}")
    return series


def check_positive(name, value, strict=True):
    value = float(value)
    if not np.isfinite(value) or value < 0 or (strict and value == 0):
        raise DomainError(f"{name} must be {'positive' if strict else 'non-negative'}, got {value}")
    return value


def check_probability(name, value, open_low=False):
    value = float(value)
    if not (0.0 < value <= 1.0 if open_low else 0.0 <= value <= 1.0):
        raise ConfigError(f"{name} must lie in {'(0, 1]' if open_low else '[0, 1]'}, got {value}")
    return value


def check_1d(name, x, dtype=float, min_len=1):
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 1 or len(arr) < min_len:
        raise ConfigError(f"{name} must be 1-d with at least {min_len} entries")
    return arr

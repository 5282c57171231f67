"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numbers
import os
from typing import Iterable

from .trace import HttpRequestRecord, iter_lines, read_trace

__all__ = ["check_records", "check_ratio", "check_positive_int", "check_fitted"]


def check_records(X) -> list[HttpRequestRecord]:
    """Coerce ``X`` into a list of records.

    Accepts a trace path, an iterable of records, or an iterable of TSV lines
    (comments and blank lines skipped). Mixed iterables are rejected.
    """
    if isinstance(X, (str, os.PathLike)):
        return list(read_trace(X))
    if X is None:
        raise TypeError("expected records, TSV lines or a trace path, got None")
    items = list(X) if not isinstance(X, list) else X
    if not items:
        return []
    if all(isinstance(r, HttpRequestRecord) for r in items):
        return items
    if all(isinstance(r, str) for r in items):
        return list(iter_lines(items))
    bad = next(r for r in items if not isinstance(r, (HttpRequestRecord, str)))
    raise TypeError(f"cannot interpret {type(bad).__name__} as an HTTP request record")


def check_ratio(value, name: str = "ratio", *, allow_zero: bool = True) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    low_ok = value >= 0 if allow_zero else value > 0
    if not (low_ok and value <= 1):
        interval = "[0, 1]" if allow_zero else "(0, 1]"
        raise ValueError(f"{name} must lie in {interval}, got {value}")
    return value


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_fitted(estimator, attributes: Iterable[str]) -> None:
    from sklearn.utils.validation import check_is_fitted

    check_is_fitted(estimator, list(attributes))

"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import numbers
import os

import numpy as np

from .energy import EnergyMatrix
from .seqcore import Sequence


def check_seed(seed) -> int:
    """Seeds must be explicit non-negative integers."""
    if seed is None:
        raise ValueError("an explicit integer seed is required")
    if isinstance(seed, bool) or not isinstance(seed, numbers.Integral) or seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    return int(seed)


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_sequences(X, k: int | None = None) -> list[Sequence]:
    """Coerce a string or iterable of strings to validated sequences of one length."""
    if isinstance(X, str):
        X = [X]
    seqs = [Sequence(s) for s in X]
    if not seqs:
        raise ValueError("no sequences given")
    lengths = {len(s) for s in seqs}
    if len(lengths) > 1:
        raise ValueError(f"sequences have mixed lengths {sorted(lengths)}")
    if k is not None and lengths != {k}:
        raise ValueError(f"expected sequences of length {k}, got {lengths.pop()}")
    return seqs


def check_energy_matrix(m) -> EnergyMatrix:
    if isinstance(m, EnergyMatrix):
        return m
    return EnergyMatrix(np.asarray(m, dtype=np.float64))


def check_round_counts(X):
    """Accept :class:`RoundCounts`, a rounds-table path or ``(seq, count, round)`` records."""
    from .fit import RoundCounts
    from .io import read_round_counts

    if isinstance(X, RoundCounts):
        return X
    if isinstance(X, (str, os.PathLike)):
        return read_round_counts(X)
    return RoundCounts.from_records(list(X))


def check_is_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        from sklearn.exceptions import NotFittedError

        raise NotFittedError(f"{type(estimator).__name__} is not fitted; call fit first")

"""Pearson and Spearman correlation between predicted and reference scores."""

from __future__ import annotations

import math

import numpy as np

from .errors import CorrelationUndefinedError


def plcc(x, y) -> float:
    """Pearson linear correlation coefficient.

    The denominator is computed as sqrt(vx * vy) rather than
    sqrt(vx) * sqrt(vy) so exact-rational cases stay exact.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise CorrelationUndefinedError(
            f"need two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise CorrelationUndefinedError(f"need at least 2 samples, got {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx == 0.0 or vy == 0.0:
        raise CorrelationUndefinedError("correlation undefined for zero-variance input")
    return float(dx @ dy) / math.sqrt(vx * vy)


def average_ranks(v) -> np.ndarray:
    """1-based ranks with ties assigned the mean of their rank range."""
    v = np.asarray(v, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def srcc(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise CorrelationUndefinedError(
            f"need two equal-length vectors of >= 2 samples, got {x.shape} and {y.shape}")
    return plcc(average_ranks(x), average_ranks(y))

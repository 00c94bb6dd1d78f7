"""Regression scores used at every layer of the model.

All functions accept either plain arrays of equal length or two series
objects with ``times``/``watts``; series are compared on their common
timestamps.
"""

from __future__ import annotations

import numpy as np

from .exceptions import UndefinedMetricError


def paired(predicted, measured):
    """Aligned ``(predicted, measured)`` value arrays."""
    if hasattr(predicted, "times") and hasattr(measured, "times"):
        _, ip, im = np.intersect1d(predicted.times, measured.times, assume_unique=True,
                                   return_indices=True)
        return predicted.watts[ip], measured.watts[im]
    p = np.asarray(predicted, dtype=float).ravel()
    m = np.asarray(measured, dtype=float).ravel()
    if p.shape != m.shape:
        raise ValueError("predicted and measured differ in length")
    return p, m


def nrmse(predicted, measured) -> float:
    """Root-mean-squared error divided by the mean measured value."""
    p, m = paired(predicted, measured)
    if m.size == 0:
        raise UndefinedMetricError("no common points")
    mean = m.mean()
    if mean == 0:
        raise UndefinedMetricError("measured mean is zero")
    return float(np.sqrt(np.mean((m - p) ** 2)) / mean)


def r_squared(predicted, measured) -> float:
    """One minus squared error over squared deviation from the measured mean."""
    p, m = paired(predicted, measured)
    if m.size < 2:
        raise UndefinedMetricError("R^2 needs at least two points")
    dev = m - m.mean()
    ss_tot = dev @ dev
    if ss_tot == 0:
        raise UndefinedMetricError("measured series is constant")
    err = m - p
    return float(1.0 - (err @ err) / ss_tot)


def pearson(x, y) -> float:
    x, y = paired(x, y)
    if x.size < 2:
        raise UndefinedMetricError("correlation needs at least two points")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if sx == 0 or sy == 0:
        raise UndefinedMetricError("correlation undefined for a constant series")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))

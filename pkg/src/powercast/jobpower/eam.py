"""Enhanced Average Model: job power linear in resource counts.

A job holding ``n_cpu`` cores, ``n_gpu`` GPUs and ``n_mic`` MICs is
predicted to draw ``n_cpu * p_cpu + n_gpu * p_gpu + n_mic * p_mic`` for its
whole lifetime. The per-unit rates are a non-negative least-squares fit to
the user's measured job power.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.optimize import nnls
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..exceptions import PreconditionError


class EnhancedAverageModel(RegressorMixin, BaseEstimator):
    """Per-unit average power for CPU cores, GPUs and MICs.

    ``X`` has three columns: cores, GPUs, MICs. Kinds the training data
    never exercises have no information in the fit; they take the matching
    rate from ``fallback`` (a fitted model, usually the all-users one) or 0.
    """

    def __init__(self, fallback: Optional["EnhancedAverageModel"] = None):
        self.fallback = fallback

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if X.shape[1] != 3:
            raise ValueError("expected columns (cpu_cores, gpus, mics)")
        used = (X != 0).any(axis=0)
        rates = np.zeros(3)
        if used.any():
            rates[used], _ = nnls(X[:, used], y)
        if self.fallback is not None:
            rates[~used] = self.fallback.coef_[~used]
        self.coef_ = rates
        self.fitted_kinds_ = used
        self.n_features_in_ = 3
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        return X @ self.coef_

    @property
    def p_cpu(self):
        return float(self.coef_[0])

    @property
    def p_gpu(self):
        return float(self.coef_[1])

    @property
    def p_mic(self):
        return float(self.coef_[2])

    @classmethod
    def from_rates(cls, p_cpu, p_gpu, p_mic):
        model = cls()
        model.coef_ = np.array([p_cpu, p_gpu, p_mic], dtype=float)
        if (model.coef_ < 0).any() or not np.isfinite(model.coef_).all():
            raise ValueError("rates must be finite and non-negative")
        model.fitted_kinds_ = np.ones(3, dtype=bool)
        model.n_features_in_ = 3
        return model


def eam_fit(counts, watts, fallback=None) -> EnhancedAverageModel:
    counts = np.asarray(counts, dtype=float).reshape(-1, 3)
    if counts.shape[0] == 0:
        raise PreconditionError("EAM needs at least one training point")
    return EnhancedAverageModel(fallback=fallback).fit(counts, np.asarray(watts, dtype=float))


def eam_predict(model: EnhancedAverageModel, n_cpu, n_gpu, n_mic) -> float:
    """Exact per-unit sum; integer counts give an exact float result."""
    if min(n_cpu, n_gpu, n_mic) < 0:
        raise ValueError("resource counts must be non-negative")
    return n_cpu * model.p_cpu + n_gpu * model.p_gpu + n_mic * model.p_mic

"""Linear map from total component power to whole-system power."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, column_or_1d

from .aggregate import ComponentPowerSeries, Provenance
from .exceptions import DegenerateFitError, ParseError
from .metrics import pearson

log = logging.getLogger(__name__)


class SystemLinearModel(RegressorMixin, BaseEstimator):
    """Ordinary least squares ``system = slope * component + intercept``.

    A non-positive slope is physically odd; it is logged, not rejected.
    """

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if X.shape[1] != 1:
            raise ValueError("expects a single component-power column")
        x = X[:, 0]
        if x.size < 2:
            raise DegenerateFitError("need at least two points")
        xc = x - x.mean()
        sxx = xc @ xc
        if sxx == 0:
            raise DegenerateFitError("all component power values are identical")
        self.slope_ = float(xc @ (y - y.mean()) / sxx)
        self.intercept_ = float(y.mean() - self.slope_ * x.mean())
        self.n_features_in_ = 1
        if not self.slope_ > 0:
            log.warning("system model slope %r is not positive", self.slope_)
        return self

    def predict(self, X):
        check_is_fitted(self, "slope_")
        x = column_or_1d(np.asarray(X, dtype=float).reshape(-1))
        return self.slope_ * x + self.intercept_

    @classmethod
    def from_coefficients(cls, slope: float, intercept: float) -> "SystemLinearModel":
        model = cls()
        model.slope_ = float(slope)
        model.intercept_ = float(intercept)
        model.n_features_in_ = 1
        return model

    def dumps(self) -> str:
        check_is_fitted(self, "slope_")
        return f"slope={self.slope_!r}\nintercept={self.intercept_!r}\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SystemLinearModel":
        values = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ParseError("expected key=value", path, lineno)
            try:
                values[key.strip()] = float(val)
            except ValueError:
                raise ParseError(f"bad number {val!r}", path, lineno) from None
        if set(values) != {"slope", "intercept"}:
            raise ParseError("expected slope and intercept", path)
        return cls.from_coefficients(values["slope"], values["intercept"])


def common_points(a: ComponentPowerSeries, b: ComponentPowerSeries):
    """Values of ``a`` and ``b`` at their shared timestamps."""
    shared, ia, ib = np.intersect1d(a.times, b.times, assume_unique=True, return_indices=True)
    return shared, a.watts[ia], b.watts[ib]


def fit_linear(component: ComponentPowerSeries, system: ComponentPowerSeries) -> SystemLinearModel:
    _, x, y = common_points(component, system)
    if x.size < 2:
        raise DegenerateFitError("fewer than two common grid points")
    return SystemLinearModel().fit(x[:, None], y)


def predict_system(model: SystemLinearModel, component: ComponentPowerSeries) -> ComponentPowerSeries:
    """Apply the affine map pointwise, clamping at 0 W."""
    prov = Provenance.ESTIMATED if component.provenance is Provenance.MEASURED else Provenance.PREDICTED
    watts = np.maximum(model.predict(component.watts), 0.0) if len(component) else component.watts.copy()
    return ComponentPowerSeries(component.grid, component.times.copy(), watts, prov)


def correlation(component: ComponentPowerSeries, system: ComponentPowerSeries) -> float:
    _, x, y = common_points(component, system)
    return pearson(x, y)

"""Train-then-test evaluation of the three model layers.

``step1``
    linear system model applied to *measured* component power;
``step2``
    predicted component power against measured component power;
``combined``
    linear system model applied to *predicted* component power, scored
    against measured system power.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .aggregate import ComponentPowerSeries, measured_component_series
from .exceptions import ConfigurationError
from .ingest import ReconciledDataset
from .metrics import nrmse, pearson, r_squared
from .pipeline import TwoLayerPowerModel, measured_system_series
from .syslayer import predict_system

LAYERS = ("step1", "step2", "combined")


@dataclass(frozen=True)
class SplitSpec:
    train_window: tuple
    test_window: tuple

    def __post_init__(self):
        (a, b), (c, d) = self.train_window, self.test_window
        if a > b or c > d:
            raise ConfigurationError("window start after end")
        if b >= c:
            raise ConfigurationError("training window must end before the test window starts")


@dataclass(frozen=True)
class EvaluationReport:
    layer: str
    nrmse: float
    r_squared: float
    pearson: float
    n_points: int
    window: tuple

    def row(self) -> list:
        return [self.layer, repr(self.nrmse), repr(self.r_squared), repr(self.pearson), self.n_points]


@dataclass
class LayerResult:
    report: EvaluationReport
    times: np.ndarray
    measured: np.ndarray
    predicted: np.ndarray


def score(layer: str, predicted: ComponentPowerSeries, measured: ComponentPowerSeries,
          window: tuple) -> LayerResult:
    times, ip, im = np.intersect1d(predicted.times, measured.times, assume_unique=True,
                                   return_indices=True)
    p, m = predicted.watts[ip], measured.watts[im]
    if times.size == 0:
        raise ConfigurationError(f"{layer}: no common grid points in the test window")
    rep = EvaluationReport(layer, nrmse(p, m), r_squared(p, m), pearson(p, m), int(times.size),
                           tuple(window))
    return LayerResult(rep, times, m, p)


def evaluate_model(model: TwoLayerPowerModel, dataset: ReconciledDataset,
                   start: int, end: int) -> dict:
    """Score a fitted model on ``[start, end]``; returns ``{layer: LayerResult}``."""
    window = (int(start), int(end))
    mask = dataset.window_mask(start, end)
    if not (mask & dataset.valid).any():
        raise ConfigurationError("test window holds no usable grid points")
    system = measured_system_series(dataset, mask)
    comp = measured_component_series(dataset).between(start, end)
    predicted_comp = model.predict_components(dataset, start, end)
    step1 = score("step1", predict_system(model.system_model_, comp), system, window)
    step2 = score("step2", predicted_comp, comp, window)
    combined = score("combined", predict_system(model.system_model_, predicted_comp), system, window)
    return {"step1": step1, "step2": step2, "combined": combined}


def run_split(dataset: ReconciledDataset, spec: SplitSpec,
              model: Optional[TwoLayerPowerModel] = None) -> tuple:
    """Fit on the training window, score on the test window.

    Returns the step-1, step-2 and combined :class:`EvaluationReport`.
    """
    model = TwoLayerPowerModel() if model is None else model
    model.fit(dataset, *spec.train_window)
    results = evaluate_model(model, dataset, *spec.test_window)
    return tuple(results[k].report for k in LAYERS)


def write_reports(reports, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "nrmse", "r2", "pearson", "n_points"])
        for rep in reports:
            w.writerow(rep.row())


def write_plot_data(result: LayerResult, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ts", "measured", "predicted"])
        for t, m, p in zip(result.times, result.measured, result.predicted):
            w.writerow([int(t), repr(float(m)), repr(float(p))])

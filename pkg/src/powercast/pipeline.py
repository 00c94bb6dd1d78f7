"""The two-layer predictor: per-user job models feeding the system linear model."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .aggregate import (
    ComponentPowerSeries,
    Provenance,
    measured_component_series,
    predicted_component_series,
)
from .anomaly import (
    DEFAULT_MIN_POINTS,
    DEFAULT_WINDOW,
    AlarmThresholds,
    WindowedFitSeries,
    detect_alarms,
    down_node_series,
    rolling_nrmse,
)
from .exceptions import ConfigurationError, UsageError
from .ingest import ReconciledDataset
from .jobpower import (
    MIN_SVR_JOBS,
    MIN_SVR_POINTS,
    UserModel,
    Variant,
    collect_training_data,
    fit_user_model,
    global_eam_fit,
    load_user_model,
    predict_job_array,
    save_user_model,
)
from .metrics import nrmse
from .syslayer import SystemLinearModel, fit_linear, predict_system

SYSTEM_MODEL_FILE = "system.lm"
GLOBAL_MODEL_FILE = "global.pwc"
INDEX_FILE = "index.csv"


def _window_mask(dataset: ReconciledDataset, start: Optional[int], end: Optional[int]) -> np.ndarray:
    pts = dataset.times
    lo = pts[0] if start is None else start
    hi = pts[-1] if end is None else end
    return (pts >= lo) & (pts <= hi)


class TwoLayerPowerModel(BaseEstimator):
    """System power predicted from workload alone.

    ``fit`` trains one job power model per user from the measured job power
    in the training window, a global average model for users without
    history, and the linear component-to-system map from measured power.

    Parameters
    ----------
    candidates : list of dict, optional
        SVR hyper-parameter grid (see ``jobpower.default_candidates``).
    min_points, min_jobs : int
        Training volume a user needs before getting an SVR model.
    tol : float
        SVR KKT tolerance.
    """

    def __init__(self, candidates: Optional[Sequence[dict]] = None, min_points: int = MIN_SVR_POINTS,
                 min_jobs: int = MIN_SVR_JOBS, tol: float = 1e-3, max_passes: int = 10_000):
        self.candidates = candidates
        self.min_points = min_points
        self.min_jobs = min_jobs
        self.tol = tol
        self.max_passes = max_passes

    def fit(self, dataset: ReconciledDataset, start: Optional[int] = None, end: Optional[int] = None):
        mask = _window_mask(dataset, start, end) & dataset.valid
        if not mask.any():
            raise ConfigurationError("training window holds no usable grid points")
        data = collect_training_data(dataset, mask)
        self.global_model_ = global_eam_fit(data.values())
        self.user_models_ = {
            user: fit_user_model(d, self.global_model_, candidates=self.candidates,
                                 min_points=self.min_points, min_jobs=self.min_jobs,
                                 tol=self.tol, max_passes=self.max_passes)
            for user, d in sorted(data.items())
        }
        comp = measured_component_series(dataset).restrict(mask[dataset.valid])
        system = measured_system_series(dataset, mask)
        self.system_model_ = fit_linear(comp, system)
        est = predict_system(self.system_model_, comp.restrict(np.isin(comp.times, system.times)))
        self.training_nrmse_ = nrmse(est, system)
        self.window_ = (int(dataset.times[mask][0]), int(dataset.times[mask][-1]))
        return self

    def user_model(self, user_id: str) -> UserModel:
        check_is_fitted(self, "user_models_")
        model = self.user_models_.get(user_id)
        if model is None:
            return UserModel(user_id, Variant.GLOBAL_EAM, self.global_model_)
        return model

    def predict_jobs(self, dataset: ReconciledDataset, mask: Optional[np.ndarray] = None) -> dict:
        """``{job_id: (grid_indices, watts)}`` for jobs holding resources at points in ``mask``."""
        check_is_fitted(self, "user_models_")
        if mask is None:
            mask = np.ones(len(dataset.grid), dtype=bool)
        jobs = dataset.job_index
        out = {}
        for job_id in sorted(dataset.placements):
            pl = dataset.placements[job_id]
            if not pl.units or pl.n_points == 0:
                continue
            idx = np.arange(pl.lo, pl.hi)[mask[pl.lo:pl.hi]]
            if idx.size == 0:
                continue
            out[job_id] = predict_job_array(self.user_model(jobs[job_id].user_id), dataset, job_id, idx)
        return out

    def predict_components(self, dataset: ReconciledDataset, start: Optional[int] = None,
                           end: Optional[int] = None) -> ComponentPowerSeries:
        mask = _window_mask(dataset, start, end)
        return predicted_component_series(self.predict_jobs(dataset, mask), dataset, mask=mask)

    def predict_system(self, dataset: ReconciledDataset, start: Optional[int] = None,
                       end: Optional[int] = None) -> ComponentPowerSeries:
        return predict_system(self.system_model_, self.predict_components(dataset, start, end))

    def predict(self, dataset: ReconciledDataset, start: Optional[int] = None, end: Optional[int] = None):
        return self.predict_system(dataset, start, end)

    # -- persistence ------------------------------------------------------

    def save(self, directory) -> None:
        check_is_fitted(self, "user_models_")
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.system_model_.save(d / SYSTEM_MODEL_FILE)
        save_user_model(UserModel("*", Variant.GLOBAL_EAM, self.global_model_), d / GLOBAL_MODEL_FILE)
        with (d / INDEX_FILE).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user_id", "variant", "file"])
            for k, (user, model) in enumerate(sorted(self.user_models_.items())):
                name = f"user_{k:04d}.pwc"
                save_user_model(model, d / name)
                w.writerow([user, model.variant.value, name])
        meta = {"params": self.get_params(), "training_nrmse": self.training_nrmse_,
                "window": list(self.window_)}
        (d / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "TwoLayerPowerModel":
        d = Path(directory)
        if not (d / INDEX_FILE).exists() or not (d / SYSTEM_MODEL_FILE).exists():
            raise UsageError(f"no trained models in {d}; run train first")
        meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
        model = cls(**meta["params"])
        model.system_model_ = SystemLinearModel.load(d / SYSTEM_MODEL_FILE)
        gm = load_user_model(d / GLOBAL_MODEL_FILE).model
        model.global_model_ = gm
        users = {}
        with (d / INDEX_FILE).open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                users[row["user_id"]] = load_user_model(d / row["file"])
        model.user_models_ = users
        model.training_nrmse_ = float(meta["training_nrmse"])
        model.window_ = tuple(meta["window"])
        return model


def measured_system_series(dataset: ReconciledDataset, mask: Optional[np.ndarray] = None) -> ComponentPowerSeries:
    """Measured system power at kept grid points in ``mask`` that have a reading."""
    if mask is None:
        mask = np.ones(len(dataset.grid), dtype=bool)
    ok = mask & dataset.valid & ~np.isnan(dataset.system_power)
    return ComponentPowerSeries(dataset.grid, dataset.times[ok], dataset.system_power[ok],
                                Provenance.MEASURED)



def monitor_fit(model: "TwoLayerPowerModel", dataset: ReconciledDataset, start: int, end: int,
                window_length: int = DEFAULT_WINDOW, min_points: int = DEFAULT_MIN_POINTS,
                thresholds: Optional[AlarmThresholds] = None):
    """Windowed fit of the system model on measured components, and its alarms in ``[start, end]``.

    The window may reach back before ``start`` so the first monitored point
    starts warm. Thresholds default to ones derived from the training error.

    Returns
    -------
    fit : WindowedFitSeries
        Windowed NRMSE at grid points in ``[start, end]``.
    events : list of AlarmEvent
    """
    check_is_fitted(model, "system_model_")
    est = predict_system(model.system_model_, measured_component_series(dataset))
    fit = rolling_nrmse(est, measured_system_series(dataset), dataset.grid, window_length, min_points)
    keep = (fit.times >= start) & (fit.times <= end)
    fit = WindowedFitSeries(window_length, min_points, fit.times[keep], fit.values[keep])
    if thresholds is None:
        thresholds = AlarmThresholds.from_baseline(model.training_nrmse_)
    in_window = (dataset.times >= start) & (dataset.times <= end)
    events = detect_alarms(fit, (dataset.times[in_window], down_node_series(dataset)[in_window]),
                           thresholds, dataset.n_nodes, dataset.grid.step)
    return fit, events

"""Per-user job power models: variant selection, training and prediction."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from ..exceptions import ConfigurationError, ConsistencyError, ParseError, PreconditionError
from ..features import (
    UNKNOWN,
    FeatureVector,
    JobFeatureEncoder,
    JobNameVocabulary,
    job_feature_rows,
)
from ..ingest import ReconciledDataset, job_power_series
from .eam import EnhancedAverageModel, eam_fit
from .svr import EpsilonSVR

MIN_SVR_POINTS = 1000
MIN_SVR_JOBS = 100
MAGIC = "PWCAST1"


class Variant(enum.Enum):
    SVR = "svr"
    EAM = "eam"
    GLOBAL_EAM = "global_eam"


def select_variant(n_points: int, n_jobs: int, min_points: int = MIN_SVR_POINTS,
                   min_jobs: int = MIN_SVR_JOBS) -> Variant:
    if n_points < 0 or n_jobs < 0:
        raise ValueError("counts must be non-negative")
    if n_points >= min_points and n_jobs >= min_jobs:
        return Variant.SVR
    if n_points >= 1:
        return Variant.EAM
    return Variant.GLOBAL_EAM


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("rbf", "linear"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "rbf" and self.gamma is not None and not self.gamma > 0:
            raise ValueError("RBF gamma must be positive")


@dataclass(frozen=True)
class TrainingPoint:
    features: FeatureVector
    target_watts: float
    job_id: str
    at: int


@dataclass
class UserTrainingData:
    """Column-oriented training points of one user.

    ``X`` rows are ``[job_name_code, *NUMERIC_FEATURES]``.
    """

    user_id: str
    X: np.ndarray
    y: np.ndarray
    job_ids: np.ndarray
    at: np.ndarray
    names: list = field(default_factory=list)

    @property
    def n_points(self) -> int:
        return int(self.y.size)

    @property
    def n_jobs(self) -> int:
        return int(np.unique(self.job_ids).size)

    def counts(self) -> np.ndarray:
        return self.X[:, 1:4]

    def points(self) -> list[TrainingPoint]:
        return [TrainingPoint(FeatureVector(int(r[0]), *(int(v) for v in r[1:])), float(w), str(j), int(t))
                for r, w, j, t in zip(self.X, self.y, self.job_ids, self.at)]

    @classmethod
    def from_points(cls, user_id: str, points: Sequence[TrainingPoint]) -> "UserTrainingData":
        X = np.array([p.features.as_row() for p in points], dtype=float).reshape(-1, 8)
        return cls(user_id, X, np.array([p.target_watts for p in points], dtype=float),
                   np.array([p.job_id for p in points], dtype=object),
                   np.array([p.at for p in points], dtype=np.int64))


def partition_training(points: Iterable[TrainingPoint], job_users: Mapping[str, str]) -> dict:
    """Group training points by the user owning each point's job."""
    out: dict = {}
    for p in points:
        try:
            user = job_users[p.job_id]
        except KeyError:
            raise ConsistencyError(f"job {p.job_id!r} has no known user") from None
        out.setdefault(user, []).append(p)
    return out


def collect_training_data(dataset: ReconciledDataset, mask: Optional[np.ndarray] = None) -> dict:
    """Per-user training data from measured job power at grid points in ``mask``.

    Job names get per-user codes in order of first appearance (jobs sorted
    by start time, then id).
    """
    targets = job_power_series(dataset)
    jobs = dataset.job_index
    vocab = JobNameVocabulary()
    pts = dataset.times
    chunks: dict = {}
    for job_id in sorted(targets, key=lambda j: (jobs[j].start, j)):
        idx, watts = targets[job_id]
        if mask is not None:
            keep = mask[idx]
            idx, watts = idx[keep], watts[keep]
        if idx.size == 0:
            continue
        job = jobs[job_id]
        code = vocab.add(job.user_id, job.job_name)
        _, rows = job_feature_rows(dataset, job_id, idx)
        X = np.hstack([np.full((idx.size, 1), float(code)), rows])
        chunks.setdefault(job.user_id, []).append((X, watts, job_id, pts[idx]))
    out = {}
    for user in sorted(chunks):
        parts = chunks[user]
        names = [name for (u, name), _ in sorted(vocab.codes.items(), key=lambda kv: kv[1]) if u == user]
        out[user] = UserTrainingData(
            user,
            np.vstack([p[0] for p in parts]),
            np.concatenate([p[1] for p in parts]),
            np.concatenate([np.full(p[0].shape[0], p[2], dtype=object) for p in parts]),
            np.concatenate([p[3] for p in parts]).astype(np.int64),
            names,
        )
    return out


class SvrJobModel:
    """Encoder plus SVR for one user; predictions are clamped at 0 W.

    The SVR is trained on standardized targets; ``y_mean`` and ``y_scale``
    map its output back to watts.
    """

    def __init__(self, names: Sequence[str], encoder: JobFeatureEncoder, svr: EpsilonSVR,
                 y_mean: float = 0.0, y_scale: float = 1.0):
        self.names = list(names)
        self.encoder = encoder
        self.svr = svr
        self.y_mean = float(y_mean)
        self.y_scale = float(y_scale)

    @property
    def vocabulary(self) -> dict:
        return {n: i for i, n in enumerate(self.names)}

    def code(self, job_name: str) -> int:
        return self.vocabulary.get(job_name, UNKNOWN)

    def raw_predict(self, X) -> np.ndarray:
        return self.y_mean + self.y_scale * self.svr.predict(self.encoder.transform(X))

    def predict(self, X) -> np.ndarray:
        return np.maximum(self.raw_predict(X), 0.0)


def default_candidates(gamma_scales=(0.1, 1.0, 10.0), Cs=(1.0, 10.0, 100.0),
                       epsilons=(0.5, 2.0), kernel: str = "rbf") -> list[dict]:
    """Hyper-parameter grid; ``gamma_scale`` multiplies ``1 / n_features``."""
    scales = gamma_scales if kernel == "rbf" else (1.0,)
    return [{"C": float(C), "epsilon": float(e), "kernel": kernel, "gamma_scale": float(g)}
            for g in scales for C in Cs for e in epsilons]


def svr_fit(data: UserTrainingData, C: float = 10.0, epsilon: float = 0.5,
            kernel="rbf", gamma_scale: float = 1.0, tol: float = 1e-3,
            max_passes: int = 10_000) -> SvrJobModel:
    """Fit the standardizing encoder and an epsilon-SVR on one user's points.

    Targets are standardized before the fit, so ``C`` is independent of the
    user's power level; ``epsilon`` stays in watts and is rescaled with them.
    """
    if data.n_points < 2:
        raise PreconditionError("SVR needs at least two training points")
    if isinstance(kernel, KernelSpec):
        spec = kernel
    else:
        spec = KernelSpec(kernel)
    encoder = JobFeatureEncoder(n_names=len(data.names)).fit(data.X)
    Z = encoder.transform(data.X)
    gamma = spec.gamma if spec.gamma is not None else gamma_scale / Z.shape[1]
    y_mean = float(data.y.mean())
    y_scale = float(data.y.std()) or 1.0
    svr = EpsilonSVR(C=C, epsilon=epsilon / y_scale, kernel=spec.kind, gamma=gamma, tol=tol,
                     max_passes=max_passes).fit(Z, (data.y - y_mean) / y_scale)
    return SvrJobModel(data.names, encoder, svr, y_mean, y_scale)


def svr_predict(model: SvrJobModel, features: FeatureVector) -> float:
    return float(model.predict(features.as_row()[None, :])[0])


def _subset(data: UserTrainingData, idx) -> UserTrainingData:
    return UserTrainingData(data.user_id, data.X[idx], data.y[idx], data.job_ids[idx],
                            data.at[idx], data.names)


def _score(pred, truth) -> float:
    err = np.sqrt(np.mean((pred - truth) ** 2))
    mean = truth.mean()
    return float(err / mean) if mean != 0 else float(err)


def tune_hyperparams(data: UserTrainingData, candidates: Sequence[Mapping],
                     train_fraction: float = 0.8, **fit_kw) -> dict:
    """Pick the candidate with the lowest NRMSE on a chronological hold-out.

    The earliest ``train_fraction`` of points (by timestamp) train, the rest
    validate. Ties keep the earlier candidate.
    """
    candidates = list(candidates)
    if not candidates:
        raise ConfigurationError("no hyper-parameter candidates")
    if len(candidates) == 1:
        return dict(candidates[0])
    order = np.argsort(data.at, kind="stable")
    cut = int(round(train_fraction * order.size))
    cut = min(max(cut, 2), order.size - 1)
    train, valid = _subset(data, order[:cut]), _subset(data, order[cut:])
    best, best_score = None, np.inf
    for cand in candidates:
        model = svr_fit(train, **{**fit_kw, **cand})
        score = _score(model.predict(valid.X), valid.y)
        if score < best_score:
            best, best_score = cand, score
    return dict(best if best is not None else candidates[0])


def global_eam_fit(all_data: Iterable[UserTrainingData]) -> EnhancedAverageModel:
    parts = [d for d in all_data if d.n_points]
    if not parts:
        raise ConfigurationError("no training data for the global average model")
    return eam_fit(np.vstack([d.counts() for d in parts]), np.concatenate([d.y for d in parts]))


@dataclass
class UserModel:
    user_id: str
    variant: Variant
    model: object  # SvrJobModel or EnhancedAverageModel
    n_points: int = 0
    n_jobs: int = 0
    hyperparams: dict = field(default_factory=dict)

    def predict_rows(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.variant is Variant.SVR:
            return self.model.predict(X)
        return np.maximum(X[:, 1:4] @ self.model.coef_, 0.0)


def fit_user_model(data: Optional[UserTrainingData], global_model: EnhancedAverageModel,
                   user_id: Optional[str] = None, candidates: Optional[Sequence[Mapping]] = None,
                   min_points: int = MIN_SVR_POINTS, min_jobs: int = MIN_SVR_JOBS,
                   **fit_kw) -> UserModel:
    """Train whichever variant the user's data volume allows."""
    if data is None:
        return UserModel(user_id, Variant.GLOBAL_EAM, global_model)
    variant = select_variant(data.n_points, data.n_jobs, min_points, min_jobs)
    if variant is Variant.SVR:
        cands = list(candidates) if candidates else default_candidates()
        best = tune_hyperparams(data, cands, **fit_kw)
        model = svr_fit(data, **{**fit_kw, **best})
        return UserModel(data.user_id, variant, model, data.n_points, data.n_jobs, best)
    model = eam_fit(data.counts(), data.y, fallback=global_model)
    return UserModel(data.user_id, variant, model, data.n_points, data.n_jobs)


def predict_job_array(model: UserModel, dataset: ReconciledDataset, job_id: str,
                      indices: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """Predicted power of one job at grid ``indices`` (default: its whole lifetime)."""
    job = dataset.job_index[job_id]
    idx, rows = job_feature_rows(dataset, job_id, indices)
    code = model.model.code(job.job_name) if model.variant is Variant.SVR else UNKNOWN
    X = np.hstack([np.full((idx.size, 1), float(code)), rows])
    return idx, model.predict_rows(X)


def predict_job_series(model: UserModel, job_id: str, dataset: ReconciledDataset) -> dict:
    """``{t: watts}`` over every grid point at which the job is active."""
    idx, watts = predict_job_array(model, dataset, job_id)
    pts = dataset.times
    return {int(pts[k]): float(w) for k, w in zip(idx, watts)}


# ---------------------------------------------------------------------------
# persistence


def _floats(a) -> list:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def _eam_payload(m: EnhancedAverageModel) -> dict:
    return {"rates": _floats(m.coef_)}


def user_model_to_dict(model: UserModel) -> dict:
    out = {"user_id": model.user_id, "variant": model.variant.value,
           "n_points": model.n_points, "n_jobs": model.n_jobs,
           "hyperparams": model.hyperparams}
    if model.variant is Variant.SVR:
        m: SvrJobModel = model.model
        svr = m.svr
        out["svr"] = {
            "names": m.names,
            "mean": _floats(m.encoder.mean_),
            "scale": _floats(m.encoder.scale_),
            "kernel": svr.kernel,
            "gamma": float(svr.gamma_),
            "C": float(svr.C),
            "epsilon": float(svr.epsilon),
            "intercept": float(svr.intercept_),
            "dual_coef": _floats(svr.dual_coef_),
            "support_vectors": [_floats(r) for r in svr.support_vectors_],
            "n_features": int(svr.n_features_in_),
            "y_mean": m.y_mean,
            "y_scale": m.y_scale,
        }
    else:
        out["eam"] = _eam_payload(model.model)
    return out


def user_model_from_dict(d: dict) -> UserModel:
    variant = Variant(d["variant"])
    if variant is Variant.SVR:
        s = d["svr"]
        enc = JobFeatureEncoder(n_names=len(s["names"]))
        enc.mean_ = np.array(s["mean"], dtype=float)
        enc.scale_ = np.array(s["scale"], dtype=float)
        enc.n_features_in_ = enc.mean_.size + 1
        svr = EpsilonSVR(C=s["C"], epsilon=s["epsilon"], kernel=s["kernel"], gamma=s["gamma"])
        svr.gamma_ = float(s["gamma"])
        svr.intercept_ = float(s["intercept"])
        svr.dual_coef_ = np.array(s["dual_coef"], dtype=float)
        svr.support_vectors_ = np.array(s["support_vectors"], dtype=float).reshape(
            len(s["dual_coef"]), s["n_features"])
        svr.n_features_in_ = int(s["n_features"])
        model = SvrJobModel(s["names"], enc, svr, s["y_mean"], s["y_scale"])
    else:
        model = EnhancedAverageModel.from_rates(*d["eam"]["rates"])
    return UserModel(d["user_id"], variant, model, int(d["n_points"]), int(d["n_jobs"]),
                     dict(d.get("hyperparams") or {}))


def save_user_model(model: UserModel, path) -> None:
    payload = json.dumps(user_model_to_dict(model), sort_keys=True)
    Path(path).write_text(f"{MAGIC}\n{payload}\n", encoding="utf-8")


def load_user_model(path) -> UserModel:
    text = Path(path).read_text(encoding="utf-8")
    header, _, body = text.partition("\n")
    if header.strip() != MAGIC:
        raise ParseError(f"not a {MAGIC} model file", path)
    try:
        return user_model_from_dict(json.loads(body))
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"corrupt model file: {exc}", path) from None

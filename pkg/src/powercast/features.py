"""Workload features for per-job power regression.

A job at grid point ``t`` is described by its name, the resources it holds
and the resources other jobs hold on the nodes it shares with them. The
latter let the regression pick up interference between collocated jobs.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import PreconditionError
from .ingest import AllocationSlice, JobRecord, ReconciledDataset

UNKNOWN = -1

NUMERIC_FEATURES = (
    "own_cpu_cores", "own_gpus", "own_mics", "own_nodes",
    "colo_cpu_cores", "colo_gpus", "colo_mics",
)


@dataclass(frozen=True)
class FeatureVector:
    job_name_code: int
    own_cpu_cores: int
    own_gpus: int
    own_mics: int
    own_nodes: int
    colo_cpu_cores: int
    colo_gpus: int
    colo_mics: int

    def as_row(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


class JobNameVocabulary:
    """Per-user dictionary of job names, frozen after training."""

    def __init__(self, codes: Optional[dict] = None):
        self.codes: dict = dict(codes or {})

    def __len__(self):
        return len(self.codes)

    def add(self, user_id: str, job_name: str) -> int:
        key = (user_id, job_name)
        if key not in self.codes:
            self.codes[key] = sum(1 for u, _ in self.codes if u == user_id)
        return self.codes[key]

    def lookup(self, user_id: str, job_name: str) -> int:
        return self.codes.get((user_id, job_name), UNKNOWN)

    def n_codes(self, user_id: str) -> int:
        return sum(1 for u, _ in self.codes if u == user_id)


def encode_job_name(user_id: str, job_name: str, vocabulary: JobNameVocabulary,
                    grow: bool = False) -> int:
    """Stable integer code of ``job_name`` within ``user_id``'s vocabulary.

    With ``grow`` the name is added when new (training); otherwise unseen
    names map to ``UNKNOWN``.
    """
    if grow:
        return vocabulary.add(user_id, job_name)
    return vocabulary.lookup(user_id, job_name)


def _per_node(slices: Iterable[AllocationSlice]) -> dict:
    out: dict = {}
    for a in slices:
        c = out.setdefault(a.node, [0, 0, 0])
        c[0] += a.cpu_cores
        c[1] += a.gpus
        c[2] += a.mics
    return out


def extract_features(job: JobRecord, allocations: Sequence[AllocationSlice],
                     active_jobs: Iterable[JobRecord], t: int,
                     vocabulary: Optional[JobNameVocabulary] = None) -> FeatureVector:
    """Feature vector of ``job`` at ``t`` from plain records.

    ``active_jobs`` lists the jobs running at ``t``; ``job`` itself may be
    among them. Collocated counts sum what the other jobs hold on nodes that
    ``job`` also uses.
    """
    if not job.active_at(t):
        raise PreconditionError(f"job {job.job_id} is not active at {t}")
    by_job: dict = {}
    for a in allocations:
        by_job.setdefault(a.job_id, []).append(a)
    own = _per_node(by_job.get(job.job_id, ()))
    colo = [0, 0, 0]
    for other in active_jobs:
        if other.job_id == job.job_id or not other.active_at(t):
            continue
        for node, counts in _per_node(by_job.get(other.job_id, ())).items():
            if node in own:
                for i in range(3):
                    colo[i] += counts[i]
    totals = [sum(c[i] for c in own.values()) for i in range(3)]
    code = vocabulary.lookup(job.user_id, job.job_name) if vocabulary is not None else UNKNOWN
    return FeatureVector(code, *totals, len(own), *colo)


def job_feature_rows(dataset: ReconciledDataset, job_id: str,
                     indices: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """Numeric features of one job at each grid index where it is active.

    Returns ``(indices, rows)`` with ``rows`` of shape ``(len(indices), 7)``
    in :data:`NUMERIC_FEATURES` order.
    """
    pl = dataset.placements[job_id]
    if indices is None:
        indices = np.arange(pl.lo, pl.hi)
    indices = np.asarray(indices, dtype=np.int64)
    rows = np.zeros((indices.size, 7))
    rows[:, 0] = pl.cpu_cores
    rows[:, 1] = pl.gpus
    rows[:, 2] = pl.mics
    rows[:, 3] = len(pl.node_counts)
    for n, counts in pl.node_counts.items():
        rows[:, 4:7] += dataset.kind_units[indices, n] - np.asarray(counts)
    return indices, rows


class JobFeatureEncoder(TransformerMixin, BaseEstimator):
    """One-hot job-name codes plus standardized numeric features.

    Input rows are ``[job_name_code, *NUMERIC_FEATURES]``. The name column
    expands to ``n_names + 1`` indicator columns (the last one is the
    unknown bucket) and is left unscaled; numeric columns are centred and
    scaled with training statistics. Zero-variance columns are only centred.
    """

    def __init__(self, n_names: int = 0):
        self.n_names = n_names

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        num = X[:, 1:]
        self.mean_ = num.mean(axis=0)
        std = num.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=float)
        codes = X[:, 0].astype(int)
        codes = np.where((codes < 0) | (codes >= self.n_names), self.n_names, codes)
        onehot = np.zeros((X.shape[0], self.n_names + 1))
        onehot[np.arange(X.shape[0]), codes] = 1.0
        return np.hstack([onehot, (X[:, 1:] - self.mean_) / self.scale_])

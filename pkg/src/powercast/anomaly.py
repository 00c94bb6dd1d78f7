"""Model-fit monitoring as an early failure signal.

A healthy machine keeps the linear system model's error flat. A rising
error over a trailing window, or a large share of nodes going silent, is
raised as an alarm. Alarms are edge-triggered: one event per excursion.
"""

from __future__ import annotations

import csv
import enum
import threading
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .ingest import NodeState, ReconciledDataset
from .trace_core import TimeGrid

HOUR = 3600
DEFAULT_WINDOW = 48 * HOUR
DEFAULT_MIN_POINTS = 12
# Floor on the baseline error so a perfect training fit still yields usable thresholds.
MIN_BASELINE = 1e-3


class AlarmKind(enum.Enum):
    FIT_DEGRADATION = "FitDegradation"
    MASS_NODE_DOWN = "MassNodeDown"


@dataclass(frozen=True)
class AlarmEvent:
    at: int
    kind: AlarmKind
    detail: float


@dataclass(frozen=True)
class WindowedFitSeries:
    window_length: int
    min_points: int
    times: np.ndarray
    values: np.ndarray

    def as_dict(self) -> dict:
        return {int(t): float(v) for t, v in zip(self.times, self.values)}


@dataclass(frozen=True)
class AlarmThresholds:
    nrmse_abs: float
    nrmse_slope_per_hour: float
    down_frac: float = 0.5

    def __post_init__(self):
        if not (self.nrmse_abs > 0 and self.nrmse_slope_per_hour > 0 and 0 < self.down_frac <= 1):
            raise ValueError("alarm thresholds must be positive (down_frac in (0, 1])")

    @classmethod
    def from_baseline(cls, baseline_nrmse: float, down_frac: float = 0.5) -> "AlarmThresholds":
        """One and a half times the baseline error, or a rise of an eighth of it per hour.

        A healthy 48 h window moves by a few hundredths of the baseline per
        hour, while a sustained 20% power drift moves it by about a third.
        """
        base = max(float(baseline_nrmse), MIN_BASELINE)
        return cls(1.5 * base, base / 8.0, down_frac)


def _on_grid(series, grid: TimeGrid):
    out = np.full(len(grid), np.nan)
    k = (np.asarray(series.times) - grid.start) // grid.step
    ok = (k >= 0) & (k < len(grid)) & ((np.asarray(series.times) - grid.start) % grid.step == 0)
    out[k[ok]] = series.watts[ok]
    return out


def rolling_nrmse(predicted, measured, grid: TimeGrid, window_length: int = DEFAULT_WINDOW,
                  min_points: int = DEFAULT_MIN_POINTS) -> WindowedFitSeries:
    """NRMSE over common points in ``[t - window_length, t]`` for every grid point ``t``.

    Points with fewer than ``min_points`` common samples in their window are
    left out of the result.
    """
    p = _on_grid(predicted, grid)
    m = _on_grid(measured, grid)
    both = ~np.isnan(p) & ~np.isnan(m)
    sq = np.where(both, (m - p) ** 2, 0.0)
    mv = np.where(both, m, 0.0)
    w = window_length // grid.step + 1
    pad = np.zeros(w - 1)
    n = sliding_window_view(np.r_[pad, both.astype(float)], w).sum(axis=1)
    s = sliding_window_view(np.r_[pad, sq], w).sum(axis=1)
    tot = sliding_window_view(np.r_[pad, mv], w).sum(axis=1)
    ok = (n >= min_points) & (tot != 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.sqrt(s / n) / (tot / n)
    return WindowedFitSeries(window_length, min_points, grid.points[ok], vals[ok])


def down_node_series(dataset: ReconciledDataset) -> np.ndarray:
    return (dataset.node_state == NodeState.DOWN).sum(axis=1)


def down_node_count(dataset: ReconciledDataset, t: int) -> int:
    return int(down_node_series(dataset)[dataset.grid.index(t)])


def _onsets(active: np.ndarray) -> np.ndarray:
    prev = np.r_[False, active[:-1]]
    return np.flatnonzero(active & ~prev)


def detect_alarms(fit: WindowedFitSeries, downs, thresholds: AlarmThresholds,
                  n_nodes: int, step: int = 300) -> list[AlarmEvent]:
    """Edge-triggered alarms from the windowed fit and the down-node counts.

    ``downs`` is a ``{t: count}`` mapping or a ``(times, counts)`` pair.
    FitDegradation fires once the windowed NRMSE exceeds ``nrmse_abs`` or
    rises faster than ``nrmse_slope_per_hour`` at two consecutive grid
    points. MassNodeDown fires when the down fraction reaches ``down_frac``.
    """
    events = []
    if fit.times.size:
        start = int(fit.times[0])
        span = (int(fit.times[-1]) - start) // step + 1
        vals = np.full(span, np.nan)
        vals[(fit.times - start) // step] = fit.values
        lag = HOUR // step
        rise = np.full(span, np.nan)
        rise[lag:] = vals[lag:] - vals[:-lag]
        with np.errstate(invalid="ignore"):
            raw = (vals > thresholds.nrmse_abs) | (rise > thresholds.nrmse_slope_per_hour)
        sustained = raw & np.r_[False, raw[:-1]]
        for k in _onsets(sustained):
            events.append(AlarmEvent(start + k * step, AlarmKind.FIT_DEGRADATION, float(vals[k])))
    if isinstance(downs, dict):
        items = sorted(downs.items())
        d_times = np.array([t for t, _ in items], dtype=np.int64)
        d_counts = np.array([c for _, c in items], dtype=float)
    else:
        d_times, d_counts = (np.asarray(a) for a in downs)
    if d_times.size:
        mass = d_counts / n_nodes >= thresholds.down_frac
        for k in _onsets(mass):
            events.append(AlarmEvent(int(d_times[k]), AlarmKind.MASS_NODE_DOWN, float(d_counts[k])))
    return sorted(events, key=lambda e: (e.at, e.kind.value))


def append_alarm_log(events, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(["ts", "kind", "detail"])
        for e in events:
            w.writerow([e.at, e.kind.value, repr(e.detail)])


class RollingFit:
    """Incremental windowed NRMSE for a live feed.

    One thread calls :meth:`update`; any thread may call :meth:`snapshot`.
    """

    def __init__(self, window_length: int = DEFAULT_WINDOW, min_points: int = DEFAULT_MIN_POINTS):
        self.window_length = window_length
        self.min_points = min_points
        self._buf: deque = deque()
        self._latest: Optional[tuple] = None
        self._lock = threading.Lock()

    def update(self, t: int, predicted: float, measured: float) -> Optional[float]:
        self._buf.append((t, predicted, measured))
        while self._buf and self._buf[0][0] < t - self.window_length:
            self._buf.popleft()
        value = None
        if len(self._buf) >= self.min_points:
            m = np.array([b[2] for b in self._buf])
            p = np.array([b[1] for b in self._buf])
            if m.sum() != 0:
                value = float(np.sqrt(np.mean((m - p) ** 2)) / m.mean())
        with self._lock:
            self._latest = (t, value)
        return value

    def snapshot(self) -> Optional[tuple]:
        with self._lock:
            return self._latest

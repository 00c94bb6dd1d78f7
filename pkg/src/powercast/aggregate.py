"""Component-level power: measured totals and the sum of job predictions."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .exceptions import ConsistencyError
from .ingest import DEV0, IdleTable, ReconciledDataset
from .trace_core import ComponentKind, TimeGrid

__all__ = [
    "ComponentPowerSeries", "IdleTable", "Provenance", "idle_power", "idle_power_array",
    "measured_component_series", "predicted_component_series", "read_series_csv",
    "write_series_csv",
]


class Provenance(enum.Enum):
    MEASURED = "measured"
    PREDICTED = "predicted"
    ESTIMATED = "estimated"  # system power from measured components


@dataclass(frozen=True)
class ComponentPowerSeries:
    """Watts at a subset of grid points (``times`` ascending)."""

    grid: TimeGrid
    times: np.ndarray
    watts: np.ndarray
    provenance: Provenance

    def __post_init__(self):
        if self.times.shape != self.watts.shape:
            raise ValueError("times and watts differ in length")
        if self.watts.size and (not np.isfinite(self.watts).all() or (self.watts < 0).any()):
            raise ValueError("power series values must be finite and non-negative")

    def __len__(self):
        return int(self.times.size)

    def as_dict(self) -> dict:
        return {int(t): float(w) for t, w in zip(self.times, self.watts)}

    def restrict(self, mask_or_times) -> "ComponentPowerSeries":
        m = np.asarray(mask_or_times)
        keep = m if m.dtype == bool else np.isin(self.times, m)
        return ComponentPowerSeries(self.grid, self.times[keep], self.watts[keep], self.provenance)

    def between(self, start: int, end: int) -> "ComponentPowerSeries":
        return self.restrict((self.times >= start) & (self.times <= end))


# Predictions and measurements on the same dataset share this type.
SystemPowerSeries = ComponentPowerSeries


def measured_component_series(dataset: ReconciledDataset) -> ComponentPowerSeries:
    """Total measured component power at every kept grid point."""
    ok = dataset.valid
    total = np.nansum(dataset.component_power[ok], axis=(1, 2))
    return ComponentPowerSeries(dataset.grid, dataset.times[ok], total, Provenance.MEASURED)


def _idle_watts(dataset: ReconciledDataset, idle_table: Mapping) -> np.ndarray:
    table = IdleTable(idle_table).require_complete()
    w = np.zeros((dataset.n_nodes, 4))
    w[:, :DEV0] = table[ComponentKind.CPU]
    for n, dev in enumerate(dataset.node_devices):
        if dev is not None:
            w[n, DEV0:] = table[dev]
    return w


def idle_power_array(dataset: ReconciledDataset, idle_table: Optional[Mapping] = None) -> np.ndarray:
    """Idle draw at every grid point: live components that no job holds."""
    table = dataset.idle_table if idle_table is None else idle_table
    idle = dataset.live_mask() & (dataset.slot_units == 0)
    return (idle * _idle_watts(dataset, table)[None]).sum(axis=(1, 2))


def idle_power(t: int, dataset: ReconciledDataset, idle_table: Optional[Mapping] = None) -> float:
    k = dataset.grid.index(t)
    table = dataset.idle_table if idle_table is None else idle_table
    idle = dataset.live_mask()[k] & (dataset.slot_units[k] == 0)
    return float((idle * _idle_watts(dataset, table)).sum())


def _as_index_arrays(dataset, series):
    if isinstance(series, tuple):
        return series
    pts = dataset.times
    items = sorted(series.items())
    idx = np.array([dataset.grid.index(t) for t, _ in items], dtype=np.int64)
    return idx, np.array([w for _, w in items], dtype=float)


def predicted_component_series(job_predictions: Mapping, dataset: ReconciledDataset,
                               idle_table: Optional[Mapping] = None,
                               mask: Optional[np.ndarray] = None) -> ComponentPowerSeries:
    """Sum of predicted job power plus idle draw at every kept grid point.

    ``job_predictions`` maps job id to either ``(grid_indices, watts)`` or
    ``{t: watts}``. Every job holding resources at a kept point in ``mask``
    must have a prediction there.
    """
    ok = dataset.valid.copy()
    if mask is not None:
        ok &= mask
    total = np.zeros(len(dataset.grid))
    covered = np.zeros(len(dataset.grid), dtype=bool)
    for job_id, pl in dataset.placements.items():
        if not pl.units or pl.n_points == 0:
            continue
        need = np.zeros(len(dataset.grid), dtype=bool)
        need[pl.lo:pl.hi] = True
        need &= ok
        if not need.any():
            continue
        if job_id not in job_predictions:
            raise ConsistencyError(f"no prediction for active job {job_id!r}")
        idx, watts = _as_index_arrays(dataset, job_predictions[job_id])
        covered[:] = False
        covered[idx] = True
        if (need & ~covered).any():
            t = int(dataset.times[np.argmax(need & ~covered)])
            raise ConsistencyError(f"prediction for job {job_id!r} misses t={t}")
        sel = ok[idx]
        np.add.at(total, idx[sel], watts[sel])
    total += idle_power_array(dataset, idle_table)
    return ComponentPowerSeries(dataset.grid, dataset.times[ok], total[ok], Provenance.PREDICTED)


def write_series_csv(series: ComponentPowerSeries, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ts", "watts"])
        for t, v in zip(series.times, series.watts):
            w.writerow([int(t), repr(float(v))])


def read_series_csv(path, grid: TimeGrid, provenance: Provenance) -> ComponentPowerSeries:
    times, watts = [], []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            times.append(int(row[0]))
            watts.append(float(row[1]))
    return ComponentPowerSeries(grid, np.array(times, dtype=np.int64), np.array(watts), provenance)

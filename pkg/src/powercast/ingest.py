"""CSV loading, gap correction and per-job power targets.

The four input tables are plain CSV files (see ``README.md`` for the
schemas). :func:`reconcile` puts them on a common grid and repairs holes in
the component telemetry:

* a node with nothing at all at ``t`` (no component reading, no job) is down
  and draws 0 W;
* a live node with a missing reading on a component no job occupies gets the
  idle value for that kind;
* a missing reading on an occupied component cannot be repaired, so the
  whole grid point is dropped from every downstream series.

Grid points without a system-level reading keep their component data but
carry ``NaN`` system power.
"""

from __future__ import annotations

import csv
import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .exceptions import ConfigurationError, ConsistencyError, ParseError
from .trace_core import (
    CORES_PER_SOCKET,
    SYSTEM,
    ComponentId,
    ComponentKind,
    PowerSample,
    TimeGrid,
    nearest_in_window,
)

JOBS_HEADER = ["job_id", "user_id", "job_name", "start_ts", "end_ts"]
ALLOCATIONS_HEADER = ["job_id", "node", "cpu_cores", "gpus", "mics"]
COMPONENT_HEADER = ["node", "kind", "slot", "ts", "watts"]
SYSTEM_HEADER = ["ts", "watts"]

MAX_CORES_PER_NODE = 2 * CORES_PER_SOCKET
MAX_DEVICES_PER_NODE = 2
DEFAULT_NODES = 64

# Column layout of the per-node component axis.
CPU0, CPU1, DEV0, DEV1 = range(4)
COLUMN_KIND = ("CPU", "CPU", "DEV", "DEV")


@dataclass(frozen=True)
class JobRecord:
    job_id: str
    user_id: str
    job_name: str
    start: int
    end: int

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"job {self.job_id}: end {self.end} precedes start {self.start}")

    def active_at(self, t: int) -> bool:
        return self.start <= t <= self.end


@dataclass(frozen=True)
class AllocationSlice:
    job_id: str
    node: int
    cpu_cores: int
    gpus: int = 0
    mics: int = 0

    def __post_init__(self):
        counts = (self.cpu_cores, self.gpus, self.mics)
        if self.node < 0:
            raise ValueError(f"negative node id {self.node}")
        if min(counts) < 0:
            raise ValueError("resource counts must be non-negative")
        if self.cpu_cores > MAX_CORES_PER_NODE:
            raise ValueError(f"{self.cpu_cores} cores exceed the {MAX_CORES_PER_NODE}-core node")
        if self.gpus > MAX_DEVICES_PER_NODE or self.mics > MAX_DEVICES_PER_NODE:
            raise ValueError("at most two accelerators per node")
        if self.gpus and self.mics:
            raise ValueError("a node carries either GPUs or MICs, not both")
        if not any(counts):
            raise ValueError("allocation slice uses no resources")


class NodeState(enum.IntEnum):
    DOWN = 0
    IDLE = 1
    ACTIVE = 2


@dataclass(frozen=True)
class NodeStatus:
    node: int
    at: int
    state: NodeState


class IdleTable(dict):
    """Idle watts per :class:`ComponentKind`."""

    def __init__(self, values: Mapping = ()):
        super().__init__()
        for k, v in dict(values).items():
            kind = k if isinstance(k, ComponentKind) else ComponentKind.parse(str(k))
            v = float(v)
            if not math.isfinite(v) or v < 0:
                raise ConfigurationError(f"idle power for {kind.value} must be non-negative")
            self[kind] = v

    def require_complete(self):
        missing = [k.value for k in ComponentKind if k not in self]
        if missing:
            raise ConfigurationError(f"idle table lacks {', '.join(missing)}")
        return self

    def dump(self) -> str:
        return "".join(f"{k.value}={self[k]!r}\n" for k in ComponentKind if k in self)


# ---------------------------------------------------------------------------
# loaders


def _read_rows(path, header):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise ParseError("missing header row", path) from None
        if [h.strip() for h in got] != header:
            raise ParseError(f"expected header {','.join(header)}, got {','.join(got)}", path, 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, lineno)
            yield lineno, [c.strip() for c in row]


def _int(text, what, path, lineno):
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"{what} is not an integer: {text!r}", path, lineno) from None


def _watts(text, path, lineno):
    try:
        w = float(text)
    except ValueError:
        raise ParseError(f"watts is not a number: {text!r}", path, lineno) from None
    if not math.isfinite(w) or w < 0:
        raise ParseError(f"watts must be finite and non-negative, got {text}", path, lineno)
    return w


def load_jobs(path) -> list[JobRecord]:
    jobs, seen = [], set()
    for lineno, (job_id, user, name, start, end) in _read_rows(path, JOBS_HEADER):
        if job_id in seen:
            raise ParseError(f"duplicate job_id {job_id!r}", path, lineno)
        seen.add(job_id)
        try:
            jobs.append(JobRecord(job_id, user, name,
                                  _int(start, "start_ts", path, lineno),
                                  _int(end, "end_ts", path, lineno)))
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(str(exc), path, lineno) from None
    return jobs


def load_allocations(path) -> list[AllocationSlice]:
    out = []
    for lineno, (job_id, node, cores, gpus, mics) in _read_rows(path, ALLOCATIONS_HEADER):
        vals = [_int(v, k, path, lineno) for v, k in
                ((node, "node"), (cores, "cpu_cores"), (gpus, "gpus"), (mics, "mics"))]
        try:
            out.append(AllocationSlice(job_id, *vals))
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
    return out


def load_component_power(path) -> list[PowerSample]:
    out = []
    for lineno, (node, kind, slot, ts, watts) in _read_rows(path, COMPONENT_HEADER):
        try:
            cid = ComponentId(_int(node, "node", path, lineno), ComponentKind.parse(kind),
                              _int(slot, "slot", path, lineno))
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(str(exc), path, lineno) from None
        at = _int(ts, "ts", path, lineno)
        if at < 0:
            raise ParseError("negative timestamp", path, lineno)
        out.append(PowerSample(at, _watts(watts, path, lineno), cid))
    return out


def load_system_power(path) -> list[PowerSample]:
    out = []
    for lineno, (ts, watts) in _read_rows(path, SYSTEM_HEADER):
        at = _int(ts, "ts", path, lineno)
        if at < 0:
            raise ParseError("negative timestamp", path, lineno)
        out.append(PowerSample(at, _watts(watts, path, lineno), SYSTEM))
    return out


def load_idle_table(path) -> IdleTable:
    """Parse ``CPU=<watts>`` style lines; blank lines and ``#`` comments are skipped."""
    values = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigurationError(f"{path}:{lineno}: expected KIND=watts")
            try:
                values[ComponentKind.parse(key)] = float(value)
            except ValueError as exc:
                raise ConfigurationError(f"{path}:{lineno}: {exc}") from None
    return IdleTable(values)


# ---------------------------------------------------------------------------
# reconciled dataset


@dataclass
class JobPlacement:
    """Where a job sits on the grid.

    ``lo:hi`` is the index range of grid points at which the job is active;
    ``units[node]`` is an ``(hi - lo, 4)`` array of units held on each of the
    node's component columns (cores for CPU sockets, devices otherwise).
    """

    job: JobRecord
    lo: int
    hi: int
    cpu_cores: int
    gpus: int
    mics: int
    node_counts: dict = field(default_factory=dict)  # node -> (cores, gpus, mics)
    units: dict = field(default_factory=dict)

    @property
    def nodes(self) -> list[int]:
        return sorted(self.node_counts)

    @property
    def n_points(self) -> int:
        return max(0, self.hi - self.lo)


@dataclass
class ReconciledDataset:
    """Telemetry repaired and aligned on one grid.

    Arrays are indexed ``[grid index, node, column]`` with columns
    ``CPU0, CPU1, DEV0, DEV1``. Dropped grid points have ``valid`` False and
    ``NaN`` component power.
    """

    grid: TimeGrid
    n_nodes: int
    node_devices: list  # ComponentKind.GPU / MIC / None per node
    component_power: np.ndarray
    system_power: np.ndarray
    valid: np.ndarray
    node_state: np.ndarray
    slot_units: np.ndarray
    kind_units: np.ndarray  # [t, node, (cores, gpus, mics)]
    jobs: list
    allocations: list
    placements: dict
    idle_table: IdleTable
    dropped_points: list = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return self.grid.points

    @property
    def job_index(self) -> dict:
        return {j.job_id: j for j in self.jobs}

    def component_exists(self) -> np.ndarray:
        """``(n_nodes, 4)`` mask of physically present components."""
        mask = np.zeros((self.n_nodes, 4), dtype=bool)
        mask[:, CPU0] = mask[:, CPU1] = True
        for n, dev in enumerate(self.node_devices):
            if dev is not None:
                mask[n, DEV0] = mask[n, DEV1] = True
        return mask

    def component_id(self, node: int, column: int) -> ComponentId:
        if column < 2:
            return ComponentId(node, ComponentKind.CPU, column)
        dev = self.node_devices[node]
        if dev is None:
            raise KeyError((node, column))
        return ComponentId(node, dev, column - 2)

    def power(self, cid: ComponentId, t: int) -> Optional[float]:
        k = self.grid.index(t)
        if not self.valid[k]:
            return None
        return float(self.component_power[k, cid.node, cid.column])

    def component_power_map(self) -> dict:
        """``{(ComponentId, t): watts}`` over non-dropped grid points."""
        out = {}
        exists = self.component_exists()
        pts = self.times
        for k in np.flatnonzero(self.valid):
            for n in range(self.n_nodes):
                for c in range(4):
                    if exists[n, c]:
                        out[(self.component_id(n, c), int(pts[k]))] = float(self.component_power[k, n, c])
        return out

    def system_power_map(self) -> dict:
        ok = self.valid & ~np.isnan(self.system_power)
        return {int(t): float(w) for t, w in zip(self.times[ok], self.system_power[ok])}

    def node_status(self, node: int, t: int) -> NodeStatus:
        return NodeStatus(node, t, NodeState(int(self.node_state[self.grid.index(t), node])))

    def live_mask(self) -> np.ndarray:
        """``(T, N, 4)`` mask of components that exist and sit on an up node."""
        return (self.node_state != NodeState.DOWN)[:, :, None] & self.component_exists()[None]

    def component_samples(self) -> list[PowerSample]:
        """Readings of every live component at kept grid points, as samples."""
        out = []
        live = self.live_mask()
        pts = self.times
        for k in np.flatnonzero(self.valid):
            for n, c in zip(*np.nonzero(live[k])):
                out.append(PowerSample(int(pts[k]), float(self.component_power[k, n, c]),
                                       self.component_id(int(n), int(c))))
        return out

    def system_samples(self) -> list[PowerSample]:
        ok = ~np.isnan(self.system_power)
        return [PowerSample(int(t), float(w), SYSTEM)
                for t, w in zip(self.times[ok], self.system_power[ok])]

    def window_mask(self, start: int, end: int) -> np.ndarray:
        pts = self.times
        return (pts >= start) & (pts <= end)


def _node_devices(n_nodes, component_samples, allocations):
    devices: list = [None] * n_nodes
    for cid in {s.source for s in component_samples}:
        if cid.kind is ComponentKind.CPU:
            continue
        _set_device(devices, cid.node, cid.kind)
    for a in allocations:
        if a.gpus:
            _set_device(devices, a.node, ComponentKind.GPU)
        if a.mics:
            _set_device(devices, a.node, ComponentKind.MIC)
    return devices


def _set_device(devices, node, kind):
    if node >= len(devices):
        raise ConsistencyError(f"node {node} outside the {len(devices)}-node machine")
    if devices[node] not in (None, kind):
        raise ConsistencyError(f"node {node} reports both {devices[node].value} and {kind.value}")
    devices[node] = kind


def place_jobs(jobs: Sequence[JobRecord], allocations: Sequence[AllocationSlice],
               grid: TimeGrid, n_nodes: int):
    """Assign each job's units to concrete sockets and devices over time.

    Jobs are packed in ``(start, job_id)`` order: cores fill socket 0 before
    socket 1, accelerators fill slot 0 before slot 1. Returns the
    placements and the ``(T, N, 4)`` occupancy array.
    """
    by_job = defaultdict(lambda: defaultdict(lambda: [0, 0, 0]))
    known = {j.job_id for j in jobs}
    for a in allocations:
        if a.job_id not in known:
            raise ConsistencyError(f"allocation for unknown job {a.job_id!r}")
        if a.node >= n_nodes:
            raise ConsistencyError(f"allocation of job {a.job_id!r} references unknown node {a.node}")
        c = by_job[a.job_id][a.node]
        c[0] += a.cpu_cores
        c[1] += a.gpus
        c[2] += a.mics
    pts = grid.points
    occupancy = np.zeros((len(pts), n_nodes, 4), dtype=np.int64)
    kind_units = np.zeros((len(pts), n_nodes, 3), dtype=np.int64)
    placements = {}
    for job in sorted(jobs, key=lambda j: (j.start, j.job_id)):
        lo = int(np.searchsorted(pts, job.start, side="left"))
        hi = int(np.searchsorted(pts, job.end, side="right"))
        nodes = by_job.get(job.job_id, {})
        tot = np.sum([v for v in nodes.values()], axis=0) if nodes else np.zeros(3, int)
        pl = JobPlacement(job, lo, hi, int(tot[0]), int(tot[1]), int(tot[2]),
                          {n: tuple(v) for n, v in sorted(nodes.items())})
        for n, (cores, gpus, mics) in sorted(nodes.items()):
            if cores > MAX_CORES_PER_NODE or gpus + mics > MAX_DEVICES_PER_NODE:
                raise ConsistencyError(f"job {job.job_id!r} over-allocates node {n}")
            if hi <= lo:
                continue
            occ = occupancy[lo:hi, n]
            units = np.zeros((hi - lo, 4), dtype=np.int64)
            free0 = CORES_PER_SOCKET - occ[:, CPU0]
            units[:, CPU0] = np.minimum(cores, free0)
            units[:, CPU1] = cores - units[:, CPU0]
            dev = gpus + mics
            units[:, DEV0] = np.minimum(dev, 1 - occ[:, DEV0])
            units[:, DEV1] = dev - units[:, DEV0]
            new = occ + units
            if (new[:, :2] > CORES_PER_SOCKET).any() or (new[:, 2:] > 1).any():
                k = lo + int(np.argmax((new[:, :2] > CORES_PER_SOCKET).any(1) | (new[:, 2:] > 1).any(1)))
                raise ConsistencyError(
                    f"node {n} over-committed at t={int(pts[k])} by job {job.job_id!r}")
            occupancy[lo:hi, n] = new
            kind_units[lo:hi, n] += (cores, gpus, mics)
            pl.units[n] = units
        placements[job.job_id] = pl
    return placements, occupancy, kind_units


def _dedupe_last(times, watts):
    order = np.argsort(times, kind="stable")
    times, watts = times[order], watts[order]
    if times.size:
        keep = np.r_[times[1:] != times[:-1], True]
        times, watts = times[keep], watts[keep]
    return times, watts


def reconcile(jobs: Sequence[JobRecord], allocations: Sequence[AllocationSlice],
              component_samples: Iterable[PowerSample], system_samples: Iterable[PowerSample],
              grid: TimeGrid, idle_table: Mapping, n_nodes: Optional[int] = None) -> ReconciledDataset:
    """Align all telemetry on ``grid`` and apply the gap-correction rules.

    Parameters
    ----------
    n_nodes : int, optional
        Machine size. Defaults to 64, or more if the data mention a
        higher node id.
    """
    idle = IdleTable(idle_table).require_complete()
    component_samples = list(component_samples)
    system_samples = list(system_samples)
    seen_nodes = [s.source.node for s in component_samples] + [a.node for a in allocations]
    if n_nodes is None:
        n_nodes = max([DEFAULT_NODES] + [n + 1 for n in seen_nodes])
    for s in component_samples:
        if s.source.node >= n_nodes:
            raise ConsistencyError(f"sample from node {s.source.node} outside the {n_nodes}-node machine")

    devices = _node_devices(n_nodes, component_samples, allocations)
    placements, occupancy, kind_units = place_jobs(jobs, allocations, grid, n_nodes)
    pts = grid.points
    T = len(pts)

    aligned = np.full((T, n_nodes, 4), np.nan)
    groups = defaultdict(lambda: ([], []))
    for s in component_samples:
        g = groups[s.source]
        g[0].append(s.at)
        g[1].append(s.watts)
    for cid, (ts, ws) in groups.items():
        times, watts = _dedupe_last(np.asarray(ts, np.int64), np.asarray(ws, float))
        idx = nearest_in_window(times, pts)
        hit = idx >= 0
        aligned[hit, cid.node, cid.column] = watts[idx[hit]]

    exists = np.zeros((n_nodes, 4), dtype=bool)
    exists[:, :2] = True
    for n, dev in enumerate(devices):
        if dev is not None:
            exists[n, 2:] = True

    busy_node = occupancy.sum(axis=2) > 0
    measured_node = (~np.isnan(aligned) & exists[None]).any(axis=2)
    down = ~measured_node & ~busy_node

    power = np.where(exists[None], aligned, 0.0)
    power[down] = 0.0
    missing = np.isnan(power)
    occupied = occupancy > 0
    idle_fill = np.zeros((n_nodes, 4))
    idle_fill[:, :2] = idle[ComponentKind.CPU]
    for n, dev in enumerate(devices):
        if dev is not None:
            idle_fill[n, 2:] = idle[dev]
    fill = missing & ~occupied
    power[fill] = np.broadcast_to(idle_fill, power.shape)[fill]

    lost = missing & occupied
    dropped_mask = lost.any(axis=(1, 2))
    dropped = []
    for k in np.flatnonzero(dropped_mask):
        n, c = (int(v) for v in np.argwhere(lost[k])[0])
        kind = "CPU" if c < 2 else devices[n].value
        dropped.append((int(pts[k]), f"node {n} {kind}{c % 2} in use without a reading"))
    power[dropped_mask] = np.nan

    sys = np.full(T, np.nan)
    if system_samples:
        times, watts = _dedupe_last(np.array([s.at for s in system_samples], np.int64),
                                    np.array([s.watts for s in system_samples], float))
        idx = nearest_in_window(times, pts)
        sys[idx >= 0] = watts[idx[idx >= 0]]
    sys[dropped_mask] = np.nan

    state = np.where(down, NodeState.DOWN, np.where(busy_node, NodeState.ACTIVE, NodeState.IDLE))
    return ReconciledDataset(
        grid=grid, n_nodes=n_nodes, node_devices=devices, component_power=power,
        system_power=sys, valid=~dropped_mask, node_state=state.astype(np.int8),
        slot_units=occupancy, kind_units=kind_units, jobs=list(jobs),
        allocations=list(allocations), placements=placements, idle_table=idle,
        dropped_points=dropped)


# ---------------------------------------------------------------------------
# per-job targets


def job_power_series(dataset: ReconciledDataset) -> dict:
    """Measured power of every job, as ``{job_id: (grid_indices, watts)}``.

    Each occupied component's reading is split among its occupants in
    proportion to the units each holds; a job's power is the sum of its
    shares. Dropped grid points carry no target.
    """
    total = dataset.slot_units.astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_unit = np.where(total > 0, dataset.component_power / np.where(total > 0, total, 1.0), 0.0)
    out = {}
    for job_id, pl in dataset.placements.items():
        if pl.n_points == 0 or not pl.units:
            continue
        watts = np.zeros(pl.n_points)
        for n, units in pl.units.items():
            watts += (per_unit[pl.lo:pl.hi, n] * units).sum(axis=1)
        keep = dataset.valid[pl.lo:pl.hi]
        idx = np.arange(pl.lo, pl.hi)[keep]
        if idx.size:
            out[job_id] = (idx, watts[keep])
    return out


def compute_job_power(dataset: ReconciledDataset) -> dict:
    """``{(job_id, t): watts}`` for every job at every kept grid point it is active."""
    pts = dataset.times
    out = {}
    for job_id, (idx, watts) in job_power_series(dataset).items():
        for k, w in zip(idx, watts):
            out[(job_id, int(pts[k]))] = float(w)
    return out


def unoccupied_live_power(dataset: ReconciledDataset) -> np.ndarray:
    """Per grid point, the measured draw of live components that no job holds."""
    mask = dataset.live_mask() & (dataset.slot_units == 0)
    return np.where(mask, dataset.component_power, 0.0).sum(axis=(1, 2))


def load_dataset(jobs_path, allocations_path, component_path, system_path, idle,
                 grid: Optional[TimeGrid] = None, n_nodes: Optional[int] = None,
                 step: int = 300) -> ReconciledDataset:
    """Load the four tables and reconcile them.

    ``idle`` is a path to an idle config or an :class:`IdleTable`. Without a
    grid, one spanning the system-power readings (rounded to ``step``) is used.
    """
    jobs = load_jobs(jobs_path)
    allocs = load_allocations(allocations_path)
    comp = load_component_power(component_path)
    sysp = load_system_power(system_path)
    table = idle if isinstance(idle, Mapping) else load_idle_table(idle)
    if grid is None:
        stamps = [s.at for s in sysp] or [s.at for s in comp]
        if not stamps:
            raise ConfigurationError("no power readings to derive a grid from")
        lo = -(-(min(stamps) - 5) // step) * step
        hi = (max(stamps) + 4) // step * step
        grid = TimeGrid(max(lo, 0), max(hi, lo + step), step)
    return reconcile(jobs, allocs, comp, sysp, grid, table, n_nodes)

"""Synthetic hybrid-cluster traces with known ground truth.

Nodes carry two 8-core CPU sockets plus either two GPUs (first half of the
machine) or two MICs (second half). Each user draws a fixed per-unit power
rate for cores, GPUs and MICs, so a job's power is linear in the resources
it holds; optionally some users add a term proportional to the cores held
by collocated jobs. Jobs always take whole sockets, so no socket is shared
and per-job power is recoverable exactly from component readings.

Readings are written at a jittered offset from each 5-minute grid point, as
a monitoring daemon would produce them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import RangeError
from .ingest import (
    ALLOCATIONS_HEADER,
    COMPONENT_HEADER,
    JOBS_HEADER,
    SYSTEM_HEADER,
    AllocationSlice,
    IdleTable,
    JobRecord,
    place_jobs,
)
from .trace_core import WINDOW_BEFORE, ComponentKind, TimeGrid

DAY = 86400
# 2014-09-01T00:00:00Z
DEFAULT_START = 1409529600
GPU_JOB_FRACTION = 0.26
MIC_JOB_FRACTION = 0.02
DEFAULT_IDLE = {ComponentKind.CPU: 12.0, ComponentKind.GPU: 16.0, ComponentKind.MIC: 40.0}


@dataclass(frozen=True)
class GeneratorSpec:
    nodes: int = 64
    days: int = 7
    users: int = 10
    jobs_per_user: int = 30
    true_system_slope: float = 1.6
    true_system_intercept: float = 3000.0
    noise_rel: float = 0.0
    seed: int = 0
    interaction_users: int = 0
    start: int = DEFAULT_START
    step: int = 300

    def __post_init__(self):
        if self.nodes < 2 or self.days < 1 or self.users < 1 or self.jobs_per_user < 1:
            raise ValueError("generator needs >= 2 nodes, >= 1 day, user and job")
        if self.noise_rel < 0:
            raise ValueError("noise_rel must be non-negative")
        if not 0 <= self.interaction_users <= self.users:
            raise ValueError("interaction_users out of range")


@dataclass
class GroundTruth:
    """Noise-free quantities behind a generated trace.

    ``job_power[job_id]`` is ``(grid_indices, watts)``. ``user_rates[user]``
    holds per-unit watts for (core, GPU, MIC); ``user_colo[user]`` the extra
    watts per collocated core (0 for purely linear users).
    """

    grid: TimeGrid
    job_power: dict
    component_total: np.ndarray
    system_true: np.ndarray
    user_rates: dict
    user_colo: dict
    slope: float
    intercept: float


@dataclass
class SynthTrace:
    spec: GeneratorSpec
    grid: TimeGrid
    jobs: list
    allocations: list
    component_rows: np.ndarray  # columns: node, kind code, slot, ts, watts
    system_rows: np.ndarray  # columns: ts, watts
    idle: IdleTable
    truth: GroundTruth
    fault: Optional[dict] = None

    @property
    def train_window(self) -> tuple:
        test_days = max(1, self.spec.days * 2 // 7)
        cut = self.grid.start + (self.spec.days - test_days) * DAY
        return self.grid.start, cut - self.grid.step

    @property
    def test_window(self) -> tuple:
        return self.train_window[1] + self.grid.step, self.grid.last

    def write(self, directory) -> dict:
        """Write the four tables, ``idle.cfg`` and ``powercast.cfg``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        kinds = [k.value for k in (ComponentKind.CPU, ComponentKind.GPU, ComponentKind.MIC)]
        with (d / "jobs.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(JOBS_HEADER)
            for j in self.jobs:
                w.writerow([j.job_id, j.user_id, j.job_name, j.start, j.end])
        with (d / "allocations.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ALLOCATIONS_HEADER)
            for a in self.allocations:
                w.writerow([a.job_id, a.node, a.cpu_cores, a.gpus, a.mics])
        with (d / "component_power.csv").open("w", newline="", encoding="utf-8") as fh:
            fh.write(",".join(COMPONENT_HEADER) + "\n")
            fh.writelines(f"{int(n)},{kinds[int(k)]},{int(s)},{int(t)},{w!r}\n"
                          for n, k, s, t, w in zip(*self.component_rows.T.tolist()))
        with (d / "system_power.csv").open("w", newline="", encoding="utf-8") as fh:
            fh.write(",".join(SYSTEM_HEADER) + "\n")
            fh.writelines(f"{int(t)},{w!r}\n" for t, w in self.system_rows.tolist())
        (d / "idle.cfg").write_text(self.idle.dump(), encoding="utf-8")
        tr, te = self.train_window, self.test_window
        lines = [
            "data.jobs=jobs.csv",
            "data.allocations=allocations.csv",
            "data.component_power=component_power.csv",
            "data.system_power=system_power.csv",
            "data.idle=idle.cfg",
            f"machine.nodes={self.spec.nodes}",
            f"grid.start={self.grid.start}",
            f"grid.end={self.grid.end}",
            f"grid.step={self.grid.step}",
            f"split.train_start={tr[0]}",
            f"split.train_end={tr[1]}",
            f"split.test_start={te[0]}",
            f"split.test_end={te[1]}",
        ]
        (d / "powercast.cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")
        return {name: d / name for name in ("jobs.csv", "allocations.csv", "component_power.csv",
                                             "system_power.csv", "idle.cfg", "powercast.cfg")}

    def component_samples(self):
        from .trace_core import ComponentId, PowerSample
        kinds = (ComponentKind.CPU, ComponentKind.GPU, ComponentKind.MIC)
        return [PowerSample(int(t), float(w), ComponentId(int(n), kinds[int(k)], int(s)))
                for n, k, s, t, w in self.component_rows.tolist()]

    def system_samples(self):
        from .trace_core import SYSTEM, PowerSample
        return [PowerSample(int(t), float(w), SYSTEM) for t, w in self.system_rows.tolist()]


def _schedule(rng, spec, grid, node_is_gpu):
    """Draw jobs and place them on nodes with free whole sockets/devices."""
    T = len(grid)
    span = spec.days * DAY
    n_jobs = spec.users * spec.jobs_per_user
    n_gpu = int(round(GPU_JOB_FRACTION * n_jobs))
    n_mic = int(round(MIC_JOB_FRACTION * n_jobs))
    kinds = np.array(["gpu"] * n_gpu + ["mic"] * n_mic + ["cpu"] * (n_jobs - n_gpu - n_mic))
    rng.shuffle(kinds)
    kinds = kinds.reshape(spec.users, spec.jobs_per_user)

    # Submissions follow a day/night cycle: rejection-sample the time of day.
    def submit_times(k):
        out = []
        while len(out) < k:
            t = rng.uniform(0, span)
            phase = 2 * np.pi * ((t % DAY) / DAY - 0.375)
            if rng.uniform() < 0.5 * (1 + 0.9 * np.cos(phase)):
                out.append(t)
        return np.sort(np.array(out))

    drafts = []
    for u in range(spec.users):
        times = submit_times(spec.jobs_per_user)
        # Each resource kind the user ever uses shows up among their first jobs.
        ks = list(kinds[u])
        distinct = sorted(set(ks), key=lambda k: ("cpu", "gpu", "mic").index(k))
        for pos, k in enumerate(distinct):
            ks.remove(k)
            ks.insert(pos, k)
        times[:len(distinct)] = np.sort(rng.uniform(0, 6 * 3600, len(distinct)))
        names = [f"app{u}_{i}" for i in range(3)]
        for i in range(spec.jobs_per_user):
            dur = float(np.clip(rng.lognormal(np.log(3 * 3600), 0.7), 1800, DAY))
            n_nodes = int(rng.choice([1, 2, 4], p=[0.6, 0.25, 0.15]))
            cores = int(rng.choice([8, 16]))
            dev = int(rng.choice([1, 2])) if ks[i] != "cpu" else 0
            drafts.append((float(times[i]), u, i, names[int(rng.integers(3))], dur, n_nodes,
                           cores, dev, ks[i]))
    drafts.sort()

    cores_free = np.full((T, spec.nodes), 16, dtype=np.int64)
    dev_free = np.full((T, spec.nodes), 2, dtype=np.int64)
    pts = grid.points
    jobs, allocs = [], []
    for submit, u, i, name, dur, n_nodes, cores, dev, kind in drafts:
        if kind == "gpu":
            pool = np.flatnonzero(node_is_gpu)
        elif kind == "mic":
            pool = np.flatnonzero(~node_is_gpu)
        else:
            pool = np.arange(spec.nodes)
        n_nodes = min(n_nodes, pool.size)
        start = grid.start + int(submit)
        placed = None
        for _ in range(288):
            end = min(start + int(dur), grid.end)
            lo = int(np.searchsorted(pts, start, side="left"))
            hi = int(np.searchsorted(pts, end, side="right"))
            if hi <= lo:
                break
            ok = (cores_free[lo:hi, pool] >= cores).all(0) & (dev_free[lo:hi, pool] >= dev).all(0)
            if ok.sum() >= n_nodes:
                placed = (pool[ok][:n_nodes], lo, hi, end)
                break
            start += grid.step
        if placed is None:
            continue
        nodes, lo, hi, end = placed
        cores_free[lo:hi, nodes] -= cores
        dev_free[lo:hi, nodes] -= dev
        job_id = f"j{u:03d}_{i:04d}"
        jobs.append(JobRecord(job_id, f"u{u:03d}", name, start, end))
        for n in nodes:
            allocs.append(AllocationSlice(job_id, int(n), cores,
                                          dev if kind == "gpu" else 0, dev if kind == "mic" else 0))
    return jobs, allocs


def generate(spec: GeneratorSpec) -> SynthTrace:
    """Build a trace from ``spec``; identical specs give identical traces."""
    rng = np.random.default_rng(spec.seed)
    grid = TimeGrid(spec.start, spec.start + spec.days * DAY - spec.step, spec.step)
    T = len(grid)
    node_is_gpu = np.arange(spec.nodes) < (spec.nodes + 1) // 2
    idle = IdleTable(DEFAULT_IDLE)

    rates = {}
    colo = {}
    for u in range(spec.users):
        user = f"u{u:03d}"
        rates[user] = np.array([rng.uniform(6, 14), rng.uniform(60, 180), rng.uniform(50, 150)])
        colo[user] = float(rng.uniform(0.5, 2.0)) if u < spec.interaction_users else 0.0

    jobs, allocs = _schedule(rng, spec, grid, node_is_gpu)
    placements, occupancy, kind_units = place_jobs(jobs, allocs, grid, spec.nodes)

    # Per-column power of every component, built up job by job.
    comp = np.zeros((T, spec.nodes, 4))
    job_power = {}
    for job in jobs:
        pl = placements[job.job_id]
        r = rates[job.user_id]
        idx = np.arange(pl.lo, pl.hi)
        colo_cores = np.zeros(idx.size)
        for n, counts in pl.node_counts.items():
            colo_cores += kind_units[idx, n, 0] - counts[0]
        per_core = r[0] + colo[job.user_id] * colo_cores / pl.cpu_cores
        per_dev = r[1] if pl.gpus else r[2]
        total = np.zeros(idx.size)
        for n, units in pl.units.items():
            contrib = np.empty_like(units, dtype=float)
            contrib[:, :2] = units[:, :2] * per_core[:, None]
            contrib[:, 2:] = units[:, 2:] * per_dev
            comp[pl.lo:pl.hi, n] += contrib
            total += contrib.sum(axis=1)
        job_power[job.job_id] = (idx, total)

    idle_w = np.empty((spec.nodes, 4))
    idle_w[:, :2] = idle[ComponentKind.CPU]
    idle_w[:, 2:] = np.where(node_is_gpu, idle[ComponentKind.GPU], idle[ComponentKind.MIC])[:, None]
    comp = np.where(occupancy > 0, comp, idle_w[None])
    component_total = comp.sum(axis=(1, 2))
    system_true = spec.true_system_slope * component_total + spec.true_system_intercept

    measured = comp
    system = system_true
    if spec.noise_rel > 0:
        measured = np.maximum(comp * (1 + spec.noise_rel * rng.standard_normal(comp.shape)), 0.0)
        system = np.maximum(system_true * (1 + spec.noise_rel * rng.standard_normal(T)), 0.0)

    pts = grid.points
    jitter = rng.integers(-4, 6, size=(T, spec.nodes, 4))
    node_ids = np.broadcast_to(np.arange(spec.nodes)[None, :, None], (T, spec.nodes, 4))
    slot = np.broadcast_to(np.array([0, 1, 0, 1])[None, None, :], (T, spec.nodes, 4))
    kind_code = np.broadcast_to(
        np.c_[np.zeros((spec.nodes, 2)), np.where(node_is_gpu, 1, 2)[:, None].repeat(2, 1)][None],
        (T, spec.nodes, 4))
    ts = pts[:, None, None] + jitter
    component_rows = np.column_stack([node_ids.ravel(), kind_code.ravel(), slot.ravel(),
                                      ts.ravel(), measured.ravel()])
    order = np.lexsort((component_rows[:, 2], component_rows[:, 1], component_rows[:, 0],
                        component_rows[:, 3]))
    component_rows = component_rows[order]
    system_rows = np.column_stack([pts + rng.integers(-4, 6, size=T), system])

    truth = GroundTruth(grid, job_power, component_total, system_true, rates, colo,
                        spec.true_system_slope, spec.true_system_intercept)
    return SynthTrace(spec, grid, jobs, allocs, component_rows, system_rows, idle, truth)


def inject_fault(trace: SynthTrace, outage_at: int, drift_lead: int = 2 * 3600,
                 drift_magnitude: float = 0.2) -> SynthTrace:
    """Push system power off the linear relation, then take the machine offline.

    System readings in ``[outage_at - drift_lead, outage_at)`` are scaled by
    ``1 + drift_magnitude``. From the first grid point at or after
    ``outage_at`` on, no reading aligns to the grid and no job is running.
    """
    g = trace.grid
    if not g.start <= outage_at <= g.last:
        raise RangeError(f"outage at {outage_at} outside the trace [{g.start}, {g.last}]")
    onset = outage_at - drift_lead
    # Earliest stamp that would be matched to the first grid point of the outage.
    cut = g.start + -(-(outage_at - g.start) // g.step) * g.step - WINDOW_BEFORE
    sys_rows = trace.system_rows.copy()
    t = sys_rows[:, 0]
    if drift_lead > 0 and drift_magnitude:
        sys_rows[(t >= onset) & (t < outage_at), 1] *= 1 + drift_magnitude
    sys_rows = sys_rows[t < cut]
    comp_rows = trace.component_rows[trace.component_rows[:, 3] < cut]
    jobs = [replace(j, end=min(j.end, outage_at - 1)) for j in trace.jobs if j.start < outage_at]
    kept = {j.job_id for j in jobs}
    allocs = [a for a in trace.allocations if a.job_id in kept]
    return replace(trace, jobs=jobs, allocations=allocs, component_rows=comp_rows,
                   system_rows=sys_rows,
                   fault={"outage_at": int(outage_at), "drift_lead": int(drift_lead),
                          "drift_magnitude": float(drift_magnitude)})

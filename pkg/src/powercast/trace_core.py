"""Time and identity primitives, and grid alignment of raw power samples.

Timestamps are integer seconds since the epoch. Every series in the package
lives on a fixed-step :class:`TimeGrid` (5 minutes by default); raw samples
arrive at a few-second cadence and are snapped to the grid by
:func:`align_to_grid`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Optional, Union

import numpy as np

from .exceptions import RangeError

DEFAULT_STEP = 300
# A grid point t accepts samples stamped in [t - 4, t + 5].
WINDOW_BEFORE = 4
WINDOW_AFTER = 5

CORES_PER_SOCKET = 8
SLOTS = 2


class ComponentKind(enum.Enum):
    CPU = "CPU"
    GPU = "GPU"
    MIC = "MIC"

    @classmethod
    def parse(cls, text: str) -> "ComponentKind":
        try:
            return cls(text.strip().upper())
        except ValueError:
            raise ValueError(f"unknown component kind {text!r}") from None


@dataclass(frozen=True, order=True)
class ComponentId:
    node: int
    kind: ComponentKind
    slot: int

    def __post_init__(self):
        if self.node < 0:
            raise ValueError(f"node must be non-negative, got {self.node}")
        if self.slot not in (0, 1):
            raise ValueError(f"slot must be 0 or 1, got {self.slot}")

    @property
    def column(self) -> int:
        """Index of this component in the per-node layout [CPU0, CPU1, DEV0, DEV1]."""
        base = 0 if self.kind is ComponentKind.CPU else 2
        return base + self.slot


class _SystemMeter:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "SYSTEM"

    def __reduce__(self):
        return (_SystemMeter, ())


SYSTEM = _SystemMeter()

Source = Union[ComponentId, _SystemMeter]


@dataclass(frozen=True)
class PowerSample:
    at: int
    watts: float
    source: Source = SYSTEM

    def __post_init__(self):
        if not np.isfinite(self.watts) or self.watts < 0:
            raise ValueError(f"watts must be finite and non-negative, got {self.watts}")
        if self.at < 0:
            raise ValueError(f"timestamp must be non-negative, got {self.at}")


@dataclass(frozen=True)
class TimeGrid:
    start: int
    end: int
    step: int = DEFAULT_STEP

    def __post_init__(self):
        if self.step <= 0:
            raise RangeError(f"step must be positive, got {self.step}")
        if self.start >= self.end:
            raise RangeError(f"empty interval [{self.start}, {self.end}]")
        if self.start < 0:
            raise RangeError("timestamps must be non-negative")

    def __len__(self) -> int:
        return (self.end - self.start) // self.step + 1

    @property
    def points(self) -> np.ndarray:
        return self.start + self.step * np.arange(len(self), dtype=np.int64)

    @property
    def last(self) -> int:
        return self.start + (len(self) - 1) * self.step

    def index(self, t: int) -> int:
        """Position of grid point ``t``; raises ``KeyError`` off-grid."""
        k, r = divmod(int(t) - self.start, self.step)
        if r or k < 0 or k >= len(self):
            raise KeyError(t)
        return k

    def __contains__(self, t) -> bool:
        try:
            self.index(t)
        except KeyError:
            return False
        return True

    def slice_between(self, lo: int, hi: int) -> slice:
        """Index slice of grid points falling in ``[lo, hi]``."""
        pts = self.points
        return slice(int(np.searchsorted(pts, lo, side="left")),
                     int(np.searchsorted(pts, hi, side="right")))


def build_grid(start: int, end: int, step: int = DEFAULT_STEP) -> TimeGrid:
    """Return the grid ``start, start + step, ...`` truncated at ``end``."""
    return TimeGrid(int(start), int(end), int(step))


def nearest_in_window(times: np.ndarray, grid_points: np.ndarray,
                      before: int = WINDOW_BEFORE,
                      after: int = WINDOW_AFTER) -> np.ndarray:
    """For each grid point, the index into sorted ``times`` of the closest
    sample inside ``[t - before, t + after]``, or -1.

    Ties go to the earlier sample. ``times`` must be sorted ascending.
    """
    times = np.asarray(times, dtype=np.int64)
    grid_points = np.asarray(grid_points, dtype=np.int64)
    out = np.full(grid_points.shape, -1, dtype=np.int64)
    if times.size == 0:
        return out
    # Candidates: last sample at or before t, first sample after t.
    right = np.searchsorted(times, grid_points, side="right")
    lo = right - 1
    hi = right
    has_lo = lo >= 0
    has_hi = hi < times.size
    d_lo = np.where(has_lo, grid_points - times[np.clip(lo, 0, None)], np.iinfo(np.int64).max)
    d_hi = np.where(has_hi, times[np.clip(hi, None, times.size - 1)] - grid_points,
                    np.iinfo(np.int64).max)
    ok_lo = has_lo & (d_lo <= before)
    ok_hi = has_hi & (d_hi <= after)
    # Among equal timestamps at or before t, searchsorted picks the last one;
    # duplicates are collapsed upstream so this is the unique sample.
    pick_lo = ok_lo & (~ok_hi | (d_lo <= d_hi))
    pick_hi = ok_hi & ~pick_lo
    out[pick_lo] = lo[pick_lo]
    out[pick_hi] = hi[pick_hi]
    return out


def align_to_grid(samples: Iterable[PowerSample], grid: TimeGrid) -> dict[int, Optional[PowerSample]]:
    """Map every grid point to its closest in-window sample, or ``None``.

    A sample at time ``s`` is in the window of grid point ``t`` when
    ``t - 4 <= s <= t + 5``. Equidistant candidates resolve to the earlier
    sample. Input order does not matter.
    """
    ordered = sorted(samples, key=lambda s: s.at)
    times = np.array([s.at for s in ordered], dtype=np.int64)
    pts = grid.points
    idx = nearest_in_window(times, pts)
    return {int(t): (ordered[i] if i >= 0 else None) for t, i in zip(pts, idx)}

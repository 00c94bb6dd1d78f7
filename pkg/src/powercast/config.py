"""Flat ``key=value`` configuration with dotted section prefixes.

Example::

    data.jobs=jobs.csv
    split.train_start=2014-09-01T00:00:00Z
    svr.C=1,10,100

Relative data paths resolve against the config file's directory. Blank lines
and lines starting with ``#`` are ignored.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .exceptions import ConfigurationError

DATA_KEYS = ("jobs", "allocations", "component_power", "system_power", "idle")
KNOWN_KEYS = {
    *(f"data.{k}" for k in DATA_KEYS),
    "machine.nodes",
    "grid.start", "grid.end", "grid.step",
    "split.train_start", "split.train_end", "split.test_start", "split.test_end",
    "svr.C", "svr.epsilon", "svr.gamma_scale", "svr.kernel", "svr.tol", "svr.max_passes",
    "svr.min_points", "svr.min_jobs",
    "anomaly.window_hours", "anomaly.min_points", "anomaly.down_frac",
    "anomaly.nrmse_abs", "anomaly.nrmse_slope_per_hour",
    "output.dir",
}


def parse_time(text: str) -> int:
    """Epoch seconds from an integer string or an ISO-8601 timestamp (UTC if naive)."""
    text = str(text).strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise ConfigurationError(f"cannot read {text!r} as a time") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def parse_lines(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f"{source}:{lineno}: expected key=value")
        if key not in KNOWN_KEYS:
            raise ConfigurationError(f"{source}:{lineno}: unknown setting {key!r}")
        if key in values:
            raise ConfigurationError(f"{source}:{lineno}: {key!r} set twice")
        values[key] = val.strip()
    return values


def _floats(text, key):
    try:
        out = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigurationError(f"{key}: expected comma-separated numbers") from None
    if not out:
        raise ConfigurationError(f"{key}: empty list")
    return out


@dataclass
class Config:
    base_dir: Path
    data: dict
    n_nodes: Optional[int] = None
    grid: tuple = (None, None, 300)
    train_window: tuple = (None, None)
    test_window: tuple = (None, None)
    svr_C: tuple = (1.0, 10.0, 100.0)
    svr_epsilon: tuple = (0.5, 2.0)
    svr_gamma_scale: tuple = (0.1, 1.0, 10.0)
    svr_kernel: str = "rbf"
    svr_tol: float = 1e-3
    svr_max_passes: int = 10_000
    min_points: int = 1000
    min_jobs: int = 100
    anomaly: dict = field(default_factory=dict)
    output_dir: Optional[Path] = None

    @classmethod
    def from_mapping(cls, values: dict, base_dir=".") -> "Config":
        base = Path(base_dir)

        def get(key, conv=str, default=None):
            if key not in values:
                return default
            try:
                return conv(values[key])
            except ConfigurationError:
                raise
            except ValueError:
                raise ConfigurationError(f"{key}: bad value {values[key]!r}") from None

        data = {}
        for k in DATA_KEYS:
            if f"data.{k}" in values:
                p = Path(values[f"data.{k}"])
                data[k] = p if p.is_absolute() else base / p
        cfg = cls(base_dir=base, data=data)
        cfg.n_nodes = get("machine.nodes", int)
        cfg.grid = (get("grid.start", parse_time), get("grid.end", parse_time),
                    get("grid.step", int, 300))
        cfg.train_window = (get("split.train_start", parse_time), get("split.train_end", parse_time))
        cfg.test_window = (get("split.test_start", parse_time), get("split.test_end", parse_time))
        cfg.svr_C = get("svr.C", lambda v: _floats(v, "svr.C"), cfg.svr_C)
        cfg.svr_epsilon = get("svr.epsilon", lambda v: _floats(v, "svr.epsilon"), cfg.svr_epsilon)
        cfg.svr_gamma_scale = get("svr.gamma_scale", lambda v: _floats(v, "svr.gamma_scale"),
                                  cfg.svr_gamma_scale)
        cfg.svr_kernel = get("svr.kernel", str, cfg.svr_kernel)
        if cfg.svr_kernel not in ("rbf", "linear"):
            raise ConfigurationError(f"svr.kernel: unsupported kernel {cfg.svr_kernel!r}")
        cfg.svr_tol = get("svr.tol", float, cfg.svr_tol)
        cfg.svr_max_passes = get("svr.max_passes", int, cfg.svr_max_passes)
        cfg.min_points = get("svr.min_points", int, cfg.min_points)
        cfg.min_jobs = get("svr.min_jobs", int, cfg.min_jobs)
        cfg.anomaly = {
            "window_hours": get("anomaly.window_hours", float, 48.0),
            "min_points": get("anomaly.min_points", int, 12),
            "down_frac": get("anomaly.down_frac", float, 0.5),
            "nrmse_abs": get("anomaly.nrmse_abs", float),
            "nrmse_slope_per_hour": get("anomaly.nrmse_slope_per_hour", float),
        }
        out = get("output.dir", Path)
        cfg.output_dir = None if out is None else (out if out.is_absolute() else base / out)
        cfg.check_windows()
        return cfg

    def check_windows(self) -> None:
        for name, (a, b) in (("train", self.train_window), ("test", self.test_window)):
            if a is not None and b is not None and a > b:
                raise ConfigurationError(f"{name} window starts after it ends")
        if self.train_window[1] is not None and self.test_window[0] is not None \
                and self.train_window[1] >= self.test_window[0]:
            raise ConfigurationError("training window must end before the test window starts")

    def require_data(self) -> dict:
        missing = [k for k in DATA_KEYS if k not in self.data]
        if missing:
            raise ConfigurationError(f"config lacks data.{', data.'.join(missing)}")
        absent = [str(p) for p in self.data.values() if not p.exists()]
        if absent:
            raise ConfigurationError(f"missing input files: {', '.join(absent)}")
        return self.data

    def candidates(self) -> list[dict]:
        return [{"C": c, "epsilon": e, "gamma_scale": g, "kernel": self.svr_kernel}
                for g, c, e in itertools.product(self.svr_gamma_scale, self.svr_C, self.svr_epsilon)]


def load_config(path) -> Config:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} not found")
    return Config.from_mapping(parse_lines(path.read_text(encoding="utf-8"), str(path)), path.parent)

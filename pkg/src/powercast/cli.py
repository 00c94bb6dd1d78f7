"""``powercast <synth|train|predict|evaluate|monitor> --config <path>``.

Every command writes into ``--out-dir`` (default: ``output.dir`` from the
config, else ``out/`` next to it) using fixed names::

    models/                 trained models (train)
    reports/training.csv    per-user model variants (train)
    series/*.csv            predicted and plotted series (predict, evaluate, monitor)
    reports/evaluation.csv  three-layer scores (evaluate)
    alarms.csv              alarm log (monitor)
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .aggregate import write_series_csv
from .anomaly import HOUR, AlarmThresholds, append_alarm_log
from .config import Config, load_config, parse_time
from .evaluate import LAYERS, evaluate_model, write_plot_data, write_reports
from .exceptions import ConfigurationError, PowercastError, UsageError
from .ingest import ReconciledDataset, load_dataset
from .pipeline import TwoLayerPowerModel, monitor_fit
from .synth import GeneratorSpec, generate, inject_fault
from .syslayer import predict_system
from .trace_core import TimeGrid

log = logging.getLogger("powercast")

MODELS_DIR = "models"
REPORTS_DIR = "reports"
SERIES_DIR = "series"
ALARMS_FILE = "alarms.csv"


def _out_dir(args, cfg: Optional[Config]) -> Path:
    if args.out_dir:
        return Path(args.out_dir)
    if cfg is not None and cfg.output_dir is not None:
        return cfg.output_dir
    if cfg is not None:
        return cfg.base_dir / "out"
    return Path("out")


def _config(args) -> Config:
    if not args.config:
        raise UsageError(f"{args.command} needs --config")
    cfg = load_config(args.config)
    tr = (args.train_start if args.train_start is not None else cfg.train_window[0],
          args.train_end if args.train_end is not None else cfg.train_window[1])
    te = (args.test_start if args.test_start is not None else cfg.test_window[0],
          args.test_end if args.test_end is not None else cfg.test_window[1])
    cfg.train_window, cfg.test_window = tr, te
    cfg.check_windows()
    return cfg


def _dataset(cfg: Config) -> ReconciledDataset:
    d = cfg.require_data()
    start, end, step = cfg.grid
    grid = TimeGrid(start, end, step) if start is not None and end is not None else None
    return load_dataset(d["jobs"], d["allocations"], d["component_power"], d["system_power"],
                        d["idle"], grid=grid, n_nodes=cfg.n_nodes, step=step)


def _window(window: tuple, dataset: ReconciledDataset) -> tuple:
    a, b = window
    return (dataset.grid.start if a is None else a, dataset.grid.last if b is None else b)


def _load_models(out: Path) -> TwoLayerPowerModel:
    return TwoLayerPowerModel.load(out / MODELS_DIR)


# -- commands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = GeneratorSpec(nodes=args.nodes, days=args.days, users=args.users,
                         jobs_per_user=args.jobs_per_user, noise_rel=args.noise,
                         interaction_users=args.interaction_users,
                         true_system_slope=args.slope, true_system_intercept=args.intercept,
                         seed=args.seed)
    trace = generate(spec)
    if args.outage_at is not None:
        trace = inject_fault(trace, args.outage_at, int(args.drift_lead * HOUR), args.drift_magnitude)
    out = Path(args.out_dir or "trace")
    trace.write(out)
    print(f"wrote {len(trace.jobs)} jobs on {spec.nodes} nodes to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    ds = _dataset(cfg)
    model = TwoLayerPowerModel(candidates=cfg.candidates(), min_points=cfg.min_points,
                               min_jobs=cfg.min_jobs, tol=cfg.svr_tol, max_passes=cfg.svr_max_passes)
    model.fit(ds, *_window(cfg.train_window, ds))
    model.save(out / MODELS_DIR)
    path = out / REPORTS_DIR / "training.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "variant", "n_points", "n_jobs"])
        for user, m in sorted(model.user_models_.items()):
            w.writerow([user, m.variant.value, m.n_points, m.n_jobs])
    print(f"trained {len(model.user_models_)} user models; system model "
          f"slope={model.system_model_.slope_:.6g} intercept={model.system_model_.intercept_:.6g}; "
          f"training NRMSE {model.training_nrmse_:.4g}")
    return 0


def cmd_predict(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    model = _load_models(out)
    ds = _dataset(cfg)
    start, end = _window(cfg.test_window, ds)
    comp = model.predict_components(ds, start, end)
    write_series_csv(comp, out / SERIES_DIR / "component_predicted.csv")
    write_series_csv(predict_system(model.system_model_, comp), out / SERIES_DIR / "system_predicted.csv")
    print(f"predicted {len(comp)} grid points in [{start}, {end}]")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    model = _load_models(out)
    ds = _dataset(cfg)
    results = evaluate_model(model, ds, *_window(cfg.test_window, ds))
    write_reports([results[k].report for k in LAYERS], out / REPORTS_DIR / "evaluation.csv")
    for k in LAYERS:
        write_plot_data(results[k], out / SERIES_DIR / f"{k}.csv")
        r = results[k].report
        print(f"{k:9s} NRMSE={r.nrmse:.4g} R2={r.r_squared:.6g} pearson={r.pearson:.6g} n={r.n_points}")
    return 0


def cmd_monitor(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    model = _load_models(out)
    ds = _dataset(cfg)
    start, end = _window(cfg.test_window, ds)
    base = AlarmThresholds.from_baseline(model.training_nrmse_, cfg.anomaly["down_frac"])
    thresholds = AlarmThresholds(
        cfg.anomaly["nrmse_abs"] if cfg.anomaly["nrmse_abs"] is not None else base.nrmse_abs,
        cfg.anomaly["nrmse_slope_per_hour"] if cfg.anomaly["nrmse_slope_per_hour"] is not None
        else base.nrmse_slope_per_hour,
        base.down_frac)
    fit, events = monitor_fit(model, ds, start, end, int(cfg.anomaly["window_hours"] * HOUR),
                              cfg.anomaly["min_points"], thresholds)
    path = out / ALARMS_FILE
    path.unlink(missing_ok=True)
    append_alarm_log(events, path)
    series = out / SERIES_DIR / "rolling_nrmse.csv"
    series.parent.mkdir(parents=True, exist_ok=True)
    with series.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ts", "nrmse"])
        w.writerows([int(t), repr(float(v))] for t, v in zip(fit.times, fit.values))
    for e in events:
        print(f"{e.at} {e.kind.value} {e.detail:.6g}")
    print(f"{len(events)} alarm(s) written to {path}")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "predict": cmd_predict,
            "evaluate": cmd_evaluate, "monitor": cmd_monitor}


def _time_arg(text: str) -> int:
    try:
        return parse_time(text)
    except ConfigurationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="powercast", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config")
        s.add_argument("--out-dir")
        s.add_argument("--seed", type=int, default=0)
        for flag in ("--train-start", "--train-end", "--test-start", "--test-end"):
            s.add_argument(flag, type=_time_arg)
        if name == "synth":
            d = GeneratorSpec()
            s.add_argument("--nodes", type=int, default=d.nodes)
            s.add_argument("--days", type=int, default=d.days)
            s.add_argument("--users", type=int, default=d.users)
            s.add_argument("--jobs-per-user", type=int, default=d.jobs_per_user)
            s.add_argument("--noise", type=float, default=d.noise_rel)
            s.add_argument("--interaction-users", type=int, default=d.interaction_users)
            s.add_argument("--slope", type=float, default=d.true_system_slope)
            s.add_argument("--intercept", type=float, default=d.true_system_intercept)
            s.add_argument("--outage-at", type=_time_arg)
            s.add_argument("--drift-lead", type=float, default=2.0, help="hours")
            s.add_argument("--drift-magnitude", type=float, default=0.2)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigurationError) as exc:
        print(f"powercast {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except PowercastError as exc:
        print(f"powercast {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # Generator-spec validation and similar argument checks.
        print(f"powercast {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

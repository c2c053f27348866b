"""Command-line entry point: ``hybrid-smoother {simulate,smooth,filter,montecarlo}``.

Exit codes: 0 ok, 2 usage/config, 3 I/O, 4 numerical failure.
Set ``HYBRID_SMOOTHER_LOG`` (e.g. ``INFO``, ``DEBUG``) for diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import csvio
from .config import ConfigError, ExperimentConfig, build_system, load_config
from .gaussian import ValidationError
from .harness import RunReport, run_monte_carlo, run_trace
from .model import SimulationTrace, simulate

log = logging.getLogger("hybrid_smoother")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _json_float(x: float):
    return "inf" if math.isinf(x) else x


def _dump_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "theta", None) is not None:
        if not 0 <= args.theta < 1:
            raise ConfigError("--theta must lie in [0, 1)")
        cfg.theta = args.theta
    if getattr(args, "lag", None) is not None:
        if args.lag < 1:
            raise ConfigError("--lag must be >= 1")
        cfg.lag = args.lag
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _simulate(cfg: ExperimentConfig) -> SimulationTrace:
    if cfg.steps is None:
        raise ConfigError("simulation.steps (or simulation.phases) is required")
    sch = cfg.schedule
    return simulate(
        cfg.system, cfg.steps,
        mode_sequence=None if sch is None else sch.modes,
        seed=cfg.seed,
        controls=None if sch is None else sch.controls,
    )


def _resize_for(cfg: ExperimentConfig, steps: int) -> None:
    # Per-step control schedules (contact base motion) must cover the input.
    if cfg.raw["system"]["type"] == "contact" and steps != cfg.steps:
        cfg.system = build_system(cfg.raw["system"], steps)


def cmd_simulate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    trace = _simulate(cfg)
    csvio.write_trace(Path(args.out), trace)
    log.info("wrote %d rows to %s", trace.steps, args.out)
    return EXIT_OK


def _write_run(out: Path, cfg: ExperimentConfig, report: RunReport, has_truth: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    labels = cfg.system.labels
    n_modes = cfg.system.n_modes
    filtering = report.mode == "filter"
    table = report.filter_marginals if filtering else report.marginals
    csvio.write_rows(
        out / "marginals.csv",
        ["step"] + [f"p_mode{i}" for i in range(n_modes)],
        ([j + 1, *map(float, row)] for j, row in enumerate(table)),
    )
    seq = report.filter_modes if filtering else report.map_modes
    csvio.write_rows(
        out / "map.csv", ["step", "mode", "label"],
        ([j + 1, int(m), labels[m]] for j, m in enumerate(seq)),
    )
    states = report.filter_means if filtering else report.map_states
    first = report.filter_means.shape[0] - states.shape[0]
    csvio.write_rows(
        out / "trajectory.csv",
        ["step"] + [f"x{i}" for i in range(states.shape[1])],
        ([first + k, *map(float, row)] for k, row in enumerate(states)),
    )
    metrics = {
        "mode": report.mode,
        "theta": cfg.theta,
        "lag": cfg.lag,
        "nll_sequence": _json_float(report.nll_sequence) if has_truth else None,
        "cross_entropy": report.cross_entropy if has_truth else None,
        "accuracy": report.accuracy if has_truth else None,
        "map_accuracy": report.map_accuracy if has_truth else None,
        "wall_time_ms": report.wall_time_ms,
        "peak_leaves": report.peak_leaves,
    }
    _dump_json(out / "metrics.json", metrics)


def cmd_run(args, mode: str) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = Path(args.out)
    if args.input:
        z, truth = csvio.read_measurements(
            Path(args.input), cfg.measurement_columns, cfg.mode_column, cfg.system.labels
        )
        if z.shape[1] != cfg.system.m_meas:
            raise ConfigError(
                f"input has {z.shape[1]} measurement columns, system expects {cfg.system.m_meas}"
            )
        _resize_for(cfg, z.shape[0])
        has_truth = truth is not None and truth.shape[0] == z.shape[0] - 1
        modes = truth if has_truth else np.zeros(z.shape[0] - 1, dtype=int)
        trace = SimulationTrace(np.zeros((z.shape[0], cfg.system.n_state)), z, modes)
    else:
        trace = _simulate(cfg)
        has_truth = True
        out.mkdir(parents=True, exist_ok=True)
        csvio.write_trace(out / "trace.csv", trace)
    report = run_trace(
        cfg.system, trace, cfg.theta, cfg.lag, mode, cfg.leaf_cap,
        cfg.marginalization, cfg.seed, cfg.evidence,
    )
    _write_run(out, cfg, report, has_truth)
    log.info("%s: peak %d leaves, %.1f ms", mode, report.peak_leaves, report.wall_time_ms)
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    if cfg.steps is None:
        raise ConfigError("simulation.steps (or simulation.phases) is required")
    mc = run_monte_carlo(
        cfg.system, steps=cfg.steps, theta=cfg.theta, lag=cfg.lag, runs=args.runs,
        base_seed=cfg.seed, schedule=cfg.schedule, leaf_cap=cfg.leaf_cap,
        marginalization=cfg.marginalization, evidence=cfg.evidence, jobs=args.jobs,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_modes = cfg.system.n_modes
    sm, fl = mc.mean_marginals_smoother, mc.mean_marginals_filter
    csvio.write_rows(
        out / "aggregate.csv",
        ["step"] + [f"p_mode{i}" for i in range(n_modes)]
        + [f"filter_p_mode{i}" for i in range(n_modes)],
        ([j + 1, *map(float, sm[j]), *map(float, fl[j])] for j in range(sm.shape[0])),
    )
    summary = mc.summary()
    for run in summary["per_run"]:
        run["nll_sequence"] = _json_float(run["nll_sequence"])
    summary.update(theta=cfg.theta, lag=cfg.lag, labels=cfg.system.labels)
    _dump_json(out / "summary.json", summary)
    log.info("mean accuracy smoother=%.4f filter=%.4f",
             mc.mean_accuracy_smoother, mc.mean_accuracy_filter)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybrid-smoother",
        description="Incremental multi-hypothesis smoothing for switching linear systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", required=True, help="JSON experiment configuration")
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--seed", type=int, help="override simulation.seed")

    p = sub.add_parser("simulate", help="simulate a trace to CSV")
    common(p, "output CSV path")

    for name in ("smooth", "filter"):
        p = sub.add_parser(name, help=f"run the {name}er on CSV input or a fresh simulation")
        common(p, "output directory")
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--input", help="CSV with measurement columns")
        src.add_argument("--sim", action="store_true", help="simulate from the config")
        p.add_argument("--theta", type=float, help="pruning threshold (default 0.01)")
        p.add_argument("--lag", type=int, help="fixed lag in steps")
        if name == "smooth":
            p.add_argument("--mode", choices=["smoother", "filter"], default="smoother")

    p = sub.add_parser("montecarlo", help="seeded Monte Carlo battery")
    common(p, "output directory")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--theta", type=float)
    p.add_argument("--lag", type=int)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    level = os.environ.get("HYBRID_SMOOTHER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "smooth":
            return cmd_run(args, args.mode)
        if args.command == "filter":
            return cmd_run(args, "filter")
        if args.runs < 1:
            raise ConfigError("--runs must be >= 1")
        return cmd_montecarlo(args)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

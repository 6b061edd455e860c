"""Command line: run one protocol, compare several, or sweep a knob.

Every config key is also a flag; flags override the config file, and the
FEDSIM_OUTPUT_DIR environment variable overrides the file's output_dir
(an explicit --output-dir flag still wins). Exit codes: 0 success, 1
configuration or validation error, 2 I/O error, 3 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace
from typing import Any

from . import __version__
from .config import RunConfig, load_config, save_snapshot
from .data import Dataset, generate_synthetic, load_csv
from .devices import DeviceProfile, load_traces, synth_population
from .engine import RunLog, run, write_curves_csv, write_runlog_csv, write_schedules_csv
from .errors import FedsimError, InvariantError, ValidationError
from .metrics import (
    compare,
    participation,
    time_to_target,
    write_comparison_csv,
    write_participation_csv,
)

OUTPUT_DIR_ENV = "FEDSIM_OUTPUT_DIR"

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    # Flag mistakes are validation errors (exit 1), not argparse's exit 2.
    def error(self, message: str) -> None:  # type: ignore[override]
        raise ValidationError(message)


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise ValidationError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from None


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    s = argparse.SUPPRESS
    add = parser.add_argument
    add("--config", default=None, metavar="PATH", help="JSON config file")
    add("--protocol", default=s, choices=("sync", "fedbuff", "timelyfl"))
    add("--rounds", default=s, type=int, help="aggregations to simulate")
    add("--concurrency", default=s, type=int, help="clients training at once")
    add("--agg-target", default=s, type=int,
        help="k (deadline rank) or K (buffer goal); default half the concurrency")
    add("--staleness-cap", default=s, type=int)
    add("--aggregator", default=s, choices=("fedavg", "fedopt"))
    add("--server-lr", default=s, type=float)
    add("--adam-beta1", default=s, type=float)
    add("--adam-beta2", default=s, type=float)
    add("--adam-eps", default=s, type=float)
    add("--client-lr", default=s, type=float)
    add("--batch-size", default=s, type=int)
    add("--local-epochs", default=s, type=int)
    add("--epochs-cap", default=s, type=int,
        help="cap on scheduler-assigned local epochs")
    add("--layer-dims", default=s, type=_ints, metavar="D0,D1,...")
    add("--data-alpha", default=s, type=float, help="Dirichlet concentration")
    add("--class-count", default=s, type=int)
    add("--feature-dim", default=s, type=int)
    add("--samples-per-class", default=s, type=int)
    add("--csv-path", default=s, help="dataset CSV instead of synthetic data")
    add("--label-column", default=s)
    add("--population", default=s, type=int, help="synthetic population size")
    add("--trace-path", default=s, help="device trace CSV instead of synthesis")
    add("--compute-spread", default=s, type=float)
    add("--bandwidth-spread", default=s, type=float)
    add("--base-compute-min-s", default=s, type=float)
    add("--bandwidth-min-bps", default=s, type=float)
    add("--noise", default=s, type=float, help="execution noise eta in [0, 1)")
    add("--seed", default=s, type=int)
    add("--output-dir", default=s)
    add("--eval-every", default=s, type=int)


_NON_CONFIG_KEYS = {"config", "command", "verbose", "protocols", "targets",
                    "param", "values"}


def _build_config(args: argparse.Namespace) -> RunConfig:
    overrides: dict[str, Any] = {
        k: v for k, v in vars(args).items() if k not in _NON_CONFIG_KEYS
    }
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir and "output_dir" not in overrides:
        overrides["output_dir"] = env_dir
    return load_config(args.config, overrides)


def _build_population(config: RunConfig) -> list[DeviceProfile]:
    if config.trace_path is not None:
        return load_traces(config.trace_path)
    return synth_population(
        config.population,
        config.seed,
        config.compute_spread,
        config.bandwidth_spread,
        config.base_compute_min_s,
        config.bandwidth_min_bps,
    )


def _build_dataset(config: RunConfig) -> Dataset:
    if config.csv_path is not None:
        return load_csv(config.csv_path, config.label_column, seed=config.seed)
    return generate_synthetic(
        config.class_count, config.feature_dim, config.samples_per_class, config.seed
    )


def run_experiment(
    config: RunConfig,
    out_dir: str,
    population: list[DeviceProfile] | None = None,
    dataset: Dataset | None = None,
) -> RunLog:
    """Run one simulation and write its artifact set under out_dir.

    Re-running with the same resolved config overwrites every artifact
    with identical bytes.
    """
    if population is None:
        population = _build_population(config)
    if dataset is None:
        dataset = _build_dataset(config)
    os.makedirs(out_dir, exist_ok=True)
    runlog = run(config, population, dataset, config.seed)

    save_snapshot(config, os.path.join(out_dir, "config.json"))
    write_runlog_csv(runlog, os.path.join(out_dir, "runlog.csv"))
    write_curves_csv(runlog, os.path.join(out_dir, "curves.csv"))
    write_schedules_csv(runlog, os.path.join(out_dir, "schedules.csv"))
    write_participation_csv(participation(runlog), os.path.join(out_dir, "participation.csv"))
    manifest = {
        "package": "fedsim",
        "version": __version__,
        "protocol": config.protocol,
        "seed": config.seed,
        "population_size": runlog.population_size,
        "rounds_logged": len(runlog.aggregation_rows),
        "counters": runlog.counters,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return runlog


def cmd_run(args: argparse.Namespace) -> int:
    config = _build_config(args)
    runlog = run_experiment(config, config.output_dir)
    final = runlog.rows[-1]
    print(
        f"{config.protocol}: {len(runlog.aggregation_rows)} aggregations, "
        f"simulated {final.time_s:.1f}s, final accuracy {final.accuracy:.4f} "
        f"-> {config.output_dir}"
    )
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    config = _build_config(args)
    protocols = [p.strip() for p in args.protocols.split(",") if p.strip()]
    if not protocols:
        raise ValidationError("--protocols must name at least one protocol")
    targets = _floats(args.targets)
    if not targets:
        raise ValidationError("--targets must name at least one accuracy")

    population = _build_population(config)
    dataset = _build_dataset(config)
    runlogs: dict[str, RunLog] = {}
    for p in protocols:
        sub = replace(config, protocol=p)
        runlogs[p] = run_experiment(
            sub, os.path.join(config.output_dir, p), population, dataset
        )
    rows = compare(runlogs, targets)
    write_comparison_csv(rows, os.path.join(config.output_dir, "comparison.csv"))
    for row in rows:
        t = "unreached" if math.isinf(row.time_s) else f"{row.time_s:.1f}s"
        r = "-" if math.isinf(row.ratio) else f"{row.ratio:.2f}x"
        print(f"target {row.target_accuracy:.2f}  {row.strategy:<9} {t:>12}  {r}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _build_config(args)
    if args.param == "data_alpha":
        values = _floats(args.values)
    else:
        values = _ints(args.values)
    if not values:
        raise ValidationError("--values must name at least one value")

    population = _build_population(config)
    dataset = _build_dataset(config)
    summary = []
    for v in values:
        sub = replace(config, **{args.param: v})
        out = os.path.join(config.output_dir, f"{args.param}_{v}")
        runlog = run_experiment(sub, out, population, dataset)
        report = participation(runlog)
        summary.append((v, runlog.final_accuracy, report.mean_rate))
        print(f"{args.param}={v}: final accuracy {runlog.final_accuracy:.4f}, "
              f"mean participation {report.mean_rate:.3f}")

    with open(os.path.join(config.output_dir, "sweep.csv"), "w",
              encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([args.param, "final_accuracy", "mean_participation_rate"])
        for v, acc, rate in summary:
            writer.writerow([v, repr(float(acc)), repr(float(rate))])
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _Parser(prog="fedsim", description=__doc__)
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    # subparsers inherit _Parser from the main parser, so flag mistakes
    # surface as ValidationError rather than argparse's SystemExit
    p_run = sub.add_parser("run", help="simulate one protocol")
    _add_config_flags(p_run)

    p_cmp = sub.add_parser("compare", help="race protocols on a shared seed")
    _add_config_flags(p_cmp)
    p_cmp.add_argument("--protocols", default="sync,fedbuff,timelyfl")
    p_cmp.add_argument("--targets", default="0.5", help="accuracy targets, comma-separated")

    p_swp = sub.add_parser("sweep", help="grid over data_alpha or agg_target")
    _add_config_flags(p_swp)
    p_swp.add_argument("--param", choices=("data_alpha", "agg_target"), required=True)
    p_swp.add_argument("--values", required=True)

    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if args.command == "run":
            return cmd_run(args)
        if args.command == "compare":
            return cmd_compare(args)
        return cmd_sweep(args)
    except InvariantError as exc:
        print(f"fedsim: internal invariant violated: {exc}", file=sys.stderr)
        return 3
    except ValidationError as exc:
        print(f"fedsim: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"fedsim: {exc}", file=sys.stderr)
        return 2
    except FedsimError as exc:
        print(f"fedsim: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Participation, time-to-target, and cross-protocol comparison.

Participation is counted per aggregation: a client contributes to an
aggregation if at least one of its updates was consumed by it, so every
rate lies in [0, 1] no matter how many updates a fast client lands in one
buffer. Rates average over the whole population, including clients that
were never sampled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

from .engine import RunLog
from .errors import InvariantError, ValidationError

HISTOGRAM_BINS = 10  # rate histogram bin width 0.1

# Marker written to CSV cells when a target was never reached.
UNREACHED = "unreached"


@dataclass
class ParticipationReport:
    total_aggregations: int
    contributions: dict[int, int]
    per_client_rate: dict[int, float]
    mean_rate: float
    histogram: list[int]


def participation(runlog: RunLog) -> ParticipationReport:
    """Per-client contribution rates over the run's aggregations.

    Recounts contributions from the logged participant sets (the server's
    view) and cross-checks them against the client-side counters carried
    by the run log; any disagreement is a simulator bug.
    """
    rows = runlog.aggregation_rows
    total = len(rows)
    counted = {c: 0 for c in runlog.contributions}
    for row in rows:
        for c in row.participants:
            if c not in counted:
                raise InvariantError(f"unknown participant id {c}")
            counted[c] += 1
    if counted != runlog.contributions:
        raise InvariantError("server-side and client-side contribution counts differ")

    if total == 0:
        rates = {c: 0.0 for c in counted}
    else:
        rates = {c: counted[c] / total for c in counted}
    mean = sum(rates.values()) / len(rates) if rates else 0.0
    hist = [0] * HISTOGRAM_BINS
    for r in rates.values():
        if not 0.0 <= r <= 1.0:
            raise InvariantError(f"participation rate {r} outside [0, 1]")
        hist[min(int(r * HISTOGRAM_BINS), HISTOGRAM_BINS - 1)] += 1
    return ParticipationReport(total, counted, rates, mean, hist)


@dataclass(frozen=True)
class TimeToTarget:
    target_accuracy: float
    time_s: float  # inf when the run never reached the target

    @property
    def reached(self) -> bool:
        return math.isfinite(self.time_s)


def time_to_target(runlog: RunLog, target_accuracy: float) -> TimeToTarget:
    """Earliest simulated time at which test accuracy met the target.

    Rows whose evaluation was thinned away (NaN accuracy) are skipped.
    """
    if not 0.0 < target_accuracy <= 1.0:
        raise ValidationError("target accuracy must lie in (0, 1]")
    for row in runlog.rows:
        if not math.isnan(row.accuracy) and row.accuracy >= target_accuracy:
            return TimeToTarget(target_accuracy, row.time_s)
    return TimeToTarget(target_accuracy, math.inf)


@dataclass(frozen=True)
class ComparisonRow:
    strategy: str
    target_accuracy: float
    time_s: float
    ratio: float  # this strategy's time over the fastest strategy's time


def compare(runlogs: dict[str, RunLog], targets: list[float]) -> list[ComparisonRow]:
    """Time-to-target table across named runs, one row per (strategy, target).

    The ratio column normalizes by the fastest strategy for that target:
    the fastest shows 1.0, a strategy taking 43% longer shows 1.43, and a
    strategy that never reached the target shows inf.
    """
    if not runlogs:
        raise ValidationError("nothing to compare")
    rows: list[ComparisonRow] = []
    for target in targets:
        times = {name: time_to_target(rl, target).time_s for name, rl in runlogs.items()}
        fastest = min(times.values())
        for name in runlogs:
            t = times[name]
            if math.isinf(fastest):
                ratio = math.inf
            elif fastest == 0.0:
                ratio = 1.0 if t == 0.0 else math.inf
            else:
                ratio = t / fastest
            rows.append(ComparisonRow(name, target, t, ratio))
    return rows


def _cell(value: float) -> str:
    return UNREACHED if math.isinf(value) else repr(float(value))


def write_participation_csv(report: ParticipationReport, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client_id", "contributions", "total_aggregations", "rate"])
        for c in sorted(report.per_client_rate):
            writer.writerow(
                [c, report.contributions[c], report.total_aggregations,
                 repr(float(report.per_client_rate[c]))]
            )


def write_comparison_csv(rows: list[ComparisonRow], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "target_accuracy", "time_s", "ratio"])
        for row in rows:
            writer.writerow(
                [row.strategy, repr(float(row.target_accuracy)), _cell(row.time_s),
                 _cell(row.ratio)]
            )

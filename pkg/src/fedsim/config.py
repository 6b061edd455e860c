"""Run configuration: one flat record that fully determines a simulation.

A resolved config plus nothing else reproduces a run bit for bit, so the
record is written next to every run's artifacts. Files are JSON with keys
matching the field names below; the command line exposes the same names
as flags, and flags override file values.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Any

from .errors import ParseError, ValidationError

PROTOCOLS = ("sync", "fedbuff", "timelyfl")
AGGREGATORS = ("fedavg", "fedopt")

# Server step size defaults per aggregator: plain averaging applies the
# merged delta as is; the adaptive server runs Adam with a small step.
DEFAULT_SERVER_LR = {"fedavg": 1.0, "fedopt": 0.001}


@dataclass
class RunConfig:
    protocol: str = "timelyfl"
    rounds: int = 100
    concurrency: int = 32
    # k for the deadline protocol, K for the buffered one; None means
    # half the concurrency, rounded up.
    agg_target: int | None = None
    staleness_cap: int = 10
    aggregator: str = "fedavg"
    server_lr: float | None = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    client_lr: float = 0.1
    batch_size: int = 8
    local_epochs: int = 1
    # Cap on the epochs the deadline scheduler may assign; None = no cap.
    # Capping at 1 makes the deadline protocol comparable epoch-for-epoch
    # with the synchronous one.
    epochs_cap: int | None = None
    layer_dims: tuple[int, ...] = (32, 64, 32, 10)
    data_alpha: float = 0.1
    class_count: int = 10
    feature_dim: int = 32
    samples_per_class: int = 100
    csv_path: str | None = None
    label_column: str = "label"
    population: int = 64
    trace_path: str | None = None
    compute_spread: float = 13.3
    bandwidth_spread: float = 200.0
    base_compute_min_s: float = 0.05
    bandwidth_min_bps: float = 2e4
    noise: float = 0.0
    seed: int = 0
    output_dir: str = "runs/latest"
    eval_every: int = 1

    def __post_init__(self) -> None:
        if isinstance(self.layer_dims, list):
            self.layer_dims = tuple(self.layer_dims)
        self.validate()

    def validate(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ValidationError(f"protocol must be one of {PROTOCOLS}")
        if self.aggregator not in AGGREGATORS:
            raise ValidationError(f"aggregator must be one of {AGGREGATORS}")
        if self.rounds < 0:
            raise ValidationError("rounds must be >= 0")
        if self.concurrency < 1:
            raise ValidationError("concurrency must be >= 1")
        k = self.resolved_agg_target
        if not 1 <= k <= self.concurrency:
            raise ValidationError(
                f"agg_target {k} must lie in [1, concurrency={self.concurrency}]"
            )
        if self.staleness_cap < 0:
            raise ValidationError("staleness_cap must be >= 0")
        if self.server_lr is not None and not self.server_lr > 0:
            raise ValidationError("server_lr must be positive")
        if not self.client_lr > 0:
            raise ValidationError("client_lr must be positive")
        if self.batch_size < 1 or self.local_epochs < 1:
            raise ValidationError("batch_size and local_epochs must be >= 1")
        if self.epochs_cap is not None and self.epochs_cap < 1:
            raise ValidationError("epochs_cap must be >= 1")
        if len(self.layer_dims) < 2 or any(d < 1 for d in self.layer_dims):
            raise ValidationError("layer_dims needs >= 2 positive entries")
        if not self.data_alpha > 0:
            raise ValidationError("data_alpha must be positive")
        if self.class_count < 2 or self.feature_dim < 1 or self.samples_per_class < 2:
            raise ValidationError("dataset knobs out of range")
        if self.population < 1:
            raise ValidationError("population must be >= 1")
        if self.compute_spread < 1 or self.bandwidth_spread < 1:
            raise ValidationError("spreads must be >= 1")
        if not (self.base_compute_min_s > 0 and self.bandwidth_min_bps > 0):
            raise ValidationError("base compute and bandwidth floors must be positive")
        if not 0.0 <= self.noise < 1.0:
            raise ValidationError("noise must lie in [0, 1)")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        if self.eval_every < 1:
            raise ValidationError("eval_every must be >= 1")
        if self.csv_path is None:
            if self.layer_dims[0] != self.feature_dim:
                raise ValidationError(
                    f"layer_dims[0]={self.layer_dims[0]} != feature_dim={self.feature_dim}"
                )
            if self.layer_dims[-1] != self.class_count:
                raise ValidationError(
                    f"layer_dims[-1]={self.layer_dims[-1]} != class_count={self.class_count}"
                )

    @property
    def resolved_agg_target(self) -> int:
        if self.agg_target is not None:
            return self.agg_target
        return math.ceil(0.5 * self.concurrency)

    @property
    def resolved_server_lr(self) -> float:
        if self.server_lr is not None:
            return self.server_lr
        return DEFAULT_SERVER_LR[self.aggregator]

    def resolved(self) -> dict[str, Any]:
        """All fields with the optional ones materialized; snapshot-ready."""
        out = asdict(self)
        out["agg_target"] = self.resolved_agg_target
        out["server_lr"] = self.resolved_server_lr
        out["layer_dims"] = list(self.layer_dims)
        return out


_FIELDS = {f.name for f in fields(RunConfig)}


def config_from_mapping(mapping: dict[str, Any]) -> RunConfig:
    unknown = sorted(set(mapping) - _FIELDS)
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**mapping)


def load_config(path: str | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Build a config from an optional JSON file plus override values."""
    merged: dict[str, Any] = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from None
        if not isinstance(loaded, dict):
            raise ParseError(f"{path}: config must be a JSON object")
        merged.update(loaded)
    if overrides:
        merged.update(overrides)
    return config_from_mapping(merged)


def save_snapshot(config: RunConfig, path: str) -> None:
    """Write the resolved config; loading it back reproduces the run."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.resolved(), fh, indent=2, sort_keys=True)
        fh.write("\n")

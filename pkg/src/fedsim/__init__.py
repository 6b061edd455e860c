"""Trace-driven discrete-event simulation of cross-device federated learning.

The package compares three server protocols on one deterministic footing:
classic synchronous rounds, buffered asynchronous aggregation, and
deadline-driven rounds in which every sampled client trains an adapted
slice of the model so that even slow devices report on time.
"""

__version__ = "0.1.0"

from .config import RunConfig, load_config, save_snapshot
from .data import (
    DataShard,
    Dataset,
    PartitionSpec,
    dump_csv,
    generate_synthetic,
    load_csv,
    partition_dirichlet,
)
from .devices import (
    DeviceProfile,
    RoundCapability,
    clamp_disturbance,
    default_population,
    dump_traces,
    effective_compute_time,
    load_traces,
    round_capability,
    sample_bandwidth,
    sample_disturbance,
    synth_population,
)
from .engine import RunLog, RunRecord, SimClock, SimEvent, evaluate, run
from .errors import (
    FedsimError,
    InvariantError,
    NumericError,
    ParseError,
    ValidationError,
)
from .metrics import (
    ComparisonRow,
    ParticipationReport,
    TimeToTarget,
    compare,
    participation,
    time_to_target,
)
from .model import (
    ClientUpdate,
    FreezeMask,
    FULL_MASK,
    Layer,
    LayeredModel,
    apply_update,
    backward_partial,
    batch_count,
    cross_entropy,
    forward,
    init_model,
    load_model,
    local_train,
    save_model,
    softmax,
    trainable_fraction,
)
from .protocols import (
    AggregatorState,
    BuffServerState,
    Schedule,
    TimeEstimate,
    aggregate_fedavg,
    aggregate_fedopt,
    aggregation_interval,
    fedbuff_admit,
    local_time_update,
    ratio_to_mask,
    workload_schedule,
)

__all__ = [
    "__version__",
    "RunConfig", "load_config", "save_snapshot",
    "Dataset", "DataShard", "PartitionSpec", "generate_synthetic",
    "partition_dirichlet", "load_csv", "dump_csv",
    "DeviceProfile", "RoundCapability", "clamp_disturbance",
    "sample_disturbance", "sample_bandwidth", "effective_compute_time",
    "round_capability", "synth_population", "load_traces", "dump_traces",
    "default_population",
    "RunLog", "RunRecord", "SimClock", "SimEvent", "evaluate", "run",
    "FedsimError", "ValidationError", "ParseError", "NumericError",
    "InvariantError",
    "ParticipationReport", "TimeToTarget", "ComparisonRow",
    "participation", "time_to_target", "compare",
    "Layer", "LayeredModel", "FreezeMask", "FULL_MASK", "ClientUpdate",
    "forward", "backward_partial", "local_train", "apply_update",
    "init_model", "save_model", "load_model", "batch_count",
    "softmax", "cross_entropy", "trainable_fraction",
    "TimeEstimate", "Schedule", "AggregatorState", "BuffServerState",
    "local_time_update", "aggregation_interval", "workload_schedule",
    "ratio_to_mask", "aggregate_fedavg", "aggregate_fedopt", "fedbuff_admit",
]

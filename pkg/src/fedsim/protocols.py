"""Server-side protocol mathematics.

Three pieces live here, shared by the drivers in the engine:

* deadline scheduling: per-client time estimates from a one-batch probe,
  the k-th order statistic that sets the round deadline, and the workload
  schedule (local epochs, partial-training ratio, report deadline) that
  fits each client inside that deadline;
* aggregation: sample-weighted averaging of layer deltas, plain or through
  an adaptive server optimizer with per-layer moment accumulators;
* the buffered-asynchronous server state: staleness-scaled admission into
  a buffer that aggregates every time it reaches its goal size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantError, ValidationError
from .model import ClientUpdate, FreezeMask, LayeredModel

MergedDelta = dict[int, tuple[np.ndarray, np.ndarray]]

# Relative slack for float comparisons of simulated times.
TIME_EPS = 1e-9

STALENESS_CAP = 10


# ---------------------------------------------------------------- scheduling


@dataclass(frozen=True)
class TimeEstimate:
    """Projected full-model times for one client this round.

    compute_unit_s is the time for one full-model epoch over the client's
    shard, transfer_unit_s the time to upload a full model, and
    total_unit_s their sum: the projected time for one epoch of full
    training plus a full upload.
    """

    client_id: int
    compute_unit_s: float
    transfer_unit_s: float
    total_unit_s: float

    def __post_init__(self) -> None:
        if not (self.compute_unit_s > 0 and self.transfer_unit_s > 0):
            raise ValidationError("time estimates must be positive")
        if self.total_unit_s != self.compute_unit_s + self.transfer_unit_s:
            raise ValidationError("total_unit_s must equal compute + transfer")


def local_time_update(
    client_id: int,
    probe_batch_s: float,
    batch_fraction: float,
    payload_bytes: float,
    bandwidth_bps: float,
) -> TimeEstimate:
    """Project a client's full-epoch and upload times from a one-batch probe.

    The probe times one full-model batch; dividing by the batch's fraction
    of an epoch scales it to a full epoch. Upload time is payload over
    bandwidth.
    """
    if not probe_batch_s > 0:
        raise ValidationError("probe_batch_s must be positive")
    if not 0 < batch_fraction <= 1:
        raise ValidationError("batch_fraction must lie in (0, 1]")
    if not payload_bytes > 0 or not bandwidth_bps > 0:
        raise ValidationError("payload and bandwidth must be positive")
    compute = probe_batch_s / batch_fraction
    transfer = payload_bytes / bandwidth_bps
    return TimeEstimate(client_id, compute, transfer, compute + transfer)


def aggregation_interval(estimates: list[TimeEstimate], k: int) -> float:
    """Round deadline: the k-th smallest projected total time."""
    if not 1 <= k <= len(estimates):
        raise ValidationError(f"k={k} outside [1, {len(estimates)}]")
    return sorted(e.total_unit_s for e in estimates)[k - 1]


@dataclass(frozen=True)
class Schedule:
    """Workload assigned to one client for one round.

    epochs >= 1 local epochs over a trainable suffix covering ratio alpha
    of the model (by parameter count target), reporting by report_deadline
    (measured from the training start, upload excluded).
    """

    client_id: int
    round_index: int
    epochs: int
    alpha: float
    report_deadline: float

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if not 0 < self.alpha <= 1:
            raise ValidationError("alpha must lie in (0, 1]")
        if self.epochs > 1 and self.alpha != 1.0:
            raise ValidationError("multi-epoch schedules must train the full model")
        if self.report_deadline < 0:
            raise ValidationError("report_deadline must be non-negative")


def workload_schedule(deadline: float, estimate: TimeEstimate, round_index: int) -> Schedule:
    """Fit one client's workload inside the round deadline.

    Clients whose full unit time fits get extra epochs, floor of the
    remaining compute budget; everyone else trains one epoch on the
    largest model fraction whose compute plus upload meets the deadline.
    """
    if not deadline > 0:
        raise ValidationError("deadline must be positive")
    cmp_s, com_s = estimate.compute_unit_s, estimate.transfer_unit_s
    epochs = max(math.floor((deadline - com_s) / cmp_s), 1)
    alpha = min(deadline / (com_s + cmp_s), 1.0)
    report = deadline - com_s * alpha

    eps = TIME_EPS * max(1.0, deadline)
    # Scaling guarantees on which admission timing relies; checked, not assumed.
    if alpha < 1.0 and epochs != 1:
        raise InvariantError("partial-model schedule must be single-epoch")
    if cmp_s * epochs * alpha + com_s * alpha > deadline + eps:
        raise InvariantError("schedule exceeds the round deadline")
    if alpha < 1.0 and abs(report - alpha * cmp_s) > eps:
        raise InvariantError("report deadline must equal scaled compute time")
    return Schedule(estimate.client_id, round_index, epochs, alpha, report)


def ratio_to_mask(alpha: float, model: LayeredModel) -> FreezeMask:
    """Largest contiguous output-side suffix within the ratio budget.

    Returns the smallest trainable_suffix_start whose parameter fraction
    is <= alpha; if even the last layer alone exceeds alpha, that single
    layer is still scheduled (every participant trains something).
    """
    if not 0 < alpha <= 1:
        raise ValidationError("alpha must lie in (0, 1]")
    counts = [layer.param_count for layer in model.layers]
    total = sum(counts)
    suffix = 0
    for start in range(model.layer_count):
        suffix = sum(counts[start:])
        if suffix / total <= alpha:
            return FreezeMask(start)
    return FreezeMask(model.layer_count - 1)


# --------------------------------------------------------------- aggregation


def _sorted_updates(updates: list[ClientUpdate]) -> list[ClientUpdate]:
    # Canonical consumption order: client id, then arrival for repeats.
    def key(u: ClientUpdate):
        t = u.arrival_time
        return (u.client_id, t if not math.isnan(t) else 0.0)

    return sorted(updates, key=key)


def aggregate_fedavg(updates: list[ClientUpdate]) -> MergedDelta:
    """Sample-weighted mean of deltas, computed per layer.

    Each layer's divisor counts only the updates that trained that layer,
    so partial updates average against their peers, not the cohort.
    """
    if not updates:
        raise ValidationError("nothing to aggregate")
    num: dict[int, list[np.ndarray]] = {}
    den: dict[int, float] = {}
    for u in _sorted_updates(updates):
        for i, (dw, db) in u.layer_deltas.items():
            if i in num:
                num[i][0] = num[i][0] + u.sample_count * dw
                num[i][1] = num[i][1] + u.sample_count * db
                den[i] += u.sample_count
            else:
                num[i] = [u.sample_count * dw, u.sample_count * db]
                den[i] = u.sample_count
    return {i: (num[i][0] / den[i], num[i][1] / den[i]) for i in sorted(num)}


@dataclass
class AggregatorState:
    """Server optimizer state; holds Adam moments when kind is fedopt.

    kind fedavg applies the merged delta with server step 1. kind fedopt
    treats the negated merged delta as a pseudo-gradient and runs Adam
    with bias correction; layers untouched in a round contribute zero
    gradient but their accumulators still decay.
    """

    kind: str
    server_lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    v: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("fedavg", "fedopt"):
            raise ValidationError(f"unknown aggregator kind: {self.kind!r}")
        if not self.server_lr > 0:
            raise ValidationError("server_lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("betas must lie in [0, 1)")

    def merge(self, model: LayeredModel, updates: list[ClientUpdate]) -> MergedDelta:
        if self.kind == "fedavg":
            return aggregate_fedavg(updates)
        return aggregate_fedopt(self, model, updates)


def aggregate_fedopt(
    state: AggregatorState, model: LayeredModel, updates: list[ClientUpdate]
) -> MergedDelta:
    """One Adam step on the pseudo-gradient, returning per-layer deltas.

    The pseudo-gradient is the negated fedavg merge; descending it moves
    the server model toward the clients' average. Moments cover every
    layer of the model so that skipped layers keep decaying.
    """
    averaged = aggregate_fedavg(updates)
    state.step += 1
    t = state.step
    out: MergedDelta = {}
    for i, layer in enumerate(model.layers):
        if i in averaged:
            gw, gb = -averaged[i][0], -averaged[i][1]
        else:
            gw = np.zeros_like(layer.weights)
            gb = np.zeros_like(layer.biases)
        if i not in state.m:
            state.m[i] = (np.zeros_like(layer.weights), np.zeros_like(layer.biases))
            state.v[i] = (np.zeros_like(layer.weights), np.zeros_like(layer.biases))
        mw = state.beta1 * state.m[i][0] + (1 - state.beta1) * gw
        mb = state.beta1 * state.m[i][1] + (1 - state.beta1) * gb
        vw = state.beta2 * state.v[i][0] + (1 - state.beta2) * gw * gw
        vb = state.beta2 * state.v[i][1] + (1 - state.beta2) * gb * gb
        state.m[i] = (mw, mb)
        state.v[i] = (vw, vb)
        bc1 = 1 - state.beta1**t
        bc2 = 1 - state.beta2**t
        out[i] = (
            -state.server_lr * (mw / bc1) / (np.sqrt(vw / bc2) + state.eps),
            -state.server_lr * (mb / bc1) / (np.sqrt(vb / bc2) + state.eps),
        )
    return out


# ------------------------------------------------------- buffered async state


@dataclass
class BuffServerState:
    """Buffer of admitted updates; aggregates when it reaches the goal."""

    goal: int
    staleness_cap: int = STALENESS_CAP
    buffer: list[ClientUpdate] = field(default_factory=list)
    discarded: int = 0

    def __post_init__(self) -> None:
        if self.goal < 1:
            raise ValidationError("aggregation goal must be >= 1")
        if self.staleness_cap < 0:
            raise ValidationError("staleness cap must be >= 0")


def fedbuff_admit(state: BuffServerState, update: ClientUpdate, current_version: int) -> str:
    """Admit one arriving update; returns what happened.

    Staleness is the number of server aggregations since the update's
    origin. Beyond the cap the update is discarded; otherwise its deltas
    are scaled by 1/sqrt(1 + staleness) and buffered. Filling the buffer
    to its goal returns "aggregate_now"; the caller aggregates and clears.
    """
    staleness = current_version - update.origin_version
    if staleness < 0:
        raise InvariantError("update originates from a future model version")
    if staleness > state.staleness_cap:
        state.discarded += 1
        return "discarded"
    state.buffer.append(update.scaled(1.0 / math.sqrt(1.0 + staleness)))
    if len(state.buffer) == state.goal:
        return "aggregate_now"
    if len(state.buffer) > state.goal:
        raise InvariantError("buffer exceeded its aggregation goal")
    return "buffered"


def take_buffer(state: BuffServerState) -> list[ClientUpdate]:
    """Return the buffered updates in canonical order and clear the buffer."""
    out = _sorted_updates(state.buffer)
    state.buffer = []
    return out

"""Deterministic discrete-event execution of the three server protocols.

The engine owns the simulated clock, the event heap, and client task
lifecycles; protocol mathematics (deadlines, schedules, aggregation) come
from the protocols module. Events are processed in (time, sequence)
order, all randomness is drawn from keyed streams, and evaluation costs
no simulated time, so a (config, population, dataset, seed) tuple fully
determines every artifact.

Wall-clock accounting, per protocol:

* sync: a round lasts until the slowest sampled client finishes full
  local training and upload.
* timelyfl: a round is a probe phase (every sampled client times one
  full-model batch) plus the deadline, the k-th smallest projected total
  time; updates still missing at the deadline are dropped.
* fedbuff: clients run continuously; the aggregation timestamp is the
  arrival of the update that fills the buffer to its goal.
"""

from __future__ import annotations

import csv
import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .data import DataShard, Dataset, PartitionSpec, partition_dirichlet
from .devices import DeviceProfile, compute_noise, effective_compute_time, round_capability
from .errors import InvariantError, ValidationError
from .model import (
    FULL_MASK,
    ClientUpdate,
    LayeredModel,
    apply_update,
    batch_count,
    cross_entropy,
    forward,
    init_model,
    local_train,
)
from .protocols import (
    AggregatorState,
    BuffServerState,
    Schedule,
    TimeEstimate,
    TIME_EPS,
    aggregation_interval,
    fedbuff_admit,
    local_time_update,
    ratio_to_mask,
    take_buffer,
    workload_schedule,
)
from .rng import SERVER, stream

log = logging.getLogger(__name__)

EVENT_KINDS = ("probe_report", "update_arrival", "aggregation_deadline", "client_spawn")


@dataclass(frozen=True)
class SimEvent:
    time: float
    sequence: int
    kind: str
    client_id: int = -1
    update: ClientUpdate | None = None
    admitted: bool = True

    def __post_init__(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise ValidationError(f"unknown event kind: {self.kind!r}")
        if not math.isfinite(self.time) or self.time < 0:
            raise ValidationError("event time must be finite and non-negative")


class SimClock:
    """Monotone simulated time."""

    def __init__(self) -> None:
        self.now = 0.0

    def advance(self, t: float) -> None:
        if t < self.now:
            raise InvariantError(f"clock moved backward: {self.now} -> {t}")
        self.now = t


class EventQueue:
    """Min-heap of events ordered by (time, insertion sequence)."""

    def __init__(self) -> None:
        self._heap: list[tuple[float, int, SimEvent]] = []
        self._seq = itertools.count()

    def push(self, time: float, kind: str, **kw) -> SimEvent:
        ev = SimEvent(time, next(self._seq), kind, **kw)
        heapq.heappush(self._heap, (ev.time, ev.sequence, ev))
        return ev

    def pop(self) -> SimEvent:
        return heapq.heappop(self._heap)[2]

    def __len__(self) -> int:
        return len(self._heap)

    def drain(self) -> list[SimEvent]:
        out = [item[2] for item in sorted(self._heap)]
        self._heap = []
        return out


def evaluate(model: LayeredModel, features: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Test accuracy (argmax, ties to the lowest class) and mean CE loss."""
    logits, _ = forward(model, features)
    labels = np.asarray(labels)
    accuracy = float(np.mean(np.argmax(logits, axis=1) == labels))
    return accuracy, cross_entropy(logits, labels)


@dataclass
class RunRecord:
    """One aggregation row: simulated time, quality, and participants."""

    round_index: int
    time_s: float
    accuracy: float
    loss: float
    participants: tuple[int, ...]
    probe_overhead_s: float = 0.0

    @property
    def n_participants(self) -> int:
        return len(self.participants)


@dataclass
class RunLog:
    """Everything a run produced, in memory."""

    protocol: str
    seed: int
    population_size: int
    rows: list[RunRecord] = field(default_factory=list)
    schedules: list[Schedule] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)
    # Client-side contribution counter: for each client, the number of
    # aggregations that consumed at least one of its updates. Metrics
    # recount the same quantity from the rows and cross-check.
    contributions: dict[int, int] = field(default_factory=dict)
    models: list[LayeredModel] | None = None

    @property
    def aggregation_rows(self) -> list[RunRecord]:
        return [r for r in self.rows if r.round_index > 0]

    @property
    def final_accuracy(self) -> float:
        return self.rows[-1].accuracy if self.rows else math.nan


def write_runlog_csv(runlog: RunLog, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "round", "accuracy", "loss", "n_participants"])
        for r in runlog.rows:
            writer.writerow(
                [repr(float(r.time_s)), r.round_index, repr(float(r.accuracy)), repr(float(r.loss)),
                 r.n_participants]
            )


def write_curves_csv(runlog: RunLog, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "accuracy", "loss"])
        for r in runlog.rows:
            writer.writerow([repr(float(r.time_s)), repr(float(r.accuracy)), repr(float(r.loss))])


def write_schedules_csv(runlog: RunLog, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "client_id", "epochs", "alpha", "report_deadline_s"])
        for s in runlog.schedules:
            writer.writerow(
                [s.round_index, s.client_id, s.epochs, repr(float(s.alpha)),
                 repr(float(s.report_deadline))]
            )


class _Sim:
    """Shared state and handlers for one simulation run."""

    def __init__(
        self,
        config: RunConfig,
        profiles: list[DeviceProfile],
        shards: list[DataShard],
        dataset: Dataset,
        seed: int,
        record_models: bool,
    ) -> None:
        self.config = config
        self.seed = seed
        self.profiles = sorted(profiles, key=lambda p: p.client_id)
        self.client_ids = [p.client_id for p in self.profiles]
        self.by_id = {
            p.client_id: (p, shard) for p, shard in zip(self.profiles, shards)
        }
        self.dataset = dataset
        self.clock = SimClock()
        self.queue = EventQueue()
        self.model = init_model(config.layer_dims, seed)
        self.aggregator = AggregatorState(
            config.aggregator,
            config.resolved_server_lr,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        )
        self.runlog = RunLog(config.protocol, seed, len(self.profiles))
        self.runlog.counters = {
            "spawned": 0, "aggregated": 0, "late_dropped": 0,
            "stale_discarded": 0, "pending_end": 0,
        }
        self.runlog.contributions = {c: 0 for c in self.client_ids}
        if record_models:
            self.runlog.models = [self.model.copy()]
        self.rounds_done = 0

        # Per-round state for the round-synchronous protocols.
        self.cohort: list[int] = []
        self.estimates: dict[int, TimeEstimate] = {}
        self.bandwidths: dict[int, float] = {}
        self.pending_probes = 0
        self.probe_overhead = 0.0
        self.round_buffer: list[ClientUpdate] = []

        # Buffered-async state.
        self.buff = BuffServerState(config.resolved_agg_target, config.staleness_cap)
        self.busy: set[int] = set()
        self.task_counter: dict[int, int] = {c: 0 for c in self.client_ids}
        self.spawn_counter = 0

    # ------------------------------------------------------------- helpers

    def sample_cohort(self, round_index: int) -> list[int]:
        g = stream(self.seed, SERVER, round_index, "sample")
        picked = g.choice(len(self.client_ids), size=self.config.concurrency, replace=False)
        return sorted(self.client_ids[i] for i in picked)

    def epoch_batches(self, client_id: int) -> int:
        _, shard = self.by_id[client_id]
        return batch_count(shard.sample_count, self.config.batch_size)

    def train(self, client_id: int, round_key: int, epochs: int, mask) -> ClientUpdate:
        _, shard = self.by_id[client_id]
        return local_train(
            self.model, shard.features, shard.labels, epochs, mask,
            self.config.client_lr, self.config.batch_size,
            stream(self.seed, client_id, round_key, "shuffle"), client_id=client_id,
        )

    def log_row(self, round_index: int, time_s: float, participants: tuple[int, ...],
                probe_overhead_s: float = 0.0) -> None:
        total = self.config.rounds
        do_eval = (
            round_index == 0
            or round_index == total
            or round_index % self.config.eval_every == 0
        )
        if do_eval:
            acc, loss = evaluate(self.model, self.dataset.test_features,
                                 self.dataset.test_labels)
        else:
            acc, loss = math.nan, math.nan
        self.runlog.rows.append(
            RunRecord(round_index, time_s, acc, loss, participants, probe_overhead_s)
        )
        if self.runlog.models is not None and round_index > 0:
            self.runlog.models.append(self.model.copy())

    def aggregate_round(self, updates: list[ClientUpdate]) -> tuple[int, ...]:
        """Apply one aggregation; returns the sorted unique participant ids."""
        if not updates:
            return ()
        merged = self.aggregator.merge(self.model, updates)
        self.model = apply_update(self.model, merged)
        self.runlog.counters["aggregated"] += len(updates)
        participants = tuple(sorted({u.client_id for u in updates}))
        for c in participants:
            self.runlog.contributions[c] += 1
        return participants

    # ------------------------------------------------- round-synchronous part

    def start_round(self, round_index: int) -> None:
        self.round_buffer = []
        self.cohort = self.sample_cohort(round_index)
        self.estimates = {}
        self.bandwidths = {}
        if self.config.protocol == "timelyfl":
            self.start_timely_round(round_index)
        else:
            self.start_sync_round(round_index)

    def start_sync_round(self, round_index: int) -> None:
        cfg = self.config
        t0 = self.clock.now
        last = 0.0
        for c in self.cohort:
            profile, _ = self.by_id[c]
            cap = round_capability(self.seed, profile, round_index)
            batch_s = effective_compute_time(profile, cap.disturbance_w)
            u = compute_noise(self.seed, c, round_index, cfg.noise)
            compute_s = cfg.local_epochs * self.epoch_batches(c) * batch_s * u
            transfer_s = self.model.payload_bytes / cap.bandwidth_bps
            update = self.train(c, round_index, cfg.local_epochs, FULL_MASK)
            update.arrival_time = t0 + compute_s + transfer_s
            self.runlog.counters["spawned"] += 1
            self.round_buffer.append(update)
            self.queue.push(update.arrival_time, "update_arrival", client_id=c,
                            admitted=True)
            last = max(last, update.arrival_time)
        self.queue.push(last, "aggregation_deadline")

    def start_timely_round(self, round_index: int) -> None:
        cfg = self.config
        t0 = self.clock.now
        payload = self.model.payload_bytes
        self.pending_probes = len(self.cohort)
        self.probe_overhead = 0.0
        for c in self.cohort:
            profile, _ = self.by_id[c]
            cap = round_capability(self.seed, profile, round_index)
            batch_s = effective_compute_time(profile, cap.disturbance_w)
            nb = self.epoch_batches(c)
            self.estimates[c] = local_time_update(c, batch_s, 1.0 / nb, payload,
                                                  cap.bandwidth_bps)
            self.bandwidths[c] = cap.bandwidth_bps
            self.probe_overhead = max(self.probe_overhead, batch_s)
            self.queue.push(t0 + batch_s, "probe_report", client_id=c)

    def schedule_timely_round(self, round_index: int) -> None:
        """All probes are in: fix the deadline and dispatch adapted workloads."""
        cfg = self.config
        t0 = self.clock.now  # probe phase ends now
        deadline = aggregation_interval(
            list(self.estimates.values()), cfg.resolved_agg_target
        )
        eps = TIME_EPS * max(1.0, deadline)
        for c in self.cohort:
            est = self.estimates[c]
            sched = workload_schedule(deadline, est, round_index)
            if cfg.epochs_cap is not None and sched.epochs > cfg.epochs_cap:
                sched = Schedule(sched.client_id, sched.round_index,
                                 cfg.epochs_cap, sched.alpha, sched.report_deadline)
            mask = ratio_to_mask(sched.alpha, self.model)
            u = compute_noise(self.seed, c, round_index, cfg.noise)
            # Wall-clock follows the scheduled ratio alpha; the mask is its
            # parameter-space realization and may cover a larger fraction.
            compute_s = sched.epochs * sched.alpha * est.compute_unit_s * u
            transfer_s = sched.alpha * est.transfer_unit_s
            on_time = (
                compute_s <= sched.report_deadline + eps
                and compute_s + transfer_s <= deadline + eps
            )
            if not on_time and cfg.noise == 0.0:
                raise InvariantError(
                    f"client {c} late in round {round_index} with zero noise"
                )
            arrival = t0 + compute_s + transfer_s
            self.runlog.counters["spawned"] += 1
            self.runlog.schedules.append(sched)
            if on_time:
                update = self.train(c, round_index, sched.epochs, mask)
                update.arrival_time = arrival
                self.round_buffer.append(update)
            self.queue.push(arrival, "update_arrival", client_id=c, admitted=on_time)
        self.queue.push(t0 + deadline, "aggregation_deadline")

    def finish_round(self, round_index: int) -> None:
        participants = self.aggregate_round(self.round_buffer)
        if not participants:
            log.info("round %d aggregated nothing; model unchanged", round_index + 1)
        self.log_row(round_index + 1, self.clock.now, participants,
                     self.probe_overhead)
        self.probe_overhead = 0.0
        self.rounds_done += 1
        if self.rounds_done < self.config.rounds:
            self.start_round(self.rounds_done)

    def run_round_synchronous(self) -> None:
        if self.config.rounds == 0:
            return
        self.start_round(0)
        while len(self.queue):
            ev = self.queue.pop()
            self.clock.advance(ev.time)
            if ev.kind == "probe_report":
                self.pending_probes -= 1
                if self.pending_probes == 0:
                    self.schedule_timely_round(self.rounds_done)
            elif ev.kind == "update_arrival":
                if not ev.admitted:
                    self.runlog.counters["late_dropped"] += 1
            elif ev.kind == "aggregation_deadline":
                self.finish_round(self.rounds_done)
            else:
                raise InvariantError(f"unexpected event kind {ev.kind!r}")

    # --------------------------------------------------- buffered-async part

    def spawn_task(self, client_id: int) -> None:
        cfg = self.config
        profile, _ = self.by_id[client_id]
        task_index = self.task_counter[client_id]
        self.task_counter[client_id] += 1
        cap = round_capability(self.seed, profile, task_index)
        batch_s = effective_compute_time(profile, cap.disturbance_w)
        u = compute_noise(self.seed, client_id, task_index, cfg.noise)
        compute_s = cfg.local_epochs * self.epoch_batches(client_id) * batch_s * u
        transfer_s = self.model.payload_bytes / cap.bandwidth_bps
        update = self.train(client_id, task_index, cfg.local_epochs, FULL_MASK)
        update.arrival_time = self.clock.now + compute_s + transfer_s
        self.runlog.counters["spawned"] += 1
        self.queue.push(update.arrival_time, "update_arrival", client_id=client_id,
                        update=update)

    def spawn_replacement(self) -> None:
        idle = sorted(set(self.client_ids) - self.busy)
        if not idle:
            raise InvariantError("no idle client available for replacement sampling")
        self.spawn_counter += 1
        g = stream(self.seed, SERVER, self.spawn_counter, "sample")
        pick = idle[int(g.integers(len(idle)))]
        self.busy.add(pick)
        self.queue.push(self.clock.now, "client_spawn", client_id=pick)

    def run_buffered(self) -> None:
        cfg = self.config
        if cfg.rounds == 0:
            return
        g = stream(self.seed, SERVER, 0, "sample")
        initial = g.choice(len(self.client_ids), size=cfg.concurrency, replace=False)
        for c in sorted(self.client_ids[i] for i in initial):
            self.busy.add(c)
            self.queue.push(0.0, "client_spawn", client_id=c)

        while self.rounds_done < cfg.rounds and len(self.queue):
            ev = self.queue.pop()
            self.clock.advance(ev.time)
            if ev.kind == "client_spawn":
                self.spawn_task(ev.client_id)
            elif ev.kind == "update_arrival":
                self.busy.discard(ev.client_id)
                outcome = fedbuff_admit(self.buff, ev.update, self.model.version)
                if outcome == "discarded":
                    self.runlog.counters["stale_discarded"] += 1
                elif outcome == "aggregate_now":
                    participants = self.aggregate_round(take_buffer(self.buff))
                    self.rounds_done += 1
                    self.log_row(self.rounds_done, self.clock.now, participants)
                if self.rounds_done < cfg.rounds:
                    self.spawn_replacement()
            else:
                raise InvariantError(f"unexpected event kind {ev.kind!r}")

    # -------------------------------------------------------------- wrap-up

    def finish(self) -> RunLog:
        # The round-synchronous drivers drain their queues; only the
        # buffered protocol stops with work in flight.
        for ev in self.queue.drain():
            if ev.kind == "update_arrival":
                self.runlog.counters["pending_end"] += 1
        self.runlog.counters["pending_end"] += len(self.buff.buffer)
        c = self.runlog.counters
        if c["spawned"] != (c["aggregated"] + c["late_dropped"]
                            + c["stale_discarded"] + c["pending_end"]):
            raise InvariantError(f"task conservation violated: {c}")
        contributed = sum(len(r.participants) for r in self.runlog.rows)
        if contributed != sum(self.runlog.contributions.values()):
            raise InvariantError("contribution counters disagree")
        return self.runlog


def run(
    config: RunConfig,
    population: list[DeviceProfile],
    dataset: Dataset,
    seed: int,
    record_models: bool = False,
) -> RunLog:
    """Simulate one protocol run; deterministic in all four arguments.

    The dataset is partitioned across the population with the config's
    data_alpha, the model is initialized from the seed, and the protocol
    named by the config runs for config.rounds aggregations. Row 0 of the
    returned log is the initial evaluation at time zero.
    """
    if config.concurrency > len(population):
        raise ValidationError(
            f"concurrency {config.concurrency} exceeds population {len(population)}"
        )
    ids = [p.client_id for p in population]
    if len(set(ids)) != len(ids):
        raise ValidationError("population has duplicate client ids")
    if dataset.feature_dim != config.layer_dims[0]:
        raise ValidationError(
            f"dataset feature dim {dataset.feature_dim} != layer_dims[0]"
        )
    if dataset.class_count > config.layer_dims[-1]:
        raise ValidationError(
            f"dataset has {dataset.class_count} classes, model outputs "
            f"{config.layer_dims[-1]}"
        )
    shards = partition_dirichlet(
        dataset, PartitionSpec(len(population), config.data_alpha, seed)
    )
    sim = _Sim(config, population, shards, dataset, seed, record_models)
    sim.log_row(0, 0.0, ())
    if config.protocol == "fedbuff":
        sim.run_buffered()
    else:
        sim.run_round_synchronous()
    return sim.finish()

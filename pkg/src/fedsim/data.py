"""Synthetic classification data and non-iid client partitions.

Synthetic data is a Gaussian blob per class: class means are uniform in
[-1, 1]^d and samples are drawn with isotropic sigma 0.3 around them.
Client shards come from a Dirichlet split of each class across clients,
so one concentration knob moves the population smoothly between iid
(large values) and single-class clients (small values).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, ValidationError
from .rng import SERVER, stream

log = logging.getLogger(__name__)

TEST_FRACTION = 0.2
CLASS_SIGMA = 0.3


@dataclass
class Dataset:
    """Train and test split of one labeled classification problem."""

    train_features: np.ndarray
    train_labels: np.ndarray
    test_features: np.ndarray
    test_labels: np.ndarray
    # Original label -> dense label, recorded when ingestion re-maps.
    label_mapping: dict[int, int] | None = None

    def __post_init__(self) -> None:
        if self.train_features.ndim != 2 or self.test_features.ndim != 2:
            raise ValidationError("features must be 2-d arrays")
        if len(self.train_features) != len(self.train_labels):
            raise ValidationError("train features and labels disagree on length")
        if len(self.test_features) != len(self.test_labels):
            raise ValidationError("test features and labels disagree on length")

    @property
    def feature_dim(self) -> int:
        return self.train_features.shape[1]

    @property
    def class_count(self) -> int:
        labels = np.concatenate([self.train_labels, self.test_labels])
        return int(labels.max()) + 1 if len(labels) else 0


@dataclass
class DataShard:
    """One client's slice of the training data."""

    client_id: int
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if len(self.features) != len(self.labels):
            raise ValidationError("shard features and labels disagree on length")

    @property
    def sample_count(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class PartitionSpec:
    """How to split training data across clients.

    data_alpha is the Dirichlet concentration: the data-heterogeneity
    knob, deliberately not called alpha because that name belongs to the
    partial-training ratio.
    """

    client_count: int
    data_alpha: float
    seed: int

    def __post_init__(self) -> None:
        if self.client_count < 1:
            raise ValidationError("client_count must be >= 1")
        if not self.data_alpha > 0:
            raise ValidationError("data_alpha must be positive")


def generate_synthetic(
    class_count: int, feature_dim: int, samples_per_class: int, seed: int
) -> Dataset:
    """Deterministically generate the Gaussian-blob dataset.

    The last floor(20%) of each class's draws become the test split, so
    the split is deterministic too.
    """
    if class_count < 2 or feature_dim < 1 or samples_per_class < 2:
        raise ValidationError("need >= 2 classes, >= 1 feature, >= 2 samples per class")
    n_test = int(TEST_FRACTION * samples_per_class)
    if n_test < 1:
        raise ValidationError(
            f"samples_per_class={samples_per_class} leaves no test samples"
        )
    g = stream(seed, client=SERVER, rnd=0, purpose="datagen")
    means = g.uniform(-1.0, 1.0, size=(class_count, feature_dim))
    tr_x, tr_y, te_x, te_y = [], [], [], []
    for k in range(class_count):
        x = means[k] + CLASS_SIGMA * g.standard_normal((samples_per_class, feature_dim))
        cut = samples_per_class - n_test
        tr_x.append(x[:cut])
        tr_y.append(np.full(cut, k, dtype=np.int64))
        te_x.append(x[cut:])
        te_y.append(np.full(n_test, k, dtype=np.int64))
    return Dataset(
        np.concatenate(tr_x), np.concatenate(tr_y),
        np.concatenate(te_x), np.concatenate(te_y),
    )


def partition_dirichlet(dataset: Dataset, spec: PartitionSpec) -> list[DataShard]:
    """Split training data into one shard per client, Dirichlet per class.

    For each class, client proportions are drawn from Dir(data_alpha * 1)
    and the class's samples are split at the cumulative boundaries. Every
    training sample lands in exactly one shard, and empty shards are
    repaired by donating one sample from the currently largest shard.
    """
    n = len(dataset.train_labels)
    if spec.client_count > n:
        raise ValidationError(
            f"cannot give {spec.client_count} clients at least one of {n} samples"
        )
    g = stream(spec.seed, client=SERVER, rnd=0, purpose="partition")
    class_count = dataset.class_count

    assigned: list[list[np.ndarray]] = [[] for _ in range(spec.client_count)]
    for k in range(class_count):
        idx = np.flatnonzero(dataset.train_labels == k)
        if len(idx) == 0:
            continue
        g.shuffle(idx)
        shares = g.dirichlet(np.full(spec.client_count, spec.data_alpha))
        bounds = np.floor(np.cumsum(shares) * len(idx)).astype(int)
        bounds[-1] = len(idx)  # cumsum rounding must not drop samples
        start = 0
        for c, stop in enumerate(bounds):
            if stop > start:
                assigned[c].append(idx[start:stop])
            start = stop

    pools = [
        np.sort(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)
        for parts in assigned
    ]
    # Repair: an empty shard takes one sample from the largest shard.
    for c in range(spec.client_count):
        while len(pools[c]) == 0:
            donor = max(range(spec.client_count), key=lambda i: len(pools[i]))
            pools[c] = pools[donor][-1:]
            pools[donor] = pools[donor][:-1]

    shards = [
        DataShard(c, dataset.train_features[pool], dataset.train_labels[pool])
        for c, pool in enumerate(pools)
    ]
    total = sum(s.sample_count for s in shards)
    if total != n:
        raise ValidationError(f"partition covered {total} of {n} samples")
    return shards


def load_csv(path: str, label_column: str = "label", test_fraction: float = TEST_FRACTION,
             seed: int = 0) -> Dataset:
    """Ingest a dataset CSV: numeric feature columns plus one label column.

    The header names the label column; every other column is a feature.
    Labels that are not already dense 0..C-1 are re-mapped (sorted order)
    and the mapping is recorded on the returned Dataset. The test split
    takes the last floor(test_fraction * n) rows after a seeded shuffle.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}:1: empty file") from None
        if label_column not in header:
            raise ParseError(f"{path}:1: no column named {label_column!r} in header")
        label_at = header.index(label_column)

        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                labels.append(int(row[label_at]))
                feats.append([float(v) for i, v in enumerate(row) if i != label_at])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None

    if not feats:
        raise ParseError(f"{path}: no data rows")
    x = np.asarray(feats, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)

    mapping = None
    uniq = np.unique(y)
    if not np.array_equal(uniq, np.arange(len(uniq))):
        mapping = {int(orig): dense for dense, orig in enumerate(uniq)}
        log.info("re-mapped %d label values to dense range: %s", len(uniq), mapping)
        y = np.searchsorted(uniq, y)

    n_test = int(test_fraction * len(y))
    order = stream(seed, client=SERVER, rnd=0, purpose="datagen").permutation(len(y))
    cut = len(y) - n_test
    return Dataset(x[order[:cut]], y[order[:cut]], x[order[cut:]], y[order[cut:]],
                   label_mapping=mapping)


def dump_csv(dataset: Dataset, path: str) -> None:
    """Write train then test rows in the ingestion schema (f0..fD-1, label)."""
    d = dataset.feature_dim
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(d)] + ["label"])
        for x, y in ((dataset.train_features, dataset.train_labels),
                     (dataset.test_features, dataset.test_labels)):
            for row, label in zip(x, y):
                writer.writerow([repr(float(v)) for v in row] + [int(label)])

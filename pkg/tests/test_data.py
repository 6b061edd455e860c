"""Synthetic data generation, Dirichlet partitioning, CSV round-trips."""

import numpy as np
import pytest

from fedsim.data import (
    Dataset,
    PartitionSpec,
    dump_csv,
    generate_synthetic,
    load_csv,
    partition_dirichlet,
)
from fedsim.errors import ParseError, ValidationError


class TestGenerateSynthetic:
    def test_shapes_and_split(self):
        ds = generate_synthetic(class_count=5, feature_dim=7, samples_per_class=20, seed=0)
        # 20% of each class held out: 4 test, 16 train per class.
        assert ds.train_features.shape == (80, 7)
        assert ds.test_features.shape == (20, 7)
        assert ds.feature_dim == 7
        assert ds.class_count == 5
        for c in range(5):
            assert np.sum(ds.train_labels == c) == 16
            assert np.sum(ds.test_labels == c) == 4

    def test_deterministic_per_seed(self):
        a = generate_synthetic(3, 4, 10, seed=1)
        b = generate_synthetic(3, 4, 10, seed=1)
        c = generate_synthetic(3, 4, 10, seed=2)
        assert np.array_equal(a.train_features, b.train_features)
        assert not np.array_equal(a.train_features, c.train_features)

    def test_class_means_within_unit_cube(self):
        ds = generate_synthetic(4, 6, 200, seed=3)
        for c in range(4):
            mean = ds.train_features[ds.train_labels == c].mean(axis=0)
            # sigma=0.3, n=160: sample mean stays well inside +-1.2
            assert np.all(np.abs(mean) < 1.2)

    def test_rejects_tiny_class(self):
        # needs at least one test sample per class
        with pytest.raises(ValidationError):
            generate_synthetic(3, 4, samples_per_class=4, seed=0)


class TestPartitionDirichlet:
    def test_conserves_and_covers_samples(self):
        ds = generate_synthetic(6, 5, 50, seed=4)
        for alpha in (0.1, 1.0, 10.0):
            shards = partition_dirichlet(ds, PartitionSpec(8, alpha, seed=4))
            assert len(shards) == 8
            assert sum(s.sample_count for s in shards) == len(ds.train_labels)
            seen = np.concatenate([s.labels for s in shards])
            assert len(seen) == len(ds.train_labels)
            for s in shards:
                assert s.sample_count >= 1

    def test_low_alpha_more_skewed_than_high(self):
        ds = generate_synthetic(10, 4, 100, seed=5)

        def mean_top_class_share(shards):
            shares = []
            for s in shards:
                counts = np.bincount(s.labels, minlength=10)
                shares.append(counts.max() / counts.sum())
            return float(np.mean(shares))

        skewed = mean_top_class_share(partition_dirichlet(ds, PartitionSpec(16, 0.05, 6)))
        uniform = mean_top_class_share(partition_dirichlet(ds, PartitionSpec(16, 100.0, 6)))
        assert skewed > uniform + 0.2

    def test_deterministic(self):
        ds = generate_synthetic(5, 4, 40, seed=7)
        a = partition_dirichlet(ds, PartitionSpec(6, 0.3, 9))
        b = partition_dirichlet(ds, PartitionSpec(6, 0.3, 9))
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.features, sb.features)
            assert np.array_equal(sa.labels, sb.labels)

    def test_more_clients_than_samples_rejected(self):
        ds = generate_synthetic(2, 3, 10, seed=0)  # 16 train samples
        with pytest.raises(ValidationError):
            partition_dirichlet(ds, PartitionSpec(17, 1.0, 0))

    def test_client_ids_sequential(self):
        ds = generate_synthetic(3, 3, 30, seed=1)
        shards = partition_dirichlet(ds, PartitionSpec(5, 0.5, 2))
        assert [s.client_id for s in shards] == [0, 1, 2, 3, 4]


class TestCsv:
    def test_roundtrip_preserves_values(self, tmp_path):
        ds = generate_synthetic(4, 3, 25, seed=8)
        path = str(tmp_path / "data.csv")
        dump_csv(ds, path)
        back = load_csv(path, label_column="label", test_fraction=0.2, seed=0)

        def rows(d):
            feats = np.vstack([d.train_features, d.test_features])
            labs = np.concatenate([d.train_labels, d.test_labels])
            return sorted((*map(float, f), int(l)) for f, l in zip(feats, labs))

        # reload reshuffles the split, so compare as sorted rows
        assert rows(ds) == rows(back)
        assert back.class_count == 4

    def test_non_contiguous_labels_densified(self, tmp_path):
        path = tmp_path / "sparse.csv"
        rows = ["f0,f1,label"]
        for i, lab in enumerate([3, 7, 3, 11, 7, 3, 11, 3, 7, 11]):
            rows.append(f"0.{i},1.{i},{lab}")
        path.write_text("\n".join(rows) + "\n")
        ds = load_csv(str(path), label_column="label", test_fraction=0.2, seed=1)
        assert ds.class_count == 3
        assert ds.label_mapping == {3: 0, 7: 1, 11: 2}
        labels = np.concatenate([ds.train_labels, ds.test_labels])
        assert set(labels.tolist()) == {0, 1, 2}

    def test_missing_label_column(self, tmp_path):
        path = tmp_path / "nolabel.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ParseError):
            load_csv(str(path), label_column="label", test_fraction=0.2, seed=0)

    def test_bad_float_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f0,label\n1.0,0\nbogus,1\n")
        with pytest.raises(ParseError, match=r":3"):
            load_csv(str(path), label_column="label", test_fraction=0.2, seed=0)

    def test_split_fraction_respected(self, tmp_path):
        path = tmp_path / "even.csv"
        lines = ["f0,label"] + [f"{i}.0,{i % 2}" for i in range(40)]
        path.write_text("\n".join(lines) + "\n")
        ds = load_csv(str(path), label_column="label", test_fraction=0.25, seed=3)
        assert len(ds.test_labels) == 10
        assert len(ds.train_labels) == 30

    def test_dataset_validation(self):
        with pytest.raises(ValidationError):
            Dataset(
                train_features=np.zeros((4, 3)),
                train_labels=np.array([0, 1, 0]),  # length mismatch
                test_features=np.zeros((2, 3)),
                test_labels=np.array([0, 1]),
            )

"""Dataset generators, text and CIFAR loaders, deterministic splits."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from spherehead.data import (
    Dataset,
    SplitSpec,
    gen_gaussian_blobs,
    gen_two_spirals,
    load_cifar_binary,
    load_delimited,
    split,
)
from spherehead.errors import ConfigError, FormatError, LabelError, ParseError, ShapeError


class TestDataset:
    def test_basic_construction(self):
        ds = Dataset(np.zeros((3, 2)), [0, 1, 0], 2, "toy")
        assert len(ds) == 3
        assert ds.dim == 2
        assert ds.class_count == 2

    def test_label_count_must_match(self):
        with pytest.raises(ShapeError):
            Dataset(np.zeros((3, 2)), [0, 1], 2, "bad")

    def test_label_range_validated(self):
        with pytest.raises(LabelError):
            Dataset(np.zeros((2, 2)), [0, 2], 2, "bad")
        with pytest.raises(LabelError):
            Dataset(np.zeros((1, 2)), [-1], 2, "bad")

    def test_nonfinite_features_rejected(self):
        with pytest.raises(ShapeError):
            Dataset(np.array([[np.nan, 0.0]]), [0], 1, "bad")

    def test_non_integer_labels_rejected(self):
        with pytest.raises(LabelError):
            Dataset(np.zeros((1, 2)), [0.5], 2, "bad")

    def test_take_preserves_metadata(self):
        ds = Dataset(np.arange(8.0).reshape(4, 2), [0, 1, 1, 0], 2, "toy")
        sub = ds.take([2, 0])
        assert_array_equal(sub.features.data, [[4.0, 5.0], [0.0, 1.0]])
        assert_array_equal(sub.labels, [1, 0])
        assert sub.class_count == 2 and sub.name == "toy"


class TestTwoSpirals:
    def test_noiseless_mean_is_exactly_zero(self):
        ds = gen_two_spirals(n_per_class=100, noise_sd=0.0, seed=3)
        X = ds.features.data
        halves = X[:100].sum(axis=0) + X[100:].sum(axis=0)
        assert_array_equal(halves, [0.0, 0.0])

    def test_noiseless_classes_are_exact_negations(self):
        ds = gen_two_spirals(n_per_class=50, noise_sd=0.0, seed=4)
        X = ds.features.data
        assert_array_equal(X[50:], -X[:50])

    def test_standardized_to_unit_variance(self):
        ds = gen_two_spirals(n_per_class=500, noise_sd=0.1, seed=5)
        sd = ds.features.data.std(axis=0)
        assert np.allclose(sd, [1.0, 1.0], atol=1e-12)

    def test_opposite_arms_clear_the_noise_scale(self):
        # along any ray the two classes alternate; after unit-variance
        # scaling the inter-class gap still dwarfs sd-0.1 noise
        ds = gen_two_spirals(n_per_class=2000, noise_sd=0.0, seed=11)
        X = ds.features.data
        angles = np.arctan2(X[:, 1], X[:, 0])
        radii = np.linalg.norm(X, axis=1)
        ray = np.abs(angles) < 0.05
        for_class0 = np.sort(radii[ray & (ds.labels == 0)])
        for_class1 = np.sort(radii[ray & (ds.labels == 1)])
        gap = np.min(np.abs(for_class0[:, None] - for_class1[None, :]))
        assert gap > 0.3

    def test_single_point_per_class(self):
        ds = gen_two_spirals(n_per_class=1, noise_sd=0.0, seed=6)
        assert len(ds) == 2
        assert_array_equal(np.sort(ds.labels), [0, 1])

    def test_label_layout(self):
        ds = gen_two_spirals(n_per_class=10, noise_sd=0.1, seed=7)
        assert_array_equal(ds.labels, [0] * 10 + [1] * 10)
        assert ds.class_count == 2

    def test_deterministic_bitwise(self):
        a = gen_two_spirals(200, 0.1, seed=42)
        b = gen_two_spirals(200, 0.1, seed=42)
        assert_array_equal(a.features.data, b.features.data)
        assert_array_equal(a.labels, b.labels)

    def test_different_seeds_differ(self):
        a = gen_two_spirals(50, 0.1, seed=1)
        b = gen_two_spirals(50, 0.1, seed=2)
        assert not np.array_equal(a.features.data, b.features.data)

    def test_noise_perturbs_points(self):
        quiet = gen_two_spirals(50, 0.0, seed=8)
        noisy = gen_two_spirals(50, 0.1, seed=8)
        assert not np.array_equal(quiet.features.data, noisy.features.data)

    def test_argument_validation(self):
        with pytest.raises(ConfigError):
            gen_two_spirals(0, 0.1, seed=0)
        with pytest.raises(ConfigError):
            gen_two_spirals(10, -0.1, seed=0)


class TestGaussianBlobs:
    def test_two_classes_sit_on_the_x_axis(self):
        ds = gen_gaussian_blobs(C=2, n_per_class=5, spread=0.0, radius=1.0, seed=9)
        X = ds.features.data
        assert_allclose(X[:5], np.tile([1.0, 0.0], (5, 1)), rtol=0, atol=1e-12)
        assert_allclose(X[5:], np.tile([-1.0, 0.0], (5, 1)), rtol=0, atol=1e-12)

    def test_zero_spread_collapses_each_class(self):
        ds = gen_gaussian_blobs(C=5, n_per_class=7, spread=0.0, radius=2.0, seed=10)
        X = ds.features.data
        for c in range(5):
            block = X[ds.labels == c]
            assert_array_equal(block, np.tile(block[0], (7, 1)))

    def test_class_sample_means_near_circle_positions(self):
        C, n, spread, radius = 4, 400, 0.3, 2.0
        ds = gen_gaussian_blobs(C, n, spread, radius, seed=11)
        X = ds.features.data
        angles = 2.0 * np.pi * np.arange(C) / C
        ideal = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        for c in range(C):
            sample_mean = X[ds.labels == c].mean(axis=0)
            # 5 sigma / sqrt(n) for the class mean plus a little slack for
            # the global centering shift
            assert np.linalg.norm(sample_mean - ideal[c]) <= 6.0 * spread / np.sqrt(n)

    def test_deterministic(self):
        a = gen_gaussian_blobs(3, 20, 0.2, 1.0, seed=12)
        b = gen_gaussian_blobs(3, 20, 0.2, 1.0, seed=12)
        assert_array_equal(a.features.data, b.features.data)

    def test_argument_validation(self):
        with pytest.raises(ConfigError):
            gen_gaussian_blobs(1, 10, 0.1, 1.0, seed=0)
        with pytest.raises(ConfigError):
            gen_gaussian_blobs(2, 0, 0.1, 1.0, seed=0)
        with pytest.raises(ConfigError):
            gen_gaussian_blobs(2, 10, -0.1, 1.0, seed=0)


class TestLoadDelimited:
    def test_labels_remap_densely(self, tmp_path):
        path = tmp_path / "toy.csv"
        path.write_text("5,1.0,2.0\n5,3.0,4.0\n9,5.0,6.0\n")
        ds = load_delimited(str(path))
        assert ds.class_count == 2
        assert_array_equal(ds.labels, [0, 0, 1])
        assert_array_equal(ds.features.data, [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])

    def test_label_column_in_middle_and_negative(self, tmp_path):
        path = tmp_path / "mid.csv"
        path.write_text("1.0,7,2.0\n3.0,7,4.0\n")
        ds = load_delimited(str(path), label_column=1)
        assert_array_equal(ds.features.data, [[1.0, 2.0], [3.0, 4.0]])
        path2 = tmp_path / "last.csv"
        path2.write_text("1.0,2.0,3\n4.0,5.0,1\n")
        ds2 = load_delimited(str(path2), label_column=-1)
        assert_array_equal(ds2.labels, [1, 0])  # raw 3 and 1 sort to 1, 0

    def test_header_skipped_on_request(self, tmp_path):
        path = tmp_path / "hdr.csv"
        path.write_text("label,f1\n0,1.5\n1,2.5\n")
        ds = load_delimited(str(path), header=True)
        assert_array_equal(ds.features.data, [[1.5], [2.5]])

    def test_custom_delimiter(self, tmp_path):
        path = tmp_path / "semi.txt"
        path.write_text("0;1.0;2.0\n1;3.0;4.0\n")
        ds = load_delimited(str(path), delimiter=";")
        assert_array_equal(ds.features.data, [[1.0, 2.0], [3.0, 4.0]])

    def test_ragged_row_reports_line(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("0,1.0,2.0\n1,3.0\n")
        with pytest.raises(ParseError, match=":2:"):
            load_delimited(str(path))

    def test_bad_cell_reports_coordinates(self, tmp_path):
        path = tmp_path / "badcell.csv"
        path.write_text("0,1.0,2.0\n1,oops,4.0\n")
        with pytest.raises(ParseError, match=r":2: column 2"):
            load_delimited(str(path))

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(ParseError):
            load_delimited(str(path))
        blank = tmp_path / "blank.csv"
        blank.write_text("\n\n")
        with pytest.raises(ParseError):
            load_delimited(str(blank))

    def test_fractional_label_rejected(self, tmp_path):
        path = tmp_path / "fraclabel.csv"
        path.write_text("0.5,1.0\n")
        with pytest.raises(ParseError, match="integer-valued"):
            load_delimited(str(path))

    def test_single_column_rejected(self, tmp_path):
        path = tmp_path / "one.csv"
        path.write_text("0\n1\n")
        with pytest.raises(ParseError):
            load_delimited(str(path))

    def test_seventeen_digit_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(13)
        values = np.concatenate([
            rng.normal(size=20) * 10.0 ** rng.integers(-300, 300, size=20),
            [0.1, 1.0 / 3.0, np.pi, 5e-324, -1.7976931348623157e308],
        ])
        features = values.reshape(-1, 5)
        labels = rng.integers(0, 3, size=features.shape[0])
        path = tmp_path / "roundtrip.csv"
        with open(path, "w") as fh:
            for row, label in zip(features, labels):
                fh.write(",".join([str(label)] + [f"{v:.17g}" for v in row]) + "\n")
        ds = load_delimited(str(path))
        assert_array_equal(ds.features.data, features)


def write_cifar10_dir(dirpath, records_per_file=40, rng_seed=0, mutate=None):
    """Synthesize a format-valid cifar10 directory: 6 files, 3073-byte records.

    Labels cycle 0..9 so every class appears; ``mutate`` can edit the
    (filename -> bytes) dict before writing.
    """
    rng = np.random.default_rng(rng_seed)
    files = {}
    names = ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
             "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"]
    counter = 0
    for name in names:
        recs = []
        for _ in range(records_per_file):
            label = counter % 10
            counter += 1
            pixels = rng.integers(0, 256, size=3072, dtype=np.uint8)
            recs.append(np.concatenate([[np.uint8(label)], pixels]))
        files[name] = np.concatenate(recs).astype(np.uint8)
    if mutate:
        mutate(files)
    for name, blob in files.items():
        blob.tofile(str(dirpath / name))
    return dirpath


def write_cifar100_dir(dirpath, records_per_file=30, rng_seed=1):
    """Synthesize cifar100: train.bin + test.bin, 3074-byte records."""
    rng = np.random.default_rng(rng_seed)
    for name in ("train.bin", "test.bin"):
        recs = []
        for i in range(records_per_file):
            coarse = np.uint8(rng.integers(0, 20))
            fine = np.uint8(i % 100)
            pixels = rng.integers(0, 256, size=3072, dtype=np.uint8)
            recs.append(np.concatenate([[coarse], [fine], pixels]))
        np.concatenate(recs).astype(np.uint8).tofile(str(dirpath / name))
    return dirpath


class TestLoadCifarBinary:
    def test_loads_all_batches(self, tmp_path):
        write_cifar10_dir(tmp_path, records_per_file=40)
        ds = load_cifar_binary(str(tmp_path), "cifar10")
        assert len(ds) == 240
        assert ds.dim == 3072
        assert ds.class_count == 10
        assert_array_equal(np.unique(ds.labels), np.arange(10))

    def test_pixels_scaled_to_unit_interval(self, tmp_path):
        def mutate(files):
            rec = np.zeros(3073, dtype=np.uint8)
            rec[0] = 3
            rec[1] = 255
            rec[2] = 51
            files["data_batch_1.bin"] = np.concatenate([files["data_batch_1.bin"], rec])

        write_cifar10_dir(tmp_path, records_per_file=10, mutate=mutate)
        ds = load_cifar_binary(str(tmp_path), "cifar10")
        row = ds.features.data[10]  # the appended record
        assert row[0] == 1.0
        assert row[1] == pytest.approx(0.2, abs=1e-15)
        assert ds.features.data.min() >= 0.0 and ds.features.data.max() <= 1.0

    def test_all_zero_record_gives_zero_row(self, tmp_path):
        def mutate(files):
            rec = np.zeros(3073, dtype=np.uint8)
            files["test_batch.bin"] = np.concatenate([files["test_batch.bin"], rec])

        write_cifar10_dir(tmp_path, records_per_file=10, mutate=mutate)
        ds = load_cifar_binary(str(tmp_path), "cifar10")
        assert_array_equal(ds.features.data[-1], np.zeros(3072))

    def test_planar_channel_order(self, tmp_path):
        def mutate(files):
            rec = np.zeros(3073, dtype=np.uint8)
            rec[0] = 0
            rec[1 : 1 + 1024] = 255  # red plane saturated, green/blue zero
            files["data_batch_2.bin"] = np.concatenate([files["data_batch_2.bin"], rec])

        write_cifar10_dir(tmp_path, records_per_file=5, mutate=mutate)
        ds = load_cifar_binary(str(tmp_path), "cifar10")
        row = ds.features.data[10]  # after the 5+5 records of batches 1-2
        assert_array_equal(row[:1024], np.ones(1024))
        assert_array_equal(row[1024:], np.zeros(2048))

    def test_downsample_mean_pools_each_plane(self, tmp_path):
        write_cifar10_dir(tmp_path, records_per_file=4)
        full = load_cifar_binary(str(tmp_path), "cifar10")
        small = load_cifar_binary(str(tmp_path), "cifar10", downsample_to=8)
        assert small.dim == 3 * 8 * 8
        planes = full.features.data[0].reshape(3, 32, 32)
        manual = planes.reshape(3, 8, 4, 8, 4).mean(axis=(2, 4))
        assert_allclose(small.features.data[0], manual.reshape(-1), rtol=0, atol=1e-15)

    def test_downsample_must_divide_side(self, tmp_path):
        write_cifar10_dir(tmp_path, records_per_file=2)
        with pytest.raises(ConfigError):
            load_cifar_binary(str(tmp_path), "cifar10", downsample_to=7)

    def test_subset_per_class_counts(self, tmp_path):
        write_cifar10_dir(tmp_path, records_per_file=40)
        ds = load_cifar_binary(str(tmp_path), "cifar10", subset_per_class=10)
        assert len(ds) == 100
        for c in range(10):
            assert int(np.sum(ds.labels == c)) == 10

    def test_subset_deterministic_by_seed(self, tmp_path):
        write_cifar10_dir(tmp_path, records_per_file=40)
        a = load_cifar_binary(str(tmp_path), "cifar10", subset_per_class=5, subset_seed=3)
        b = load_cifar_binary(str(tmp_path), "cifar10", subset_per_class=5, subset_seed=3)
        c = load_cifar_binary(str(tmp_path), "cifar10", subset_per_class=5, subset_seed=4)
        assert_array_equal(a.features.data, b.features.data)
        assert not np.array_equal(a.features.data, c.features.data)

    def test_subset_larger_than_class_rejected(self, tmp_path):
        write_cifar10_dir(tmp_path, records_per_file=10)
        with pytest.raises(FormatError):
            load_cifar_binary(str(tmp_path), "cifar10", subset_per_class=7)

    def test_missing_file_rejected(self, tmp_path):
        write_cifar10_dir(tmp_path, records_per_file=5)
        (tmp_path / "data_batch_3.bin").unlink()
        with pytest.raises(FileNotFoundError):
            load_cifar_binary(str(tmp_path), "cifar10")

    def test_truncated_file_rejected(self, tmp_path):
        write_cifar10_dir(tmp_path, records_per_file=5)
        blob = (tmp_path / "data_batch_1.bin").read_bytes()
        (tmp_path / "data_batch_1.bin").write_bytes(blob[:-100])
        with pytest.raises(FormatError, match="record"):
            load_cifar_binary(str(tmp_path), "cifar10")

    def test_label_byte_out_of_range_rejected(self, tmp_path):
        def mutate(files):
            files["data_batch_1.bin"][0] = 10  # first record's label byte
        write_cifar10_dir(tmp_path, records_per_file=5, mutate=mutate)
        with pytest.raises(FormatError, match="label"):
            load_cifar_binary(str(tmp_path), "cifar10")

    def test_unknown_flavor_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_cifar_binary(str(tmp_path), "cifar20")

    def test_cifar100_uses_fine_label(self, tmp_path):
        write_cifar100_dir(tmp_path, records_per_file=30)
        ds = load_cifar_binary(str(tmp_path), "cifar100")
        assert len(ds) == 60
        assert ds.class_count == 100
        # fine labels were written as i % 100 per file
        assert_array_equal(ds.labels[:30], np.arange(30))

    def test_cifar100_record_size(self, tmp_path):
        write_cifar100_dir(tmp_path, records_per_file=10)
        blob = (tmp_path / "train.bin").read_bytes()
        assert len(blob) == 10 * 3074
        blob_file = tmp_path / "train.bin"
        blob_file.write_bytes(blob + b"\x00")
        with pytest.raises(FormatError):
            load_cifar_binary(str(tmp_path), "cifar100")


class TestSplit:
    def _toy(self, n=10):
        rng = np.random.default_rng(14)
        return Dataset(rng.normal(size=(n, 3)), rng.integers(0, 3, size=n), 3, "toy")

    def test_seventy_thirty(self):
        train, test = split(self._toy(10), SplitSpec(train_fraction=0.7, shuffle_seed=0))
        assert len(train) == 7 and len(test) == 3

    def test_partition_recovers_original_rows(self):
        ds = self._toy(20)
        train, test = split(ds, SplitSpec(train_fraction=0.7, shuffle_seed=5))
        combined = np.vstack([train.features.data, test.features.data])
        original = ds.features.data
        order_a = np.lexsort(combined.T)
        order_b = np.lexsort(original.T)
        assert_array_equal(combined[order_a], original[order_b])

    def test_deterministic_and_seed_sensitive(self):
        ds = self._toy(40)
        a1, _ = split(ds, SplitSpec(0.7, shuffle_seed=1))
        a2, _ = split(ds, SplitSpec(0.7, shuffle_seed=1))
        b1, _ = split(ds, SplitSpec(0.7, shuffle_seed=2))
        assert_array_equal(a1.features.data, a2.features.data)
        assert not np.array_equal(a1.features.data, b1.features.data)

    def test_class_count_preserved(self):
        train, test = split(self._toy(10), SplitSpec(0.7, shuffle_seed=0))
        assert train.class_count == 3 and test.class_count == 3

    def test_empty_side_rejected(self):
        ds = self._toy(10)
        with pytest.raises(ConfigError):
            split(ds, SplitSpec(0.04, shuffle_seed=0))
        with pytest.raises(ConfigError):
            split(ds, SplitSpec(0.96, shuffle_seed=0))

    def test_fraction_validated(self):
        with pytest.raises(ConfigError):
            SplitSpec(0.0, shuffle_seed=0)
        with pytest.raises(ConfigError):
            SplitSpec(1.0, shuffle_seed=0)

"""Dataset construction: synthetic 2D benchmarks, delimited text, CIFAR bytes.

Everything returns a :class:`Dataset` holding a constant feature tensor
and integer labels. Construction validates shapes, label ranges, and
finiteness once so downstream code can trust them. All generators and
loaders are deterministic functions of their arguments, seeds included.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, LabelError, ParseError, ShapeError
from .ndcore import Tensor

__all__ = [
    "Dataset",
    "SplitSpec",
    "gen_two_spirals",
    "gen_gaussian_blobs",
    "load_delimited",
    "load_cifar_binary",
    "split",
]

_CIFAR_FILES = {
    "cifar10": ["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"],
    "cifar100": ["train.bin", "test.bin"],
}
_CIFAR_CLASSES = {"cifar10": 10, "cifar100": 100}
_CIFAR_PIXELS = 3072  # 3 planes of 32 x 32
_CIFAR_SIDE = 32


class Dataset:
    """Immutable bundle of features [N, n], labels [N], and class count."""

    __slots__ = ("features", "labels", "class_count", "name")

    def __init__(self, features, labels, class_count: int, name: str):
        if isinstance(features, Tensor):
            features = features.data
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise ShapeError(f"features must be [N, n], got shape {features.shape}")
        if not np.all(np.isfinite(features)):
            raise ShapeError("features contain non-finite values")
        labels = np.asarray(labels)
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise ShapeError(
                f"{features.shape[0]} feature rows need {features.shape[0]} labels, got shape {labels.shape}"
            )
        if not np.issubdtype(labels.dtype, np.integer):
            if labels.size and not np.all(labels == labels.astype(np.int64)):
                raise LabelError("labels must be integers")
            labels = labels.astype(np.int64)
        labels = labels.astype(np.int64)
        if class_count < 1:
            raise ConfigError(f"class count must be positive, got {class_count}")
        if labels.size and (labels.min() < 0 or labels.max() >= class_count):
            raise LabelError(
                f"labels must lie in [0, {class_count}), got range [{labels.min()}, {labels.max()}]"
            )
        self.features = Tensor(features)
        self.labels = labels
        self.class_count = int(class_count)
        self.name = str(name)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def take(self, indices) -> "Dataset":
        """Row subset as a new dataset; class count and name carry over."""
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features.data[indices], self.labels[indices], self.class_count, self.name)


@dataclass(frozen=True)
class SplitSpec:
    """How to partition a dataset: fraction to train, shuffle seed."""

    train_fraction: float
    shuffle_seed: int

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train fraction must be in (0, 1), got {self.train_fraction!r}")


def gen_two_spirals(n_per_class: int, noise_sd: float, seed: int) -> Dataset:
    """Two interleaved spirals around the origin, one per class.

    Class 0 follows r(t) = t (cos t, sin t) for t in [pi/2, 4 pi];
    class 1 is its point-wise negation, which puts opposite-class arms
    about pi apart along any ray. Gaussian noise is added to every
    point, then features are standardized to zero mean and unit
    per-axis variance. The mean is summed half by half so that with
    zero noise the exact negation symmetry cancels and the centering is
    an exact no-op.
    """
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be at least 1, got {n_per_class}")
    if noise_sd < 0.0:
        raise ConfigError(f"noise_sd must be non-negative, got {noise_sd}")
    rng = np.random.default_rng(seed)
    t = rng.uniform(np.pi / 2.0, 4.0 * np.pi, size=n_per_class)
    base = t[:, None] * np.stack([np.cos(t), np.sin(t)], axis=1)
    features = np.vstack([base, -base])
    features = features + rng.normal(0.0, noise_sd, size=features.shape)
    halves = features[:n_per_class].sum(axis=0) + features[n_per_class:].sum(axis=0)
    features = features - halves / (2.0 * n_per_class)
    sd = features.std(axis=0)
    features = features / np.where(sd > 0.0, sd, 1.0)
    labels = np.repeat([0, 1], n_per_class)
    return Dataset(features, labels, 2, "two-spirals")


def gen_gaussian_blobs(C: int, n_per_class: int, spread: float, radius: float, seed: int) -> Dataset:
    """C isotropic Gaussian clusters, means equally spaced on a circle.

    Mean of class c sits at radius * (cos(2 pi c / C), sin(2 pi c / C));
    features are centered on their empirical mean afterwards.
    """
    if C < 2:
        raise ConfigError(f"need at least 2 classes, got {C}")
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be at least 1, got {n_per_class}")
    if spread < 0.0:
        raise ConfigError(f"spread must be non-negative, got {spread}")
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(C) / C
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    features = np.repeat(means, n_per_class, axis=0)
    features = features + rng.normal(0.0, spread, size=features.shape)
    features = features - features.mean(axis=0)
    labels = np.repeat(np.arange(C), n_per_class)
    return Dataset(features, labels, C, "blobs")


def load_delimited(path: str, delimiter: str = ",", label_column: int = 0,
                   header: bool = False) -> Dataset:
    """Read a rectangular numeric text file; one column holds the labels.

    Labels are remapped to a dense [0, C) range in sorted order of the
    distinct raw values. Errors carry 1-based line numbers (and column
    numbers for bad cells).
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    start = 1 if header else 0
    rows = [(i + 1, line) for i, line in enumerate(lines[start:], start=start) if line.strip()]
    if not rows:
        raise ParseError(f"{path}: no data rows")
    width = None
    raw_labels: list[float] = []
    feature_rows: list[list[float]] = []
    for lineno, line in rows:
        cells = line.split(delimiter)
        if width is None:
            width = len(cells)
            if width < 2:
                raise ParseError(f"{path}:{lineno}: need a label column and at least one feature")
            if not -width <= label_column < width:
                raise ParseError(f"{path}: label column {label_column} out of range for {width} columns")
        elif len(cells) != width:
            raise ParseError(f"{path}:{lineno}: expected {width} cells, found {len(cells)}")
        values = []
        for col, cell in enumerate(cells):
            try:
                values.append(float(cell))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: column {col + 1}: not a number: {cell.strip()!r}") from None
        label = values.pop(label_column % width)
        if label != int(label):
            raise ParseError(f"{path}:{lineno}: label column must be integer-valued, found {label!r}")
        raw_labels.append(label)
        feature_rows.append(values)
    distinct = sorted(set(raw_labels))
    remap = {v: i for i, v in enumerate(distinct)}
    labels = np.array([remap[v] for v in raw_labels], dtype=np.int64)
    return Dataset(np.array(feature_rows), labels, len(distinct), os.path.basename(path))


def _mean_pool(planes: np.ndarray, side_out: int) -> np.ndarray:
    """Average-pool [N, 3, 32, 32] down to [N, 3, k, k]."""
    n = planes.shape[0]
    factor = _CIFAR_SIDE // side_out
    pooled = planes.reshape(n, 3, side_out, factor, side_out, factor)
    return pooled.mean(axis=(3, 5))


def load_cifar_binary(dir: str, which: str, subset_per_class: int | None = None,
                      downsample_to: int | None = None, subset_seed: int = 0) -> Dataset:
    """Ingest the standard CIFAR binary batches from a directory.

    cifar10 records are 3073 bytes (label + planar RGB pixels); cifar100
    records are 3074 (coarse label, fine label, pixels) and the fine
    label is used. All standard files for the flavor are required and
    concatenated. Pixels scale to [0, 1]; ``downsample_to`` mean-pools
    each plane to k x k; ``subset_per_class`` keeps that many rows per
    class, chosen by ``subset_seed``.
    """
    if which not in _CIFAR_FILES:
        raise ConfigError(f'which must be "cifar10" or "cifar100", got {which!r}')
    class_count = _CIFAR_CLASSES[which]
    record = 1 + _CIFAR_PIXELS if which == "cifar10" else 2 + _CIFAR_PIXELS
    blobs = []
    for filename in _CIFAR_FILES[which]:
        path = os.path.join(dir, filename)
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing CIFAR batch file: {path}")
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size == 0 or raw.size % record != 0:
            raise FormatError(
                f"{path}: length {raw.size} is not a positive multiple of the {record}-byte record"
            )
        blobs.append(raw.reshape(-1, record))
    records = np.concatenate(blobs, axis=0)
    labels = records[:, 0] if which == "cifar10" else records[:, 1]
    labels = labels.astype(np.int64)
    if labels.max() >= class_count:
        raise FormatError(f"label byte {labels.max()} out of range for {which}")
    pixels = records[:, -_CIFAR_PIXELS:].astype(np.float64) / 255.0
    planes = pixels.reshape(-1, 3, _CIFAR_SIDE, _CIFAR_SIDE)
    if downsample_to is not None:
        if downsample_to < 1 or _CIFAR_SIDE % downsample_to != 0:
            raise ConfigError(f"downsample_to must divide {_CIFAR_SIDE}, got {downsample_to}")
        planes = _mean_pool(planes, downsample_to)
    features = planes.reshape(planes.shape[0], -1)
    if subset_per_class is not None:
        if subset_per_class < 1:
            raise ConfigError(f"subset_per_class must be at least 1, got {subset_per_class}")
        rng = np.random.default_rng(subset_seed)
        keep = []
        for c in range(class_count):
            pool = np.flatnonzero(labels == c)
            if pool.size < subset_per_class:
                raise FormatError(
                    f"class {c} has {pool.size} samples, fewer than subset_per_class={subset_per_class}"
                )
            keep.append(rng.choice(pool, size=subset_per_class, replace=False))
        order = np.sort(np.concatenate(keep))
        features = features[order]
        labels = labels[order]
    return Dataset(features, labels, class_count, which)


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled partition into train and test.

    Train gets round(fraction * N) rows; the two sides are disjoint and
    cover the dataset. Class count metadata carries to both sides.
    """
    n = len(ds)
    n_train = int(round(spec.train_fraction * n))
    if n_train < 1 or n_train >= n:
        raise ConfigError(
            f"fraction {spec.train_fraction} of {n} rows leaves an empty side ({n_train} train)"
        )
    perm = np.random.default_rng(spec.shuffle_seed).permutation(n)
    return ds.take(perm[:n_train]), ds.take(perm[n_train:])

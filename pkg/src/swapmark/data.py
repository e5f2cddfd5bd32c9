"""Synthetic Gaussian-cluster classification data with base/novel splits."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 20
    samples_per_class: int = 100
    input_dim: int = 32
    cluster_std: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 4:
            raise ValueError("num_classes must be >= 4 so both splits keep two classes")
        if self.samples_per_class < 1 or self.input_dim < 1:
            raise ValueError("samples_per_class and input_dim must be positive")
        if self.cluster_std < 0:
            raise ValueError("cluster_std must be non-negative")


class LabeledSample(NamedTuple):
    x: np.ndarray
    y: int


@dataclass
class Dataset:
    x: np.ndarray  # (N, input_dim)
    y: np.ndarray  # (N,) int64 class indices
    means: np.ndarray | None = None  # (num_classes, input_dim) when known

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise ValueError("x must be (N, d) and y must be (N,)")

    def __len__(self) -> int:
        return self.y.size

    def __iter__(self) -> Iterator[LabeledSample]:
        for xi, yi in zip(self.x, self.y):
            yield LabeledSample(xi, int(yi))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.x[idx], self.y[idx], self.means)

    def of_classes(self, classes) -> "Dataset":
        return self.subset(np.flatnonzero(np.isin(self.y, list(classes))))

    def classes(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.y))


@dataclass(frozen=True)
class SplitSpec:
    base_classes: tuple[int, ...]
    novel_classes: tuple[int, ...]


def generate_dataset(spec: DatasetSpec) -> Dataset:
    """Class k draws ``samples_per_class`` points from N(mu_k, cluster_std^2 I), mu_k ~ N(0, I)."""
    rng = np.random.default_rng(spec.seed)
    means = rng.standard_normal((spec.num_classes, spec.input_dim))
    noise = rng.standard_normal((spec.num_classes, spec.samples_per_class, spec.input_dim))
    x = (means[:, None, :] + spec.cluster_std * noise).reshape(-1, spec.input_dim)
    y = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    return Dataset(x, y, means)


def split_base_novel(dataset: Dataset, base_fraction: float = 0.5, seed: int = 0):
    """Class-level split; returns (base set, novel set, SplitSpec)."""
    if not 0.0 < base_fraction < 1.0:
        raise ValueError("base_fraction must lie in (0, 1)")
    classes = np.array(dataset.classes())
    n_base = int(round(base_fraction * classes.size))
    if n_base == 0 or n_base == classes.size:
        raise ValueError(f"base_fraction {base_fraction} leaves one side empty")
    perm = np.random.default_rng(seed).permutation(classes)
    split = SplitSpec(tuple(sorted(int(c) for c in perm[:n_base])),
                      tuple(sorted(int(c) for c in perm[n_base:])))
    return dataset.of_classes(split.base_classes), dataset.of_classes(split.novel_classes), split


def sample_few_shot(base: Dataset, shots_per_class: int, seed: int = 0) -> Dataset:
    """``shots_per_class`` samples per class without replacement, in a seeded order."""
    if shots_per_class < 1:
        raise ValueError("shots_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    picked = []
    for c in base.classes():
        idx = np.flatnonzero(base.y == c)
        if idx.size < shots_per_class:
            raise ValueError(f"class {c} has {idx.size} samples, need {shots_per_class}")
        picked.append(rng.choice(idx, size=shots_per_class, replace=False))
    return base.subset(rng.permutation(np.concatenate(picked)))


def held_out(dataset: Dataset, train: Dataset) -> Dataset:
    """Rows of ``dataset`` that do not appear in ``train`` (matched by exact value)."""
    seen = {row.tobytes() for row in train.x}
    keep = [i for i, row in enumerate(dataset.x) if row.tobytes() not in seen]
    return dataset.subset(keep)


def save_dataset(dataset: Dataset, path) -> None:
    """Columnar text: a header line with dims and counts, then one sample per line, label last."""
    header = f"dims={dataset.x.shape[1]} count={len(dataset)} classes={len(dataset.classes())}"
    table = np.column_stack([dataset.x, dataset.y.astype(np.float64)])
    fmt = ["%.17g"] * dataset.x.shape[1] + ["%d"]
    np.savetxt(path, table, fmt=fmt, delimiter=" ", header=header)


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        header = fh.readline().lstrip("#").split()
    meta = dict(item.split("=") for item in header)
    table = np.loadtxt(Path(path), ndmin=2)
    dims, count = int(meta["dims"]), int(meta["count"])
    if table.shape != (count, dims + 1):
        raise ValueError(f"{path}: header says {count}x{dims}, body is {table.shape[0]}x{table.shape[1] - 1}")
    return Dataset(table[:, :dims], table[:, dims].astype(np.int64))

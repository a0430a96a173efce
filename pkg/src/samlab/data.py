"""Synthetic 2-D classification datasets and seeded batch scheduling.

Datasets serialize to a small self-describing text container:

    line 1: the magic string ``SHRPDS1``
    line 2: a JSON header ``{"kind", "seed", "noise", "n", "dim", "classes"}``
    line 3: the column row ``x0,...,x{dim-1},y``
    then one CSV row per example; floats are written with ``repr`` so a
    round-trip reproduces every value bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

MAGIC = "SHRPDS1"

DATASET_KINDS = ("blobs", "moons", "xor")


@dataclass
class Batch:
    """One mini-batch: inputs are rows, targets and indices align with them."""

    inputs: np.ndarray
    targets: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ConfigurationError("batch inputs must be a matrix")
        n = self.inputs.shape[0]
        if n == 0:
            raise ConfigurationError("batch is empty")
        if self.targets.shape[0] != n or self.indices.shape[0] != n:
            raise ConfigurationError("batch inputs, targets, and indices disagree on row count")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


@dataclass
class Dataset:
    kind: str
    seed: int
    noise: float
    inputs: np.ndarray
    targets: np.ndarray

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.targets.max()) + 1


def generate_dataset(kind: str, n: int, noise: float, seed: int) -> Dataset:
    """Deterministic 2-class point cloud, classes as balanced as n allows."""
    if kind not in DATASET_KINDS:
        raise ConfigurationError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    if n < 2:
        raise ConfigurationError("need at least one example per class (n >= 2)")
    if noise < 0:
        raise ConfigurationError("noise must be nonnegative")

    rng = np.random.default_rng(seed)
    # alternate classes so every prefix is as balanced as possible
    targets = np.arange(n, dtype=np.int64) % 2
    inputs = np.empty((n, 2), dtype=np.float64)

    if kind == "blobs":
        centers = np.array([[-1.0, -1.0], [1.0, 1.0]])
        inputs[:] = centers[targets] + noise * rng.standard_normal((n, 2))
    elif kind == "moons":
        # two interleaving half circles; angles evenly spaced within each class
        for cls in (0, 1):
            rows = np.flatnonzero(targets == cls)
            t = np.linspace(0.0, math.pi, rows.size, endpoint=True)
            if cls == 0:
                pts = np.column_stack([np.cos(t), np.sin(t)])
            else:
                pts = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
            inputs[rows] = pts
        inputs += noise * rng.standard_normal((n, 2))
    else:  # xor
        quadrants = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, -1.0], [-1.0, 1.0]])
        quad_idx = np.arange(n) % 4
        # opposite quadrants share a class: (+,+)/(-,-) -> 0, (+,-)/(-,+) -> 1
        targets = (quad_idx % 2).astype(np.int64)
        inputs[:] = quadrants[quad_idx] + noise * rng.standard_normal((n, 2))

    return Dataset(kind=kind, seed=seed, noise=noise, inputs=inputs, targets=targets)


def serialize_dataset(ds: Dataset) -> str:
    header = {
        "kind": ds.kind,
        "seed": ds.seed,
        "noise": ds.noise,
        "n": ds.n,
        "dim": ds.dim,
        "classes": ds.n_classes,
    }
    lines = [MAGIC, json.dumps(header, sort_keys=True)]
    lines.append(",".join([f"x{j}" for j in range(ds.dim)] + ["y"]))
    for row, y in zip(ds.inputs, ds.targets):
        lines.append(",".join([repr(float(v)) for v in row] + [str(int(y))]))
    return "\n".join(lines) + "\n"


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(serialize_dataset(ds))


def deserialize_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines or lines[0] != MAGIC:
        raise ConfigurationError(f"not a dataset file: missing {MAGIC!r} magic")
    header = json.loads(lines[1])
    n, dim = header["n"], header["dim"]
    inputs = np.empty((n, dim), dtype=np.float64)
    targets = np.empty(n, dtype=np.int64)
    for i, line in enumerate(lines[3 : 3 + n]):
        parts = line.split(",")
        inputs[i] = [float(p) for p in parts[:dim]]
        targets[i] = int(parts[dim])
    return Dataset(
        kind=header["kind"], seed=header["seed"], noise=header["noise"],
        inputs=inputs, targets=targets,
    )


def load_dataset(path) -> Dataset:
    with open(path, "r", encoding="ascii") as fh:
        return deserialize_dataset(fh.read())


def dataset_checksum(ds: Dataset) -> str:
    """SHA-256 of the serialized form; pinned in tests as a regression value."""
    return hashlib.sha256(serialize_dataset(ds).encode("ascii")).hexdigest()


def train_test_split(ds: Dataset, test_fraction: float = 0.2):
    """Seeded 80/20 split derived from the dataset's own seed."""
    perm = np.random.default_rng([ds.seed, 17]).permutation(ds.n)
    n_test = int(round(ds.n * test_fraction))
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    train = Dataset(ds.kind, ds.seed, ds.noise, ds.inputs[train_idx], ds.targets[train_idx])
    test = Dataset(ds.kind, ds.seed, ds.noise, ds.inputs[test_idx], ds.targets[test_idx])
    return train, test


def make_batches(ds: Dataset, batch_size: int, seed: int, epoch: int) -> list[Batch]:
    """Seeded permutation of the dataset, cut into batches; the last may be short."""
    if batch_size < 1 or batch_size > ds.n:
        raise ConfigurationError(f"batch_size must be in [1, {ds.n}], got {batch_size}")
    perm = np.random.default_rng([seed, epoch]).permutation(ds.n)
    batches = []
    for start in range(0, ds.n, batch_size):
        idx = perm[start : start + batch_size]
        batches.append(Batch(ds.inputs[idx], ds.targets[idx], idx))
    return batches


def batches_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)

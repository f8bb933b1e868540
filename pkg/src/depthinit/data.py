"""Synthetic blobs and the CIFAR-10 binary batch format."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import CorruptFile, CorruptRecord, InvalidArgument

CIFAR_RECORD_BYTES = 1 + 3 * 32 * 32
CIFAR_CLASSES = 10


class Scaling(str, Enum):
    ZERO_ONE = "zero_one"
    STANDARDIZED = "standardized"
    RAW = "raw"


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    scaling: Scaling
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dims(self) -> int:
        return self.features.shape[1]


def apply_scaling(x: np.ndarray, scaling: Scaling | str) -> np.ndarray:
    scaling = Scaling(scaling)
    if scaling is Scaling.RAW:
        return x
    if scaling is Scaling.ZERO_ONE:
        lo, hi = x.min(axis=0), x.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        return np.clip((x - lo) / span, 0.0, 1.0)
    mu, sd = x.mean(axis=0), x.std(axis=0)
    return (x - mu) / np.where(sd > 0, sd, 1.0)


def gen_synthetic(seed: int, samples: int, dims: int, classes: int, separation: float,
                  scaling: Scaling | str = Scaling.ZERO_ONE) -> Dataset:
    """Gaussian blobs with unit within-class variance.

    Class means sit on mutually orthogonal directions at distance
    ``separation`` from each other, so ``dims >= classes`` is required.
    Labels cycle through the classes before shuffling, which keeps class
    counts within one of each other.
    """
    if classes < 2 or samples < classes or dims < classes:
        raise InvalidArgument(
            f"need classes >= 2, samples >= classes, dims >= classes; "
            f"got samples={samples}, dims={dims}, classes={classes}")
    if not separation >= 0:
        raise InvalidArgument(f"separation must be non-negative, got {separation}")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(dims, classes)))
    means = q.T * (separation / math.sqrt(2.0))
    labels = rng.permutation(np.arange(samples) % classes)
    x = means[labels] + rng.normal(size=(samples, dims))
    scaling = Scaling(scaling)
    return Dataset(
        features=apply_scaling(x, scaling),
        labels=labels.astype(np.int64),
        num_classes=classes,
        scaling=scaling,
        provenance={"source": "synthetic", "seed": seed, "samples": samples, "dims": dims,
                    "classes": classes, "separation": separation},
    )


def load_cifar10_binary(path: str | os.PathLike, limit: int | None = None) -> Dataset:
    """Read a CIFAR-10 ``data_batch_*.bin`` file, pixels scaled to [0, 1]."""
    if limit is not None and limit < 1:
        raise InvalidArgument(f"limit must be positive, got {limit}")
    size = os.path.getsize(path)
    if size % CIFAR_RECORD_BYTES:
        raise CorruptFile(f"{path}: size {size} is not a multiple of {CIFAR_RECORD_BYTES}")
    n = size // CIFAR_RECORD_BYTES
    if limit is not None:
        n = min(n, limit)
    raw = np.fromfile(path, dtype=np.uint8, count=n * CIFAR_RECORD_BYTES)
    raw = raw.reshape(n, CIFAR_RECORD_BYTES)
    labels = raw[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= CIFAR_CLASSES)
    if bad.size:
        raise CorruptRecord(f"{path}: record {bad[0]} has label byte {labels[bad[0]]}")
    return Dataset(
        features=raw[:, 1:].astype(np.float64) / 255.0,
        labels=labels,
        num_classes=CIFAR_CLASSES,
        scaling=Scaling.ZERO_ONE,
        provenance={"source": "cifar10", "path": os.fspath(path), "limit": limit, "records": n},
    )


def to_csv(dataset: Dataset, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(dataset.dims)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])

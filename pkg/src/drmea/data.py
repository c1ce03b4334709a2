"""Synthetic domain pairs, feature CSV I/O and class-balanced batch planning."""
from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RNG_ALGORITHM = "numpy.random.PCG64"


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray            # d x n
    labels: np.ndarray | None       # n class indices, or None when unlabelled
    n_classes: int
    domain_tag: str = "source"

    def __post_init__(self):
        if self.features.ndim != 2 or not np.all(np.isfinite(self.features)):
            raise DataError("features must be a finite 2-D matrix")
        if self.labels is not None:
            if self.labels.shape != (self.features.shape[1],):
                raise DataError(f"{self.labels.shape[0]} labels for {self.features.shape[1]} samples")
            if self.n_classes < 2:
                raise DataError("labelled datasets need at least 2 classes")
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
                raise DataError(f"labels must lie in 0..{self.n_classes - 1}")

    @property
    def d(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, np.asarray(labels, dtype=np.intp), self.n_classes, self.domain_tag)


def rotation_2d(degrees: float) -> np.ndarray:
    t = math.radians(degrees)
    return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])


def class_centres(c: int, dim: int, radius: float = 3.0) -> np.ndarray:
    """dim x c; class k at angle 2*pi*k/c on a circle in the first two coordinates."""
    ang = 2 * np.pi * np.arange(c) / c
    M = np.zeros((dim, c))
    M[0], M[1] = radius * np.cos(ang), radius * np.sin(ang)
    return M


def _shift_vector(shift, dim):
    if shift is None:
        return np.zeros(dim)
    s = np.atleast_1d(np.asarray(shift, dtype=np.float64))
    if s.size == 1:
        out = np.zeros(dim)
        out[0] = s[0]
        return out
    if s.size != dim:
        raise DataError(f"shift has {s.size} entries, expected 1 or {dim}")
    return s


def gen_rotated_gaussians(c: int = 3, dim: int = 16, n_per_class_source: int = 500,
                          n_per_class_target: int = 500, rotation_degrees: float = 45.0,
                          shift=0.5, noise_sigma: float = 0.8, seed: int = 0):
    """Isotropic Gaussian classes; the target is the source law rotated in the (x0, x1) plane, then shifted.

    Returns ``(source, target, target_labels)``; the target dataset carries no labels.
    """
    if c < 2 or dim < 2:
        raise DataError("need c >= 2 and dim >= 2")
    if n_per_class_source < 1 or n_per_class_target < 1 or noise_sigma < 0:
        raise DataError("sample counts must be positive and noise_sigma non-negative")
    rng = np.random.default_rng(seed)
    centres = class_centres(c, dim)
    shift_v = _shift_vector(shift, dim)

    def draw(n_per):
        y = np.repeat(np.arange(c), n_per)
        X = centres[:, y] + noise_sigma * rng.standard_normal((dim, y.size))
        return X, y

    Xs, ys = draw(n_per_class_source)
    Xt, yt = draw(n_per_class_target)
    Xt[:2] = rotation_2d(rotation_degrees) @ Xt[:2]
    Xt += shift_v[:, None]
    source = Dataset(Xs, ys, c, "source")
    target = Dataset(Xt, None, c, "target")
    return source, target, yt


def save_csv(dataset: Dataset, path, with_labels: bool = True) -> None:
    X = dataset.features
    with open(path, "w", newline="") as fh:
        for j in range(X.shape[1]):
            row = [format(v, ".17g") for v in X[:, j]]
            if with_labels and dataset.labels is not None:
                row.append(str(int(dataset.labels[j])))
            fh.write(",".join(row) + "\n")


def save_labels_csv(labels, path) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


def load_labels_csv(path) -> np.ndarray:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if line.strip():
            try:
                out.append(int(line.strip()))
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad label {line.strip()!r}") from None
    return np.asarray(out, dtype=np.intp)


def load_csv(path, has_labels: bool, n_classes: int | None = None, domain_tag: str = "source") -> Dataset:
    rows, labels = [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            if has_labels:
                *rec, lab = rec
                try:
                    labels.append(int(lab))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad label {lab!r}") from None
            if width is None:
                width = len(rec)
            elif len(rec) != width:
                raise DataError(f"{path}:{lineno}: expected {width} features, got {len(rec)}")
            try:
                rows.append([float(f) for f in rec])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not rows or not width:
        raise DataError(f"{path}: no samples")
    X = np.asarray(rows).T.copy()
    if not np.all(np.isfinite(X)):
        raise DataError(f"{path}: non-finite feature values")
    y = None
    if has_labels:
        y = np.asarray(labels, dtype=np.intp)
        if y.min() < 0:
            raise DataError(f"{path}: negative label")
        if n_classes is None:
            n_classes = int(y.max()) + 1
    return Dataset(X, y, n_classes or 0, domain_tag)


def write_metadata(path, records) -> None:
    """JSON-lines sidecar, one ``{n, d, c, domain_tag, seed, generator_params}`` record per dataset."""
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


@dataclass(frozen=True)
class BatchPlan:
    seed: int
    batch_size: int
    epochs: list   # per epoch: list of (source index array, target index array)


def _balanced_stream(labels, c, rng):
    members = [np.flatnonzero(labels == k) for k in range(c)]
    queues = [deque() for _ in range(c)]
    while True:
        for k in range(c):
            if not queues[k]:
                queues[k].extend(rng.permutation(members[k]).tolist())
            yield queues[k].popleft()


def _shuffled_stream(n, rng):
    while True:
        yield from rng.permutation(n).tolist()


def batch_sizes(n: int, batch_size: int, min_size: int) -> list[int]:
    """Split n into batch_size chunks; a tail smaller than min_size joins the previous batch."""
    sizes = [batch_size] * (n // batch_size)
    tail = n % batch_size
    if tail:
        if tail < min_size and sizes:
            sizes[-1] += tail
        else:
            sizes.append(tail)
    return sizes


def make_batch_plan(source: Dataset, target: Dataset, batch_size: int, epochs: int, seed: int) -> BatchPlan:
    """Per epoch, one pass over the smaller domain; the larger one keeps cycling across epochs.

    Source batches are filled round-robin from per-class shuffled queues, so every
    batch of at least c samples contains every class.
    """
    c = source.n_classes
    if source.labels is None:
        raise DataError("source dataset needs labels")
    if batch_size < max(c, 3):
        raise DataError(f"batch_size={batch_size} must be >= max(c={c}, 3)")
    if np.any(np.bincount(source.labels, minlength=c) == 0):
        raise DataError("every class needs at least one source sample")
    src_rng = np.random.default_rng([seed, 1])
    tgt_rng = np.random.default_rng([seed, 2])
    src = _balanced_stream(source.labels, c, src_rng)
    tgt = _shuffled_stream(target.n, tgt_rng)
    sizes = batch_sizes(min(source.n, target.n), batch_size, max(c, 3))
    plan = []
    for _ in range(epochs):
        ep = []
        for size in sizes:
            s = np.fromiter((next(src) for _ in range(size)), dtype=np.intp, count=size)
            t = np.fromiter((next(tgt) for _ in range(size)), dtype=np.intp, count=size)
            ep.append((s, t))
        plan.append(ep)
    return BatchPlan(seed, batch_size, plan)

"""Epoch-frozen source anchors: class-wise and total feature means for each manifold layer."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ManifoldNetwork, forward


@dataclass(frozen=True)
class LayerAnchors:
    class_means: np.ndarray  # d_l x c
    total_mean: np.ndarray   # d_l


@dataclass(frozen=True)
class AnchorStore:
    layers: tuple[LayerAnchors, ...]
    epoch_tag: int


def compute_anchors(net: ManifoldNetwork, source, batch_size: int = 256, epoch: int = 0,
                    max_samples: int | None = None) -> AnchorStore:
    """One tape-free forward pass over the labelled source set, in dataset order."""
    X = source.features
    y = np.asarray(source.labels, dtype=np.intp)
    if max_samples is not None:
        X, y = X[:, :max_samples], y[:max_samples]
    c = source.n_classes
    counts = np.bincount(y, minlength=c)
    if np.any(counts == 0):
        raise ValueError(f"source classes {np.flatnonzero(counts == 0).tolist()} have no samples")

    sums = [np.zeros((d, c)) for d in net.dims[1:-1]]
    for start in range(0, X.shape[1], batch_size):
        stop = start + batch_size
        onehot = np.zeros((y[start:stop].size, c))
        onehot[np.arange(onehot.shape[0]), y[start:stop]] = 1.0
        for acc, h in zip(sums, forward(net, X[:, start:stop]).h):
            acc += h @ onehot
    layers = tuple(
        LayerAnchors(class_means=s / counts, total_mean=s.sum(axis=1) / counts.sum())
        for s in sums
    )
    return AnchorStore(layers, epoch)


def refresh(store: AnchorStore | None, net: ManifoldNetwork, source, epoch: int,
            batch_size: int = 256, max_samples: int | None = None) -> AnchorStore:
    if store is not None and epoch <= store.epoch_tag:
        raise ValueError(f"anchor epoch must increase: {store.epoch_tag} -> {epoch}")
    return compute_anchors(net, source, batch_size, epoch, max_samples)


def save_anchors_csv(store: AnchorStore, path) -> None:
    """Rows ``layer,class,dim,value``; the total mean uses class ``total``."""
    lines = ["layer,class,dim,value"]
    for l, la in enumerate(store.layers, start=1):
        d, c = la.class_means.shape
        for k in range(c):
            lines += [f"{l},{k},{i},{la.class_means[i, k]:.17g}" for i in range(d)]
        lines += [f"{l},total,{i},{la.total_mean[i]:.17g}" for i in range(d)]
    Path(path).write_text("\n".join(lines) + "\n")

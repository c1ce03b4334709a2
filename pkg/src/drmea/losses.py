"""Objective terms: cross-entropy, inter-/intra-class similarity losses, Grassmannian alignment.

Each differentiable loss takes an optional ``tape``. With a tape the result is a
scalar :class:`~drmea.autodiff.Node`; without one it is a float. Anchors, the
top-k mask and (by default) the soft-label weights enter as constants.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import GAP_TOL, DegenerateSpectrumError, Node, Tape
from .numerics import as_matrix, sym_eig

EPS = 1e-12


class MissingClassError(ValueError):
    """A class has no sample in the batch, so its class-wise mean is undefined."""


def _finish(node: Node, own_tape: bool):
    return node.item() if own_tape else node


def _start(tape):
    return (Tape(), True) if tape is None else (tape, False)


def _value(x):
    return x.value if isinstance(x, Node) else as_matrix(x)


def class_mean_matrix(labels, n_classes: int) -> np.ndarray:
    """n x c matrix M with H @ M = class-wise means of the columns of H."""
    y = np.asarray(labels, dtype=np.intp)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"labels must lie in 0..{n_classes - 1}")
    counts = np.bincount(y, minlength=n_classes)
    if np.any(counts == 0):
        raise MissingClassError(f"classes {np.flatnonzero(counts == 0).tolist()} absent from batch")
    M = np.zeros((y.size, n_classes))
    M[np.arange(y.size), y] = 1.0 / counts[y]
    return M


def cross_entropy(logits, labels, tape: Tape | None = None):
    tape, own = _start(tape)
    return _finish(tape.cross_entropy_from_logits(logits, labels), own)


def inter_class_loss(H_s, labels, anchor_total_mean, n_classes: int, eps: float = EPS,
                     tape: Tape | None = None):
    """Mean pairwise cosine similarity of batch class means centred on the anchor total mean."""
    c = int(n_classes)
    if c < 2:
        raise ValueError("inter-class loss needs at least 2 classes")
    tape, own = _start(tape)
    M = class_mean_matrix(labels, c)
    mu = np.asarray(anchor_total_mean, dtype=np.float64).reshape(-1, 1)
    means = tape.matmul(H_s, M)
    centred = tape.add_bias(means, -mu)
    Hn = tape.normalize_columns(centred, eps)
    S = tape.matmul(tape.transpose(Hn), Hn)
    upper = np.triu(np.ones((c, c)), k=1)
    loss = tape.scale(tape.sum(tape.elementwise_mul(S, upper)), 2.0 / (c * (c - 1)))
    return _finish(loss, own)


@dataclass(frozen=True)
class TruncationMask:
    mask: np.ndarray  # c x n of {0, 1}
    k: int


def topk_mask(P, k: int) -> TruncationMask:
    """Mark the k largest entries of each column; ties go to the smaller class index."""
    P = _value(P)
    c = P.shape[0]
    if not 1 <= k <= c:
        raise ValueError(f"k={k} outside 1..{c}")
    order = np.argsort(-P, axis=0, kind="stable")[:k]
    mask = np.zeros_like(P)
    np.put_along_axis(mask, order, 1.0, axis=0)
    return TruncationMask(mask, k)


def _similarities(tape, H_t, anchor_class_means, eps):
    A = np.asarray(anchor_class_means, dtype=np.float64)
    if A.shape[0] != _value(H_t).shape[0]:
        raise ValueError(f"anchors have {A.shape[0]} rows, features have {_value(H_t).shape[0]}")
    An = A / np.maximum(np.linalg.norm(A, axis=0, keepdims=True), eps)
    return tape.matmul(An.T, tape.normalize_columns(H_t, eps))


def _check_probs(P, c, n):
    Pv = _value(P)
    if Pv.shape != (c, n):
        raise ValueError(f"soft labels have shape {Pv.shape}, expected {(c, n)}")
    if np.max(np.abs(Pv.sum(axis=0) - 1.0)) > 1e-8:
        raise ValueError("soft-label columns must sum to 1")
    return Pv


def intra_class_loss(H_t, P, anchor_class_means, k: int, eps: float = EPS,
                     tape: Tape | None = None, grad_through_probs: bool = False):
    """Top-k truncated, soft-label weighted similarity of target samples to source class anchors."""
    tape, own = _start(tape)
    S = _similarities(tape, H_t, anchor_class_means, eps)
    c, n = S.shape
    Pv = _check_probs(P, c, n)
    chi = topk_mask(Pv, k).mask
    if grad_through_probs and isinstance(P, Node):
        W = tape.elementwise_mul(P, chi)
    else:
        W = chi * Pv
    loss = tape.scale(tape.sum(tape.elementwise_mul(W, S)), -1.0 / (n * k))
    return _finish(loss, own)


def intra_class_loss_prob(H_t, P, anchor_class_means, eps: float = EPS,
                          tape: Tape | None = None, grad_through_probs: bool = False):
    """Untruncated variant: every class weighted by its soft label, prefactor 1/(n c)."""
    tape, own = _start(tape)
    S = _similarities(tape, H_t, anchor_class_means, eps)
    c, n = S.shape
    Pv = _check_probs(P, c, n)
    W = P if (grad_through_probs and isinstance(P, Node)) else Pv
    loss = tape.scale(tape.sum(tape.elementwise_mul(W, S)), -1.0 / (n * c))
    return _finish(loss, own)


def top_subspace(C, d_prime: int, gap_tol: float = GAP_TOL) -> np.ndarray:
    """Orthonormal basis (d x d') of the dominant eigenspace of symmetric ``C``."""
    eig = sym_eig(C)
    d = eig.values.size
    if not 1 <= d_prime <= d:
        raise ValueError(f"d_prime={d_prime} outside 1..{d}")
    if d_prime < d:
        gap = eig.values[d_prime - 1] - eig.values[d_prime]
        if not gap > gap_tol:
            raise DegenerateSpectrumError(float(gap), d_prime, gap_tol)
    return eig.vectors[:, :d_prime]


def grassmann_distance(C_s, C_t, d_prime: int, gap_tol: float = GAP_TOL) -> float:
    """(1/d^2) ||U_s U_s^T - U_t U_t^T||_F^2 over the top-d' eigenvectors."""
    C_s, C_t = as_matrix(C_s), as_matrix(C_t)
    if C_s.shape != C_t.shape or C_s.shape[0] != C_s.shape[1]:
        raise ValueError(f"need two square matrices of equal size, got {C_s.shape}, {C_t.shape}")
    d = C_s.shape[0]
    Us, Ut = top_subspace(C_s, d_prime, gap_tol), top_subspace(C_t, d_prime, gap_tol)
    D = Us @ Us.T - Ut @ Ut.T
    return float(np.sum(D * D) / d**2)


def alignment_loss(H_s, H_t, d_prime: int, tape: Tape | None = None, gap_tol: float = GAP_TOL):
    """Grassmannian distance between the batch covariances of two feature matrices."""
    tape, own = _start(tape)
    d = _value(H_s).shape[0]
    if _value(H_t).shape[0] != d:
        raise ValueError("source and target features differ in dimension")
    Ps = tape.subspace_projector(H_s, d_prime, gap_tol)
    Pt = tape.subspace_projector(H_t, d_prime, gap_tol)
    loss = tape.scale(tape.frobenius_sq(tape.sub(Ps, Pt)), 1.0 / d**2)
    return _finish(loss, own)


@dataclass
class LossBreakdown:
    ce: float
    inter: list = field(default_factory=list)
    intra: list = field(default_factory=list)
    align: list = field(default_factory=list)
    ds: float = 0.0
    al: float = 0.0
    total: float = 0.0


def total_objective(ce: float, inter, intra, align, lambda1: float, lambda2: float) -> LossBreakdown:
    inter, intra, align = list(map(float, inter)), list(map(float, intra)), list(map(float, align))
    ds = sum(inter) + sum(intra)
    al = sum(align)
    return LossBreakdown(float(ce), inter, intra, align, ds, al, float(ce) + lambda1 * ds + lambda2 * al)

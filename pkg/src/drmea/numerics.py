"""Dense float64 matrix helpers: covariance, symmetric eigendecomposition, column normalization.

Matrices are plain 2-D ``numpy.ndarray`` objects; column ``j`` is sample ``j``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateInputError(ValueError):
    """Input is well-formed but too small or degenerate for the operation."""


class NonFiniteError(ValueError):
    """An input matrix contains NaN or infinite entries."""


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate and convert to a finite 2-D float64 array (1-D input becomes a column)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D matrix, got ndim={a.ndim}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name}: empty matrix of shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name}: non-finite entries")
    return a


def covariance(X) -> np.ndarray:
    """Unbiased sample covariance of the columns of ``X`` (d x n -> d x d)."""
    X = as_matrix(X, "X")
    n = X.shape[1]
    if n < 2:
        raise DegenerateInputError(f"covariance needs at least 2 samples, got {n}")
    Xc = X - X.mean(axis=1, keepdims=True)
    C = (Xc @ Xc.T) / (n - 1)
    return 0.5 * (C + C.T)


@dataclass(frozen=True)
class SymEig:
    values: np.ndarray   # descending
    vectors: np.ndarray  # column i pairs with values[i]


def _fix_signs(V: np.ndarray) -> np.ndarray:
    # argmax returns the first index on ties
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.where(V[idx, np.arange(V.shape[1])] < 0, -1.0, 1.0)
    return V * signs


def sym_eig(A) -> SymEig:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    The input is symmetrized as (A + A^T)/2. Each eigenvector is sign-normalized
    so that its largest-magnitude entry is non-negative.
    """
    A = as_matrix(A, "A")
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"sym_eig needs a square matrix, got {A.shape}")
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    order = np.argsort(-w, kind="stable")
    return SymEig(values=w[order], vectors=_fix_signs(V[:, order]))


def normalize_columns(X, eps: float = 1e-12) -> np.ndarray:
    """Divide each column by max(||x_j||_2, eps)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    X = as_matrix(X, "X")
    return X / np.maximum(np.linalg.norm(X, axis=0, keepdims=True), eps)

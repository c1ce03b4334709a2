"""A small reverse-mode tape over float64 matrices.

Only the operations needed by the network and the losses are provided.
Every op accepts either a :class:`Node` or a plain array for each operand;
plain arrays are constants and never receive gradients (anchors, masks,
soft-label weights).
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .numerics import as_matrix, covariance, sym_eig

GAP_TOL = 1e-6


class DegenerateSpectrumError(ArithmeticError):
    """The eigen-gap at the requested subspace dimension is too small to differentiate."""

    def __init__(self, gap: float, d_prime: int, gap_tol: float = GAP_TOL):
        super().__init__(f"eigen-gap {gap:.3e} at d'={d_prime} is below gap_tol={gap_tol:.1e}")
        self.gap = gap
        self.d_prime = d_prime
        self.gap_tol = gap_tol


class Node:
    __slots__ = ("id", "value", "op", "parents", "aux", "backward_fn")

    def __init__(self, id, value, op, parents, backward_fn=None, aux=None):
        self.id = id
        self.value = value
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.aux = aux

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value[0, 0])

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.value.shape})"


def _val(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self.grads: dict[int, np.ndarray] = {}

    def _push(self, value, op, inputs=(), grad_fns=(), aux=None) -> Node:
        # keep only operands that are nodes; constants drop out of the graph
        parents, fns = [], []
        for x, fn in zip(inputs, grad_fns):
            if isinstance(x, Node):
                parents.append(x)
                fns.append(fn)

        def backward_fn(g):
            return [fn(g) for fn in fns]

        node = Node(len(self.nodes), value, op, parents, backward_fn, aux)
        self.nodes.append(node)
        return node

    # -- leaves ---------------------------------------------------------
    def leaf(self, value, name: str | None = None) -> Node:
        return self._push(as_matrix(value, name or "leaf").copy(), "leaf", aux=name)

    # -- linear ---------------------------------------------------------
    def matmul(self, a, b) -> Node:
        A, B = _val(a), _val(b)
        return self._push(A @ B, "matmul", (a, b), (lambda g: g @ B.T, lambda g: A.T @ g))

    def transpose(self, x) -> Node:
        return self._push(_val(x).T.copy(), "transpose", (x,), (lambda g: g.T,))

    def add(self, a, b) -> Node:
        A, B = _val(a), _val(b)
        if A.shape != B.shape:
            raise ValueError(f"add: shape mismatch {A.shape} vs {B.shape}")
        return self._push(A + B, "add", (a, b), (lambda g: g, lambda g: g))

    def sub(self, a, b) -> Node:
        A, B = _val(a), _val(b)
        if A.shape != B.shape:
            raise ValueError(f"sub: shape mismatch {A.shape} vs {B.shape}")
        return self._push(A - B, "sub", (a, b), (lambda g: g, lambda g: -g))

    def add_bias(self, x, b) -> Node:
        """Add a column vector (d x 1) to every column of x (d x n)."""
        X, Bv = _val(x), _val(b).reshape(-1, 1)
        if Bv.shape[0] != X.shape[0]:
            raise ValueError(f"add_bias: bias length {Bv.shape[0]} vs rows {X.shape[0]}")
        return self._push(X + Bv, "add_bias", (x, b),
                          (lambda g: g, lambda g: g.sum(axis=1, keepdims=True).reshape(_val(b).shape)))

    def scale(self, x, c: float) -> Node:
        c = float(c)
        return self._push(c * _val(x), "scale", (x,), (lambda g: c * g,))

    def elementwise_mul(self, a, b) -> Node:
        A, B = _val(a), _val(b)
        if A.shape != B.shape:
            raise ValueError(f"elementwise_mul: shape mismatch {A.shape} vs {B.shape}")
        return self._push(A * B, "elementwise_mul", (a, b), (lambda g: g * B, lambda g: g * A))

    def select_columns(self, x, index: Sequence[int]) -> Node:
        X = _val(x)
        idx = np.asarray(index, dtype=np.intp)

        def grad(g):
            out = np.zeros_like(X)
            np.add.at(out, (slice(None), idx), g)
            return out

        return self._push(X[:, idx], "select_columns", (x,), (grad,), aux=idx)

    # -- reductions -----------------------------------------------------
    def sum(self, x) -> Node:
        X = _val(x)
        return self._push(np.array([[X.sum()]]), "sum", (x,), (lambda g: np.full_like(X, g[0, 0]),))

    def frobenius_sq(self, x) -> Node:
        X = _val(x)
        return self._push(np.array([[np.sum(X * X)]]), "frobenius_sq", (x,), (lambda g: 2.0 * g[0, 0] * X,))

    # -- nonlinearities -------------------------------------------------
    def leaky_relu(self, x, alpha: float = 0.2) -> Node:
        X = _val(x)
        slope = np.where(X > 0, 1.0, alpha)
        return self._push(X * slope, "leaky_relu", (x,), (lambda g: g * slope,), aux=alpha)

    def tanh(self, x) -> Node:
        Y = np.tanh(_val(x))
        return self._push(Y, "tanh", (x,), (lambda g: g * (1.0 - Y * Y),))

    def softmax_columns(self, x) -> Node:
        S = _softmax(_val(x))
        return self._push(S, "softmax_columns", (x,),
                          (lambda g: S * (g - np.sum(g * S, axis=0, keepdims=True)),))

    def cross_entropy_from_logits(self, logits, labels: Sequence[int]) -> Node:
        """Mean over columns of -log softmax(logits)[label]."""
        Z = _val(logits)
        c, n = Z.shape
        y = np.asarray(labels, dtype=np.intp)
        if y.shape != (n,):
            raise ValueError(f"expected {n} labels, got shape {y.shape}")
        if y.min() < 0 or y.max() >= c:
            raise ValueError(f"labels must lie in 0..{c - 1}")
        logp = _log_softmax(Z)
        value = -logp[y, np.arange(n)].mean()
        onehot = np.zeros_like(Z)
        onehot[y, np.arange(n)] = 1.0
        dZ = (np.exp(logp) - onehot) / n
        return self._push(np.array([[value]]), "cross_entropy", (logits,), (lambda g: g[0, 0] * dZ,))

    def normalize_columns(self, x, eps: float = 1e-12) -> Node:
        X = _val(x)
        norms = np.linalg.norm(X, axis=0, keepdims=True)
        denom = np.maximum(norms, eps)
        Y = X / denom
        live = norms >= eps

        def grad(g):
            radial = Y * np.sum(Y * g, axis=0, keepdims=True)
            return np.where(live, (g - radial) / denom, g / eps)

        return self._push(Y, "normalize_columns", (x,), (grad,), aux=eps)

    def center_columns(self, x) -> Node:
        """Subtract the row means (the mean sample) from every column."""
        X = _val(x)
        return self._push(X - X.mean(axis=1, keepdims=True), "center_columns", (x,),
                          (lambda g: g - g.mean(axis=1, keepdims=True),))

    def covariance(self, x) -> Node:
        X = _val(x)
        n = X.shape[1]
        Xc = X - X.mean(axis=1, keepdims=True)
        return self._push(covariance(X), "covariance", (x,),
                          (lambda g: (g + g.T) @ Xc / (n - 1),))

    def subspace_projector(self, h, d_prime: int, gap_tol: float = GAP_TOL) -> Node:
        """U U^T for U the top-``d_prime`` eigenvectors of covariance(h)."""
        H = _val(h)
        d, n = H.shape
        if not 1 <= d_prime <= min(d, n - 1):
            raise ValueError(f"d_prime={d_prime} outside 1..min(d={d}, n-1={n - 1})")
        C = covariance(H)
        eig = sym_eig(C)
        lam, U = eig.values, eig.vectors
        if d_prime < d:
            gap = lam[d_prime - 1] - lam[d_prime]
            if not gap > gap_tol:
                raise DegenerateSpectrumError(float(gap), d_prime, gap_tol)
        top, rest = U[:, :d_prime], U[:, d_prime:]
        P = top @ top.T
        P = 0.5 * (P + P.T)
        Hc = H - H.mean(axis=1, keepdims=True)
        inv_gap = 1.0 / (lam[None, :d_prime] - lam[d_prime:, None])

        def grad(g):
            if d_prime == d:
                return np.zeros_like(H)
            coef = (rest.T @ (g + g.T) @ top) * inv_gap
            dC = rest @ coef @ top.T
            dC = 0.5 * (dC + dC.T)
            return 2.0 * dC @ Hc / (n - 1)

        return self._push(P, "subspace_projector", (h,), (grad,), aux=(lam, U, d_prime))

    # -- reverse pass ---------------------------------------------------
    def backward(self, root: Node) -> dict[int, np.ndarray]:
        if root.value.shape != (1, 1):
            raise ValueError(f"backward needs a scalar (1x1) root, got {root.value.shape}")
        grads = {root.id: np.ones((1, 1))}
        for node in reversed(self.nodes[: root.id + 1]):
            g = grads.get(node.id)
            if g is None or not node.parents:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if parent.id in grads:
                    grads[parent.id] = grads[parent.id] + pg
                else:
                    grads[parent.id] = pg
        self.grads = grads
        return grads

    def grad(self, node: Node) -> np.ndarray | None:
        return self.grads.get(node.id)


def backward(tape: Tape, root: Node) -> dict[int, np.ndarray]:
    return tape.backward(root)


def _log_softmax(Z: np.ndarray) -> np.ndarray:
    Zs = Z - Z.max(axis=0, keepdims=True)
    return Zs - np.log(np.exp(Zs).sum(axis=0, keepdims=True))


def _softmax(Z: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(Z))


def grad_check(f: Callable[[Tape, Node], Node], x0, step: float = 1e-6, order: int = 2) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(tape, x)`` must build a scalar node from the leaf ``x``. ``order`` selects the
    two-point (2) or four-point (4) central stencil.
    """
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    x0 = as_matrix(x0, "x0")
    tape = Tape()
    x = tape.leaf(x0)
    out = f(tape, x)
    tape.backward(out)
    g_ad = tape.grads.get(x.id, np.zeros_like(x0))

    def value_at(idx, h):
        xv = x0.copy()
        xv[idx] += h
        t = Tape()
        return f(t, t.leaf(xv)).item()

    g_fd = np.empty_like(x0)
    for idx in np.ndindex(*x0.shape):
        # use the representable perturbation, not the nominal step
        h = (x0[idx] + step) - x0[idx]
        if order == 2:
            g_fd[idx] = (value_at(idx, h) - value_at(idx, -h)) / (2 * h)
        else:
            g_fd[idx] = (8 * (value_at(idx, h) - value_at(idx, -h))
                         - (value_at(idx, 2 * h) - value_at(idx, -2 * h))) / (12 * h)
    denom = np.maximum(np.maximum(np.abs(g_ad), np.abs(g_fd)), 1e-8)
    return float(np.max(np.abs(g_ad - g_fd) / denom))

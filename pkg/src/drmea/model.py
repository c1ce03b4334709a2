"""Stage-2 network: fully connected manifold layers followed by a linear softmax classifier."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Node, Tape
from .numerics import as_matrix

MAGIC = "DRMEA-MODEL v1"
DEFAULT_ACTIVATIONS = (("leaky_relu", 0.2), ("tanh", None))


class ConfigError(ValueError):
    pass


def parse_activations(spec: str) -> tuple:
    """``"leaky_relu:0.2 tanh"`` -> ``(("leaky_relu", 0.2), ("tanh", None))``."""
    out = []
    for tok in spec.replace(",", " ").split():
        name, _, arg = tok.partition(":")
        if name == "leaky_relu":
            out.append((name, float(arg) if arg else 0.2))
        elif name == "tanh":
            if arg:
                raise ConfigError(f"tanh takes no argument: {tok!r}")
            out.append((name, None))
        else:
            raise ConfigError(f"unknown activation {name!r}")
    return tuple(out)


def format_activations(acts) -> str:
    return " ".join(name if arg is None else f"{name}:{arg!r}" for name, arg in acts)


@dataclass
class ManifoldNetwork:
    dims: tuple[int, ...]
    activations: tuple
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 2

    @property
    def n_classes(self) -> int:
        return self.dims[-1]

    def param_names(self) -> list[str]:
        names = []
        for i in range(1, self.n_layers + 1):
            names += [f"layer{i}.weight", f"layer{i}.bias"]
        return names + ["classifier.weight", "classifier.bias"]

    def copy(self) -> "ManifoldNetwork":
        return ManifoldNetwork(self.dims, self.activations, {k: v.copy() for k, v in self.params.items()})

    def bind(self, tape: Tape) -> dict[str, Node]:
        """Register every parameter as a leaf on ``tape``."""
        return {name: tape.leaf(self.params[name], name) for name in self.param_names()}


@dataclass
class ForwardPass:
    h: list        # post-activation features per manifold layer, each d_l x n
    logits: object
    probs: object


def _check_dims(dims, activations):
    dims = tuple(int(d) for d in dims)
    if len(dims) < 3 or any(d <= 0 for d in dims):
        raise ConfigError(f"dims must be >= 3 positive integers, got {dims}")
    if len(activations) != len(dims) - 2:
        raise ConfigError(f"{len(dims) - 2} manifold layers but {len(activations)} activations")
    return dims


def init_network(dims, activations=DEFAULT_ACTIVATIONS, seed: int = 0) -> ManifoldNetwork:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    dims = _check_dims(dims, activations)
    rng = np.random.default_rng(seed)
    net = ManifoldNetwork(dims, tuple(activations))
    shapes = list(zip(dims[:-1], dims[1:]))
    names = [f"layer{i}" for i in range(1, len(shapes))] + ["classifier"]
    for name, (d_in, d_out) in zip(names, shapes):
        bound = np.sqrt(6.0 / (d_in + d_out))
        net.params[f"{name}.weight"] = rng.uniform(-bound, bound, size=(d_out, d_in))
        net.params[f"{name}.bias"] = np.zeros((d_out, 1))
    return net


def _activate(tape: Tape, z, act):
    name, arg = act
    if name == "leaky_relu":
        return tape.leaky_relu(z, arg)
    return tape.tanh(z)


def forward(net: ManifoldNetwork, X, tape: Tape | None = None, params: dict | None = None) -> ForwardPass:
    """Run the network on the columns of ``X``.

    With a tape, outputs are nodes (``params`` from ``net.bind(tape)`` lets several
    forward passes share one set of parameter leaves). Without one, plain arrays.
    """
    keep_nodes = tape is not None
    if isinstance(X, Node):
        x = X
        d_in = X.shape[0]
    else:
        x = as_matrix(X, "X")
        d_in = x.shape[0]
    if d_in != net.dims[0]:
        raise ValueError(f"input has {d_in} rows, network expects {net.dims[0]}")
    if tape is None:
        tape = Tape()
        params = None
    if params is None:
        params = net.bind(tape)

    hs = []
    h = x
    for i, act in enumerate(net.activations, start=1):
        z = tape.add_bias(tape.matmul(params[f"layer{i}.weight"], h), params[f"layer{i}.bias"])
        h = _activate(tape, z, act)
        hs.append(h)
    logits = tape.add_bias(tape.matmul(params["classifier.weight"], h), params["classifier.bias"])
    probs = tape.softmax_columns(logits)
    if keep_nodes:
        return ForwardPass(hs, logits, probs)
    return ForwardPass([n.value for n in hs], logits.value, probs.value)


def predict(net: ManifoldNetwork, X) -> np.ndarray:
    return np.argmax(forward(net, X).logits, axis=0)


def save_model(net: ManifoldNetwork, path) -> None:
    lines = [MAGIC, " ".join(str(d) for d in net.dims), format_activations(net.activations)]
    for name in net.param_names():
        p = net.params[name]
        entries = " ".join(format(v, ".17g") for v in p.ravel(order="C"))
        lines.append(f"{name} {p.shape[0]}x{p.shape[1]} {entries}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> ManifoldNetwork:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != MAGIC:
        raise ValueError(f"{path}: not a {MAGIC} file")
    dims = tuple(int(t) for t in text[1].split())
    acts = parse_activations(text[2])
    net = ManifoldNetwork(_check_dims(dims, acts), acts)
    for lineno, line in enumerate(text[3:], start=4):
        if not line.strip():
            continue
        name, shape, *entries = line.split()
        r, c = (int(t) for t in shape.split("x"))
        if len(entries) != r * c:
            raise ValueError(f"{path}:{lineno}: {name} expects {r * c} entries, got {len(entries)}")
        net.params[name] = np.array([float(e) for e in entries]).reshape(r, c)
    missing = set(net.param_names()) - set(net.params)
    if missing:
        raise ValueError(f"{path}: missing parameters {sorted(missing)}")
    return net

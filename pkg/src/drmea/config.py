"""Run configuration and its flat ``key = value`` text format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Tuple

from .model import ConfigError, parse_activations


@dataclass
class RunConfig:
    dims: Optional[Tuple[int, ...]] = None      # None: (d_in, 64, 32, c) from the data
    activations: str = "leaky_relu:0.2 tanh"
    lambda1: float = 10.0
    lambda2: float = 5000.0
    k: int = 1
    d_prime: Optional[int] = None               # None: batch_size - 1
    optimizer: str = "adam"
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    momentum: float = 0.9
    weight_decay: float = 5e-4
    sched_alpha: float = 10.0
    sched_beta: float = 0.75
    batch_size: int = 50
    epochs: int = 60
    intra_start_epoch: Optional[int] = None     # None: 15, or epochs // 4 when epochs < 30
    use_intra: bool = True
    intra_grad_through_probs: bool = False
    seed: int = 0
    eps: float = 1e-12
    gap_tol: float = 1e-6
    anchor_max_samples: Optional[int] = None

    def validate(self, n_classes: int | None = None) -> "RunConfig":
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.batch_size < 3:
            raise ConfigError("batch_size must be >= 3")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.intra_start_epoch is not None and self.intra_start_epoch < 0:
            raise ConfigError("intra_start_epoch must be >= 0")
        if self.d_prime is not None and self.d_prime < 1:
            raise ConfigError("d_prime must be >= 1")
        if self.k < 1 or (n_classes is not None and self.k > n_classes):
            raise ConfigError(f"k must lie in 1..c, got {self.k}")
        if n_classes is not None and self.batch_size < n_classes:
            raise ConfigError(f"batch_size={self.batch_size} < number of classes {n_classes}")
        if self.lr <= 0 or self.eps <= 0 or self.gap_tol <= 0:
            raise ConfigError("lr, eps and gap_tol must be positive")
        parse_activations(self.activations)
        return self

    def resolved(self, d_in: int, n_classes: int) -> "RunConfig":
        """Copy with every data-dependent default filled in."""
        acts = parse_activations(self.activations)
        dims = self.dims
        if dims is None:
            dims = (d_in, *[max(64 >> i, 2) for i in range(len(acts))], n_classes)
        dims = tuple(int(d) for d in dims)
        if dims[0] != d_in or dims[-1] != n_classes:
            raise ConfigError(f"dims {dims} inconsistent with data (d_in={d_in}, c={n_classes})")
        if len(dims) != len(acts) + 2:
            raise ConfigError(f"dims {dims} need {len(dims) - 2} activations, got {len(acts)}")
        start = self.intra_start_epoch
        if start is None:
            start = 15 if self.epochs >= 30 else self.epochs // 4
        dp = self.d_prime if self.d_prime is not None else self.batch_size - 1
        return dataclasses.replace(self, dims=dims, intra_start_epoch=start, d_prime=dp).validate(n_classes)


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return " ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))


_TYPES = {
    "dims": "dims", "activations": str, "optimizer": str,
    "k": int, "d_prime": int, "batch_size": int, "epochs": int, "intra_start_epoch": int,
    "seed": int, "anchor_max_samples": int,
    "use_intra": bool, "intra_grad_through_probs": bool,
}


def _parse_value(key, raw):
    kind = _TYPES.get(key, float)
    if raw.lower() == "none":
        if key in ("dims", "d_prime", "intra_start_epoch", "anchor_max_samples"):
            return None
        raise ConfigError(f"{key} cannot be none")
    try:
        if kind == "dims":
            return tuple(int(t) for t in raw.replace(",", " ").split())
        if kind is bool:
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    return dataclasses.replace(base or RunConfig(), **values).validate()


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())

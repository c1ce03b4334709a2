"""Training loop: forward both domains on one tape, combine the objective terms, step the optimizer."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import anchors as anchors_mod
from .autodiff import DegenerateSpectrumError, Tape
from .config import RunConfig, format_config
from .data import RNG_ALGORITHM, Dataset, make_batch_plan
from .losses import alignment_loss, inter_class_loss, intra_class_loss, total_objective
from .model import forward, init_network, parse_activations, save_model
from .numerics import NonFiniteError
from .optim import OptimizerState, adam_step, sgd_momentum_step

log = logging.getLogger(__name__)

EPOCH_COLUMNS = ("epoch", "ce", "inter", "intra", "align", "ds", "al", "total",
                 "src_acc", "tgt_acc", "tgt_mean_class_acc", "align_skips")


class NumericalAbort(ArithmeticError):
    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown


@dataclass
class EvalResult:
    accuracy: float
    per_class: list
    mean_class: float


@dataclass
class EpochLog:
    epoch: int
    ce: float
    inter: float
    intra: float
    align: float
    ds: float
    al: float
    total: float
    src_acc: float
    tgt_acc: float
    tgt_mean_class_acc: float
    align_skips: int
    tgt_per_class: list = field(default_factory=list)

    def csv_row(self) -> str:
        vals = [getattr(self, c) for c in EPOCH_COLUMNS]
        return ",".join(str(v) if isinstance(v, int) else format(v, ".17g") for v in vals)


@dataclass
class TrainResult:
    net: object
    logs: list
    config: RunConfig
    anchor_refreshes: int


def evaluate(net, dataset: Dataset, labels=None) -> EvalResult:
    """Accuracy of argmax predictions, per class and averaged over classes."""
    y = dataset.labels if labels is None else np.asarray(labels, dtype=np.intp)
    if y is None:
        raise ValueError("evaluation needs labels")
    pred = np.argmax(forward(net, dataset.features).logits, axis=0)
    hit = pred == y
    per_class = [float(hit[y == k].mean()) if np.any(y == k) else math.nan
                 for k in range(dataset.n_classes or net.n_classes)]
    return EvalResult(float(hit.mean()), per_class, float(np.nanmean(per_class)))


def _layer_dprime(cfg, d_layer, n_s, n_t):
    return max(1, min(cfg.d_prime, d_layer - 1, n_s - 1, n_t - 1))


def batch_objective(net, params, tape, cfg: RunConfig, store, xs, ys, xt, c, with_intra: bool):
    """Build the total objective for one source/target batch pair.

    Returns ``(total_node, breakdown, skipped)`` where ``skipped`` flags an alignment
    term dropped because of a degenerate spectrum.
    """
    fs = forward(net, xs, tape, params)
    ft = forward(net, xt, tape, params)
    ce = tape.cross_entropy_from_logits(fs.logits, ys)
    terms = [ce]
    inter, intra, align = [], [], []

    if cfg.lambda1 > 0:
        for h, la in zip(fs.h, store.layers):
            inter.append(inter_class_loss(h, ys, la.total_mean, c, cfg.eps, tape))
        if with_intra:
            for h, la in zip(ft.h, store.layers):
                intra.append(intra_class_loss(h, ft.probs, la.class_means, cfg.k, cfg.eps, tape,
                                              cfg.intra_grad_through_probs))
        for node in inter + intra:
            terms.append(tape.scale(node, cfg.lambda1))

    skipped = False
    if cfg.lambda2 > 0:
        try:
            for hs, ht in zip(fs.h, ft.h):
                dp = _layer_dprime(cfg, hs.shape[0], hs.shape[1], ht.shape[1])
                align.append(alignment_loss(hs, ht, dp, tape, cfg.gap_tol))
        except DegenerateSpectrumError as exc:
            log.debug("alignment skipped: %s", exc)
            align, skipped = [], True
        for node in align:
            terms.append(tape.scale(node, cfg.lambda2))

    total = terms[0]
    for t in terms[1:]:
        total = tape.add(total, t)
    bd = total_objective(ce.item(), [n.item() for n in inter], [n.item() for n in intra],
                         [n.item() for n in align], cfg.lambda1, cfg.lambda2)
    return total, bd, skipped


def train(config: RunConfig, source: Dataset, target: Dataset, run_dir=None, target_labels=None) -> TrainResult:
    c = source.n_classes
    if source.labels is None:
        raise ValueError("source dataset needs labels")
    if target.d != source.d:
        raise ValueError(f"source has {source.d} features, target has {target.d}")
    cfg = config.resolved(source.d, c)
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.resolved").write_text(format_config(cfg) + f"rng = {RNG_ALGORITHM}\n")

    net = init_network(cfg.dims, parse_activations(cfg.activations), cfg.seed)
    plan = make_batch_plan(source, target, cfg.batch_size, cfg.epochs, cfg.seed)
    total_steps = sum(len(ep) for ep in plan.epochs)
    state = OptimizerState()
    eval_target = target if target_labels is None else target.with_labels(target_labels)

    def new_anchors(prev, epoch):
        store = anchors_mod.refresh(prev, net, source, epoch, cfg.batch_size, cfg.anchor_max_samples)
        if run_dir is not None:
            anchors_mod.save_anchors_csv(store, run_dir / f"anchors_epoch_{epoch}.csv")
        return store

    store = new_anchors(None, 0)
    refreshes = 1
    logs = []
    step = 0
    for e, batches in enumerate(plan.epochs):
        with_intra = cfg.use_intra and e >= cfg.intra_start_epoch
        sums = np.zeros(7)
        skips = 0
        for s_idx, t_idx in batches:
            tape = Tape()
            params = net.bind(tape)
            try:
                total, bd, skipped = batch_objective(
                    net, params, tape, cfg, store, source.features[:, s_idx], source.labels[s_idx],
                    target.features[:, t_idx], c, with_intra)
            except NonFiniteError as exc:
                raise NumericalAbort(f"non-finite intermediate at epoch {e + 1}, step {step}: {exc}") from exc
            skips += skipped
            if not math.isfinite(bd.total):
                raise NumericalAbort(f"non-finite objective at epoch {e + 1}, step {step}: {bd}", bd)
            tape.backward(total)
            grads = {k: tape.grads[n.id] for k, n in params.items()}
            if cfg.optimizer == "adam":
                net.params, state = adam_step(net.params, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_opt)
            else:
                net.params, state = sgd_momentum_step(net.params, grads, state, step / max(total_steps - 1, 1),
                                                      cfg.lr, cfg.momentum, cfg.weight_decay,
                                                      cfg.sched_alpha, cfg.sched_beta)
            step += 1
            sums += [bd.ce, sum(bd.inter), sum(bd.intra), sum(bd.align), bd.ds, bd.al, bd.total]

        means = sums / len(batches)
        src = evaluate(net, source)
        if eval_target.labels is not None:
            tgt = evaluate(net, eval_target)
        else:
            tgt = EvalResult(math.nan, [math.nan] * c, math.nan)
        entry = EpochLog(e + 1, *map(float, means), src.accuracy, tgt.accuracy, tgt.mean_class, skips,
                         tgt.per_class)
        logs.append(entry)
        log.info("epoch %d total=%.4f ce=%.4f src=%.3f tgt=%.3f skips=%d",
                 e + 1, entry.total, entry.ce, entry.src_acc, entry.tgt_acc, skips)
        store = new_anchors(store, e + 1)
        refreshes += 1
        if run_dir is not None:
            write_epochs_csv(logs, run_dir / "epochs.csv")

    if run_dir is not None:
        save_model(net, run_dir / "model_final")
    return TrainResult(net, logs, cfg, refreshes)


def write_epochs_csv(logs, path) -> None:
    Path(path).write_text(",".join(EPOCH_COLUMNS) + "\n" + "".join(l.csv_row() + "\n" for l in logs))


def read_epochs_csv(path) -> list[dict]:
    lines = [l for l in Path(path).read_text().splitlines() if l.strip()]
    if len(lines) < 2:
        raise ValueError(f"{path}: no epoch rows")
    header = lines[0].split(",")
    return [dict(zip(header, map(float, l.split(",")))) for l in lines[1:]]

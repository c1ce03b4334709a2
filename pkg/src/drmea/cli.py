"""Command-line entry point: ``drmea {gen-data,train,eval,analyze-dprime,report}``.

Exit codes: 0 ok, 2 configuration error, 3 I/O or data error, 4 numerical abort.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path


from . import bound, data
from .config import RunConfig, load_config
from .model import ConfigError, load_model
from .svg import line_chart
from .trainer import NumericalAbort, evaluate, read_epochs_csv, train

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 2, 3, 4

ABLATIONS = {
    "none": {},
    "no-ds": {"lambda1": 0.0, "use_intra": False},
    "no-al": {"lambda2": 0.0},
    "source-only": {"lambda1": 0.0, "lambda2": 0.0, "use_intra": False},
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: error: {message}", EXIT_CONFIG)


def _shift_arg(text):
    try:
        vals = [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shift {text!r}") from None
    return vals[0] if len(vals) == 1 else vals


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="drmea", description=__doc__, formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic rotated-Gaussian domain pair", formatter_class=fmt)
    g.add_argument("--classes", type=int, default=3, help="number of classes")
    g.add_argument("--dim", type=int, default=16, help="feature dimension")
    g.add_argument("--n-source", type=int, default=500, help="source samples per class")
    g.add_argument("--n-target", type=int, default=500, help="target samples per class")
    g.add_argument("--rotation", type=float, default=45.0, help="target rotation in degrees")
    g.add_argument("--shift", type=_shift_arg, default=0.5,
                   help="target translation: scalar (first axis) or comma-separated vector")
    g.add_argument("--noise", type=float, default=0.8, help="isotropic noise sigma")
    g.add_argument("--seed", type=int, default=0, help="random seed")
    g.add_argument("--out", required=True, help="output directory")

    t = sub.add_parser("train", help="train a network on a domain pair", formatter_class=fmt)
    t.add_argument("--config", default=None, help="key = value config file (defaults if omitted)")
    t.add_argument("--data", default=None, help="directory in gen-data layout")
    t.add_argument("--source", default=None, help="labelled source CSV (overrides --data)")
    t.add_argument("--target", default=None, help="unlabelled target CSV (overrides --data)")
    t.add_argument("--target-labels", default=None, help="held-out target labels for evaluation")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--ablation", choices=sorted(ABLATIONS), default="none", help="loss ablation")
    t.add_argument("--seed", type=int, default=None, help="override the config seed")

    e = sub.add_parser("eval", help="evaluate a saved model on labelled features", formatter_class=fmt)
    e.add_argument("--model", required=True, help="model file (DRMEA-MODEL v1)")
    e.add_argument("--data", required=True, help="feature CSV")
    e.add_argument("--labels", default=None, help="separate label file; otherwise the CSV's last column")

    a = sub.add_parser("analyze-dprime", help="error-index curve over the subspace dimension", formatter_class=fmt)
    a.add_argument("--source", required=True, help="source feature CSV")
    a.add_argument("--target", required=True, help="target feature CSV")
    a.add_argument("--source-has-labels", action=argparse.BooleanOptionalAction, default=True,
                   help="source CSV ends with a label column")
    a.add_argument("--target-has-labels", action=argparse.BooleanOptionalAction, default=False,
                   help="target CSV ends with a label column")
    a.add_argument("--batch-size", type=int, default=32, help="batch size b_s")
    a.add_argument("--trials", type=int, default=20, help="random batches averaged per domain")
    a.add_argument("--delta", type=float, default=0.05, help="confidence parameter of the bound")
    a.add_argument("--seed", type=int, default=0, help="random seed")
    a.add_argument("--out", required=True, help="output directory")

    r = sub.add_parser("report", help="render curves and a summary from a run directory", formatter_class=fmt)
    r.add_argument("--run", required=True, help="run directory containing epochs.csv")
    r.add_argument("--out", required=True, help="output directory")
    return p


def _mkdir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_gen_data(args):
    try:
        src, tgt, yt = data.gen_rotated_gaussians(args.classes, args.dim, args.n_source, args.n_target,
                                                  args.rotation, args.shift, args.noise, args.seed)
    except data.DataError as exc:
        raise ConfigError(str(exc)) from None
    out = _mkdir(args.out)
    data.save_csv(src, out / "source.csv")
    data.save_csv(tgt, out / "target.csv", with_labels=False)
    data.save_labels_csv(yt, out / "target_labels.csv")
    params = {"classes": args.classes, "dim": args.dim, "n_source_per_class": args.n_source,
              "n_target_per_class": args.n_target, "rotation": args.rotation, "shift": args.shift,
              "noise": args.noise, "rng": data.RNG_ALGORITHM}
    data.write_metadata(out / "metadata.jsonl", [
        {"n": ds.n, "d": ds.d, "c": args.classes, "domain_tag": ds.domain_tag, "seed": args.seed,
         "generator_params": params}
        for ds in (src, tgt)
    ])
    print(f"wrote {src.n} source and {tgt.n} target samples to {out}")


def _train_inputs(args):
    base = Path(args.data) if args.data else None
    src_path = args.source or (base / "source.csv" if base else None)
    tgt_path = args.target or (base / "target.csv" if base else None)
    if src_path is None or tgt_path is None:
        raise CliError("train needs --data or both --source and --target", EXIT_CONFIG)
    lab_path = args.target_labels
    if lab_path is None and base is not None and (base / "target_labels.csv").exists():
        lab_path = base / "target_labels.csv"
    source = data.load_csv(src_path, has_labels=True)
    target = data.load_csv(tgt_path, has_labels=False, n_classes=source.n_classes, domain_tag="target")
    labels = data.load_labels_csv(lab_path) if lab_path else None
    if labels is not None and labels.size != target.n:
        raise data.DataError(f"{lab_path}: {labels.size} labels for {target.n} target samples")
    return source, target, labels


def cmd_train(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = dict(ABLATIONS[args.ablation])
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = dataclasses.replace(cfg, **overrides)
    source, target, labels = _train_inputs(args)
    out = _mkdir(args.out)
    (out / "run.json").write_text(json.dumps({"ablation": args.ablation, "rng": data.RNG_ALGORITHM},
                                             sort_keys=True) + "\n")
    result = train(cfg, source, target, out, target_labels=labels)
    last = result.logs[-1]
    print(f"ablation={args.ablation} epochs={len(result.logs)} src_acc={last.src_acc:.4f} "
          f"tgt_acc={last.tgt_acc:.4f} tgt_mean_class_acc={last.tgt_mean_class_acc:.4f}")


def cmd_eval(args):
    net = load_model(args.model)
    if args.labels:
        ds = data.load_csv(args.data, has_labels=False, n_classes=net.n_classes)
        ds = ds.with_labels(data.load_labels_csv(args.labels))
    else:
        ds = data.load_csv(args.data, has_labels=True, n_classes=net.n_classes)
    res = evaluate(net, ds)
    print(f"accuracy={res.accuracy:.17g}")
    print(f"mean_class_accuracy={res.mean_class:.17g}")
    for k, acc in enumerate(res.per_class):
        print(f"class_{k}_accuracy={acc:.17g}")


def cmd_analyze_dprime(args):
    src = data.load_csv(args.source, has_labels=args.source_has_labels)
    tgt = data.load_csv(args.target, has_labels=args.target_has_labels, domain_tag="target")
    if not 0 < args.delta < 1:
        raise ConfigError("--delta must lie in (0, 1)")
    if args.batch_size < 3 or args.trials < 1:
        raise ConfigError("--batch-size must be >= 3 and --trials >= 1")
    if src.n < args.batch_size or tgt.n < args.batch_size:
        raise data.DataError(f"need at least {args.batch_size} samples per domain")
    best, curve = bound.recommend_dprime(src.features, tgt.features, args.batch_size, args.trials, args.seed)
    out = _mkdir(args.out)
    rows = ["d_prime,mean_error_index,mean_gap_s,mean_gap_t"]
    rows += [f"{dp},{e:.17g},{gs:.17g},{gt:.17g}" for dp, e, gs, gt in curve]
    (out / "dprime_curve.csv").write_text("\n".join(rows) + "\n")
    e_best = curve[best - 1][1]
    e_last = curve[-1][1]
    B = bound.max_column_norm(src.features, tgt.features)
    E = bound.e_delta(B, args.batch_size, args.delta)
    record = (f"recommended_d_prime={best} batch_size={args.batch_size} error_index={e_best:.17g} "
              f"error_index_bs_minus_1={e_last:.17g} bound={2 * math.sqrt(2) * E * e_best:.17g} "
              f"delta={args.delta!r} B={B:.17g}")
    (out / "recommendation.txt").write_text(record + "\n")
    xs = [r[0] for r in curve]
    chart = line_chart({"mean e(d')": (xs, [r[1] for r in curve])},
                       title="Error index vs subspace dimension", xlabel="d'", ylabel="e(d')",
                       vlines={f"b_s-1 = {args.batch_size - 1}": args.batch_size - 1})
    (out / "dprime_curve.svg").write_text(chart)
    print(record)


def cmd_report(args):
    path = Path(args.run) / "epochs.csv"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    try:
        rows = read_epochs_csv(path)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_IO) from None
    out = _mkdir(args.out)
    ep = [r["epoch"] for r in rows]
    losses = {k: (ep, [r[k] for r in rows]) for k in ("total", "ce", "ds", "al")}
    accs = {k: (ep, [r[k] for r in rows]) for k in ("src_acc", "tgt_acc", "tgt_mean_class_acc")}
    (out / "loss_curve.svg").write_text(line_chart(losses, "Objective per epoch", "epoch", "loss"))
    (out / "accuracy_curve.svg").write_text(line_chart(accs, "Recognition rate per epoch", "epoch", "accuracy"))
    ablation = "unknown"
    meta = Path(args.run) / "run.json"
    if meta.exists():
        ablation = json.loads(meta.read_text()).get("ablation", "unknown")
    last = rows[-1]
    best_tgt = max((r["tgt_acc"] for r in rows if not math.isnan(r["tgt_acc"])), default=math.nan)
    summary = (f"run: {args.run}\nablation: {ablation}\nepochs: {len(rows)}\n"
               f"final_src_acc: {last['src_acc']:.4f}\nfinal_tgt_acc: {last['tgt_acc']:.4f}\n"
               f"final_tgt_mean_class_acc: {last['tgt_mean_class_acc']:.4f}\n"
               f"best_tgt_acc: {best_tgt:.4f}\nfinal_total_loss: {last['total']:.6g}\n"
               f"align_skips: {int(sum(r['align_skips'] for r in rows))}\n")
    (out / "summary.txt").write_text(summary)
    print(summary, end="")


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "analyze-dprime": cmd_analyze_dprime, "report": cmd_report}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, data.DataError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())

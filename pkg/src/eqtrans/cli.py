"""Command-line entry point: ``eqtrans <command> [flags]``.

Exit status: 0 success, 1 usage or validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .analysis import PROBE_FORM, OrbitTracker, audit_equivariance, plot_orbits, probe_set, theoretical_orbits
from .scan import PERCENTS, SPLIT_FILES, DataError, builtin_lexicon, find_split, load_split, read_pairs
from .training import TrainConfig, random_search, read_config, run_low_data, train, write_config
from .transducer import DecodeError, HardAlignmentModel, ModelDims, decode_beam, sequence_accuracy


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p, *names):
    if "config" in names:
        p.add_argument("--config", type=Path, help="key = value training config file")
    if "seed" in names:
        p.add_argument("--seed", type=int, help="random seed (default 0)")
    if "precision" in names:
        p.add_argument("--precision", choices=["f32", "f64"], help="float precision (default f32)")
    if "split" in names:
        p.add_argument("--split", choices=sorted(SPLIT_FILES), help="SCAN split")
    if "data" in names:
        p.add_argument("--data-dir", type=Path, help="directory holding the SCAN split files")
    if "variant" in names:
        p.add_argument("--variant", choices=["sum", "max", "annealed"], help="alignment marginalization")
    if "beam" in names:
        p.add_argument("--beam", type=int, default=3, help="beam width (default 3)")
    if "out" in names:
        p.add_argument("--out", type=Path, help="output directory")
    if "ckpt" in names:
        p.add_argument("--ckpt", type=Path, help="model checkpoint")
    if "epochs" in names:
        p.add_argument("--epochs", type=int, help="maximum number of epochs")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="eqtrans", description="Equivariant hard-alignment transducer for SCAN.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one model and report test accuracy")
    _common(p, "config", "seed", "precision", "split", "data", "variant", "out", "epochs", "beam")
    p.add_argument("--percent", type=int, help="low-data percentage (trains on the Simple train subset)")

    p = sub.add_parser("eval", help="sequence accuracy of a checkpoint on a split's test set")
    _common(p, "ckpt", "split", "data", "beam", "precision")

    p = sub.add_parser("decode", help="decode one command")
    _common(p, "ckpt", "beam", "precision")
    p.add_argument("--input", required=True, help='space-separated command, e.g. "jump twice"')

    p = sub.add_parser("search", help="random hyperparameter search")
    _common(p, "config", "seed", "precision", "split", "data", "variant", "out", "epochs")
    p.add_argument("--trials", type=int, default=10, help="number of sampled configurations")

    p = sub.add_parser("low-data", help="train on percent-subsets of Simple and report test accuracy")
    _common(p, "config", "seed", "precision", "data", "variant", "out", "epochs", "beam")
    p.add_argument("--percent", type=int, action="append", help=f"percentages from {PERCENTS} (repeatable)")
    p.add_argument("--seeds", type=int, default=1, help="number of seeds per percentage")

    p = sub.add_parser("audit", help="equivariance/invariance audit at float64")
    _common(p, "ckpt", "seed", "split", "data")
    p.add_argument("--pairs", type=int, default=20, help="number of sampled test pairs")
    p.add_argument("--tolerance", type=float, default=1e-9)

    p = sub.add_parser("orbit-track", help="train while recording observed orbits of a probe set")
    _common(p, "config", "seed", "precision", "split", "data", "variant", "out", "epochs")
    p.add_argument("--every", type=int, default=5, help="record every k epochs (default 5)")
    p.add_argument("--x-form", default=PROBE_FORM[0])
    p.add_argument("--y-form", default=PROBE_FORM[1])

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients at float64")
    _common(p, "seed")
    p.add_argument("--pairs", type=int, default=2)

    p = sub.add_parser("data-info", help="print vocabularies, lexical classes and split sizes")
    _common(p, "data")
    return ap


def _config(args) -> TrainConfig:
    overrides = {
        "seed": getattr(args, "seed", None),
        "precision": getattr(args, "precision", None),
        "split": getattr(args, "split", None),
        "data_dir": str(args.data_dir) if getattr(args, "data_dir", None) else None,
        "variant": getattr(args, "variant", None),
        "epochs": getattr(args, "epochs", None),
        "beam": getattr(args, "beam", None),
    }
    if args.config:
        return read_config(args.config, **overrides)
    return TrainConfig(**{k: v for k, v in overrides.items() if v is not None})


def _load(args) -> HardAlignmentModel:
    if not args.ckpt:
        raise UsageError("--ckpt is required")
    return HardAlignmentModel.load(args.ckpt)


def cmd_train(args):
    config = _config(args)
    if args.percent:
        config = replace(config, split="low_data", percent=args.percent)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        write_config(config, args.out / "config.cfg")
    report = train(config, args.out)
    print(report.summary())


def cmd_eval(args):
    with ad.precision(args.precision or "f32"):
        model = _load(args)
        spec = find_split(args.split or "simple", args.data_dir or "data")
        source, target, _ = builtin_lexicon(spec.group)
        test = read_pairs(spec.test_path, source, target)
        acc = sequence_accuracy(model, test, args.beam)
    print(f"accuracy {100 * acc:.2f} ({len(test)} pairs, split {spec.name}, beam {args.beam})")


def cmd_decode(args):
    with ad.precision(args.precision or "f32"):
        model = _load(args)
        try:
            x = model.source.encode(args.input.split()) + (model.source.eos,)
        except DataError as e:
            raise UsageError(str(e)) from None
        out = decode_beam(x, model, args.beam)
    print(" ".join(model.target.decode(out)))


def cmd_search(args):
    config = _config(args)
    reports = random_search(None, args.trials, config, args.out)
    for r in reports:
        c = r.config
        print(json.dumps({
            "best_val_nll": r.best_val_nll, "best_epoch": r.best_epoch, "error": r.error,
            "g_embed_dim": c.g_embed_dim, "n_filters": c.n_filters, "emb_dim": c.emb_dim,
            "hidden_size": c.hidden_size, "batch_size": c.batch_size, "seed": c.seed,
        }))


def cmd_low_data(args):
    config = _config(args)
    percents = args.percent or list(PERCENTS)
    seeds = range(config.seed, config.seed + args.seeds)
    table = run_low_data(config, percents, seeds, args.out)
    for pct, accs in table.items():
        print(f"{pct:>3}%  " + "  ".join(f"{100 * a:.2f}" for a in accs) + f"  mean {100 * np.mean(accs):.2f}")


def cmd_audit(args):
    seed = args.seed or 0
    if args.ckpt:
        model = HardAlignmentModel.load(args.ckpt)
    else:
        with ad.precision("f64"):
            model = HardAlignmentModel(builtin_lexicon("direction" if args.split == "around_right" else "verb")[2],
                                       ModelDims(8, 6, 8, 8), seed=seed)
    pairs = _sample_pairs(args, model, args.pairs, seed)
    report = audit_equivariance(model, pairs, args.tolerance, seed=seed)
    for line in report.lines():
        print(line)
    if not report.passed:
        return 2


def _sample_pairs(args, model, n, seed):
    if args.data_dir or args.split:
        spec = find_split(args.split or "simple", args.data_dir or "data")
        _, _, test = load_split(spec, seed)
        idx = np.random.default_rng(seed).choice(len(test), size=min(n, len(test)), replace=False)
        return [test[int(i)] for i in idx]
    return probe_set(*PROBE_FORM, model.cmap)[:n]


def cmd_orbit_track(args):
    config = _config(args)
    if not args.split and not (args.config and "split" in args.config.read_text()):
        config = replace(config, split="add_jump")
    cmap = builtin_lexicon("direction" if config.split == "around_right" else "verb")[2]
    pairs = probe_set(args.x_form, args.y_form, cmap)
    tracker = OrbitTracker(pairs, args.every)
    report = train(config, args.out, hooks=[tracker], evaluate_test=False)
    theo = theoretical_orbits(pairs, cmap)
    lines = tracker.to_jsonl()
    for r in tracker.reports:
        print(f"epoch {r.epoch:>4}  orbits {len(r.groups):>2}  sizes {r.sizes}  contains_theoretical {r.contains(theo)}")
    print(report.summary())
    if args.out:
        (args.out / "orbits.jsonl").write_text(lines, encoding="utf-8")
        try:
            plot_orbits(tracker.reports, args.out / "orbits.png")
        except ImportError:
            (args.out / "orbits.txt").write_text(
                "".join(f"{r.epoch}\t{r.sizes}\n" for r in tracker.reports), encoding="utf-8"
            )


def cmd_gradcheck(args):
    from .checks import gradcheck_suite

    ok = True
    for name, report in gradcheck_suite(seed=args.seed or 0, n_pairs=args.pairs):
        print(f"{name:<24} max_rel_err {report.max_error:.3e}  {'ok' if report.ok else 'FAIL'}")
        ok &= report.ok
    return 0 if ok else 2


def cmd_data_info(args):
    source, target, cmap = builtin_lexicon()
    print("input vocabulary: ", " ".join(source.tokens))
    print("output vocabulary:", " ".join(target.tokens))
    for name, ci, co in cmap.named:
        print(f"class {name}: " + ", ".join(f"{a}<->{b}" for a, b in zip(ci, co)))
    print("singleton input classes:", " ".join(c[0] for c in cmap.input_classes[len(cmap.named):]))
    data_dir = args.data_dir or Path("data")
    for name in SPLIT_FILES:
        try:
            spec = find_split(name, data_dir)
        except FileNotFoundError as e:
            print(f"{name}: missing ({e})")
            continue
        tr, va, te = load_split(spec, 0)
        print(f"{name}: group={spec.group} train={len(tr)} val={len(va)} test={len(te)}")


COMMANDS = {
    "train": cmd_train, "eval": cmd_eval, "decode": cmd_decode, "search": cmd_search,
    "low-data": cmd_low_data, "audit": cmd_audit, "orbit-track": cmd_orbit_track,
    "gradcheck": cmd_gradcheck, "data-info": cmd_data_info,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args) or 0
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (DataError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (DecodeError, FileNotFoundError, RuntimeError, OSError) as e:
        print(f"failed: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

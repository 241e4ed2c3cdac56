"""Train the models behind the end-to-end checks and store them under results/.

    python scripts/run_experiments.py accuracy simple add_jump around_right length
    python scripts/run_experiments.py orbits
    python scripts/run_experiments.py low-data

Each run writes best.ckpt, metrics.jsonl and report.json into its own
directory; the orbit run adds orbits.jsonl and orbits.png.  The Add Jump
accuracy model is the orbit-tracking run, so ``orbits`` also fills
results/add_jump.
"""

import argparse
import json
import logging
import shutil
from dataclasses import replace
from pathlib import Path

from eqtrans.analysis import PROBE_FORM, OrbitTracker, plot_orbits, probe_set, theoretical_orbits
from eqtrans.scan import builtin_lexicon
from eqtrans.training import SPLIT_HPARAMS, TrainConfig, train

ROOT = Path(__file__).resolve().parents[1]


def base_config(split: str, args) -> TrainConfig:
    # --reduced uses the TrainConfig defaults: K=32, D=8, emb=64, hidden=64, batch 8
    hparams = {} if args.reduced else SPLIT_HPARAMS[split]
    return TrainConfig(split=split, data_dir=str(args.data_dir), epochs=args.epochs, patience=args.patience,
                       seed=args.seed, **hparams)


def run_accuracy(split, args):
    out = args.results / split
    report = train(base_config(split, args), out)
    print(f"{split}: {report.summary()}", flush=True)


def run_orbits(args):
    out = args.results / "orbits"
    cmap = builtin_lexicon()[2]
    pairs = probe_set(*PROBE_FORM, cmap)
    theo = theoretical_orbits(pairs, cmap)
    trackers = {"f32": OrbitTracker(pairs, every=5), "f64": OrbitTracker(pairs, every=5, precision="f64")}
    report = train(base_config("add_jump", args), out, hooks=list(trackers.values()))
    for mode, tr in trackers.items():
        (out / f"orbits_{mode}.jsonl").write_text(tr.to_jsonl(), encoding="utf-8")
        for r in tr.reports:
            print(f"{mode} epoch {r.epoch:>4} sizes {r.sizes} contains_theoretical {r.contains(theo)}")
    plot_orbits(trackers["f32"].reports, out / "orbits.png")
    summary = {"best_epoch": report.best_epoch, "theoretical": [list(o) for o in theo]}
    (out / "orbits_summary.json").write_text(json.dumps(summary), encoding="utf-8")
    # the same run doubles as the Add Jump accuracy model
    aj = args.results / "add_jump"
    aj.mkdir(parents=True, exist_ok=True)
    for f in ("best.ckpt", "report.json", "metrics.jsonl"):
        shutil.copy(out / f, aj / f)
    print(f"add_jump: {report.summary()}")


def run_low_data(args):
    base = base_config("simple", args)
    for pct in args.percents:
        cfg = replace(base, split="low_data", percent=pct)
        report = train(cfg, args.results / "low_data" / f"p{pct}")
        print(f"low_data {pct}%: {report.summary()}", flush=True)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("what", choices=["accuracy", "orbits", "low-data"])
    ap.add_argument("splits", nargs="*", default=["simple", "around_right", "length"])
    ap.add_argument("--data-dir", type=Path, default=ROOT / "data")
    ap.add_argument("--results", type=Path, default=ROOT / "results")
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--patience", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reduced", action="store_true", help="reduced model size instead of the per-split hyperparameters")
    ap.add_argument("--percents", type=int, nargs="+", default=[1, 64])
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    if args.what == "accuracy":
        for split in args.splits:
            run_accuracy(split, args)
    elif args.what == "orbits":
        run_orbits(args)
    else:
        run_low_data(args)


if __name__ == "__main__":
    main()

"""Training loop, validation-based model selection, random search and low-data runs."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .scan import PERCENTS, Dataset, builtin_lexicon, find_split, load_split
from .transducer import (
    HardAlignmentModel,
    ModelDims,
    Variant,
    batch_log_likelihood,
    sequence_accuracy,
)

log = logging.getLogger(__name__)

SEARCH_RANGES = {
    "g_embed_dim": (5, 256),
    "n_filters": (5, 256),
    "emb_dim": (5, 256),
    "hidden_size": (5, 256),
    "batch_size": (8, 64),
}

# best sum-model settings per split (first listed where several tie)
SPLIT_HPARAMS = {
    "simple": dict(g_embed_dim=20, n_filters=24, emb_dim=36, hidden_size=6, batch_size=8),
    "add_jump": dict(g_embed_dim=122, n_filters=7, emb_dim=223, hidden_size=67, batch_size=8),
    "around_right": dict(g_embed_dim=100, n_filters=7, emb_dim=122, hidden_size=36, batch_size=8),
    "length": dict(g_embed_dim=45, n_filters=24, emb_dim=11, hidden_size=149, batch_size=32),
}


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    split: str = "simple"
    data_dir: str = "data"
    variant: str = "sum"
    g_embed_dim: int = 32
    n_filters: int = 8
    emb_dim: int = 64
    hidden_size: int = 64
    batch_size: int = 8
    epochs: int = 200
    patience: int = 30
    seed: int = 0
    lr: float = 0.001
    tau0: float = 1.0
    tau_decay: float = 0.9
    tau_floor: float = 0.01
    clip_norm: float = 5.0
    precision: str = "f32"
    percent: int = 0
    beam: int = 3
    max_len: int = 64

    def __post_init__(self):
        for name in ("g_embed_dim", "n_filters", "emb_dim", "hidden_size", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.split == "low_data" and self.percent not in PERCENTS:
            raise ValueError(f"low_data needs percent in {PERCENTS}")

    @property
    def dims(self) -> ModelDims:
        return ModelDims(self.g_embed_dim, self.n_filters, self.emb_dim, self.hidden_size)

    def make_variant(self) -> Variant:
        return Variant(self.variant, self.tau0, self.tau0, self.tau_decay, self.tau_floor)


def read_config(path, **overrides) -> TrainConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) into a TrainConfig."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(types[key], value)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def _coerce(typ, value: str):
    typ = typ if isinstance(typ, str) else typ.__name__
    if typ == "int":
        return int(value)
    if typ == "float":
        return float(value)
    return value


def write_config(config: TrainConfig, path):
    lines = [f"{k} = {v}" for k, v in dataclasses.asdict(config).items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class EpochRecord:
    epoch: int
    train_nll: float
    val_nll: float
    seconds: float
    tau: float | None = None


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_nll: float = math.inf
    test_accuracy: float | None = None
    checkpoint: str | None = None
    config: TrainConfig | None = None
    error: str | None = None
    model: object = field(default=None, repr=False, compare=False)

    def summary(self) -> str:
        acc = "n/a" if self.test_accuracy is None else f"{100 * self.test_accuracy:.2f}"
        return (
            f"epochs={len(self.epochs)} best_epoch={self.best_epoch} "
            f"best_val_nll={self.best_val_nll:.6g} test_accuracy={acc} checkpoint={self.checkpoint}"
        )


# ---------------------------------------------------------------- batching


def bucket_batches(dataset: Dataset, batch_size: int, rng: np.random.Generator | None = None):
    """Batches of equal (N, M); shuffled within and across buckets when rng is given."""
    buckets = defaultdict(list)
    for i, p in enumerate(dataset):
        buckets[(len(p.x), len(p.y))].append(i)
    batches = []
    for key in sorted(buckets):
        idx = np.array(buckets[key])
        if rng is not None:
            rng.shuffle(idx)
        for s in range(0, len(idx), batch_size):
            chunk = idx[s:s + batch_size]
            X = np.array([dataset[i].x for i in chunk], dtype=np.int64)
            Y = np.array([dataset[i].y for i in chunk], dtype=np.int64)
            batches.append((X, Y))
    if rng is not None:
        order = rng.permutation(len(batches))
        batches = [batches[i] for i in order]
    return batches


def dataset_nll(model: HardAlignmentModel, dataset: Dataset, batch_size: int = 512) -> float:
    """Mean per-sentence negative log-likelihood."""
    if len(dataset) == 0:
        return math.nan
    total = 0.0
    with ad.no_grad():
        for X, Y in bucket_batches(dataset, batch_size):
            total -= float(batch_log_likelihood(X, Y, model).data.astype(np.float64).sum())
    return total / len(dataset)


def _param_norms(model) -> dict[str, float]:
    return {k: float(np.linalg.norm(t.data)) for k, t in model.params}


# ---------------------------------------------------------------- training


EpochHook = Callable[[int, HardAlignmentModel], None]


def fit(
    model: HardAlignmentModel,
    train: Dataset,
    val: Dataset,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    hooks: Sequence[EpochHook] = (),
) -> TrainReport:
    """Adam on mean batch NLL; keeps the parameters of the lowest validation NLL.

    Hooks are called with (epoch, model) before training (epoch 0) and after
    every epoch.  Test data is deliberately not an argument.
    """
    report = TrainReport(config=config)
    out = Path(out_dir) if out_dir is not None else None
    metrics = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics = (out / "metrics.jsonl").open("w", encoding="utf-8")
        report.checkpoint = str(out / "best.ckpt")
    rng = np.random.default_rng(config.seed)
    state = ad.AdamState(lr=config.lr)
    base_variant = config.make_variant()
    best_state = model.params.state()
    stale = 0
    for hook in hooks:
        hook(0, model)
    try:
        for epoch in range(1, config.epochs + 1):
            model.variant = base_variant.at_epoch(epoch - 1)
            t0 = time.perf_counter()
            total, count = 0.0, 0
            for b, (X, Y) in enumerate(bucket_batches(train, config.batch_size, rng)):
                with ad.Tape():
                    ll = batch_log_likelihood(X, Y, model)
                    loss = -ad.tsum(ll) * (1.0 / len(X))
                    value = loss.item()
                    if not math.isfinite(value):
                        raise TrainingError(
                            f"non-finite loss {value} at epoch {epoch}, batch {b}; "
                            f"parameter norms {_param_norms(model)}"
                        )
                    ad.backward(loss)
                ad.clip_grad_norm(model.params, config.clip_norm)
                ad.adam_step(model.params, state)
                total += value * len(X)
                count += len(X)
            val_nll = dataset_nll(model, val)
            rec = EpochRecord(epoch, total / max(count, 1), val_nll, time.perf_counter() - t0,
                              model.variant.tau if model.variant.kind == "annealed" else None)
            report.epochs.append(rec)
            if metrics:
                metrics.write(json.dumps(dataclasses.asdict(rec)) + "\n")
                metrics.flush()
            log.info("epoch %d train_nll=%.5f val_nll=%.5f (%.1fs)", epoch, rec.train_nll, val_nll, rec.seconds)
            if val_nll < report.best_val_nll:
                report.best_val_nll, report.best_epoch = val_nll, epoch
                best_state = model.params.state()
                stale = 0
                if out is not None:
                    model.save(out / "best.ckpt")
            else:
                stale += 1
            for hook in hooks:
                hook(epoch, model)
            if stale >= config.patience:
                break
    finally:
        if metrics:
            metrics.close()
    model.params.load(best_state)
    return report


def build_model(config: TrainConfig, group: str = "verb") -> HardAlignmentModel:
    cmap = builtin_lexicon(group)[2]
    return HardAlignmentModel(cmap, config.dims, config.make_variant(), seed=config.seed)


def train(
    config: TrainConfig,
    out_dir: str | Path | None = None,
    hooks: Sequence[EpochHook] = (),
    evaluate_test: bool = True,
) -> TrainReport:
    """Load the split, fit on 90% of its train file, select on the other 10%, score on test."""
    with ad.precision(config.precision):
        spec = find_split(config.split, config.data_dir, config.percent or None)
        train_set, val_set, test_set = load_split(spec, config.seed)
        model = build_model(config, spec.group)
        report = fit(model, train_set, val_set, config, out_dir, hooks)
        if evaluate_test:
            report.test_accuracy = sequence_accuracy(model, test_set, config.beam, config.max_len)
        if out_dir is not None:
            Path(out_dir, "report.json").write_text(json.dumps(report_dict(report), indent=1), encoding="utf-8")
        report.model = model
        return report


def report_dict(report: TrainReport) -> dict:
    d = {
        "best_epoch": report.best_epoch,
        "best_val_nll": report.best_val_nll,
        "test_accuracy": report.test_accuracy,
        "checkpoint": report.checkpoint,
        "epochs": [dataclasses.asdict(e) for e in report.epochs],
        "error": report.error,
    }
    if report.config is not None:
        d["config"] = dataclasses.asdict(report.config)
    return d


# ---------------------------------------------------------------- search and low-data


def sample_config(base: TrainConfig, rng: np.random.Generator, ranges=None) -> TrainConfig:
    """Log-uniform integer dims; batch size a power of two inside its range."""
    ranges = ranges or SEARCH_RANGES
    values = {}
    for key, (lo, hi) in ranges.items():
        if not 5 <= lo <= hi <= 256 or (key == "batch_size" and not 8 <= lo <= hi <= 64):
            raise ValueError(f"range for {key} outside the searchable bounds: {(lo, hi)}")
        if key == "batch_size":
            choices = [b for b in (8, 16, 32, 64) if lo <= b <= hi] or [lo]
            values[key] = int(rng.choice(choices))
        else:
            values[key] = int(round(math.exp(rng.uniform(math.log(lo), math.log(hi)))))
    return replace(base, **values)


def random_search(
    ranges: dict | None,
    n_trials: int,
    base: TrainConfig,
    out_dir: str | Path | None = None,
    evaluate_test: bool = False,
) -> list[TrainReport]:
    rng = np.random.default_rng(base.seed)
    reports = []
    for trial in range(n_trials):
        config = sample_config(base, rng, ranges) if n_trials > 1 else base
        if n_trials > 1:
            config = replace(config, seed=base.seed + trial)
        sub = Path(out_dir, f"trial{trial:03d}") if out_dir is not None else None
        try:
            report = train(config, sub, evaluate_test=evaluate_test)
        except Exception as e:  # noqa: BLE001 - a failed trial must not stop the search
            log.warning("trial %d failed: %s", trial, e)
            report = TrainReport(config=config, error=f"{type(e).__name__}: {e}")
        reports.append(report)
    reports.sort(key=lambda r: (r.error is not None, r.best_val_nll))
    return reports


def run_low_data(
    config: TrainConfig,
    percents: Iterable[int] = PERCENTS,
    seeds: Iterable[int] = (0,),
    out_dir: str | Path | None = None,
) -> dict[int, list[float]]:
    """Test accuracy on the Simple test set for models trained on percent-subsets."""
    table = {}
    for pct in percents:
        if pct not in PERCENTS:
            raise ValueError(f"percent must be one of {PERCENTS}, got {pct}")
        accs = []
        for seed in seeds:
            cfg = replace(config, split="low_data", percent=pct, seed=seed)
            sub = Path(out_dir, f"p{pct}_s{seed}") if out_dir is not None else None
            accs.append(train(cfg, sub).test_accuracy)
        table[pct] = accs
    return table

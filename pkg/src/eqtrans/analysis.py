"""Equivariance audits and observed-orbit tracking."""

from __future__ import annotations

import contextlib
import json
import re
from dataclasses import dataclass, field
from itertools import product
from typing import Sequence

import numpy as np
from scipy.cluster.hierarchy import DisjointSet

from . import autodiff as ad
from .groups import ProductGroupElement, act_aligned, act_on_sentence, act_product_on_sentence, orbit
from .scan import EOS, LexicalClassMap, SentencePair
from .transducer import HardAlignmentModel, conditional_log_likelihood, log_likelihood

SLOT = re.compile(r"^<([A-Za-z_]+?)(\d+)>$")

PROBE_FORM = ("<verb1> right thrice after <verb2>", "<VERB2> RTURN <VERB1> RTURN <VERB1> RTURN <VERB1>")


# ---------------------------------------------------------------- probe sets


def _slots(form: str):
    toks = form.split()
    return toks, [(i, m.group(1).lower(), int(m.group(2))) for i, t in enumerate(toks) if (m := SLOT.match(t))]


def probe_set(x_form: str, y_form: str, cmap: LexicalClassMap) -> list[SentencePair]:
    """Every instantiation of the numbered class slots, outputs filled consistently."""
    xt, xs = _slots(x_form)
    yt, ys = _slots(y_form)
    classes = {name: (ci, co) for name, ci, co in cmap.named}
    if not xs:
        raise ValueError(f"input form {x_form!r} has no <classN> slots")
    slot_class = {}
    for _, name, k in xs + ys:
        if name not in classes:
            raise ValueError(f"unknown lexical class {name!r} in form")
        if slot_class.setdefault(k, name) != name:
            raise ValueError(f"slot {k} used with two classes")
    if {k for _, _, k in ys} - {k for _, _, k in xs}:
        raise ValueError("output form uses a slot absent from the input form")
    keys = sorted({k for _, _, k in xs})
    pairs = []
    for choice in product(*(range(len(classes[slot_class[k]][0])) for k in keys)):
        pick = dict(zip(keys, choice))
        x, y = list(xt), list(yt)
        for i, name, k in xs:
            x[i] = classes[name][0][pick[k]]
        for i, name, k in ys:
            y[i] = classes[name][1][pick[k]]
        pairs.append(SentencePair(cmap.source.encode(x) + (cmap.source.eos,), cmap.target.encode(y) + (cmap.target.eos,)))
    return pairs


def theoretical_orbits(pairs: Sequence[SentencePair], cmap: LexicalClassMap) -> list[tuple[int, ...]]:
    """Partition of pair indices into orbits under the class map's group."""
    ain, aout = cmap.actions(ids=True)
    index = {(p.x, p.y): i for i, p in enumerate(pairs)}
    seen, groups = set(), []
    for i, p in enumerate(pairs):
        if i in seen:
            continue
        members = tuple(sorted(index[q] for q in orbit((p.x, p.y), ain, aout) if q in index))
        seen.update(members)
        groups.append(members)
    return groups


# ---------------------------------------------------------------- observed orbits


@dataclass
class OrbitReport:
    epoch: int | None
    groups: list[tuple[int, ...]]
    nll: list[float]
    rtol: float
    atol: float

    @property
    def sizes(self) -> list[int]:
        return sorted((len(g) for g in self.groups), reverse=True)

    def contains(self, theoretical: Sequence[Sequence[int]]) -> bool:
        """True when every theoretical orbit lies inside one observed group."""
        where = {i: gi for gi, g in enumerate(self.groups) for i in g}
        return all(len({where[i] for i in orb}) == 1 for orb in theoretical)

    def to_json(self) -> str:
        return json.dumps({
            "epoch": self.epoch, "sizes": self.sizes, "groups": [list(g) for g in self.groups],
            "nll": self.nll, "rtol": self.rtol, "atol": self.atol,
        })


@contextlib.contextmanager
def evaluated_in(model: HardAlignmentModel, mode: str | None):
    """Temporarily cast the model's parameters to another precision."""
    if mode is None:
        yield
        return
    old = model.params.tensors()[0].dtype
    with ad.precision(mode):
        model.params.astype(ad.get_dtype())
        try:
            yield
        finally:
            model.params.astype(old)


def pair_nlls(model: HardAlignmentModel, pairs: Sequence[SentencePair]) -> np.ndarray:
    with ad.no_grad():
        return np.array([-log_likelihood(p.x, p.y, model).item() for p in pairs])


def group_close(values: Sequence[float], rtol: float = 1e-5, atol: float = 1e-8) -> list[tuple[int, ...]]:
    """Connected components of the relation |a - b| <= atol + rtol·|b| (either direction)."""
    ds = DisjointSet(range(len(values)))
    for i, a in enumerate(values):
        for j in range(i + 1, len(values)):
            b = values[j]
            if abs(a - b) <= atol + rtol * abs(b) or abs(a - b) <= atol + rtol * abs(a):
                ds.merge(i, j)
    return sorted((tuple(sorted(s)) for s in ds.subsets()), key=lambda g: g[0])


def observed_orbits(
    model: HardAlignmentModel,
    pairs: Sequence[SentencePair],
    rtol: float = 1e-5,
    atol: float = 1e-8,
    epoch: int | None = None,
    precision: str | None = None,
) -> OrbitReport:
    with evaluated_in(model, precision):
        nll = pair_nlls(model, pairs)
    groups = group_close(nll, rtol, atol)
    return OrbitReport(epoch, groups, [float(nll[g[0]]) for g in groups], rtol, atol)


class OrbitTracker:
    """Training hook recording an OrbitReport every ``every`` epochs (epoch 0 included).

    With ``epochs`` set, only epochs < epochs are sampled, so 100 epochs at
    every=5 gives 20 reports (epochs 0, 5, ..., 95).
    """

    def __init__(self, pairs, every: int = 5, epochs: int | None = None, rtol=1e-5, atol=1e-8, precision=None):
        self.pairs = list(pairs)
        self.every = every
        self.epochs = epochs
        self.rtol, self.atol, self.precision = rtol, atol, precision
        self.reports: list[OrbitReport] = []

    def __call__(self, epoch: int, model: HardAlignmentModel):
        if epoch % self.every or (self.epochs is not None and epoch >= self.epochs):
            return
        self.reports.append(observed_orbits(model, self.pairs, self.rtol, self.atol, epoch, self.precision))

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.reports)


def track_orbits(train_fn, probe_pairs, every_k_epochs: int = 5, epochs: int | None = None, **kw) -> list[OrbitReport]:
    """Run ``train_fn(hooks=[tracker])`` and return the recorded reports."""
    tracker = OrbitTracker(probe_pairs, every_k_epochs, epochs, **kw)
    train_fn(hooks=[tracker])
    return tracker.reports


def plot_orbits(reports: Sequence[OrbitReport], path):
    """Bubble chart of observed-orbit sizes over epochs."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 3))
    for r in reports:
        for k, size in enumerate(r.sizes):
            ax.scatter(r.epoch, k, s=30 * size, color="tab:blue", alpha=0.6)
            ax.annotate(str(size), (r.epoch, k), ha="center", va="center", fontsize=7)
    ax.set_xlabel("epoch")
    ax.set_ylabel("orbit")
    ax.invert_yaxis()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------- audits


def gold_alignment(x: Sequence[int], y: Sequence[int], cmap: LexicalClassMap) -> tuple[int, ...]:
    """Align each output word to an input word of the corresponding class member.

    Candidates are picked leftmost-unused-first, then leftmost; outputs with
    no counterpart align to the last input position.
    """
    counterpart = {EOS: EOS}
    for _, ci, co in cmap.named:
        counterpart.update(dict(zip(co, ci)))
    xs = cmap.source.decode(x)
    used, a = set(), []
    for tok in cmap.target.decode(y):
        want = counterpart.get(tok)
        cands = [n for n, t in enumerate(xs) if t == want]
        if not cands:
            a.append(len(xs) - 1)
            continue
        free = [n for n in cands if n not in used]
        n = free[0] if free else cands[0]
        used.add(n)
        a.append(n)
    return tuple(a)


@dataclass
class SubAudit:
    max_deviation: float = 0.0
    tolerance: float = 0.0
    checks: int = 0

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance


@dataclass
class AuditReport:
    aligner: SubAudit
    model: SubAudit
    conditional: SubAudit
    alignment_rule: str = "class counterpart, leftmost-unused-first"
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.aligner.passed and self.model.passed and self.conditional.passed

    def lines(self) -> list[str]:
        out = []
        for name in ("aligner", "model", "conditional"):
            s = getattr(self, name)
            out.append(json.dumps({"audit": name, "max_deviation": s.max_deviation, "tolerance": s.tolerance,
                                   "checks": s.checks, "passed": s.passed}))
        return out


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def audit_equivariance(
    model: HardAlignmentModel,
    pairs: Sequence[SentencePair],
    tolerance: float = 1e-9,
    n_product: int = 8,
    seed: int = 0,
) -> AuditReport:
    """Check aligner invariance (bit-exact), model equivariance and G^N invariance at float64."""
    rng = np.random.default_rng(seed)
    cmap = model.cmap
    ain, aout = cmap.actions(ids=True)
    group = cmap.group
    al = model.aligner
    rep = AuditReport(SubAudit(tolerance=0.0), SubAudit(tolerance=tolerance), SubAudit(tolerance=tolerance))
    with evaluated_in(model, "f64"), ad.no_grad():
        for p in pairs:
            x, y = np.asarray(p.x), np.asarray(p.y)
            base_align = al.logprobs(al.in_class[x][None], al.out_class[y][None]).data
            base_ll = log_likelihood(p.x, p.y, model).item()
            for g in group:
                gx = np.asarray(act_on_sentence(g, ain, p.x))
                gy = np.asarray(act_on_sentence(g, aout, p.y))
                acted = al.logprobs(al.in_class[gx][None], al.out_class[gy][None]).data
                dev = 0.0 if np.array_equal(acted, base_align) else float(np.abs(acted - base_align).max())
                rep.aligner.max_deviation = max(rep.aligner.max_deviation, dev)
                rep.aligner.checks += 1
                ll = log_likelihood(gx, gy, model).item()
                rep.model.max_deviation = max(rep.model.max_deviation, _rel(ll, base_ll))
                rep.model.checks += 1
            a = gold_alignment(p.x, p.y, cmap)
            base_c = conditional_log_likelihood(p.x, p.y, a, model).item()
            for _ in range(n_product):
                g = ProductGroupElement(tuple(group.element(int(s)) for s in rng.integers(group.order, size=len(p.x))))
                gx = act_product_on_sentence(g, ain, p.x)
                gy = act_aligned(g, aout, p.y, a)
                c = conditional_log_likelihood(gx, gy, a, model).item()
                rep.conditional.max_deviation = max(rep.conditional.max_deviation, _rel(c, base_c))
                rep.conditional.checks += 1
    return rep

"""Hard-alignment transducer: marginal likelihood variants, oracle and beam decoding."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .aligner import AlignerModel, align_logprobs, encode_input
from .autodiff import ParamStore, Tensor
from .layers import TranslatorModel, translator_logprobs
from .scan import Dataset, LexicalClassMap, builtin_lexicon

VARIANTS = ("sum", "max", "annealed")


@dataclass(frozen=True)
class Variant:
    """Marginalization over the alignment of each output step.

    For ``annealed``, ``tau`` is the current temperature and (tau0, decay,
    floor) the per-epoch schedule tau_e = max(floor, tau0 * decay**e).
    """

    kind: str = "sum"
    tau: float = 1.0
    tau0: float = 1.0
    decay: float = 0.9
    floor: float = 0.01

    def __post_init__(self):
        if self.kind not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.kind!r}")
        if self.kind == "annealed" and not 0 < self.tau <= 1:
            raise ValueError(f"temperature must lie in (0, 1], got {self.tau}")

    def at_epoch(self, epoch: int) -> "Variant":
        if self.kind != "annealed":
            return self
        return replace(self, tau=max(self.floor, self.tau0 * self.decay ** epoch))


class DecodeError(RuntimeError):
    def __init__(self, message, best_partial=()):
        super().__init__(message)
        self.best_partial = tuple(best_partial)


@dataclass
class CallCounter:
    translator: int = 0
    aligner: int = 0

    def reset(self):
        self.translator = self.aligner = 0


@dataclass
class ModelDims:
    K: int = 32
    D: int = 8
    emb: int = 64
    hidden: int = 64


class HardAlignmentModel:
    def __init__(
        self,
        cmap: LexicalClassMap | None = None,
        dims: ModelDims | None = None,
        variant: Variant | None = None,
        seed: int = 0,
        equivariant_embed: bool = True,
    ):
        self.cmap = cmap or builtin_lexicon()[2]
        self.dims = dims or ModelDims()
        self.variant = variant or Variant()
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        d = self.dims
        self.translator = TranslatorModel(
            self.cmap, d.K, d.D, rng, self.params, equivariant_embed=equivariant_embed
        )
        self.aligner = AlignerModel(self.cmap, d.emb, d.hidden, rng, self.params)
        self.calls = CallCounter()

    @property
    def source(self):
        return self.cmap.source

    @property
    def target(self):
        return self.cmap.target

    def metadata(self) -> dict:
        d, v = self.dims, self.variant
        return {
            "variant": v.kind, "tau": repr(v.tau), "tau0": repr(v.tau0), "tau_decay": repr(v.decay),
            "tau_floor": repr(v.floor), "group": self.cmap.equivariant, "group_order": self.cmap.group.order,
            "K": d.K, "D": d.D, "emb": d.emb, "hidden": d.hidden,
            "precision": ad.precision_name(self.params.tensors()[0].dtype),
        }

    def save(self, path):
        ad.save_checkpoint(path, self.params, self.metadata())

    @classmethod
    def load(cls, path) -> "HardAlignmentModel":
        state, meta = ad.load_checkpoint(path)
        cmap = builtin_lexicon(meta.get("group", "verb"))[2]
        dims = ModelDims(int(meta["K"]), int(meta["D"]), int(meta["emb"]), int(meta["hidden"]))
        variant = Variant(
            meta.get("variant", "sum"), float(meta.get("tau", 1.0)), float(meta.get("tau0", 1.0)),
            float(meta.get("tau_decay", 0.9)), float(meta.get("tau_floor", 0.01)),
        )
        model = cls(cmap, dims, variant)
        model.params.load(state)
        return model


# ---------------------------------------------------------------- likelihood


def _reduce_steps(joint: Tensor, variant: Variant) -> Tensor:
    """Combine the per-position joint log-terms [..., N] of each output step."""
    if variant.kind == "sum":
        return ad.logsumexp(joint, axis=-1)
    if variant.kind == "max":
        return ad.tmax(joint, axis=-1)
    # weights alpha = softmax(p / tau) over positions, p the joint probabilities
    log_alpha = ad.log_softmax(ad.exp(joint) * (1.0 / variant.tau), axis=-1)
    return ad.logsumexp(log_alpha + joint, axis=-1)


def joint_terms(X, Y, model: HardAlignmentModel) -> Tensor:
    """[B, M, N] log p(y_m | x_n) + log p(a_m = n | ℓ(y_<m), ℓ(x)) for equal-length batches."""
    X, Y = np.asarray(X), np.asarray(Y)
    table = model.translator.table()
    trans = ad.take(table, (X[:, None, :], Y[:, :, None]))
    align = model.aligner.logprobs(model.aligner.in_class[X], model.aligner.out_class[Y])
    B, M, N = trans.shape
    model.calls.translator += B * M * N
    model.calls.aligner += B * M * N
    return trans + align


def batch_log_likelihood(X, Y, model: HardAlignmentModel, variant: Variant | None = None) -> Tensor:
    """[B] log p(y | x) for a batch whose inputs share N and outputs share M."""
    steps = _reduce_steps(joint_terms(X, Y, model), variant or model.variant)
    return ad.tsum(steps, axis=-1)


def _check_pair(x, y):
    if len(x) == 0 or len(y) == 0:
        raise ValueError("input and output sequences must be nonempty")


def log_likelihood(x: Sequence[int], y: Sequence[int], model: HardAlignmentModel, variant: Variant | None = None) -> Tensor:
    _check_pair(x, y)
    return batch_log_likelihood(np.asarray([x]), np.asarray([y]), model, variant)[0]


def brute_force_likelihood(x: Sequence[int], y: Sequence[int], model: HardAlignmentModel, limit: int = 10**6) -> float:
    """log of the sum over all N^M alignments of prod_m translator · aligner.

    Terms come from the single-position translator and the step-by-step
    aligner, not from the batched path.
    """
    _check_pair(x, y)
    N, M = len(x), len(y)
    if N ** M > limit:
        raise ValueError(f"{N}^{M} alignments exceed the enumeration limit {limit}")
    cmap = model.cmap
    with ad.no_grad():
        trans = np.array([translator_logprobs(xn, model.translator).data for xn in x], dtype=np.float64)
        xc = [cmap.class_of_input(cmap.source.tokens[t]) for t in x]
        yc = [cmap.class_of_output(cmap.target.tokens[t]) for t in y]
        enc = encode_input(xc, model.aligner)
        align = np.array([align_logprobs(yc[:m], enc, model.aligner).data for m in range(M)], dtype=np.float64)
    totals = [
        sum(trans[a_m, y[m]] + align[m, a_m] for m, a_m in enumerate(a))
        for a in itertools.product(range(N), repeat=M)
    ]
    top = max(totals)
    return top + math.log(sum(math.exp(t - top) for t in totals))


def conditional_log_likelihood(x, y, a: Sequence[int], model: HardAlignmentModel) -> Tensor:
    """sum_m log p(y_m | x_{a_m}) for a fixed 0-based alignment a."""
    _check_pair(x, y)
    if len(a) != len(y) or any(not 0 <= int(n) < len(x) for n in a):
        raise ValueError(f"alignment {tuple(a)} invalid for N={len(x)}, M={len(y)}")
    table = model.translator.table()
    return ad.tsum(ad.take(table, (np.asarray(x)[np.asarray(a)], np.asarray(y))))


# ---------------------------------------------------------------- decoding


def _step_scores(joint: np.ndarray, variant: Variant) -> np.ndarray:
    """Reduce [R, N, V] joint log-terms over positions -> [R, V]."""
    if variant.kind == "max":
        return joint.max(axis=1)
    if variant.kind == "annealed":
        p = np.exp(joint) / variant.tau
        log_alpha = p - _np_lse(p, axis=1, keepdims=True)
        joint = joint + log_alpha
    return _np_lse(joint, axis=1)


def _np_lse(a, axis, keepdims=False):
    m = a.max(axis=axis, keepdims=True)
    out = np.log(np.exp(a - m).sum(axis=axis, keepdims=True)) + m
    return out if keepdims else out.squeeze(axis)


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]
    score: float
    done: bool = False
    state: tuple = field(default=None, repr=False)


def decode_beam(x: Sequence[int], model: HardAlignmentModel, beam_width: int = 3, max_len: int = 64,
                table: np.ndarray | None = None) -> tuple[int, ...]:
    """Highest-scoring completed output (without <EOS>) under beam search."""
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    x = np.asarray(x)
    eos = model.target.eos
    if table is None:
        with ad.no_grad():
            table = model.translator.table().data
    tx = table[x]  # [N, V]
    al = model.aligner
    enc = al.encode_array(al.in_class[x])
    beam = [Hypothesis((), 0.0, state=al.initial_state(1))]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        h = np.concatenate([hyp.state[0] for hyp in beam])
        c = np.concatenate([hyp.state[1] for hyp in beam])
        prev = [al.out_class[hyp.tokens[-1]] if hyp.tokens else al.bos for hyp in beam]
        h, c = al.step((h, c), prev)
        align = al.step_logprobs(h, enc)  # [R, N]
        scores = _step_scores(tx[None, :, :] + align[:, :, None], model.variant)
        cands = []
        for r, hyp in enumerate(beam):
            for v in range(scores.shape[1]):
                cands.append((hyp.score + float(scores[r, v]), hyp.tokens + (v,), r))
        cands.sort(key=lambda t: (-t[0], t[1]))
        # completions ranked within the top beam_width are kept; the active
        # beam is refilled with the best beam_width unfinished extensions
        for score, tokens, _ in cands[:beam_width]:
            if tokens[-1] == eos:
                finished.append(Hypothesis(tokens[:-1], score, True))
        beam = [
            Hypothesis(tokens, score, state=(h[r:r + 1], c[r:r + 1]))
            for score, tokens, r in cands if tokens[-1] != eos
        ][:beam_width]
        best_done = max((f.score for f in finished), default=-math.inf)
        # step scores are log-probabilities, so active scores only decrease
        if not beam or beam[0].score < best_done:
            break
    if not finished:
        best = beam[0].tokens if beam else ()
        raise DecodeError(f"no hypothesis reached <EOS> within {max_len} steps", best)
    finished.sort(key=lambda f: (-f.score, f.tokens, len(f.tokens)))
    return finished[0].tokens


def sequence_accuracy(model: HardAlignmentModel, dataset: Dataset, beam_width: int = 3, max_len: int = 64) -> float:
    if len(dataset) == 0:
        return 0.0
    with ad.no_grad():
        table = model.translator.table().data
    correct = 0
    for pair in dataset:
        try:
            out = decode_beam(pair.x, model, beam_width, max_len, table=table)
        except DecodeError:
            continue
        correct += out == tuple(pair.y[:-1])
    return correct / len(dataset)

"""Finite-difference gradient checks of the translator, aligner and full likelihoods."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .scan import SentencePair, builtin_lexicon
from .transducer import HardAlignmentModel, ModelDims, Variant, conditional_log_likelihood, log_likelihood

SMALL_DIMS = ModelDims(K=3, D=3, emb=3, hidden=3)


def random_pairs(rng: np.random.Generator, cmap, n: int, max_n: int = 4, max_m: int = 3) -> list[SentencePair]:
    src, tgt = cmap.source, cmap.target
    pairs = []
    for _ in range(n):
        N = int(rng.integers(1, max_n + 1))
        M = int(rng.integers(1, max_m + 1))
        x = tuple(int(t) for t in rng.integers(0, src.eos, size=N - 1)) + (src.eos,)
        y = tuple(int(t) for t in rng.integers(0, tgt.eos, size=M - 1)) + (tgt.eos,)
        pairs.append(SentencePair(x, y))
    return pairs


def random_alignment(rng, pair: SentencePair) -> tuple[int, ...]:
    return tuple(int(a) for a in rng.integers(0, len(pair.x), size=len(pair.y)))


def gradcheck_suite(seed: int = 0, n_pairs: int = 5, tolerance: float = 1e-4, dims: ModelDims = SMALL_DIMS):
    """Yield (name, GradcheckReport) for each loss on each of n_pairs random pairs at float64."""
    rng = np.random.default_rng(seed)
    with ad.precision("f64"):
        cmap = builtin_lexicon()[2]
        model = HardAlignmentModel(cmap, dims, seed=seed)
        # perturbed biases so every gate path carries gradient
        for name, t in model.params:
            if name.endswith(".b"):
                t.data = rng.uniform(-0.5, 0.5, size=t.shape)
        translator = [n for n in model.params.names() if n.startswith("translator.")]
        aligner = [n for n in model.params.names() if n.startswith("aligner.")]
        for i, pair in enumerate(random_pairs(rng, cmap, n_pairs, max_n=4, max_m=4)):
            a = random_alignment(rng, pair)
            yield f"translator[{i}]", ad.gradcheck(
                lambda: -conditional_log_likelihood(pair.x, pair.y, a, model), model.params, tolerance, names=translator
            )
            al = model.aligner
            xc, yc = al.in_class[np.asarray(pair.x)][None], al.out_class[np.asarray(pair.y)][None]
            pick = (0, np.arange(len(pair.y)), np.asarray(a))
            yield f"aligner[{i}]", ad.gradcheck(
                lambda: -ad.tsum(ad.take(al.logprobs(xc, yc), pick)), model.params, tolerance, names=aligner
            )
            for variant in (Variant("sum"), Variant("max"), Variant("annealed", tau=0.5)):
                yield f"{variant.kind}[{i}]", ad.gradcheck(
                    lambda: -log_likelihood(pair.x, pair.y, model, variant), model.params, tolerance
                )

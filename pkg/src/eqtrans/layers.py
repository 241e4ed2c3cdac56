"""G-equivariant embedding, convolution and decoding layers, and the word translator."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .groups import CyclicShiftGroup, TokenAction, act_on_token, inverse
from .scan import LexicalClassMap


def embed_index(group: CyclicShiftGroup, action: TokenAction, vocab_size: int) -> np.ndarray:
    """idx[x, g] = g⁻¹∘x over vocabulary indices."""
    return np.array(
        [[act_on_token(inverse(g), action, x) for g in group] for x in range(vocab_size)],
        dtype=np.int64,
    )


def conv_index(group: CyclicShiftGroup, K: int, D: int):
    """Index arrays selecting psi[d, g⁻¹∘h, k] into a [|G|·K, |G|·D] weight matrix."""
    p = group.order
    h, k, g, d = np.meshgrid(np.arange(p), np.arange(K), np.arange(p), np.arange(D), indexing="ij")
    return d, (h - g) % p, k


def decode_index(group: CyclicShiftGroup, action: TokenAction, vocab_size: int, D: int):
    """Index arrays selecting rho[h⁻¹∘ỹ, d] into a [|G|·D, |Δ|] weight matrix."""
    inv = embed_index(group, action, vocab_size)  # inv[y, h] = h⁻¹∘y
    h, d, y = np.meshgrid(np.arange(group.order), np.arange(D), np.arange(vocab_size), indexing="ij")
    return inv[y, h], d


def g_embed(tokens, omega: Tensor, index: np.ndarray) -> Tensor:
    """e(x)[g, k] = omega[k, g⁻¹∘x]; tokens of any shape -> [..., |G|, K]."""
    return ad.take(omega.T, index[np.asarray(tokens)])


def g_conv(f: Tensor, psi: Tensor, group: CyclicShiftGroup) -> Tensor:
    """out[g, d] = sum_h f[h] · psi[d, g⁻¹∘h] for f[..., |G|, K]."""
    f = ad.as_tensor(f)
    D, p, K = psi.shape
    if f.shape[-2:] != (p, K):
        raise ad.ShapeError(f"g_conv: input shape {f.shape} does not end in {(p, K)}")
    W = ad.take(psi, conv_index(group, K, D)).reshape(p * K, p * D)
    lead = f.shape[:-2]
    out = f.reshape((-1, p * K)) @ W
    return out.reshape(lead + (p, D))


def g_decode_all(phi: Tensor, rho: Tensor, group: CyclicShiftGroup, action: TokenAction) -> Tensor:
    """Logits for every candidate ỹ: sum_h phi[h] · rho[h⁻¹∘ỹ]; phi[..., |G|, D] -> [..., |Δ|]."""
    phi = ad.as_tensor(phi)
    Y, D = rho.shape
    p = group.order
    if phi.shape[-2:] != (p, D):
        raise ad.ShapeError(f"g_decode: input shape {phi.shape} does not end in {(p, D)}")
    R = ad.take(rho, decode_index(group, action, Y, D)).reshape(p * D, Y)
    lead = phi.shape[:-2]
    return (phi.reshape((-1, p * D)) @ R).reshape(lead + (Y,))


def g_decode(phi: Tensor, rho: Tensor, group: CyclicShiftGroup, action: TokenAction, y_cand: int) -> Tensor:
    Y = rho.shape[0]
    if not 0 <= y_cand < Y:
        raise ValueError(f"candidate output id {y_cand} outside [0, {Y})")
    return g_decode_all(phi, rho, group, action)[..., y_cand]


class TranslatorModel:
    """p(y | x) for single words: G-Embed -> tanh -> G-Conv -> tanh -> G-Decode -> softmax.

    ``equivariant_embed=False`` swaps G-Embed for a plain word embedding
    (every group row is omega[:, x]); this breaks equivariance on purpose.
    """

    def __init__(
        self,
        cmap: LexicalClassMap,
        K: int,
        D: int,
        rng: np.random.Generator,
        params: ParamStore | None = None,
        prefix: str = "translator.",
        equivariant_embed: bool = True,
    ):
        self.cmap = cmap
        self.group = cmap.group
        self.in_action, self.out_action = cmap.actions(ids=True)
        self.n_in, self.n_out = len(cmap.source), len(cmap.target)
        self.K, self.D = K, D
        self.params = params if params is not None else ParamStore()
        p = self.group.order
        self.omega = self.params.add(prefix + "omega", ad.init_uniform(rng, (K, self.n_in), self.n_in))
        self.psi = self.params.add(prefix + "psi", ad.init_uniform(rng, (D, p, K), p * K))
        self.rho = self.params.add(prefix + "rho", ad.init_uniform(rng, (self.n_out, D), p * D))
        self.equivariant_embed = equivariant_embed
        if equivariant_embed:
            self._embed_index = embed_index(self.group, self.in_action, self.n_in)
        else:
            self._embed_index = np.repeat(np.arange(self.n_in)[:, None], p, axis=1)

    def embed(self, tokens) -> Tensor:
        return g_embed(tokens, self.omega, self._embed_index)

    def logits(self, tokens) -> Tensor:
        e = ad.tanh(self.embed(tokens))
        phi = ad.tanh(g_conv(e, self.psi, self.group))
        return g_decode_all(phi, self.rho, self.group, self.out_action)

    def logprobs(self, tokens) -> Tensor:
        """Log-probabilities over Δ, one row per input token."""
        return ad.log_softmax(self.logits(tokens), axis=-1)

    def table(self) -> Tensor:
        """[|Σ|, |Δ|] table of log p(y | x) for every input word."""
        return self.logprobs(np.arange(self.n_in))


def translator_logprobs(x_tok: int, model: TranslatorModel) -> Tensor:
    return model.logprobs(np.array([x_tok]))[0]

"""Alignment distribution over input positions computed from lexical classes only."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .scan import LexicalClassMap


class AlignerModel:
    """Bidirectional LSTM over ℓ_Σ(x), forward LSTM over ℓ_Δ(y_<m), bilinear scores.

    The decoder starts from a zero state and reads a dedicated
    beginning-of-sequence class before the first output class.
    """

    def __init__(
        self,
        cmap: LexicalClassMap,
        emb_dim: int,
        hidden: int,
        rng: np.random.Generator,
        params: ParamStore | None = None,
        prefix: str = "aligner.",
    ):
        self.cmap = cmap
        self.emb_dim, self.hidden = emb_dim, hidden
        self.n_in_classes = cmap.n_input_classes
        self.bos = cmap.n_output_classes
        self.in_class = cmap.input_class_ids()
        self.out_class = cmap.output_class_ids()
        self.params = params if params is not None else ParamStore()
        P, E, H = self.params, emb_dim, hidden
        self.in_emb = P.add(prefix + "in_emb", ad.init_uniform(rng, (self.n_in_classes, E), self.n_in_classes))
        self.out_emb = P.add(prefix + "out_emb", ad.init_uniform(rng, (self.bos + 1, E), self.bos + 1))
        self.cells = {}
        for cell in ("enc_fwd", "enc_bwd", "dec"):
            W = P.add(f"{prefix}{cell}.W", ad.init_uniform(rng, (E + H, 4 * H), E + H))
            b = P.add(f"{prefix}{cell}.b", np.zeros(4 * H))
            self.cells[cell] = (W, b)
        self.T = P.add(prefix + "T", ad.init_uniform(rng, (H, 2 * H), 2 * H))

    # -- batched graph construction (classes are int arrays [B, L]) --

    def encode(self, x_classes) -> Tensor:
        """[B, N] input classes -> [B, N, 2H] concatenated forward/backward states."""
        emb = ad.take(self.in_emb, np.asarray(x_classes))
        fwd = ad.lstm_sequence(emb, *self.cells["enc_fwd"])
        bwd = ad.lstm_sequence(emb, *self.cells["enc_bwd"], reverse=True)
        return ad.concat([fwd, bwd], axis=-1)

    def decoder_inputs(self, y_classes) -> np.ndarray:
        """[B, M] output classes -> [B, M] decoder inputs (BOS, ℓ(y_1), ..., ℓ(y_{M-1}))."""
        y_classes = np.asarray(y_classes)
        bos = np.full(y_classes.shape[:-1] + (1,), self.bos, dtype=np.int64)
        return np.concatenate([bos, y_classes[..., :-1]], axis=-1)

    def decode(self, dec_inputs) -> Tensor:
        emb = ad.take(self.out_emb, np.asarray(dec_inputs))
        return ad.lstm_sequence(emb, *self.cells["dec"])

    def scores(self, dec: Tensor, enc: Tensor) -> Tensor:
        """e[b, m, n] = dec[b, m]ᵀ · T · enc[b, n]."""
        return (dec @ self.T) @ ad.transpose(enc, (0, 2, 1))

    def logprobs(self, x_classes, y_classes) -> Tensor:
        """[B, M, N] log p(a_m = n | ℓ(y_<m), ℓ(x))."""
        enc = self.encode(x_classes)
        dec = self.decode(self.decoder_inputs(y_classes))
        return ad.log_softmax(self.scores(dec, enc), axis=-1)

    # -- plain-array inference used by the decoder --

    def encode_array(self, x_classes) -> np.ndarray:
        with ad.no_grad():
            return self.encode(np.asarray(x_classes)[None])[0].data

    def initial_state(self, n: int = 1):
        z = np.zeros((n, self.hidden), dtype=self.T.dtype)
        return z, z.copy()

    def step(self, state, prev_classes):
        """Advance the decoder by one input class per row; returns the new (h, c)."""
        h, c = state
        W, b = self.cells["dec"]
        x = self.out_emb.data[np.asarray(prev_classes)]
        return ad.lstm_step(x, h, c, W.data, b.data)

    def step_logprobs(self, h: np.ndarray, enc: np.ndarray) -> np.ndarray:
        """[R, H] decoder states against one encoding [N, 2H] -> [R, N] log-probabilities."""
        e = (h @ self.T.data) @ enc.T
        m = e.max(axis=-1, keepdims=True)
        return e - (np.log(np.exp(e - m).sum(axis=-1, keepdims=True)) + m)


def encode_input(classes, model: AlignerModel) -> Tensor:
    """Single sequence of N input classes -> [N, 2H]."""
    return model.encode(np.asarray(classes)[None])[0]


def align_logprobs(prefix_classes, enc: Tensor, model: AlignerModel) -> Tensor:
    """log p(a_m = n | prefix, x) over n for one encoded input; the prefix may be empty."""
    dec_in = np.concatenate([[model.bos], np.asarray(prefix_classes, dtype=np.int64)])
    dec = model.decode(dec_in[None])[:, -1:]
    enc = ad.as_tensor(enc)
    return ad.log_softmax(model.scores(dec, enc.reshape((1,) + enc.shape)), axis=-1)[0, 0]

"""Siamese comparison model: shared encoder, pooled embeddings, MLP head.

The head scores a (context, response) pair from the combined feature
vector [c; r; |c-r|; c*r] through a two-layer ReLU network ending in one
logit.  Unlike the contrastive model, the matching knowledge lives in
these extra head parameters; after training, sentence embeddings are
still read from the shared encoder by mean pooling.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .data import ContextWindow
from .encoder import EncoderParams, encode, sentence_embedding
from .errors import DataError
from .tensor import Tensor
from .vocab import Vocab, tokenize

SIAMESE_MODES = ("single", "multi")


class SiameseHeadParams:
    """Two-layer matching head (4d -> d -> 1), namespaced ``siamese.head.*``."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    @staticmethod
    def init(dim: int, rng: np.random.Generator, dtype=T.SINGLE) -> "SiameseHeadParams":
        def proj(fi, fo):
            limit = np.sqrt(6.0 / (fi + fo))
            arr = rng.uniform(-limit, limit, size=(fi, fo)).astype(dtype)
            return Tensor.from_array(arr, requires_grad=True)

        return SiameseHeadParams(
            {
                "siamese.head.w1": proj(4 * dim, dim),
                "siamese.head.b1": Tensor.zeros(1, dim, dtype=dtype, requires_grad=True),
                "siamese.head.w2": proj(dim, 1),
                "siamese.head.b2": Tensor.zeros(1, 1, dtype=dtype, requires_grad=True),
            }
        )

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named_tensors(self):
        return self.tensors.items()


def combined_features(c: Tensor, r: Tensor) -> Tensor:
    """[c; r; |c-r|; c*r] as a 1x4d row."""
    return T.concat_cols([c, r, T.absolute(T.sub(c, r)), T.mul(c, r)])


def context_text(window: ContextWindow, mode: str) -> str:
    """The text the context side encodes: one turn or the flattened context."""
    if not window.context:
        raise DataError("siamese scoring needs a non-empty context")
    if mode == "multi":
        return " ".join(turn.text for turn in window.context)
    if mode != "single":
        raise ValueError(f"unknown siamese mode {mode!r}")
    # latest turn before the response; falls back to the first turn after
    # it when the response opens the session
    preceding = [t for t, pos in zip(window.context, window.positions) if pos < window.k]
    return (preceding[-1] if preceding else window.context[0]).text


def siamese_logit(
    params: EncoderParams,
    head: SiameseHeadParams,
    vocab: Vocab,
    window: ContextWindow,
    response: str,
    mode: str,
) -> Tensor:
    """Pre-sigmoid match score of a context window against a response."""
    n = params.config.max_seq_len
    c_seq = tokenize(context_text(window, mode), vocab, n)
    r_seq = tokenize(response, vocab, n)
    c_vec = sentence_embedding(encode(params, c_seq), c_seq.mask)
    r_vec = sentence_embedding(encode(params, r_seq), r_seq.mask)
    f = combined_features(c_vec, r_vec)
    hidden = T.relu(T.add_rowvec(T.matmul(f, head["siamese.head.w1"]), head["siamese.head.b1"]))
    return T.add_rowvec(T.matmul(hidden, head["siamese.head.w2"]), head["siamese.head.b2"])


def siamese_score(
    params: EncoderParams,
    head: SiameseHeadParams,
    vocab: Vocab,
    window: ContextWindow,
    response: str,
    mode: str,
) -> Tensor:
    """Match probability in (0, 1), as a differentiable 1x1 tensor."""
    return T.sigmoid(siamese_logit(params, head, vocab, window, response, mode))


def bce_with_logits(logit: Tensor, target: int) -> Tensor:
    """Binary cross-entropy from a logit: softplus(z) - target*z, stably."""
    if target == 1:
        return T.softplus(T.neg(logit))
    if target == 0:
        return T.softplus(logit)
    raise ValueError(f"target must be 0 or 1, got {target}")


def train_siamese(config, corpus):
    """Train a siamese model; thin wrapper over the shared training loop."""
    from .trainer import train  # local import: trainer dispatches back into this module

    if config.model not in ("siamese_single", "siamese_multi"):
        raise ValueError(f"train_siamese needs a siamese model, got {config.model!r}")
    return train(config, corpus)

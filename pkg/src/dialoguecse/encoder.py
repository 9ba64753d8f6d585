"""Compact trainable transformer encoder producing token-level embeddings.

A small pre-norm transformer stands in for a large pretrained encoder:
token + positional embeddings, L self-attention blocks with padding
masked out of the attention logits, and a final layer norm.  Sentence
embeddings are the masked mean over token rows.  Layers can be frozen
from the bottom up, which excludes them from gradient updates entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import EmptyPoolError
from .tensor import Tensor
from .vocab import TokenSeq

LN_EPS = 1e-5
TOKEN_EMB_STD = 1.0
POS_EMB_STD = 0.1


@dataclass
class EncoderConfig:
    vocab_size: int
    max_seq_len: int = 32
    dim: int = 64
    layers: int = 4
    heads: int = 4
    ffn_dim: int = 128

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} must be divisible by heads {self.heads}")
        for name in ("vocab_size", "max_seq_len", "dim", "layers", "heads", "ffn_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class EncoderParams:
    """All trainable encoder weights, addressable by name.

    Names follow ``embed.token``, ``embed.pos``, ``layer{i}.attn.wq`` ...
    ``final_ln.bias``.  ``frozen_bottom`` marks how many bottom layers
    (plus both embedding tables) are excluded from training.
    """

    def __init__(self, config: EncoderConfig, tensors: dict[str, Tensor], frozen_bottom: int = 0):
        self.config = config
        self.tensors = tensors
        self.frozen_bottom = 0
        self.set_trainable_layers(frozen_bottom)

    @staticmethod
    def init(config: EncoderConfig, rng: np.random.Generator, dtype=T.SINGLE) -> "EncoderParams":
        """Fresh parameters.

        Token embeddings start at unit scale and positional embeddings an
        order of magnitude smaller, so an untrained encoder behaves like a
        bag of near-orthogonal token vectors; the residual output
        projections (attention out, FFN second layer) start at zero, so
        every block opens as the identity and the blocks grow into the
        residual stream during training.  Starting instead from tiny
        embeddings with random open blocks collapses all sentences onto
        one direction, and the cosine-based contrastive objective has no
        usable gradient there.
        """
        d, ff = config.dim, config.ffn_dim
        ts: dict[str, Tensor] = {}

        def emb(rows, cols, std):
            return Tensor.from_array(
                (rng.normal(0.0, std, size=(rows, cols))).astype(dtype), requires_grad=True
            )

        def proj(fi, fo):
            return Tensor.from_array(_xavier(rng, fi, fo, dtype), requires_grad=True)

        def zeros(rows, cols):
            return Tensor.zeros(rows, cols, dtype=dtype, requires_grad=True)

        def ones(rows, cols):
            t = Tensor.zeros(rows, cols, dtype=dtype, requires_grad=True)
            t.data += 1.0
            return t

        ts["embed.token"] = emb(config.vocab_size, d, TOKEN_EMB_STD)
        ts["embed.pos"] = emb(config.max_seq_len, d, POS_EMB_STD)
        for i in range(config.layers):
            p = f"layer{i}"
            ts[f"{p}.ln1.gain"] = ones(1, d)
            ts[f"{p}.ln1.bias"] = zeros(1, d)
            for w in ("wq", "wk", "wv"):
                ts[f"{p}.attn.{w}"] = proj(d, d)
            ts[f"{p}.attn.wo"] = zeros(d, d)
            ts[f"{p}.ln2.gain"] = ones(1, d)
            ts[f"{p}.ln2.bias"] = zeros(1, d)
            ts[f"{p}.ffn.w1"] = proj(d, ff)
            ts[f"{p}.ffn.b1"] = zeros(1, ff)
            ts[f"{p}.ffn.w2"] = zeros(ff, d)
            ts[f"{p}.ffn.b2"] = zeros(1, d)
        ts["final_ln.gain"] = ones(1, d)
        ts["final_ln.bias"] = zeros(1, d)
        return EncoderParams(config, ts)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named_tensors(self):
        return self.tensors.items()

    def trainable(self):
        return ((n, t) for n, t in self.tensors.items() if t.requires_grad)

    def set_trainable_layers(self, frozen_bottom: int) -> "EncoderParams":
        """Freeze the embedding tables and layers [0, frozen_bottom).

        With ``frozen_bottom == 0`` everything trains; with
        ``frozen_bottom == layers`` only the final layer norm does.
        Frozen tensors receive no gradients and the optimizer skips them.
        """
        if not 0 <= frozen_bottom <= self.config.layers:
            raise ValueError(
                f"frozen_bottom must be in [0, {self.config.layers}], got {frozen_bottom}"
            )
        self.frozen_bottom = frozen_bottom
        for name, t in self.tensors.items():
            if name.startswith("embed."):
                t.requires_grad = frozen_bottom == 0
            elif name.startswith("layer"):
                layer_idx = int(name.split(".", 1)[0][len("layer") :])
                t.requires_grad = layer_idx >= frozen_bottom
            else:
                t.requires_grad = True
        return self

    @property
    def dtype(self):
        return self.tensors["embed.token"].dtype


def _forward(params: EncoderParams, ids: np.ndarray, key_masks: np.ndarray) -> Tensor:
    """Shared transformer forward over packed equal-length segments.

    ``ids`` is the flat (B*n,) token id vector, ``key_masks`` the (B, n)
    validity array.  Attention stays within each segment.
    """
    cfg = params.config
    n_seq, n = key_masks.shape
    x = T.gather_rows(params["embed.token"], ids)
    pos = T.gather_rows(params["embed.pos"], np.tile(np.arange(n), n_seq))
    x = T.add(x, pos)
    for i in range(cfg.layers):
        p = f"layer{i}"
        h = T.layer_norm_rows(x, params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"], LN_EPS)
        q = T.matmul(h, params[f"{p}.attn.wq"])
        k = T.matmul(h, params[f"{p}.attn.wk"])
        v = T.matmul(h, params[f"{p}.attn.wv"])
        attn = T.attention_batch(q, k, v, key_masks, cfg.heads)
        x = T.add(x, T.matmul(attn, params[f"{p}.attn.wo"]))
        h = T.layer_norm_rows(x, params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"], LN_EPS)
        f = T.relu(T.add_rowvec(T.matmul(h, params[f"{p}.ffn.w1"]), params[f"{p}.ffn.b1"]))
        f = T.add_rowvec(T.matmul(f, params[f"{p}.ffn.w2"]), params[f"{p}.ffn.b2"])
        x = T.add(x, f)
    return T.layer_norm_rows(x, params["final_ln.gain"], params["final_ln.bias"], LN_EPS)


def encode(params: EncoderParams, seq: TokenSeq) -> Tensor:
    """Token-level output embeddings, one row per input position.

    Rows at PAD positions are computed but meaningless; downstream code
    must exclude them with the mask.  Attention never looks at PAD keys
    (their logits are -inf before the softmax).
    """
    if seq.n_active == 0:
        raise EmptyPoolError("encode: input sequence is entirely padding")
    return _forward(params, seq.ids, seq.mask.reshape(1, -1))


def encode_batch(
    params: EncoderParams, seqs: list[TokenSeq], pack_len: int | None = None
) -> list[tuple[Tensor, np.ndarray]]:
    """Encode many sequences in one packed forward pass.

    Sequences are trimmed to ``pack_len`` rows (default: the longest
    active prefix in the batch) and stacked into a single rank-2 tensor;
    per-segment attention masking keeps them independent.  Returns one
    (embedding, mask) pair per input, where the embedding has
    ``pack_len`` rows.  Active rows agree with ``encode`` up to float
    rounding; trailing context beyond ``pack_len`` is PAD by construction.
    """
    if not seqs:
        raise ValueError("encode_batch: empty sequence list")
    actives = [s.n_active for s in seqs]
    if min(actives) == 0:
        raise EmptyPoolError("encode_batch: an input sequence is entirely padding")
    if pack_len is None:
        pack_len = max(actives)
    pack_len = min(pack_len, len(seqs[0]))
    ids = np.stack([s.ids[:pack_len] for s in seqs])
    masks = np.stack([s.mask[:pack_len] for s in seqs])
    packed = _forward(params, ids.reshape(-1), masks)
    out = []
    for i, seq in enumerate(seqs):
        out.append((T.slice_rows(packed, i * pack_len, (i + 1) * pack_len), masks[i]))
    return out


def sentence_embedding(encoded: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over non-PAD token rows, as a 1xd tensor."""
    return T.masked_mean_rows(encoded, mask)

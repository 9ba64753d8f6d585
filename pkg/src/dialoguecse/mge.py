"""Matching-guided embedding: token matching matrices, refined response
embeddings, and the two turn-aggregation strategies.

For one context turn with embedding U (nxd) and a candidate response with
embedding R (nxd), the matching matrix is M = U R^T / sqrt(d) with rows
and columns at PAD positions zeroed, and the refined embedding is
M R.  One refined matrix is produced per context turn; they are fused by
an attention-weighted sum (learned per-turn scores) or a plain mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


@dataclass
class MatchingMatrix:
    """Masked token-level match scores between one context turn and a response."""

    values: Tensor
    u_mask: np.ndarray
    r_mask: np.ndarray


@dataclass
class RefinedSet:
    """Per-turn refined response embeddings, all sharing one response mask."""

    refined: list[Tensor]
    r_mask: np.ndarray

    def __post_init__(self):
        if not self.refined:
            raise ValueError("RefinedSet needs at least one refined matrix")
        shape = self.refined[0].shape
        for r in self.refined:
            if r.shape != shape:
                raise ShapeError(f"refined matrices disagree: {r.shape} vs {shape}")

    def __len__(self) -> int:
        return len(self.refined)


class TurnAttentionParams:
    """Two-layer ReLU scorer (d -> d -> 1) for attention-weighted aggregation."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = tensors

    @staticmethod
    def init(dim: int, rng: np.random.Generator, dtype=T.SINGLE) -> "TurnAttentionParams":
        def proj(fi, fo):
            limit = np.sqrt(6.0 / (fi + fo))
            arr = rng.uniform(-limit, limit, size=(fi, fo)).astype(dtype)
            return Tensor.from_array(arr, requires_grad=True)

        return TurnAttentionParams(
            {
                "mge.ffn.w1": proj(dim, dim),
                "mge.ffn.b1": Tensor.zeros(1, dim, dtype=dtype, requires_grad=True),
                "mge.ffn.w2": proj(dim, 1),
                "mge.ffn.b2": Tensor.zeros(1, 1, dtype=dtype, requires_grad=True),
            }
        )

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named_tensors(self):
        return self.tensors.items()


def matching_matrix(
    u_emb: Tensor, r_emb: Tensor, u_mask: np.ndarray, r_mask: np.ndarray
) -> MatchingMatrix:
    """M = U R^T / sqrt(d), then zero every entry touching a PAD position."""
    if u_emb.shape != r_emb.shape:
        raise ShapeError(f"matching_matrix: shapes {u_emb.shape} and {r_emb.shape} differ")
    d = u_emb.cols
    if d <= 0:
        raise ShapeError("matching_matrix: embedding width must be positive")
    scores = T.scale(T.matmul(u_emb, T.transpose(r_emb)), 1.0 / np.sqrt(d))
    um = np.asarray(u_mask).reshape(-1)
    rm = np.asarray(r_mask).reshape(-1)
    keep = T.as_constant(np.outer(um, rm), u_emb.dtype)
    return MatchingMatrix(values=T.mul(scores, keep), u_mask=um, r_mask=rm)


def refine(m: MatchingMatrix, r_emb: Tensor) -> Tensor:
    """Refined response embedding M R (the response seen through one turn)."""
    if m.values.cols != r_emb.rows:
        raise ShapeError(f"refine: matching {m.values.shape} against embedding {r_emb.shape}")
    return T.matmul(m.values, r_emb)


def aggregate_mean(rs: RefinedSet) -> Tensor:
    """Elementwise mean of the refined matrices (unweighted fusion)."""
    total = rs.refined[0]
    for r in rs.refined[1:]:
        total = T.add(total, r)
    return T.scale(total, 1.0 / len(rs))


def aggregate_attention(rs: RefinedSet, ffn: TurnAttentionParams) -> Tensor:
    """Softmax-weighted sum of refined matrices.

    Each matrix is mean-pooled over its unmasked rows to a d-vector, scored
    by the two-layer ReLU network, and the scores are softmax-normalized
    into per-turn weights.
    """
    scores = []
    for r in rs.refined:
        pooled = T.masked_mean_rows(r, rs.r_mask)
        hidden = T.relu(T.add_rowvec(T.matmul(pooled, ffn["mge.ffn.w1"]), ffn["mge.ffn.b1"]))
        scores.append(T.add_rowvec(T.matmul(hidden, ffn["mge.ffn.w2"]), ffn["mge.ffn.b2"]))
    alphas = T.softmax_rows(T.concat_cols(scores))
    out = None
    for i, r in enumerate(rs.refined):
        term = T.mul_scalar(r, T.slice_cols(alphas, i, i + 1))
        out = term if out is None else T.add(out, term)
    return out

"""Contrastive pair construction and the temperature-scaled loss.

A training group holds one positive pair (a response's context-free and
context-aware embeddings, built under its own context) and m negative
pairs (responses sampled from other sessions, run through the identical
context).  The loss for a group is the softmax cross-entropy of the
positive's similarity against all pairs in the group, averaged over
groups.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .data import ContextWindow, DialogueSession, extract_windows
from .encoder import EncoderParams, encode
from .errors import DataError
from .mge import RefinedSet, TurnAttentionParams, aggregate_attention, aggregate_mean, matching_matrix, refine
from .tensor import Tensor
from .vocab import Vocab, tokenize


@dataclass
class CandidatePair:
    """A (context-free, context-aware) embedding pair sharing one mask."""

    context_free: Tensor
    context_aware: Tensor
    mask: np.ndarray
    is_positive: bool


@dataclass
class ContrastiveGroup:
    """All pairs generated under one context; exactly one is positive."""

    pairs: list[CandidatePair]
    context_id: str

    def __post_init__(self):
        if len(self.pairs) < 2:
            raise ValueError("a contrastive group needs at least two pairs")


@dataclass
class MgeConfig:
    """How a context conditions a candidate: fusion strategy and turn budget."""

    aggregation: str = "mean"  # "mean" | "attention"
    turn_budget: int = 3
    attention_params: TurnAttentionParams | None = None

    def __post_init__(self):
        if self.aggregation not in ("mean", "attention"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.aggregation == "attention" and self.attention_params is None:
            raise ValueError("attention aggregation needs attention_params")
        if self.turn_budget < 1:
            raise ValueError("turn_budget must be >= 1")


def encode_text(params: EncoderParams, vocab: Vocab, text: str):
    """Token embeddings plus validity mask for one utterance."""
    seq = tokenize(text, vocab, params.config.max_seq_len)
    return encode(params, seq), seq.mask


def context_aware_embedding(
    context_encs: list[tuple[Tensor, np.ndarray]],
    cand_emb: Tensor,
    cand_mask: np.ndarray,
    config: MgeConfig,
) -> Tensor:
    """Run the full matching path: per-turn matching, refine, aggregate."""
    refined = []
    for u_emb, u_mask in context_encs:
        m = matching_matrix(u_emb, cand_emb, u_mask, cand_mask)
        refined.append(refine(m, cand_emb))
    rs = RefinedSet(refined=refined, r_mask=cand_mask)
    if config.aggregation == "attention":
        return aggregate_attention(rs, config.attention_params)
    return aggregate_mean(rs)


def build_group(
    window: ContextWindow,
    negatives: list[str],
    params: EncoderParams,
    vocab: Vocab,
    config: MgeConfig,
    context_id: str = "",
) -> ContrastiveGroup:
    """One group: the window's response as positive plus sampled negatives."""
    context_encs = [encode_text(params, vocab, turn.text) for turn in window.context]
    pairs = []
    for is_pos, text in [(True, window.response.text)] + [(False, t) for t in negatives]:
        emb, mask = encode_text(params, vocab, text)
        aware = context_aware_embedding(context_encs, emb, mask, config)
        pairs.append(
            CandidatePair(context_free=emb, context_aware=aware, mask=mask, is_positive=is_pos)
        )
    return ContrastiveGroup(pairs=pairs, context_id=context_id)


def sample_negatives(
    sessions: list[DialogueSession], own_index: int, m_neg: int, rng: np.random.Generator
) -> list[str]:
    """m_neg utterances drawn uniformly from sessions other than ``own_index``."""
    if len(sessions) < 2:
        raise DataError("negative sampling needs at least two sessions")
    out = []
    for _ in range(m_neg):
        s_idx = int(rng.integers(0, len(sessions)))
        while s_idx == own_index:
            s_idx = int(rng.integers(0, len(sessions)))
        turns = sessions[s_idx].turns
        out.append(turns[int(rng.integers(0, len(turns)))].text)
    return out


def build_groups(
    sessions: list[DialogueSession],
    params: EncoderParams,
    vocab: Vocab,
    config: MgeConfig,
    m_neg: int,
    rng_seed: int,
) -> Iterator[ContrastiveGroup]:
    """Stream one group per context window, in corpus order.

    Deterministic under ``rng_seed``: the negative draws depend only on
    the seed and the corpus.
    """
    if m_neg < 1:
        raise ValueError("m_neg must be >= 1")
    if len(sessions) < 2:
        raise DataError("group construction needs at least two sessions")
    rng = np.random.default_rng(rng_seed)
    for s_idx, session in enumerate(sessions):
        for window in extract_windows(session, config.turn_budget):
            negatives = sample_negatives(sessions, s_idx, m_neg, rng)
            yield build_group(
                window,
                negatives,
                params,
                vocab,
                config,
                context_id=f"{session.session_id}#{window.k}",
            )


def pair_similarity(pair: CandidatePair) -> Tensor:
    """Cosine of the mean-pooled context-free and context-aware embeddings."""
    u = T.masked_mean_rows(pair.context_free, pair.mask)
    v = T.masked_mean_rows(pair.context_aware, pair.mask)
    return T.cosine(u, v)


def nt_xent_loss(groups: list[ContrastiveGroup], tau: float) -> Tensor:
    """Mean over groups of -log softmax(positive similarity / tau).

    Stabilized by max subtraction inside each group's log-sum-exp;
    differentiable through the similarities and everything beneath them.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    if not groups:
        raise ValueError("nt_xent_loss needs at least one group")
    losses = []
    for group in groups:
        pos_indices = [i for i, p in enumerate(group.pairs) if p.is_positive]
        if len(pos_indices) != 1:
            raise ValueError(
                f"group {group.context_id!r} has {len(pos_indices)} positives, expected 1"
            )
        sims = T.concat_cols([pair_similarity(p) for p in group.pairs])
        scaled = T.scale(sims, 1.0 / tau)
        m = float(scaled.data.max())
        lse = T.add_const(T.log(T.sum_all(T.exp(T.add_const(scaled, -m)))), m)
        losses.append(T.sub(lse, T.slice_cols(scaled, pos_indices[0], pos_indices[0] + 1)))
    return T.scale(T.sum_all(T.concat_cols(losses)), 1.0 / len(losses))

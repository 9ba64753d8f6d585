"""Training loop, Adam optimizer, checkpointing, and the sweep harness.

One training thread owns the parameters and the tape.  Every source of
randomness (init, batch order, negative sampling) flows from the single
config seed, so identical configs produce bitwise-identical checkpoints.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint
from .contrastive import (
    CandidatePair,
    ContrastiveGroup,
    MgeConfig,
    context_aware_embedding,
    nt_xent_loss,
    sample_negatives,
)
from .data import ContextWindow, DialogueSession, extract_windows, load_corpus, preprocess
from .encoder import EncoderConfig, EncoderParams, encode, encode_batch, sentence_embedding
from .errors import DataError, NonFiniteLossError, ShapeError, VocabMismatchError
from .evaluation import DSTSPair, SRSample, evaluate_dsts, evaluate_sr, format_table
from .mge import TurnAttentionParams
from .siamese import SiameseHeadParams, bce_with_logits, combined_features, context_text
from .tensor import Tensor
from .vocab import TokenSeq, Vocab, build_vocab, tokenize

MODELS = ("dialoguecse", "siamese_single", "siamese_multi")
AGGREGATIONS = ("attention", "mean")
PRECISIONS = ("single", "double")
SWEEP_AXES = ("tau", "m_neg", "turn_budget", "data_fraction")


@dataclass
class TrainConfig:
    model: str = "dialoguecse"
    aggregation: str = "mean"
    batch_size: int = 20
    # 5e-5 suits fine-tuning a large pretrained encoder; training this
    # compact encoder from scratch needs a much larger step size
    learning_rate: float = 1e-3
    tau: float = 0.1
    m_neg: int = 9
    turn_budget: int = 3
    frozen_bottom: int = 2
    steps: int = 2000
    seed: int = 7
    precision: str = "single"
    max_seq_len: int = 32
    vocab_size: int = 2000
    layers: int = 4
    dim: int = 64
    heads: int = 4
    ffn_dim: int = 128

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {PRECISIONS}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        for name in ("batch_size", "m_neg", "turn_budget", "max_seq_len", "vocab_size",
                     "layers", "dim", "heads", "ffn_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not 0 <= self.frozen_bottom <= self.layers:
            raise ValueError(f"frozen_bottom must be in [0, {self.layers}]")

    @property
    def dtype(self):
        return T.DOUBLE if self.precision == "double" else T.SINGLE

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=vocab_size,
            max_seq_len=self.max_seq_len,
            dim=self.dim,
            layers=self.layers,
            heads=self.heads,
            ffn_dim=self.ffn_dim,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(obj: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return TrainConfig(**obj)


class Model:
    """Trainable parameters plus the vocabulary they were built against."""

    def __init__(
        self,
        config: TrainConfig,
        vocab: Vocab,
        encoder: EncoderParams,
        attention_agg: TurnAttentionParams | None = None,
        head: SiameseHeadParams | None = None,
    ):
        self.config = config
        self.vocab = vocab
        self.encoder = encoder
        self.attention_agg = attention_agg
        self.head = head
        self._tok_cache: dict[str, TokenSeq] = {}

    @staticmethod
    def init(config: TrainConfig, vocab: Vocab, rng: np.random.Generator) -> "Model":
        dtype = config.dtype
        encoder = EncoderParams.init(config.encoder_config(len(vocab)), rng, dtype=dtype)
        encoder.set_trainable_layers(config.frozen_bottom)
        agg = None
        head = None
        if config.model == "dialoguecse" and config.aggregation == "attention":
            agg = TurnAttentionParams.init(config.dim, rng, dtype=dtype)
        if config.model in ("siamese_single", "siamese_multi"):
            head = SiameseHeadParams.init(config.dim, rng, dtype=dtype)
        return Model(config, vocab, encoder, attention_agg=agg, head=head)

    def named_tensors(self):
        yield from self.encoder.named_tensors()
        if self.attention_agg is not None:
            yield from self.attention_agg.named_tensors()
        if self.head is not None:
            yield from self.head.named_tensors()

    def trainable(self):
        return ((n, t) for n, t in self.named_tensors() if t.requires_grad)

    def zero_grads(self) -> None:
        for _, t in self.named_tensors():
            t.zero_grad()

    def mge_config(self) -> MgeConfig:
        return MgeConfig(
            aggregation=self.config.aggregation,
            turn_budget=self.config.turn_budget,
            attention_params=self.attention_agg if self.config.aggregation == "attention" else None,
        )

    def token_seq(self, text: str) -> TokenSeq:
        """Tokenize against this model's vocabulary (cached per text)."""
        got = self._tok_cache.get(text)
        if got is None:
            got = self._tok_cache[text] = tokenize(text, self.vocab, self.config.max_seq_len)
        return got

    def sentence_vector(self, text: str) -> np.ndarray:
        """Mean-pooled embedding of one sentence (no gradient tracking)."""
        seq = self.token_seq(text)
        with T.no_grad():
            vec = sentence_embedding(encode(self.encoder, seq), seq.mask)
        return vec.data[0].copy()

    def embedder(self) -> Callable[[str], np.ndarray]:
        """Caching text -> vector closure for evaluation loops."""
        cache: dict[str, np.ndarray] = {}

        def embed(text: str) -> np.ndarray:
            got = cache.get(text)
            if got is None:
                got = cache[text] = self.sentence_vector(text)
            return got

        return embed

    def to_checkpoint(self, step: int) -> Checkpoint:
        tensors = {name: t.data.astype("<f4") for name, t in self.named_tensors()}
        return Checkpoint(
            tensors=tensors,
            config=self.config.to_dict(),
            step=step,
            vocab_tokens=list(self.vocab.id_to_token),
        )


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    """Rebuild a model (tensor values, freeze flags, vocab) from a checkpoint."""
    config = TrainConfig.from_dict(ckpt.config)
    vocab = Vocab(ckpt.vocab_tokens)
    rng = np.random.default_rng(0)  # values are overwritten below
    model = Model.init(config, vocab, rng)
    expected = {name for name, _ in model.named_tensors()}
    if expected != set(ckpt.tensors):
        missing = sorted(expected - set(ckpt.tensors))
        extra = sorted(set(ckpt.tensors) - expected)
        raise VocabMismatchError(f"checkpoint tensor names differ (missing {missing}, extra {extra})")
    if ckpt.tensors["embed.token"].shape[0] != len(vocab):
        raise VocabMismatchError(
            f"embedding rows {ckpt.tensors['embed.token'].shape[0]} != vocab size {len(vocab)}"
        )
    for name, t in model.named_tensors():
        arr = ckpt.tensors[name]
        if arr.shape != t.shape:
            raise VocabMismatchError(f"tensor {name!r} has shape {arr.shape}, expected {t.shape}")
        t.data = np.ascontiguousarray(arr, dtype=config.dtype)
    return model


# -- Adam -------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    named_params,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update; frozen tensors are skipped entirely."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in named_params:
        if not p.requires_grad:
            continue
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad {g.shape} vs param {p.data.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# -- training loop ----------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: Model
    losses: list[float]


@dataclass
class GroupPlan:
    """Everything a training step needs to materialize one group."""

    window: ContextWindow
    negatives: list[str]
    context_id: str


def make_plans(
    sessions: list[DialogueSession],
    batch: list[tuple[int, ContextWindow]],
    rng: np.random.Generator,
    m_neg: int,
) -> list[GroupPlan]:
    return [
        GroupPlan(
            window=window,
            negatives=sample_negatives(sessions, s_idx, m_neg, rng),
            context_id=f"{sessions[s_idx].session_id}#{window.k}",
        )
        for s_idx, window in batch
    ]


def contrastive_batch_loss(model: Model, plans: list[GroupPlan], mge_cfg: MgeConfig) -> Tensor:
    """Contrastive loss for a batch of plans using one packed encoder pass."""
    cfg = model.config
    seqs: list[TokenSeq] = []
    for plan in plans:
        for turn in plan.window.context:
            seqs.append(model.token_seq(turn.text))
        seqs.append(model.token_seq(plan.window.response.text))
        for text in plan.negatives:
            seqs.append(model.token_seq(text))
    encoded = encode_batch(model.encoder, seqs)
    groups = []
    cursor = 0
    for plan in plans:
        n_ctx = len(plan.window.context)
        context_encs = encoded[cursor : cursor + n_ctx]
        cursor += n_ctx
        pairs = []
        for is_pos in [True] + [False] * len(plan.negatives):
            emb, mask = encoded[cursor]
            cursor += 1
            aware = context_aware_embedding(context_encs, emb, mask, mge_cfg)
            pairs.append(
                CandidatePair(context_free=emb, context_aware=aware, mask=mask, is_positive=is_pos)
            )
        groups.append(ContrastiveGroup(pairs=pairs, context_id=plan.context_id))
    return nt_xent_loss(groups, cfg.tau)


def siamese_batch_loss(model: Model, plans: list[GroupPlan], mode: str) -> Tensor:
    """Data-matched BCE: the true response scores 1, sampled negatives 0."""
    seqs: list[TokenSeq] = []
    for plan in plans:
        seqs.append(model.token_seq(context_text(plan.window, mode)))
        seqs.append(model.token_seq(plan.window.response.text))
        for text in plan.negatives:
            seqs.append(model.token_seq(text))
    encoded = encode_batch(model.encoder, seqs)
    head = model.head
    terms = []
    cursor = 0
    for plan in plans:
        c_emb, c_mask = encoded[cursor]
        cursor += 1
        c_vec = T.masked_mean_rows(c_emb, c_mask)
        for target in [1] + [0] * len(plan.negatives):
            r_emb, r_mask = encoded[cursor]
            cursor += 1
            r_vec = T.masked_mean_rows(r_emb, r_mask)
            f = combined_features(c_vec, r_vec)
            hidden = T.relu(
                T.add_rowvec(T.matmul(f, head["siamese.head.w1"]), head["siamese.head.b1"])
            )
            z = T.add_rowvec(T.matmul(hidden, head["siamese.head.w2"]), head["siamese.head.b2"])
            terms.append(bce_with_logits(z, target))
    return T.scale(T.sum_all(T.concat_cols(terms)), 1.0 / len(terms))


def batch_loss(model: Model, plans: list[GroupPlan], mge_cfg: MgeConfig) -> Tensor:
    if model.config.model == "dialoguecse":
        return contrastive_batch_loss(model, plans, mge_cfg)
    mode = "multi" if model.config.model == "siamese_multi" else "single"
    return siamese_batch_loss(model, plans, mode)


def train(
    config: TrainConfig,
    corpus: str | Path | list[DialogueSession],
    log_every: int = 0,
    log_fn: Callable[[str], None] = print,
) -> TrainResult:
    """Build vocab and windows, then run ``config.steps`` optimizer steps.

    Deterministic given (config, corpus): batch order and negative draws
    come from the config seed.  Raises ``NonFiniteLossError`` naming the
    step if the loss leaves the finite range.
    """
    sessions = load_corpus(corpus) if isinstance(corpus, (str, Path)) else corpus
    sessions = preprocess(sessions)
    if len(sessions) < 2:
        raise DataError(f"training needs >= 2 preprocessed sessions, got {len(sessions)}")
    vocab = build_vocab(sessions, config.vocab_size)
    rng = np.random.default_rng(config.seed)
    model = Model.init(config, vocab, rng)
    mge_cfg = model.mge_config()
    windows = [
        (s_idx, w)
        for s_idx, s in enumerate(sessions)
        for w in extract_windows(s, config.turn_budget)
    ]
    state = AdamState()
    losses: list[float] = []
    order: list[int] = []
    cursor = 0
    for step in range(config.steps):
        batch = []
        while len(batch) < config.batch_size:
            if cursor >= len(order):
                order = list(rng.permutation(len(windows)))
                cursor = 0
            batch.append(windows[order[cursor]])
            cursor += 1
        T.reset_tape()
        model.zero_grads()
        plans = make_plans(sessions, batch, rng, config.m_neg)
        loss = batch_loss(model, plans, mge_cfg)
        value = loss.item()
        if not math.isfinite(value):
            raise NonFiniteLossError(f"step {step}: loss is {value}")
        T.backward(loss)
        adam_step(model.named_tensors(), state, lr=config.learning_rate)
        losses.append(value)
        if log_every and (step + 1) % log_every == 0:
            recent = losses[-log_every:]
            log_fn(f"step {step + 1}/{config.steps}  loss {sum(recent) / len(recent):.4f}")
    T.reset_tape()
    model.zero_grads()
    return TrainResult(checkpoint=model.to_checkpoint(config.steps), model=model, losses=losses)


# -- sweep harness ----------------------------------------------------------


@dataclass
class SweepRow:
    value: float
    map: float
    mrr: float
    spearman: float


@dataclass
class SweepReport:
    axis: str
    rows: list[SweepRow]

    def table(self) -> str:
        return format_table(
            [self.axis, "map", "mrr", "spearman"],
            [[r.value, f"{r.map:.4f}", f"{r.mrr:.4f}", f"{r.spearman:.4f}"] for r in self.rows],
        )

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "rows": [
                {"value": r.value, "map": r.map, "mrr": r.mrr, "spearman": r.spearman}
                for r in self.rows
            ],
        }


def sweep(
    base_config: TrainConfig,
    axis: str,
    values: Sequence[float],
    sessions: list[DialogueSession],
    sr_samples: Sequence[SRSample],
    dsts_pairs: Sequence[DSTSPair],
) -> SweepReport:
    """Train one model per axis value (shared seed) and tabulate metrics."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ValueError("sweep needs at least one value")
    rows = []
    for value in values:
        cfg_dict = base_config.to_dict()
        data = sessions
        if axis == "tau":
            cfg_dict["tau"] = float(value)
        elif axis == "m_neg":
            cfg_dict["m_neg"] = int(value)
        elif axis == "turn_budget":
            cfg_dict["turn_budget"] = int(value)
        else:  # data_fraction
            fraction = float(value)
            if not 0 < fraction <= 1:
                raise ValueError(f"data_fraction must be in (0, 1], got {fraction}")
            keep = max(2, math.ceil(fraction * len(sessions)))
            perm = np.random.default_rng(base_config.seed).permutation(len(sessions))
            data = [sessions[i] for i in perm[:keep]]
        result = train(TrainConfig.from_dict(cfg_dict), data)
        embed = result.model.embedder()
        ranking = evaluate_sr(embed, sr_samples)
        rho = evaluate_dsts(embed, dsts_pairs)
        rows.append(SweepRow(value=float(value), map=ranking.map, mrr=ranking.mrr, spearman=rho))
    return SweepReport(axis=axis, rows=rows)

"""Gradient-check suite covering every differentiable op and the full
contrastive loss.

Each op is wrapped into a scalar probe loss sum(op(...) * W) with a fixed
random W, so the check exercises the whole Jacobian action.  Inputs for
kinked ops (relu, absolute) are kept away from zero, where central
differences are legitimately undefined.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .contrastive import MgeConfig, build_group, nt_xent_loss
from .data import ContextWindow, Turn
from .encoder import EncoderConfig, EncoderParams
from .gradcheck import GradCheckReport, grad_check
from .mge import TurnAttentionParams
from .tensor import Tensor
from .vocab import Vocab


def _rand(rng, rows, cols, lo=-1.0, hi=1.0):
    return Tensor.from_array(
        rng.uniform(lo, hi, size=(rows, cols)).astype(T.DOUBLE), requires_grad=True
    )


def _away_from_zero(rng, rows, cols, margin=0.15):
    arr = rng.uniform(margin, 1.0, size=(rows, cols)) * rng.choice([-1.0, 1.0], size=(rows, cols))
    return Tensor.from_array(arr.astype(T.DOUBLE), requires_grad=True)


def op_reports(seed: int = 0, eps: float = 1e-6, tol: float = 1e-5) -> list[tuple[str, GradCheckReport]]:
    """One gradient check per differentiable operation (double precision)."""
    rng = np.random.default_rng(seed)

    def probe(out: Tensor, w: np.ndarray) -> Tensor:
        return T.sum_all(T.mul(out, T.as_constant(w, T.DOUBLE)))

    w34 = rng.normal(size=(3, 4))
    w32 = rng.normal(size=(3, 2))
    w43 = rng.normal(size=(4, 3))
    w11 = rng.normal(size=(1, 1))
    w14 = rng.normal(size=(1, 4))
    w44_gather = rng.normal(size=(4, 4))
    w44_attn = rng.normal(size=(4, 4))
    w24 = rng.normal(size=(2, 4))
    mask = np.array([1, 1, 0], dtype=np.int8)
    ids = np.array([1, 0, 2, 1], dtype=np.int64)

    checks: list[tuple[str, GradCheckReport]] = [
        ("add", grad_check(lambda a, b: probe(T.add(a, b), w34), [_rand(rng, 3, 4), _rand(rng, 3, 4)], eps, tol, ["a", "b"])),
        ("add_const", grad_check(lambda a: probe(T.add_const(a, 0.7), w34), [_rand(rng, 3, 4)], eps, tol, ["a"])),
        ("add_rowvec", grad_check(lambda a, v: probe(T.add_rowvec(a, v), w34), [_rand(rng, 3, 4), _rand(rng, 1, 4)], eps, tol, ["a", "v"])),
        ("sub", grad_check(lambda a, b: probe(T.sub(a, b), w34), [_rand(rng, 3, 4), _rand(rng, 3, 4)], eps, tol, ["a", "b"])),
        ("mul", grad_check(lambda a, b: probe(T.mul(a, b), w34), [_rand(rng, 3, 4), _rand(rng, 3, 4)], eps, tol, ["a", "b"])),
        ("mul_scalar", grad_check(lambda a, s: probe(T.mul_scalar(a, s), w34), [_rand(rng, 3, 4), _rand(rng, 1, 1)], eps, tol, ["a", "s"])),
        ("scale", grad_check(lambda a: probe(T.scale(a, -1.7), w34), [_rand(rng, 3, 4)], eps, tol, ["a"])),
        ("neg", grad_check(lambda a: probe(T.neg(a), w34), [_rand(rng, 3, 4)], eps, tol, ["a"])),
        ("matmul", grad_check(lambda a, b: probe(T.matmul(a, b), w32), [_rand(rng, 3, 4), _rand(rng, 4, 2)], eps, tol, ["a", "b"])),
        ("transpose", grad_check(lambda a: probe(T.transpose(a), w43), [_rand(rng, 3, 4)], eps, tol, ["a"])),
        ("relu", grad_check(lambda a: probe(T.relu(a), w34), [_away_from_zero(rng, 3, 4)], eps, tol, ["a"])),
        ("absolute", grad_check(lambda a: probe(T.absolute(a), w34), [_away_from_zero(rng, 3, 4)], eps, tol, ["a"])),
        ("exp", grad_check(lambda a: probe(T.exp(a), w34), [_rand(rng, 3, 4)], eps, tol, ["a"])),
        ("log", grad_check(lambda a: probe(T.log(a), w34), [_rand(rng, 3, 4, lo=0.4, hi=2.0)], eps, tol, ["a"])),
        ("sigmoid", grad_check(lambda a: probe(T.sigmoid(a), w34), [_rand(rng, 3, 4, lo=-3, hi=3)], eps, tol, ["a"])),
        ("softplus", grad_check(lambda a: probe(T.softplus(a), w34), [_rand(rng, 3, 4, lo=-3, hi=3)], eps, tol, ["a"])),
        ("sum_all", grad_check(lambda a: probe(T.sum_all(a), w11), [_rand(rng, 3, 4)], eps, tol, ["a"])),
        ("softmax_rows", grad_check(lambda a: probe(T.softmax_rows(a), w34), [_rand(rng, 3, 4, lo=-2, hi=2)], eps, tol, ["a"])),
        ("layer_norm_rows", grad_check(
            lambda a, g, b: probe(T.layer_norm_rows(a, g, b, 1e-5), w34),
            [_rand(rng, 3, 4), _rand(rng, 1, 4, lo=0.5, hi=1.5), _rand(rng, 1, 4)],
            eps, tol, ["a", "gain", "bias"])),
        ("masked_mean_rows", grad_check(lambda a: probe(T.masked_mean_rows(a, mask), w14), [_rand(rng, 3, 4)], eps, tol, ["a"])),
        ("slice_cols", grad_check(lambda a: probe(T.slice_cols(a, 1, 3), w32), [_rand(rng, 3, 4)], eps, tol, ["a"])),
        ("concat_cols", grad_check(
            lambda a, b: probe(T.concat_cols([a, b]), w34),
            [_rand(rng, 3, 1), _rand(rng, 3, 3)], eps, tol, ["a", "b"])),
        ("gather_rows", grad_check(lambda tbl: probe(T.gather_rows(tbl, ids), w44_gather), [_rand(rng, 3, 4)], eps, tol, ["table"])),
        ("attention", grad_check(
            lambda q, k, v: probe(T.attention(q, k, v, np.array([1, 1, 1, 0]), 2), w44_attn),
            [_rand(rng, 4, 4), _rand(rng, 4, 4), _rand(rng, 4, 4)],
            eps, tol, ["q", "k", "v"])),
        ("attention_batch", grad_check(
            lambda q, k, v: probe(
                T.attention_batch(q, k, v, np.array([[1, 1], [1, 0]]), 2), w44_attn
            ),
            [_rand(rng, 4, 4), _rand(rng, 4, 4), _rand(rng, 4, 4)],
            eps, tol, ["q", "k", "v"])),
        ("slice_rows", grad_check(lambda a: probe(T.slice_rows(a, 1, 3), rng_free_w(rng)), [_rand(rng, 4, 4)], eps, tol, ["a"])),
        ("cosine", grad_check(
            lambda u, v: probe(T.cosine(u, v), w11),
            [_rand(rng, 1, 5, lo=0.2, hi=1.0), _rand(rng, 1, 5, lo=0.2, hi=1.0)],
            eps, tol, ["u", "v"])),
    ]
    return checks


def tiny_vocab() -> Vocab:
    words = [f"w{i}" for i in range(20)]
    return Vocab(["<pad>", "<unk>", "<cls>"] + words)


def toy_training_instance(seed: int = 1, dim: int = 8, seq_len: int = 6, layers: int = 2):
    """A 2-turn context window plus one negative, at gradcheckable scale."""
    rng = np.random.default_rng(seed)
    vocab = tiny_vocab()
    config = EncoderConfig(
        vocab_size=len(vocab), max_seq_len=seq_len, dim=dim, layers=layers, heads=2, ffn_dim=12
    )
    params = EncoderParams.init(config, rng, dtype=T.DOUBLE)
    window = ContextWindow(
        context=[Turn("A", "w1 w2 w3"), Turn("B", "w4 w5 w6 w7")],
        response=Turn("A", "w2 w8 w9"),
        k=1,
        positions=[0, 2],
    )
    negatives = ["w10 w11 w3 w12"]
    return rng, vocab, params, window, negatives


def full_loss_report(
    aggregation: str = "mean",
    tau: float = 0.1,
    eps: float = 1e-6,
    tol: float = 1e-5,
    frozen_bottom: int = 0,
) -> GradCheckReport:
    """Gradient-check the end-to-end contrastive loss on a toy instance.

    The probed function rebuilds the whole graph (encode both sides,
    matching, refinement, aggregation, similarities, loss) on every call,
    so the finite differences see exactly what training sees.
    """
    rng, vocab, params, window, negatives = toy_training_instance()
    params.set_trainable_layers(frozen_bottom)
    agg = TurnAttentionParams.init(params.config.dim, rng, dtype=T.DOUBLE) if aggregation == "attention" else None
    mge_cfg = MgeConfig(aggregation=aggregation, turn_budget=3, attention_params=agg)

    named = list(params.named_tensors()) + (list(agg.named_tensors()) if agg else [])
    names = [n for n, _ in named]
    tensors = [t for _, t in named]

    def loss_fn(*_):
        group = build_group(window, negatives, params, vocab, mge_cfg, context_id="toy")
        return nt_xent_loss([group], tau)

    return grad_check(loss_fn, tensors, eps=eps, tol=tol, names=names)

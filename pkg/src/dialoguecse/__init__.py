"""Dialogue-based contrastive sentence embeddings at desk scale.

A numpy library implementing matching-guided embeddings over a compact
trainable transformer encoder, trained with a temperature-scaled
contrastive objective against dialogue context, plus a siamese baseline,
synthetic corpus tooling, and retrieval/STS evaluation.
"""

import os as _os

# Honor DCSE_THREADS before numpy (and its BLAS) loads.
_threads = _os.environ.get("DCSE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from . import errors
from .checkpoint import Checkpoint
from .contrastive import (
    CandidatePair,
    ContrastiveGroup,
    MgeConfig,
    build_group,
    build_groups,
    nt_xent_loss,
    pair_similarity,
)
from .data import ContextWindow, DialogueSession, Turn, extract_windows, load_corpus, preprocess, save_corpus
from .encoder import EncoderConfig, EncoderParams, encode, sentence_embedding
from .evaluation import (
    DSTSPair,
    LabeledUtterance,
    SRSample,
    build_dsts_dataset,
    build_sr_dataset,
    evaluate_dsts,
    evaluate_sr,
)
from .gradcheck import GradCheckReport, grad_check
from .metrics import bm25_scores, map_mrr, spearman
from .mge import MatchingMatrix, RefinedSet, TurnAttentionParams, aggregate_attention, aggregate_mean, matching_matrix, refine
from .synth import SynthSpec, synth_corpus
from .tensor import Tensor, backward, no_grad, reset_tape
from .trainer import AdamState, Model, TrainConfig, TrainResult, adam_step, model_from_checkpoint, sweep, train
from .vocab import TokenSeq, Vocab, build_vocab, tokenize

__version__ = "0.1.0"

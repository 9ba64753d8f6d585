"""Whitespace tokenizer and frequency-ranked vocabulary.

Tokenization is deliberately simple: lowercase, split on whitespace, map
through the vocabulary with an UNK fallback, pad/truncate to a fixed
length.  Three ids are reserved: PAD=0, UNK=1, CLS=2.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
CLS_TOKEN = "<cls>"
_RESERVED = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN)


def split_text(text: str) -> list[str]:
    return text.lower().split()


@dataclass
class TokenSeq:
    """Fixed-length id vector with a 0/1 validity mask (1 = real token)."""

    ids: np.ndarray
    mask: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    @property
    def n_active(self) -> int:
        return int(self.mask.sum())


class Vocab:
    """Bijective token<->id map with dense ids and reserved slots."""

    def __init__(self, tokens: list[str]):
        if list(tokens[: len(_RESERVED)]) != list(_RESERVED):
            tokens = list(_RESERVED) + [t for t in tokens if t not in _RESERVED]
        self.id_to_token: list[str] = list(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise DataError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def save(self, path: str | Path) -> None:
        """One token per line; the line index is the id."""
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if lines[: len(_RESERVED)] != list(_RESERVED):
            raise DataError(f"{path}: not a vocab file (reserved tokens missing)")
        return Vocab(lines)


def build_vocab(sessions, max_size: int) -> Vocab:
    """Most frequent corpus tokens up to ``max_size`` (reserved slots included).

    Ties in frequency break lexicographically, so the result is a pure
    function of the corpus.
    """
    if not sessions:
        raise DataError("cannot build a vocabulary from an empty corpus")
    if max_size <= len(_RESERVED):
        raise ValueError(f"max_size must exceed {len(_RESERVED)} reserved slots")
    counts: Counter[str] = Counter()
    for session in sessions:
        for turn in session.turns:
            counts.update(split_text(turn.text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [tok for tok, _ in ranked[: max_size - len(_RESERVED)]]
    return Vocab(list(_RESERVED) + keep)


def tokenize(text: str, vocab: Vocab, n: int) -> TokenSeq:
    """Map text to exactly ``n`` ids: truncate long inputs, pad short ones."""
    if n < 1:
        raise ValueError(f"sequence length must be >= 1, got {n}")
    ids = np.full(n, PAD_ID, dtype=np.int64)
    mask = np.zeros(n, dtype=np.int8)
    toks = split_text(text)[:n]
    for i, tok in enumerate(toks):
        ids[i] = vocab.id_of(tok)
        mask[i] = 1
    return TokenSeq(ids=ids, mask=mask)

"""The two benchmarks: semantic retrieval (SR) and dialogue-based STS.

SR samples hold a query plus 100 BM25-retrieved candidates labeled by
intent agreement (positives capped at 30); models are scored by MAP and
MRR of their cosine rankings.  D-STS pairs carry integer 1-5 relevance
degrees; models are scored by Spearman correlation of cosine against the
gold degrees.

File formats (UTF-8 JSON lines):
    SR     {"query": str, "candidates": [{"text": str, "label": 0|1}, ...]}
    D-STS  {"a": str, "b": str, "score": 1..5}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import CorpusFormatError, DataError, DegenerateVectorError
from .metrics import RankingMetrics, bm25_scores, map_mrr, spearman
from .vocab import split_text

Embedder = Callable[[str], np.ndarray]


@dataclass(frozen=True)
class LabeledUtterance:
    """An utterance with its generating intent and generator metadata."""

    text: str
    intent: str
    domain: str | None = None
    register: int | None = None
    template_id: int | None = None


class Candidate(NamedTuple):
    text: str
    label: int


@dataclass
class SRSample:
    query: str
    candidates: list[Candidate]


@dataclass
class DSTSPair:
    a: str
    b: str
    score: int

    def __post_init__(self):
        if self.score not in (1, 2, 3, 4, 5):
            raise ValueError(f"D-STS score must be in 1..5, got {self.score}")


# -- dataset builders ----------------------------------------------------


def build_sr_dataset(
    labeled: Sequence[LabeledUtterance],
    per_query: int = 100,
    max_pos: int = 30,
    rng: np.random.Generator | None = None,
    num_queries: int | None = None,
) -> list[SRSample]:
    """Retrieval samples: top BM25 candidates per query, labeled by intent.

    The query itself (any exact text match) is excluded from its own
    candidates.  If more than ``max_pos`` positives are retrieved, the
    lowest-scoring excess positives are replaced by the next negatives
    down the ranking.  ``num_queries`` picks a random query subset;
    ``None`` uses every utterance as a query.
    """
    if len(labeled) < per_query + 1:
        raise DataError(
            f"SR dataset needs more than {per_query} utterances, got {len(labeled)}"
        )
    docs = [split_text(u.text) for u in labeled]
    indices = np.arange(len(labeled))
    if num_queries is not None:
        if rng is None:
            raise ValueError("num_queries requires an rng")
        indices = rng.choice(len(labeled), size=min(num_queries, len(labeled)), replace=False)
    samples = []
    for qi in indices:
        query = labeled[qi]
        scores = bm25_scores(docs[qi], docs)
        order = sorted(range(len(labeled)), key=lambda i: (-scores[i], i))
        chosen: list[Candidate] = []
        positives = 0
        for i in order:
            if labeled[i].text == query.text:
                continue
            label = int(labeled[i].intent == query.intent)
            if label and positives >= max_pos:
                continue
            positives += label
            chosen.append(Candidate(text=labeled[i].text, label=label))
            if len(chosen) == per_query:
                break
        if len(chosen) < per_query:
            raise DataError(f"query {qi}: only {len(chosen)} distinct candidates available")
        samples.append(SRSample(query=query.text, candidates=chosen))
    return samples


# degree proportions chosen so that surface token overlap alone carries
# little of the gold ordering (the high-overlap degrees 5 and 4 are rare)
DEFAULT_DSTS_MIX = {5: 0.03, 4: 0.07, 3: 0.30, 2: 0.30, 1: 0.30}


def build_dsts_dataset(
    labeled: Sequence[LabeledUtterance],
    n_pairs: int,
    rng: np.random.Generator,
    mix: dict[int, float] | None = None,
) -> list[DSTSPair]:
    """Sentence pairs with planted 1-5 relevance degrees.

    Degrees come from the generator metadata (template overlap downward):
    5 same intent + template, 4 same intent + register, 3 same intent,
    2 same domain, 1 different domain.  Degrees that the pool cannot
    support are skipped, so small pools yield fewer pairs.
    """
    if any(u.domain is None or u.register is None or u.template_id is None for u in labeled):
        raise ValueError("build_dsts_dataset needs domain/register/template metadata")
    mix = dict(DEFAULT_DSTS_MIX if mix is None else mix)

    def key(u: LabeledUtterance, degree: int):
        if degree == 5:
            return (u.intent, u.template_id)
        if degree == 4:
            return (u.intent, u.register)
        if degree == 3:
            return u.intent
        return u.domain

    def compatible(a: LabeledUtterance, b: LabeledUtterance, degree: int) -> bool:
        if a.text == b.text:
            return False
        if degree == 5:
            return a.intent == b.intent and a.template_id == b.template_id
        if degree == 4:
            return (
                a.intent == b.intent
                and a.register == b.register
                and a.template_id != b.template_id
            )
        if degree == 3:
            return a.intent == b.intent and a.register != b.register
        if degree == 2:
            return a.domain == b.domain and a.intent != b.intent
        return a.domain != b.domain

    buckets: dict[int, dict] = {d: {} for d in (5, 4, 3, 2)}
    for idx, u in enumerate(labeled):
        for d in (5, 4, 3, 2):
            buckets[d].setdefault(key(u, d), []).append(idx)

    pairs: list[DSTSPair] = []
    for degree in (5, 4, 3, 2, 1):
        target = int(round(n_pairs * mix.get(degree, 0.0)))
        attempts = 0
        found = 0
        while found < target and attempts < target * 50:
            attempts += 1
            a = labeled[int(rng.integers(0, len(labeled)))]
            if degree == 1:
                b = labeled[int(rng.integers(0, len(labeled)))]
            else:
                pool = buckets[degree].get(key(a, degree), [])
                if len(pool) < 2:
                    continue
                b = labeled[pool[int(rng.integers(0, len(pool)))]]
            if compatible(a, b, degree):
                pairs.append(DSTSPair(a=a.text, b=b.text, score=degree))
                found += 1
    perm = rng.permutation(len(pairs))
    return [pairs[i] for i in perm]


# -- file IO ---------------------------------------------------------------


def write_sr_file(samples: Sequence[SRSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            obj = {
                "query": s.query,
                "candidates": [{"text": c.text, "label": c.label} for c in s.candidates],
            }
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")


def read_sr_file(path: str | Path) -> list[SRSample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj.get("query"), str) or not isinstance(obj.get("candidates"), list):
                raise CorpusFormatError(f"line {line_no}: expected query and candidates")
            cands = []
            for c in obj["candidates"]:
                if not isinstance(c.get("text"), str) or c.get("label") not in (0, 1):
                    raise CorpusFormatError(f"line {line_no}: bad candidate entry")
                cands.append(Candidate(text=c["text"], label=int(c["label"])))
            samples.append(SRSample(query=obj["query"], candidates=cands))
    return samples


def write_dsts_file(pairs: Sequence[DSTSPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(
                json.dumps({"a": p.a, "b": p.b, "score": p.score}, ensure_ascii=False, sort_keys=True)
                + "\n"
            )


def read_dsts_file(path: str | Path) -> list[DSTSPair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            if (
                not isinstance(obj.get("a"), str)
                or not isinstance(obj.get("b"), str)
                or obj.get("score") not in (1, 2, 3, 4, 5)
            ):
                raise CorpusFormatError(f"line {line_no}: expected a, b, score in 1..5")
            pairs.append(DSTSPair(a=obj["a"], b=obj["b"], score=int(obj["score"])))
    return pairs


# -- model evaluation ------------------------------------------------------


def cosine_of(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError("cosine: zero-norm sentence embedding")
    return float(np.dot(u, v) / (nu * nv))


def evaluate_sr(embed: Embedder, samples: Sequence[SRSample]) -> RankingMetrics:
    """Rank candidates by embedding cosine (stable ties) and score MAP/MRR."""
    rankings = []
    for sample in samples:
        q = embed(sample.query)
        sims = [cosine_of(q, embed(c.text)) for c in sample.candidates]
        order = sorted(range(len(sims)), key=lambda i: (-sims[i], i))
        rankings.append([sample.candidates[i].label for i in order])
    return map_mrr(rankings)


def evaluate_dsts(embed: Embedder, pairs: Sequence[DSTSPair]) -> float:
    """Spearman correlation between gold degrees and embedding cosines."""
    if len(pairs) < 2:
        raise DataError("D-STS evaluation needs at least two pairs")
    gold = [p.score for p in pairs]
    sims = [cosine_of(embed(p.a), embed(p.b)) for p in pairs]
    return spearman(gold, sims)


def format_table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Fixed-width plain-text table."""
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for r_idx, row in enumerate(cells):
        lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(row)).rstrip())
        if r_idx == 0:
            lines.append("  ".join("-" * widths[i] for i in range(len(widths))))
    return "\n".join(lines)

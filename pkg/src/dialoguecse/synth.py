"""Synthetic intent-clustered dialogue generator.

Sessions are built from templated utterances.  Intents are organized as
(domain, role) cells; each intent owns a few templates split across two
surface registers.  Templates within a register share a register token,
registers of one intent share nothing lexically (their equivalence is
only observable from dialogue context), and sessions stay inside one
domain while drifting between its intents.  Every utterance carries its
generating intent, so retrieval and similarity gold labels can be
derived mechanically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import DialogueSession, Turn
from .evaluation import (
    DSTSPair,
    LabeledUtterance,
    SRSample,
    build_dsts_dataset,
    build_sr_dataset,
)

FUNCTION_WORDS = [
    "please", "can", "you", "the", "a", "is", "it", "ok", "now", "me", "to", "for",
]
NOISE_TOKENS = 150
INTENT_PERSISTENCE = 0.6


@dataclass
class SynthSpec:
    intents: int = 20
    templates_per_intent: int = 5
    sessions: int = 500
    turns_per_session: int = 6
    noise_rate: float = 0.12
    seed: int = 7

    def __post_init__(self):
        for name in ("intents", "templates_per_intent", "sessions", "turns_per_session"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ValueError(f"noise_rate must be in [0, 1), got {self.noise_rate}")


@dataclass(frozen=True)
class Template:
    intent_index: int
    template_id: int
    register: int
    tokens: tuple[str, ...]


class SynthResult(NamedTuple):
    sessions: list[DialogueSession]
    sr_samples: list[SRSample]
    dsts_pairs: list[DSTSPair]


def _build_templates(spec: SynthSpec, rng: np.random.Generator) -> list[list[Template]]:
    """One template list per intent; function-word slots drawn per template."""
    per_intent = []
    first_register = math.ceil(spec.templates_per_intent / 2)
    for i in range(spec.intents):
        templates = []
        for j in range(spec.templates_per_intent):
            register = 0 if j < first_register else 1
            fw = [FUNCTION_WORDS[int(rng.integers(0, len(FUNCTION_WORDS)))] for _ in range(4)]
            tokens = (
                fw[0],
                f"reg{i}x{register}",
                f"tp{i}x{j}a",
                fw[1],
                f"tp{i}x{j}b",
                fw[2],
                fw[3],
            )
            templates.append(
                Template(intent_index=i, template_id=j, register=register, tokens=tokens)
            )
        per_intent.append(templates)
    return per_intent


class _Generator:
    def __init__(self, spec: SynthSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.domains = max(2, int(round(math.sqrt(spec.intents))))
        self.roles = math.ceil(spec.intents / self.domains)
        self.templates = _build_templates(spec, self.rng)

    def intent_label(self, intent_index: int) -> str:
        return f"d{intent_index // self.roles}.r{intent_index % self.roles}"

    def domain_of(self, intent_index: int) -> int:
        return intent_index // self.roles

    def intents_in_domain(self, domain: int) -> list[int]:
        lo = domain * self.roles
        return [i for i in range(lo, min(lo + self.roles, self.spec.intents))]

    def render(self, template: Template) -> str:
        tokens = list(template.tokens)
        if self.spec.noise_rate > 0:
            for pos in range(len(tokens)):
                if self.rng.random() < self.spec.noise_rate:
                    tokens[pos] = f"zz{int(self.rng.integers(0, NOISE_TOKENS))}"
        return " ".join(tokens)

    def utterance(self, intent_index: int) -> tuple[str, Template]:
        templates = self.templates[intent_index]
        template = templates[int(self.rng.integers(0, len(templates)))]
        return self.render(template), template

    def session(self, index: int) -> tuple[DialogueSession, list[LabeledUtterance]]:
        domain = int(self.rng.integers(0, self.domains))
        choices = self.intents_in_domain(domain)
        intent = choices[int(self.rng.integers(0, len(choices)))]
        turns = []
        labeled = []
        for t in range(self.spec.turns_per_session):
            if t > 0 and self.rng.random() >= INTENT_PERSISTENCE:
                intent = choices[int(self.rng.integers(0, len(choices)))]
            text, template = self.utterance(intent)
            turns.append(
                Turn(speaker="AB"[t % 2], text=text, intent=self.intent_label(intent))
            )
            labeled.append(
                LabeledUtterance(
                    text=text,
                    intent=self.intent_label(intent),
                    domain=f"d{domain}",
                    register=template.register,
                    # globally unique template key (intents own < 1000 templates)
                    template_id=template.intent_index * 1000 + template.template_id,
                )
            )
        return DialogueSession(session_id=f"synth-{index:05d}", turns=turns), labeled


def synth_corpus(
    spec: SynthSpec,
    sr_queries: int = 120,
    sr_pool: int = 420,
    dsts_pairs: int = 400,
) -> SynthResult:
    """Generate sessions plus SR and D-STS evaluation sets.

    Bitwise reproducible for a fixed spec.  Evaluation sets draw from a
    deduplicated pool of session utterances; if the corpus is too small
    to fill a 100-candidate retrieval pool, the SR set is empty.
    """
    gen = _Generator(spec)
    sessions = []
    all_labeled: list[LabeledUtterance] = []
    for idx in range(spec.sessions):
        session, labeled = gen.session(idx)
        sessions.append(session)
        all_labeled.extend(labeled)

    seen: set[str] = set()
    unique = []
    for u in all_labeled:
        if u.text not in seen:
            seen.add(u.text)
            unique.append(u)
    perm = gen.rng.permutation(len(unique))
    pool = [unique[i] for i in perm[: min(sr_pool, len(unique))]]

    sr_samples: list[SRSample] = []
    if len(pool) > 100:
        sr_samples = build_sr_dataset(
            pool, per_query=100, max_pos=30, rng=gen.rng, num_queries=sr_queries
        )
    dsts = build_dsts_dataset(pool if len(pool) >= 4 else unique, dsts_pairs, gen.rng)
    return SynthResult(sessions=sessions, sr_samples=sr_samples, dsts_pairs=dsts)

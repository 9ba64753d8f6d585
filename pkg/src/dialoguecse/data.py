"""Dialogue corpus ingestion, preprocessing, and context extraction.

The on-disk corpus format is UTF-8 JSON lines, one session per line:

    {"session_id": str,
     "turns": [{"speaker": "A"|"B", "text": str, "intent": str|null}, ...]}

Preprocessing merges consecutive same-speaker turns and drops sessions
shorter than four turns; afterwards every session strictly alternates
speakers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CorpusFormatError

SPEAKERS = ("A", "B")


@dataclass
class Turn:
    speaker: str
    text: str
    intent: str | None = None


@dataclass
class DialogueSession:
    """An ordered, speaker-tagged conversation."""

    session_id: str
    turns: list[Turn]


@dataclass
class ContextWindow:
    """A response utterance plus the surrounding turns chosen as context.

    ``positions`` holds the original turn index of each context element;
    ``k`` is the response's own index.  The response never appears in its
    context.
    """

    context: list[Turn]
    response: Turn
    k: int
    positions: list[int] = field(default_factory=list)


def _parse_session(obj, line_no: int) -> DialogueSession:
    if not isinstance(obj, dict):
        raise CorpusFormatError(f"line {line_no}: expected a JSON object")
    sid = obj.get("session_id")
    if not isinstance(sid, str):
        raise CorpusFormatError(f"line {line_no}: missing or non-string 'session_id'")
    raw_turns = obj.get("turns")
    if not isinstance(raw_turns, list) or not raw_turns:
        raise CorpusFormatError(f"line {line_no}: missing or empty 'turns'")
    turns = []
    for t_idx, raw in enumerate(raw_turns):
        if not isinstance(raw, dict):
            raise CorpusFormatError(f"line {line_no}: turn {t_idx} is not an object")
        speaker = raw.get("speaker")
        if speaker not in SPEAKERS:
            raise CorpusFormatError(f"line {line_no}: turn {t_idx} has bad speaker {speaker!r}")
        text = raw.get("text")
        if not isinstance(text, str):
            raise CorpusFormatError(f"line {line_no}: turn {t_idx} has non-string text")
        intent = raw.get("intent")
        if intent is not None and not isinstance(intent, str):
            raise CorpusFormatError(f"line {line_no}: turn {t_idx} has non-string intent")
        turns.append(Turn(speaker=speaker, text=text, intent=intent))
    return DialogueSession(session_id=sid, turns=turns)


def load_corpus(path: str | Path) -> list[DialogueSession]:
    """Parse a JSON-lines corpus; malformed lines are reported by number."""
    sessions = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            sessions.append(_parse_session(obj, line_no))
    return sessions


def save_corpus(sessions: list[DialogueSession], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sessions:
            obj = {
                "session_id": s.session_id,
                "turns": [
                    {"speaker": t.speaker, "text": t.text, "intent": t.intent} for t in s.turns
                ],
            }
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")


def preprocess(sessions: list[DialogueSession]) -> list[DialogueSession]:
    """Merge consecutive same-speaker turns, then drop sessions with < 4 turns.

    Merged text is joined with a single space and keeps the first turn's
    intent.  Idempotent, order-preserving, never mutates its input.
    """
    out = []
    for session in sessions:
        merged: list[Turn] = []
        for turn in session.turns:
            if merged and merged[-1].speaker == turn.speaker:
                merged[-1] = Turn(
                    speaker=turn.speaker,
                    text=merged[-1].text + " " + turn.text,
                    intent=merged[-1].intent,
                )
            else:
                merged.append(Turn(speaker=turn.speaker, text=turn.text, intent=turn.intent))
        if len(merged) >= 4:
            out.append(DialogueSession(session_id=session.session_id, turns=merged))
    return out


def extract_windows(session: DialogueSession, turn_budget: int) -> list[ContextWindow]:
    """One window per response position.

    The context is the nearest ``turn_budget`` turns around the response,
    chosen alternately before/after (before side first on ties) and then
    kept in original order.
    """
    if turn_budget < 1:
        raise ValueError(f"turn_budget must be >= 1, got {turn_budget}")
    t = len(session.turns)
    windows = []
    for k in range(t):
        picked: list[int] = []
        before, after = k - 1, k + 1
        while len(picked) < turn_budget and (before >= 0 or after < t):
            if before >= 0:
                picked.append(before)
                before -= 1
                if len(picked) == turn_budget:
                    break
            if after < t:
                picked.append(after)
                after += 1
        picked.sort()
        windows.append(
            ContextWindow(
                context=[session.turns[i] for i in picked],
                response=session.turns[k],
                k=k,
                positions=picked,
            )
        )
    return windows

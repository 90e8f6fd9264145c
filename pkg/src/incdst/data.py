"""Corpus representation, JSONL corpus files, vocabulary and corpus statistics.

A corpus file holds one JSON object per line::

    {"dialog_id": "...", "turns": [{"system": "...", "asr": "...",
      "asr_score": 0.93, "transcript": "...",
      "goal": {"pricerange": ..., "area": ..., "name": ..., "food": ...},
      "method": "...", "requested": ["phone", ...]}, ...]}

Utterances are stored as text and split on whitespace after normalization.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ParseError, ValidationError

GOAL_SLOTS = ("pricerange", "area", "name", "food")
SYSTEM_CONFIDENCE = 1.0
UNK = "<unk>"
MODES = ("asr", "transcript")

_WS = re.compile(r"\s+")


def normalize(token: str) -> str:
    """Lowercase, trim and collapse internal whitespace. Punctuation is kept."""
    return _WS.sub(" ", token.strip().lower())


def tokenize(text: str) -> list[str]:
    return [t for t in (normalize(w) for w in text.split()) if t]


class TokenObs(NamedTuple):
    surface: str
    token_id: int
    confidence: float
    speaker: str  # "system" | "user"


@dataclass(frozen=True)
class TurnAnnotation:
    goal: dict = field(default_factory=lambda: {s: "none" for s in GOAL_SLOTS})
    method: str = "none"
    requested: frozenset = frozenset()

    def value(self, component: str):
        """Gold value of one micro-component (a frozenset for ``requested``)."""
        if component in GOAL_SLOTS:
            return self.goal.get(component, "none")
        if component == "method":
            return self.method
        if component == "requested":
            return self.requested
        raise KeyError(component)

    def to_json(self) -> dict:
        return {
            "goal": {s: self.goal.get(s, "none") for s in GOAL_SLOTS},
            "method": self.method,
            "requested": sorted(self.requested),
        }


@dataclass
class Turn:
    system_tokens: list[str]
    asr_tokens: list[str]
    asr_confidence: float
    gold: TurnAnnotation
    transcript_tokens: list[str] | None = None
    mode: str = "asr"

    @property
    def user_tokens(self) -> list[str]:
        if self.mode == "transcript":
            if self.transcript_tokens is None:
                raise ValidationError("transcript mode requires a transcript for every turn")
            return self.transcript_tokens
        return self.asr_tokens

    @property
    def user_confidence(self) -> float:
        return 1.0 if self.mode == "transcript" else self.asr_confidence

    def observations(self, vocab: "Vocabulary") -> list[TokenObs]:
        obs = [TokenObs(t, vocab.lookup(t), SYSTEM_CONFIDENCE, "system") for t in self.system_tokens]
        conf = self.user_confidence
        obs.extend(TokenObs(t, vocab.lookup(t), conf, "user") for t in self.user_tokens)
        return obs


@dataclass
class Dialog:
    dialog_id: str
    turns: list[Turn]


# ---------------------------------------------------------------------------
# corpus files
# ---------------------------------------------------------------------------


def _parse_turn(raw: dict, mode: str, line: int) -> Turn:
    try:
        score = float(raw["asr_score"])
        goal_raw = raw.get("goal") or {}
        goal = {s: normalize(str(goal_raw.get(s, "none"))) for s in GOAL_SLOTS}
        gold = TurnAnnotation(
            goal=goal,
            method=normalize(str(raw.get("method", "none"))),
            requested=frozenset(normalize(str(r)) for r in raw.get("requested", [])),
        )
        transcript = raw.get("transcript")
        turn = Turn(
            system_tokens=tokenize(raw.get("system", "")),
            asr_tokens=tokenize(raw["asr"]),
            asr_confidence=score,
            gold=gold,
            transcript_tokens=None if transcript is None else tokenize(transcript),
            mode=mode,
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ParseError(f"malformed turn: {exc!r}", line) from None
    if not 0.0 <= score <= 1.0:
        raise ValidationError(f"line {line}: asr_score {score} outside [0, 1]")
    if mode == "transcript" and turn.transcript_tokens is None:
        raise ValidationError(f"line {line}: transcript missing in transcript mode")
    return turn


def parse_dialog(text: str, mode: str = "asr", line: int | None = None) -> Dialog:
    try:
        raw = json.loads(text)
        dialog_id = str(raw["dialog_id"])
        turns_raw = raw["turns"]
        if not isinstance(turns_raw, list):
            raise TypeError("turns must be a list")
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"malformed dialog record: {exc}", line) from None
    return Dialog(dialog_id, [_parse_turn(t, mode, line) for t in turns_raw])


def load_corpus(path, mode: str = "asr") -> list[Dialog]:
    """Read a JSONL corpus. ``mode`` selects ASR 1-best or manual transcripts."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    dialogs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if text.strip():
                dialogs.append(parse_dialog(text, mode, lineno))
    return dialogs


def dialog_to_json(dialog: Dialog) -> dict:
    turns = []
    for turn in dialog.turns:
        rec = {
            "system": " ".join(turn.system_tokens),
            "asr": " ".join(turn.asr_tokens),
            "asr_score": turn.asr_confidence,
        }
        if turn.transcript_tokens is not None:
            rec["transcript"] = " ".join(turn.transcript_tokens)
        rec.update(turn.gold.to_json())
        turns.append(rec)
    return {"dialog_id": dialog.dialog_id, "turns": turns}


def save_corpus(dialogs: Iterable[Dialog], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogs:
            fh.write(json.dumps(dialog_to_json(d), sort_keys=True) + "\n")


def with_mode(dialogs: list[Dialog], mode: str) -> list[Dialog]:
    """Same dialogs read through a different user-token stream."""
    out = []
    for d in dialogs:
        turns = [Turn(t.system_tokens, t.asr_tokens, t.asr_confidence, t.gold, t.transcript_tokens, mode) for t in d.turns]
        out.append(Dialog(d.dialog_id, turns))
    return out


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


class Vocabulary:
    """Dense token ids with the unknown token reserved at id 0."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens = [UNK]
        self.index = {UNK: 0}
        for tok in tokens:
            if tok not in self.index:
                self.index[tok] = len(self.tokens)
                self.tokens.append(tok)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def lookup(self, token: str) -> int:
        return self.index.get(token, 0)


def build_vocab(train_corpus: list[Dialog], include_system: bool = False) -> Vocabulary:
    """Vocabulary over the user tokens of ``train_corpus`` in first-occurrence order.

    With ``include_system`` the system utterances contribute tokens as well.
    """
    if not train_corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")

    def stream():
        for d in train_corpus:
            for t in d.turns:
                if include_system:
                    yield from t.system_tokens
                yield from t.user_tokens

    return Vocabulary(stream())


def oov_rate(train_corpus: list[Dialog], eval_corpus: list[Dialog], by: str = "type") -> float:
    """Fraction of evaluation user tokens unseen in training user utterances.

    ``by="type"`` counts distinct tokens, ``by="token"`` counts occurrences.
    """
    seen = {tok for d in train_corpus for t in d.turns for tok in t.user_tokens}
    occurrences = [tok for d in eval_corpus for t in d.turns for tok in t.user_tokens]
    if by == "type":
        pool = set(occurrences)
    elif by == "token":
        pool = occurrences
    else:
        raise ValueError("by must be 'type' or 'token'")
    if not pool:
        return 0.0
    return sum(tok not in seen for tok in pool) / len(pool)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


@dataclass
class StatsReport:
    dialogs: int
    distinct_tokens: int
    max_seq_length: int
    avg_tokens_per_turn: float
    avg_turns_per_dialog: float

    def to_json(self) -> dict:
        return {
            "number_of_dialogs": self.dialogs,
            "number_of_tokens": self.distinct_tokens,
            "max_seq_length": self.max_seq_length,
            "avg_tokens_per_turn": self.avg_tokens_per_turn,
            "avg_turns_per_dialog": self.avg_turns_per_dialog,
        }


def corpus_stats(corpus: list[Dialog]) -> StatsReport:
    """User-utterance statistics in the layout of the usual dataset table."""
    lengths = [len(t.user_tokens) for d in corpus for t in d.turns]
    distinct = {tok for d in corpus for t in d.turns for tok in t.user_tokens}
    return StatsReport(
        dialogs=len(corpus),
        distinct_tokens=len(distinct),
        max_seq_length=max(lengths, default=0),
        avg_tokens_per_turn=float(np.mean(lengths)) if lengths else 0.0,
        avg_turns_per_dialog=len(lengths) / len(corpus) if corpus else 0.0,
    )


# ---------------------------------------------------------------------------
# encoding for the tracker
# ---------------------------------------------------------------------------


@dataclass
class EncodedDialog:
    """Token ids and confidences of a whole dialog plus per-turn spans.

    ``spans[k] = (start, user_start, end)`` indexes into ``ids``: system
    tokens occupy ``[start, user_start)`` and user tokens ``[user_start, end)``.
    """

    dialog_id: str
    ids: np.ndarray
    confidences: np.ndarray
    spans: list[tuple[int, int, int]]
    golds: list[TurnAnnotation]
    surfaces: list[list[str]]  # user-token surfaces per turn

    @property
    def user_positions(self) -> np.ndarray:
        return np.concatenate([np.arange(u, e) for _, u, e in self.spans]) if self.spans else np.zeros(0, int)


def encode_dialog(dialog: Dialog, vocab: Vocabulary) -> EncodedDialog:
    ids, confs, spans, golds, surfaces = [], [], [], [], []
    for turn in dialog.turns:
        start = len(ids)
        obs = turn.observations(vocab)
        n_sys = len(turn.system_tokens)
        for o in obs:
            if not 0.0 <= o.confidence <= 1.0:
                raise ValidationError(f"confidence {o.confidence} outside [0, 1]")
            ids.append(o.token_id)
            confs.append(o.confidence)
        spans.append((start, start + n_sys, len(ids)))
        golds.append(turn.gold)
        surfaces.append(list(turn.user_tokens))
    return EncodedDialog(
        dialog.dialog_id,
        np.asarray(ids, dtype=np.int64),
        np.asarray(confs, dtype=np.float64),
        spans,
        golds,
        surfaces,
    )

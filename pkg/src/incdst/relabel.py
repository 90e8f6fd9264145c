"""Token-level turn-taking labels derived from the tracker's own hypotheses.

A user token gets label 0 when the tracker's hypothesis after that token
already equals its hypothesis after the last token of the utterance, and 1
otherwise. Labels are produced separately for every micro-component.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dialog, EncodedDialog, encode_dialog
from .errors import ConfigurationError, ParseError
from .model import (
    DialogTrack,
    EncoderState,
    TrackerEnsemble,
    TrackerModel,
    TurnTrack,
    track_dialog,
    track_turn,
)


def labels_from_hypotheses(hypotheses: Sequence) -> np.ndarray:
    """label_i = 1 if hypothesis i differs from the last hypothesis, else 0."""
    if not len(hypotheses):
        return np.zeros(0, dtype=np.int64)
    final = hypotheses[-1]
    return np.array([int(h != final) for h in hypotheses], dtype=np.int64)


def turn_labels(turn: TurnTrack, specs: dict) -> dict[str, np.ndarray]:
    return {
        name: labels_from_hypotheses([spec.hypothesis(p) for p in turn.probs[name]])
        for name, spec in specs.items()
    }


def relabel_turn(model: TrackerModel, state: EncoderState, turn) -> tuple[np.ndarray, EncoderState]:
    """Labels for one component over one turn fed from ``state``; also returns the new state."""
    probs, _, new_state = track_turn(model, state, turn)
    return labels_from_hypotheses([model.spec.hypothesis(p) for p in probs]), new_state


@dataclass
class TokenLabelRecord:
    dialog_id: str
    turn: int
    token_index: int  # 0-based position in the user utterance
    surface: str
    labels: dict

    def to_json(self) -> dict:
        return {
            "dialog_id": self.dialog_id,
            "turn": self.turn,
            "token_index": self.token_index,
            "surface": self.surface,
            "labels": {k: int(v) for k, v in self.labels.items()},
        }


@dataclass
class RelabeledDataset:
    """Labels for every user token of a corpus.

    Hidden vectors are not stored; they are recomputed from the tracker
    identified by ``fingerprint``.
    """

    records: list[TokenLabelRecord]
    fingerprint: str
    components: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def labels(self, component: str) -> np.ndarray:
        return np.array([r.labels[component] for r in self.records], dtype=np.int64)

    def save(self, path) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
        meta = {"fingerprint": self.fingerprint, "components": self.components, "records": len(self.records)}
        meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RelabeledDataset":
        path = Path(path)
        mp = meta_path(path)
        if not mp.exists():
            raise ConfigurationError(f"{mp} missing; cannot identify the tracker used for relabeling")
        meta = json.loads(mp.read_text())
        records = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    raw = json.loads(line)
                    records.append(
                        TokenLabelRecord(
                            raw["dialog_id"], int(raw["turn"]), int(raw["token_index"]), raw["surface"], raw["labels"]
                        )
                    )
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ParseError(f"malformed label record: {exc}", lineno) from None
        if len(records) != meta.get("records", len(records)):
            raise ConfigurationError(f"{path}: record count does not match its metadata")
        return cls(records, meta["fingerprint"], meta["components"])


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def _check_vocabulary(ensemble: TrackerEnsemble, encoded: list[EncodedDialog]) -> None:
    V = len(ensemble.vocab)
    user_ids = [enc.ids[enc.user_positions] for enc in encoded]
    ids = np.concatenate(user_ids) if user_ids else np.zeros(0, np.int64)
    if len(ids) and (ids.max() >= V or ids.min() < 0):
        raise ConfigurationError("corpus was encoded with a different vocabulary")
    if len(ids) and not ids.any():
        raise ConfigurationError("no user token of the corpus is in the tracker vocabulary")


def relabel_corpus(
    ensemble: TrackerEnsemble,
    corpus: list[Dialog] | list[EncodedDialog],
    tracks: list[DialogTrack] | None = None,
) -> RelabeledDataset:
    """One label record per user token, in corpus order."""
    encoded = [d if isinstance(d, EncodedDialog) else encode_dialog(d, ensemble.vocab) for d in corpus]
    _check_vocabulary(ensemble, encoded)
    if tracks is None:
        tracks = [track_dialog(ensemble, enc) for enc in encoded]
    specs = ensemble.specs
    records = []
    for track in tracks:
        for t_idx, turn in enumerate(track.turns):
            labels = turn_labels(turn, specs)
            for i in range(turn.n):
                records.append(
                    TokenLabelRecord(
                        track.dialog_id, t_idx, i, turn.surfaces[i], {c: int(labels[c][i]) for c in specs}
                    )
                )
    return RelabeledDataset(records, ensemble.fingerprint(), list(specs))

"""Incremental turn-taking decider.

One binary head per micro-component reads the frozen tracker's hidden vector
after each user token. Class 0 ("the state will not change any more") is the
take-turn class, so ``p_take = p(0 | h)``. A turn is taken at the first user
token where every component's ``p_take`` reaches the threshold ``d``; when
that never happens the turn is taken at its last token.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .checkpoint import read_container, write_container
from .data import Dialog, EncodedDialog, encode_dialog
from .errors import ConfigurationError, InvalidShapeError, OrderingError, ParseError
from .model import DialogTrack, TrackerEnsemble, component_seed, track_dialog
from .relabel import RelabeledDataset

log = logging.getLogger(__name__)

TAKE, WAIT = 0, 1


class TTDHead:
    """Affine map from the tracker hidden vector to two log-probabilities."""

    def __init__(self, component: str, weight: nn.Parameter, bias: nn.Parameter):
        if weight.shape[0] != 2 or bias.shape != (2,):
            raise InvalidShapeError("a turn-taking head has exactly two outputs")
        self.component = component
        self.weight = weight
        self.bias = bias

    @classmethod
    def initialize(cls, component: str, hidden_size: int = 100, seed: int = 0) -> "TTDHead":
        rng = np.random.default_rng(component_seed(seed, "ttd/" + component))
        return cls(
            component,
            nn.Parameter(nn.init_uniform(rng, (2, hidden_size), hidden_size)),
            nn.Parameter(nn.init_uniform(rng, (2,), hidden_size)),
        )

    @property
    def hidden_size(self) -> int:
        return self.weight.shape[1]

    def parameters(self):
        return [self.weight, self.bias]

    def copy(self) -> "TTDHead":
        return TTDHead(self.component, self.weight.copy(), self.bias.copy())

    def log_probs(self, h: np.ndarray) -> np.ndarray:
        if h.shape[-1] != self.hidden_size:
            raise InvalidShapeError(f"TTD head expects hidden size {self.hidden_size}, got {h.shape}")
        return nn.log_softmax(nn.affine(self.weight.value, self.bias.value, h))


def ttd_forward(head: TTDHead, h: np.ndarray):
    """(p_take, p_wait) for one hidden vector, or two arrays for a stack of them."""
    p = np.exp(head.log_probs(h))
    return p[..., TAKE], p[..., WAIT]


def decide(p_take, d: float) -> bool:
    """Take the turn iff every component's p_take is at least ``d``."""
    return bool(np.min(p_take) >= d)


def first_take(p_take: np.ndarray, d: float) -> tuple[int, bool]:
    """1-based take index over an (n, K) p_take matrix, and whether it was forced."""
    n = p_take.shape[0]
    if n == 0:
        return 0, True
    fires = p_take.min(axis=1) >= d
    if fires.any():
        return int(np.argmax(fires)) + 1, False
    return n, True


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TTDConfig:
    epochs: int = 30
    seed: int = 0
    optimizer: nn.OptimizerConfig = field(default_factory=nn.OptimizerConfig)
    patience: int = 5
    balance_classes: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


@dataclass
class TokenFeatures:
    """Hidden vectors and labels of one component, grouped by dialog."""

    X: list  # per dialog (n_d, H)
    y: list  # per dialog (n_d,)

    def stacked(self):
        if not self.X:
            return np.zeros((0, 0)), np.zeros(0, np.int64)
        return np.vstack(self.X), np.concatenate(self.y)


def _tracks(ensemble, corpus, tracks):
    if tracks is not None:
        return tracks
    return [track_dialog(ensemble, d) for d in corpus]


def token_features(
    dataset: RelabeledDataset,
    ensemble: TrackerEnsemble,
    corpus: list[Dialog] | list[EncodedDialog] | None = None,
    tracks: list[DialogTrack] | None = None,
) -> dict[str, TokenFeatures]:
    """Pair every label record with the hidden vector the tracker produced for it."""
    if dataset.fingerprint != ensemble.fingerprint():
        raise ConfigurationError("relabeled dataset was produced by a different tracker ensemble")
    tracks = _tracks(ensemble, corpus, tracks)
    feats = {c: TokenFeatures([], []) for c in ensemble.components}
    pos = 0
    records = dataset.records
    for track in tracks:
        n_tokens = sum(t.n for t in track.turns)
        chunk = records[pos : pos + n_tokens]
        if len(chunk) != n_tokens or any(r.dialog_id != track.dialog_id for r in chunk):
            raise ConfigurationError(f"label records do not line up with dialog {track.dialog_id}")
        pos += n_tokens
        if not n_tokens:
            continue
        for c in ensemble.components:
            feats[c].X.append(np.vstack([t.hidden[c] for t in track.turns if t.n]))
            feats[c].y.append(np.array([r.labels[c] for r in chunk], dtype=np.int64))
    if pos != len(records):
        raise ConfigurationError("relabeled dataset has more records than the corpus has user tokens")
    return feats


def token_accuracy(head: TTDHead, X: np.ndarray, y: np.ndarray) -> float:
    if not len(y):
        return float("nan")
    return float(np.mean(np.argmax(head.log_probs(X), axis=1) == y))


def head_loss(head: TTDHead, X: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None):
    """Summed (optionally class-weighted) NLL of labels ``y`` and its gradients (loss, dW, db)."""
    lp = head.log_probs(X)
    rows = np.arange(len(y))
    w = np.ones(len(y)) if weights is None else weights[y]
    loss = -float((w * lp[rows, y]).sum())
    dlogits = np.exp(lp)
    dlogits[rows, y] -= 1.0
    dlogits *= w[:, None]
    dW, db, _ = nn.affine_backward(dlogits, head.weight.value, X)
    return loss, dW, db


def _train_head(component, train: TokenFeatures, dev: TokenFeatures | None, hidden_size, config: TTDConfig):
    head = TTDHead.initialize(component, hidden_size, config.seed)
    weights = np.ones(2)
    if config.balance_classes:
        _, y_all = train.stacked()
        counts = np.bincount(y_all, minlength=2).astype(float)
        weights = np.where(counts > 0, len(y_all) / (2.0 * np.maximum(counts, 1.0)), 0.0)
    rng = np.random.default_rng(config.seed)
    dev_X, dev_y = dev.stacked() if dev is not None else (None, None)
    best, best_acc, best_epoch = head.copy(), -1.0, 0
    history = []
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for i in rng.permutation(len(train.X)):
            loss, dW, db = head_loss(head, train.X[i], train.y[i], weights)
            total += loss
            head.weight.grad += dW
            head.bias.grad += db
            for p in head.parameters():
                nn.amsgrad_step(p, config.optimizer)
        acc = token_accuracy(head, dev_X, dev_y) if dev is not None else float("nan")
        history.append({"epoch": epoch, "loss": total, "dev_accuracy": acc})
        if dev is None or acc > best_acc:
            best, best_acc, best_epoch = head.copy(), acc, epoch
        elif epoch - best_epoch >= config.patience:
            break
    log.info("ttd %s best epoch %d dev acc %.4f", component, best_epoch, best_acc)
    return best, history


def train_ttd(
    dataset: RelabeledDataset,
    ensemble: TrackerEnsemble,
    corpus: list[Dialog] | None = None,
    config: TTDConfig = TTDConfig(),
    dev_dataset: RelabeledDataset | None = None,
    dev_corpus: list[Dialog] | None = None,
    tracks: list[DialogTrack] | None = None,
    dev_tracks: list[DialogTrack] | None = None,
) -> tuple[dict[str, TTDHead], dict]:
    """Fit one head per component on relabeled tokens; the tracker stays frozen."""
    feats = token_features(dataset, ensemble, corpus, tracks)
    dev_feats = None
    if dev_dataset is not None:
        dev_feats = token_features(dev_dataset, ensemble, dev_corpus, dev_tracks)
    H = next(iter(ensemble)).config.hidden_size
    heads, histories = {}, {}
    for c in ensemble.components:
        heads[c], histories[c] = _train_head(c, feats[c], dev_feats[c] if dev_feats else None, H, config)
    return heads, histories


# ---------------------------------------------------------------------------
# streaming decisions
# ---------------------------------------------------------------------------


def attach_p_take(track: DialogTrack, heads: dict[str, TTDHead], components: list[str]) -> DialogTrack:
    """Store per-token p_take, one column per component, on every turn of ``track``."""
    missing = [c for c in components if c not in heads]
    if missing:
        raise ConfigurationError(f"no turn-taking head for components {missing}")
    for turn in track.turns:
        cols = [ttd_forward(heads[c], turn.hidden[c])[0] if turn.n else np.zeros(0) for c in components]
        turn.p_take = np.column_stack(cols) if turn.n else np.zeros((0, len(components)))
    return track


@dataclass
class TurnDecision:
    n_tokens: int
    take_index: int
    forced: bool
    p_take: np.ndarray  # (n, K)

    @property
    def ratio(self) -> float:
        return self.take_index / self.n_tokens if self.n_tokens else float("nan")

    @property
    def joint_p_take(self) -> np.ndarray:
        """Product over components, the independent-components joint probability."""
        return self.p_take.prod(axis=1)


@dataclass
class DecisionTrace:
    dialog_id: str
    components: list
    turns: list

    def records(self) -> list[dict]:
        out = []
        for t_idx, t in enumerate(self.turns):
            at = t.p_take[t.take_index - 1] if t.n_tokens else np.full(len(self.components), np.nan)
            out.append(
                {
                    "dialog_id": self.dialog_id,
                    "turn": t_idx,
                    "n_tokens": t.n_tokens,
                    "take_index": t.take_index,
                    "forced": t.forced,
                    "ratio": t.ratio if t.n_tokens else None,
                    "p_take": {c: float(v) if t.n_tokens else None for c, v in zip(self.components, at)},
                    "joint_p_take": float(t.joint_p_take[t.take_index - 1]) if t.n_tokens else None,
                }
            )
        return out


@dataclass
class IncrementalRun:
    trace: DecisionTrace
    hypotheses: list  # per turn: component -> hypothesis frozen at the take index
    distributions: list  # per turn: component -> distribution at the take index


def decisions_for_track(track: DialogTrack, d: float, components: list[str]) -> DecisionTrace:
    turns = []
    for turn in track.turns:
        if turn.p_take is None:
            raise OrderingError("p_take missing; call attach_p_take first")
        k, forced = first_take(turn.p_take, d)
        turns.append(TurnDecision(turn.n, k, forced, turn.p_take))
    return DecisionTrace(track.dialog_id, list(components), turns)


def run_incremental(
    ensemble: TrackerEnsemble,
    heads: dict[str, TTDHead],
    dialog: Dialog | EncodedDialog,
    d: float,
    track: DialogTrack | None = None,
) -> IncrementalRun:
    """Stream a dialog, freezing each turn's hypothesis where the decider fires.

    The encoder keeps consuming the rest of the utterance after the decision,
    so later turns see the same history as the full tracker.
    """
    if track is None:
        track = track_dialog(ensemble, dialog)
    if track.turns and track.turns[0].p_take is None:
        attach_p_take(track, heads, ensemble.components)
    trace = decisions_for_track(track, d, ensemble.components)
    specs = ensemble.specs
    hyps, dists = [], []
    for turn, dec in zip(track.turns, trace.turns):
        k = dec.take_index if turn.n else None
        dist = {c: turn.distribution(c, k) for c in specs}
        dists.append(dist)
        hyps.append({c: specs[c].hypothesis(p) for c, p in dist.items()})
    return IncrementalRun(trace, hyps, dists)


def write_traces(traces: list[DecisionTrace], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tr in traces:
            for rec in tr.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_heads(heads: dict[str, TTDHead], directory, fingerprint: str) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for c, head in heads.items():
        write_container(
            directory / f"{c}.ttd",
            {"kind": "ttd", "component": c, "ensemble_fingerprint": fingerprint},
            [("weight", head.weight.value), ("bias", head.bias.value)],
        )
    manifest = {"components": list(heads), "ensemble_fingerprint": fingerprint}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_heads(directory, ensemble: TrackerEnsemble | None = None) -> dict[str, TTDHead]:
    directory = Path(directory)
    mf = directory / "manifest.json"
    if not mf.exists():
        raise OrderingError(f"no turn-taking heads in {directory}; run `train-ttd` first")
    manifest = json.loads(mf.read_text())
    if ensemble is not None and manifest["ensemble_fingerprint"] != ensemble.fingerprint():
        raise ConfigurationError("turn-taking heads were trained on a different tracker ensemble")
    heads = {}
    for c in manifest["components"]:
        header, tensors = read_container(directory / f"{c}.ttd")
        if header.get("kind") != "ttd":
            raise ParseError(f"{c}.ttd is not a turn-taking head")
        heads[c] = TTDHead(c, nn.Parameter(tensors["weight"]), nn.Parameter(tensors["bias"]))
    return heads

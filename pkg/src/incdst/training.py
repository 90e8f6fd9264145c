"""Per-component training with token-accumulated cross-entropy and AMSGrad."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import Dialog, EncodedDialog, Vocabulary, encode_dialog
from .errors import ConfigurationError, TrainingDivergedError
from .model import (
    CATEGORICAL,
    DEFAULT_COMPONENTS,
    ComponentSpec,
    EncoderState,
    ModelConfig,
    TrackerEnsemble,
    TrackerModel,
    init_state,
    run_sequence,
    track_encoded,
    track_turn,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    seed: int = 0
    optimizer: nn.OptimizerConfig = field(default_factory=nn.OptimizerConfig)
    patience: int = 5
    components: tuple = DEFAULT_COMPONENTS

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


def _targets(spec: ComponentSpec, enc: EncodedDialog):
    """Per-user-token targets, in user-token order across the dialog."""
    rows = []
    for (_, u, e), gold in zip(enc.spans, enc.golds):
        if e > u:
            rows.extend([spec.target(gold.value(spec.name))] * (e - u))
    if spec.kind == CATEGORICAL:
        return np.asarray(rows, dtype=np.int64)
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), spec.size)


def _head_loss(spec: ComponentSpec, logits: np.ndarray, targets):
    """Summed loss over rows and its gradient with respect to the logits."""
    if spec.kind == CATEGORICAL:
        lp = nn.log_softmax(logits)
        rows = np.arange(len(targets))
        loss = -lp[rows, targets].sum()
        dlogits = np.exp(lp)
        dlogits[rows, targets] -= 1.0
        return float(loss), dlogits
    loss = nn.bce_with_logits(logits, targets).mean(axis=1).sum()
    return float(loss), (nn.sigmoid(logits) - targets) / spec.size


def dialog_loss(model: TrackerModel, enc: EncodedDialog, backward: bool = True) -> float:
    """Loss of a whole dialog, summed over user tokens of every turn.

    With ``backward`` the exact gradient is added to each parameter's
    accumulator (nothing is zeroed here).
    """
    targets = _targets(model.spec, enc)
    if len(targets) == 0:
        return 0.0
    _, hiddens, cache = run_sequence(model, enc.ids, enc.confidences, init_state(model))
    pos = enc.user_positions
    H_user = hiddens[pos]
    W, b = model["classifier.weight"], model["classifier.bias"]
    loss, dlogits = _head_loss(model.spec, nn.affine(W, b, H_user), targets)
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss in dialog {enc.dialog_id}")
    if not backward:
        return loss

    g = model.params
    dW, db, dH_user = nn.affine_backward(dlogits, W, H_user)
    g["classifier.weight"].grad += dW
    g["classifier.bias"].grad += db

    dH = np.zeros_like(hiddens)
    dH[pos] = dH_user
    dX_plus, _, _, dW_ih, dW_hh, d_bias = nn.lstm_sequence_backward(
        dH, cache, model["lstm.weight_ih"], model["lstm.weight_hh"]
    )
    g["lstm.weight_ih"].grad += dW_ih
    g["lstm.weight_hh"].grad += dW_hh
    g["lstm.bias"].grad += d_bias

    dWp, dbp, dX_in = nn.affine_backward(dX_plus, model["emb_plus.weight"], cache.extra["x_in"])
    g["emb_plus.weight"].grad += dWp
    g["emb_plus.bias"].grad += dbp
    np.add.at(g["embedding"].grad, cache.extra["ids"], dX_in[:, :-1])
    return loss


def turn_loss(model: TrackerModel, state: EncoderState, turn, gold=None) -> tuple[float, EncoderState]:
    """Loss of one turn accumulated over its user tokens, and the post-turn state."""
    gold = turn.gold if gold is None else gold
    target = model.spec.target(gold.value(model.spec.name))
    probs, _, new_state = track_turn(model, state, turn)
    if not len(probs):
        return 0.0, new_state
    if model.spec.kind == CATEGORICAL:
        loss = -np.log(probs[:, target]).sum()
    else:
        p = np.clip(probs, 1e-300, 1.0)
        q = np.clip(1.0 - probs, 1e-300, 1.0)
        loss = -(target * np.log(p) + (1 - target) * np.log(q)).mean(axis=1).sum()
    return float(loss), new_state


def component_accuracy(model: TrackerModel, encoded: list[EncodedDialog]) -> float:
    """Fraction of turns whose final-token hypothesis equals the gold value."""
    correct = total = 0
    for enc in encoded:
        for (probs, _, fallback), gold in zip(track_encoded(model, enc), enc.golds):
            dist = probs[-1] if len(probs) else fallback
            correct += model.spec.hypothesis(dist) == gold.value(model.spec.name)
            total += 1
    return correct / total if total else 0.0


@dataclass
class TrainResult:
    model: TrackerModel
    history: list
    best_epoch: int
    steps: int


def train_component(
    train: list[EncodedDialog],
    dev: list[EncodedDialog] | None,
    spec: ComponentSpec,
    vocab: Vocabulary,
    config: TrainConfig = TrainConfig(),
    model_config: ModelConfig | None = None,
) -> TrainResult:
    """Train one component; returns the epoch with the best dev accuracy.

    One optimizer step per dialog, dialogs visited in a seeded order that
    depends only on ``config.seed`` (identical for every component).
    """
    model_config = model_config or ModelConfig(num_embeddings=len(vocab))
    model = TrackerModel.initialize(model_config, spec, vocab, config.seed)
    order_rng = np.random.default_rng(config.seed)
    best, best_acc, best_epoch = model.copy(), -1.0, 0
    history, steps = [], 0
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for i in order_rng.permutation(len(train)):
            enc = train[i]
            try:
                total += dialog_loss(model, enc)
                for p in model.parameters():
                    nn.amsgrad_step(p, config.optimizer)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(
                    f"{spec.name}: training diverged at epoch {epoch}, dialog {enc.dialog_id}: {exc}"
                ) from None
            steps += 1
        acc = component_accuracy(model, dev) if dev else float("nan")
        history.append({"epoch": epoch, "loss": total / max(len(train), 1), "dev_accuracy": acc})
        log.info("%s epoch %d loss %.4f dev acc %.4f", spec.name, epoch, history[-1]["loss"], acc)
        if not dev or acc > best_acc:
            best, best_acc, best_epoch = model.copy(), acc, epoch
        elif epoch - best_epoch >= config.patience:
            break
    return TrainResult(best, history, best_epoch, steps)


def train_ensemble(
    train: list[Dialog],
    dev: list[Dialog] | None,
    specs: dict[str, ComponentSpec],
    vocab: Vocabulary,
    config: TrainConfig = TrainConfig(),
    model_config: ModelConfig | None = None,
) -> tuple[TrackerEnsemble, dict[str, TrainResult]]:
    missing = [c for c in config.components if c not in specs]
    if missing:
        raise ConfigurationError(f"no component spec for {missing}; pass specs for every trained component")
    train_enc = [encode_dialog(d, vocab) for d in train]
    dev_enc = [encode_dialog(d, vocab) for d in dev] if dev else None
    results = {}
    for name in config.components:
        results[name] = train_component(train_enc, dev_enc, specs[name], vocab, config, model_config)
    return TrackerEnsemble({k: r.model for k, r in results.items()}), results

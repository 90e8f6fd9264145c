"""The incremental tracker: embedding, confidence-fused projection, LSTM and a per-component head.

Every micro-component owns a complete, independent :class:`TrackerModel`.
A :class:`TrackerEnsemble` groups them and its joint distribution over full
states is the product of the per-component distributions.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from . import nn
from .data import GOAL_SLOTS, Dialog, EncodedDialog, TurnAnnotation, Vocabulary, encode_dialog
from .errors import ConfigurationError, InvalidLabelError, InvalidShapeError, UnknownTokenError

CATEGORICAL = "categorical"
MULTILABEL = "multilabel"

DEFAULT_COMPONENTS = ("pricerange", "area", "name", "food", "method", "requested")
DEFAULT_METHODS = ("none", "byconstraints", "byname", "byalternatives", "finished")
DEFAULT_REQUESTABLE = ("area", "food", "pricerange", "addr", "phone", "postcode", "name", "signature")
SPECIAL_VALUES = ("none", "dontcare")


@dataclass(frozen=True)
class ComponentSpec:
    name: str
    kind: str
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if self.kind not in (CATEGORICAL, MULTILABEL):
            raise ValueError(f"unknown component kind {self.kind!r}")
        if not self.values or len(set(self.values)) != len(self.values):
            raise ValueError(f"{self.name}: values must be non-empty and unique")
        if self.kind == CATEGORICAL and not set(SPECIAL_VALUES) <= set(self.values):
            raise ValueError(f"{self.name}: categorical values must include 'none' and 'dontcare'")
        object.__setattr__(self, "_index", {v: i for i, v in enumerate(self.values)})

    @property
    def size(self) -> int:
        return len(self.values)

    def index(self, value: str) -> int | None:
        return self._index.get(value)

    def target(self, gold):
        """Training target for a gold value: class index or a 0/1 slot vector."""
        if self.kind == CATEGORICAL:
            idx = self._index.get(gold)
            if idx is None:
                raise InvalidLabelError(f"{self.name}: gold value {gold!r} not in component values")
            return idx
        unknown = set(gold) - set(self.values)
        if unknown:
            raise InvalidLabelError(f"{self.name}: unknown slots {sorted(unknown)}")
        return np.array([v in gold for v in self.values], dtype=np.float64)

    def hypothesis(self, probs: np.ndarray):
        """1-best value (categorical) or the set of slots with p > 0.5 (multilabel)."""
        if self.kind == CATEGORICAL:
            return self.values[int(np.argmax(probs))]
        return frozenset(v for v, p in zip(self.values, probs) if p > 0.5)

    def to_json(self) -> dict:
        return {"name": self.name, "kind": self.kind, "values": list(self.values)}

    @classmethod
    def from_json(cls, raw: dict) -> "ComponentSpec":
        return cls(raw["name"], raw["kind"], tuple(raw["values"]))


def build_component_specs(corpus: Iterable[Dialog], components=DEFAULT_COMPONENTS) -> dict[str, ComponentSpec]:
    """Value sets from corpus annotations on top of the default ontology."""
    corpus = list(corpus)
    specs = {}
    for name in components:
        seen = set()
        for d in corpus:
            for t in d.turns:
                v = t.gold.value(name)
                if isinstance(v, frozenset):
                    seen |= v
                else:
                    seen.add(v)
        if name == "requested":
            extra = sorted(seen - set(DEFAULT_REQUESTABLE))
            specs[name] = ComponentSpec(name, MULTILABEL, DEFAULT_REQUESTABLE + tuple(extra))
        elif name == "method":
            extra = sorted(seen - set(DEFAULT_METHODS) - set(SPECIAL_VALUES))
            values = DEFAULT_METHODS[:1] + ("dontcare",) + DEFAULT_METHODS[1:] + tuple(extra)
            specs[name] = ComponentSpec(name, CATEGORICAL, values)
        else:
            extra = sorted(seen - set(SPECIAL_VALUES))
            specs[name] = ComponentSpec(name, CATEGORICAL, SPECIAL_VALUES + tuple(extra))
    return specs


@dataclass(frozen=True)
class ModelConfig:
    num_embeddings: int = 897
    embedding_dim: int = 170
    emb_plus_out: int = 300
    hidden_size: int = 100

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EncoderState:
    c: np.ndarray
    h: np.ndarray


PARAM_ORDER = (
    "embedding",
    "emb_plus.weight",
    "emb_plus.bias",
    "lstm.weight_ih",
    "lstm.weight_hh",
    "lstm.bias",
    "classifier.weight",
    "classifier.bias",
)


def parameter_shapes(config: ModelConfig, spec: ComponentSpec) -> dict[str, tuple]:
    E, P, H = config.embedding_dim, config.emb_plus_out, config.hidden_size
    return {
        "embedding": (config.num_embeddings, E),
        "emb_plus.weight": (P, E + 1),
        "emb_plus.bias": (P,),
        "lstm.weight_ih": (4 * H, P),
        "lstm.weight_hh": (4 * H, H),
        "lstm.bias": (4 * H,),
        "classifier.weight": (spec.size, H),
        "classifier.bias": (spec.size,),
    }


def _fan_in(name: str, shape: tuple, config: ModelConfig) -> int:
    if name == "embedding":
        return 1
    if name.startswith("lstm"):
        return config.emb_plus_out + config.hidden_size
    if name.endswith(".bias"):
        return {"emb_plus": config.embedding_dim + 1, "classifier": config.hidden_size}[name.split(".")[0]]
    return shape[1]


def component_seed(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, zlib.crc32(name.encode("utf-8"))])


class TrackerModel:
    """All learnable parameters of the tracker for one micro-component."""

    def __init__(self, config: ModelConfig, spec: ComponentSpec, vocab: Vocabulary, params: dict):
        if len(vocab) != config.num_embeddings:
            raise ConfigurationError(
                f"vocabulary size {len(vocab)} != num_embeddings {config.num_embeddings}"
            )
        shapes = parameter_shapes(config, spec)
        for name in PARAM_ORDER:
            if params[name].shape != shapes[name]:
                raise InvalidShapeError(f"{name}: expected {shapes[name]}, got {params[name].shape}")
        self.config = config
        self.spec = spec
        self.vocab = vocab
        self.params = {name: params[name] for name in PARAM_ORDER}

    @classmethod
    def initialize(cls, config: ModelConfig, spec: ComponentSpec, vocab: Vocabulary, seed: int = 0) -> "TrackerModel":
        rng = np.random.default_rng(component_seed(seed, spec.name))
        params = {}
        for name, shape in parameter_shapes(config, spec).items():
            params[name] = nn.Parameter(nn.init_uniform(rng, shape, _fan_in(name, shape, config)))
        return cls(config, spec, vocab, params)

    @property
    def name(self) -> str:
        return self.spec.name

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name].value

    def parameters(self):
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def copy(self) -> "TrackerModel":
        return TrackerModel(self.config, self.spec, self.vocab, {k: p.copy() for k, p in self.params.items()})

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([self.config.to_json(), self.spec.to_json(), self.vocab.tokens]).encode())
        for name in PARAM_ORDER:
            h.update(name.encode())
            h.update(self.params[name].value.astype("<f8").tobytes())
        return h.hexdigest()


@dataclass
class ComponentDistribution:
    spec: ComponentSpec
    probs: np.ndarray
    log_probs: np.ndarray | None = None

    def hypothesis(self):
        return self.spec.hypothesis(self.probs)

    def probability(self, value) -> float:
        """Probability the component assigns to a full value (a slot set for multilabel)."""
        if self.spec.kind == CATEGORICAL:
            idx = self.spec.index(value)
            return 0.0 if idx is None else float(self.probs[idx])
        inside = np.array([v in value for v in self.spec.values])
        return float(np.prod(np.where(inside, self.probs, 1.0 - self.probs)))


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def init_state(model: TrackerModel) -> EncoderState:
    H = model.config.hidden_size
    return EncoderState(np.zeros(H), np.zeros(H))


def encode_step(model: TrackerModel, state: EncoderState, token_id: int, confidence: float) -> EncoderState:
    """Feed one token: embed, fuse the confidence, advance the LSTM."""
    if not 0 <= token_id < model.config.num_embeddings:
        raise UnknownTokenError(token_id)
    if not 0.0 <= confidence <= 1.0:
        raise ValueError(f"confidence {confidence} outside [0, 1]")
    w = model["embedding"][token_id]
    w_plus = nn.affine(model["emb_plus.weight"], model["emb_plus.bias"], np.append(w, confidence))
    c, h, _ = nn.lstm_step(
        w_plus, state.c, state.h, model["lstm.weight_ih"], model["lstm.weight_hh"], model["lstm.bias"]
    )
    return EncoderState(c, h)


def head_logits(model: TrackerModel, h: np.ndarray) -> np.ndarray:
    return nn.affine(model["classifier.weight"], model["classifier.bias"], h)


def head_distribution(spec: ComponentSpec, logits: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """(probs, log_probs) for categorical heads; (probs, None) for sigmoid heads."""
    if spec.kind == CATEGORICAL:
        lp = nn.log_softmax(logits)
        return np.exp(lp), lp
    return nn.sigmoid(logits), None


def classify(model: TrackerModel, h: np.ndarray) -> ComponentDistribution:
    if h.shape != (model.config.hidden_size,):
        raise InvalidShapeError(f"classify: h{h.shape}")
    probs, lp = head_distribution(model.spec, head_logits(model, h))
    return ComponentDistribution(model.spec, probs, lp)


def run_sequence(model: TrackerModel, ids: np.ndarray, confidences: np.ndarray, state: EncoderState):
    """Encode a token stream from ``state``.

    Returns ``(cells, hiddens, cache)``; row t holds the state after token t.
    """
    if len(ids) and (ids.min() < 0 or ids.max() >= model.config.num_embeddings):
        raise UnknownTokenError("token id out of range")
    X_in = np.empty((len(ids), model.config.embedding_dim + 1))
    X_in[:, :-1] = model["embedding"][ids]
    X_in[:, -1] = confidences
    X_plus = nn.affine(model["emb_plus.weight"], model["emb_plus.bias"], X_in)
    cells, hiddens, cache = nn.lstm_sequence(
        X_plus, state.c, state.h, model["lstm.weight_ih"], model["lstm.weight_hh"], model["lstm.bias"]
    )
    cache.extra.update(ids=ids, x_in=X_in)
    return cells, hiddens, cache


# ---------------------------------------------------------------------------
# dialog tracking
# ---------------------------------------------------------------------------


@dataclass
class TurnTrack:
    """Per-user-token distributions and hidden vectors recorded for one turn."""

    n: int
    gold: TurnAnnotation
    surfaces: list
    probs: dict = field(default_factory=dict)  # component -> (n, out)
    hidden: dict = field(default_factory=dict)  # component -> (n, H)
    fallback: dict = field(default_factory=dict)  # component -> (out,), only when n == 0
    p_take: np.ndarray | None = None  # (n, K) filled in by the turn-taking decider

    def distribution(self, component: str, k: int | None = None) -> np.ndarray:
        """Distribution after user token ``k`` (1-based; default last)."""
        if self.n == 0:
            return self.fallback[component]
        k = self.n if k is None else k
        if not 1 <= k <= self.n:
            raise IndexError(f"token index {k} outside [1, {self.n}]")
        return self.probs[component][k - 1]


@dataclass
class DialogTrack:
    dialog_id: str
    turns: list


class TrackerEnsemble:
    """One independent tracker per micro-component, in a fixed order."""

    def __init__(self, models: dict[str, TrackerModel] | Iterable[TrackerModel]):
        if not isinstance(models, dict):
            models = {m.name: m for m in models}
        if not models:
            raise ConfigurationError("an ensemble needs at least one component")
        vocabs = {id(m.vocab) for m in models.values()}
        first = next(iter(models.values())).vocab
        if len(vocabs) > 1 and any(m.vocab != first for m in models.values()):
            raise ConfigurationError("all components must share one vocabulary")
        self.models = dict(models)
        self.vocab = first

    @property
    def components(self) -> list[str]:
        return list(self.models)

    @property
    def specs(self) -> dict[str, ComponentSpec]:
        return {k: m.spec for k, m in self.models.items()}

    def __getitem__(self, name):
        return self.models[name]

    def __iter__(self):
        return iter(self.models.values())

    def __len__(self):
        return len(self.models)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, m in self.models.items():
            h.update(name.encode())
            h.update(m.digest().encode())
        return h.hexdigest()


def joint_probability(distributions: dict[str, ComponentDistribution], assignment: dict) -> float:
    """Score of a full state hypothesis as the product of component probabilities."""
    return float(np.prod([distributions[c].probability(v) for c, v in assignment.items()]))


def track_encoded(model: TrackerModel, enc: EncodedDialog):
    """Run one component over an encoded dialog.

    Yields, per turn, ``(probs, hiddens, fallback)`` for its user tokens.
    """
    state = init_state(model)
    if len(enc.ids):
        _, hiddens, _ = run_sequence(model, enc.ids, enc.confidences, state)
    else:
        hiddens = np.zeros((0, model.config.hidden_size))
    out = []
    for start, u, end in enc.spans:
        H_user = hiddens[u:end]
        probs, _ = head_distribution(model.spec, head_logits(model, H_user)) if end > u else (None, None)
        fallback = None
        if end == u:
            h_prev = hiddens[u - 1] if u > 0 else state.h
            fallback = classify(model, h_prev).probs
            probs = np.zeros((0, model.spec.size))
        out.append((probs, H_user, fallback))
    return out


def track_dialog(ensemble: TrackerEnsemble, dialog: Dialog | EncodedDialog) -> DialogTrack:
    """Token-by-token distributions of every component over a whole dialog.

    The encoder state runs across turns and starts from zeros at the dialog
    start. System tokens update the state without being recorded.
    """
    enc = dialog if isinstance(dialog, EncodedDialog) else encode_dialog(dialog, ensemble.vocab)
    turns = [
        TurnTrack(e - u, gold, surf) for (_, u, e), gold, surf in zip(enc.spans, enc.golds, enc.surfaces)
    ]
    for name, model in ensemble.models.items():
        for turn, (probs, hid, fb) in zip(turns, track_encoded(model, enc)):
            turn.probs[name] = probs
            turn.hidden[name] = hid
            if fb is not None:
                turn.fallback[name] = fb
    return DialogTrack(enc.dialog_id, turns)


def track_turn(model: TrackerModel, state: EncoderState, turn) -> tuple[np.ndarray, np.ndarray, EncoderState]:
    """Feed one turn from ``state``; returns (per-user-token probs, hiddens, new state)."""
    sys_ids = [model.vocab.lookup(t) for t in turn.system_tokens]
    usr_ids = [model.vocab.lookup(t) for t in turn.user_tokens]
    ids = np.asarray(sys_ids + usr_ids, dtype=np.int64)
    confs = np.asarray([1.0] * len(sys_ids) + [turn.user_confidence] * len(usr_ids))
    if not len(ids):
        return np.zeros((0, model.spec.size)), np.zeros((0, model.config.hidden_size)), state
    cells, hiddens, _ = run_sequence(model, ids, confs, state)
    H_user = hiddens[len(sys_ids):]
    probs = head_distribution(model.spec, head_logits(model, H_user))[0] if len(usr_ids) else np.zeros((0, model.spec.size))
    return probs, H_user, EncoderState(cells[-1].copy(), hiddens[-1].copy())


def goal_components(components: Iterable[str]) -> list[str]:
    return [c for c in GOAL_SLOTS if c in components]

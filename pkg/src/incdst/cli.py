"""Command-line pipeline: corpus generation, training, relabeling, turn-taking and evaluation.

Every subcommand reads an optional JSON config file; flags given on the
command line override it. All artifacts are written under ``--out``::

    checkpoints/        one tracker per component plus manifest.json
    relabeled.jsonl     token labels for the training corpus (+ relabeled.dev.jsonl)
    ttd/                one turn-taking head per component
    report.txt/.json    fixed-ratio vs learned decider on the test corpus
    curve.csv           prefix-accuracy curve
    hist.csv            take-point histogram
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .checkpoint import load_ensemble, save_ensemble
from .data import build_vocab, corpus_stats, load_corpus, oov_rate, save_corpus, tokenize
from .errors import ConfigurationError, IncDSTError, OrderingError
from .evaluation import (
    compare_report,
    evaluate_deterministic,
    format_report,
    learned_traces,
    prefix_accuracy_curve,
    sweep_threshold,
    take_histogram,
    write_curve_csv,
    write_histogram_csv,
)
from .model import DEFAULT_COMPONENTS, ModelConfig, build_component_specs, classify, encode_step, init_state, track_dialog
from .relabel import RelabeledDataset, relabel_corpus
from .synthetic import gen_splits, gen_synthetic_corpus
from .training import TrainConfig, train_ensemble
from .ttd import TTDConfig, decide, load_heads, save_heads, train_ttd, ttd_forward, write_traces

log = logging.getLogger("incdst")

CHECKPOINTS = "checkpoints"
TTD_DIR = "ttd"
RELABELED = "relabeled.jsonl"
RELABELED_DEV = "relabeled.dev.jsonl"


@dataclass
class RunConfig:
    train: str | None = None
    dev: str | None = None
    test: str | None = None
    out: str = "run"
    mode: str = "asr"
    seed: int = 0
    epochs: int = 30
    patience: int = 5
    ttd_epochs: int = 30
    ttd_patience: int = 5
    balance_classes: bool = False
    ratio: float = 0.6
    threshold: float = 0.85
    components: list = field(default_factory=lambda: list(DEFAULT_COMPONENTS))
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    embedding_dim: int = 170
    emb_plus_out: int = 300
    hidden_size: int = 100
    dialogs: int = 200
    noise: float = 0.1
    splits: list | None = None  # [train, dev, test] sizes for gen-corpus

    def __post_init__(self):
        if self.mode not in ("asr", "transcript"):
            raise ConfigurationError(f"mode must be 'asr' or 'transcript', got {self.mode!r}")
        if not 0.0 < self.ratio <= 1.0:
            raise ConfigurationError(f"ratio must lie in (0, 1], got {self.ratio}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigurationError(f"threshold must lie in [0, 1], got {self.threshold}")

    @classmethod
    def load(cls, path: str | None, overrides: dict) -> "RunConfig":
        raw = {}
        if path:
            try:
                raw = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigurationError(f"cannot read config {path}: {exc}") from None
            unknown = set(raw) - {f.name for f in dataclasses.fields(cls)}
            if unknown:
                raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)

    @property
    def optimizer(self) -> nn.OptimizerConfig:
        return nn.OptimizerConfig(self.learning_rate, self.beta1, self.beta2, self.eps, self.weight_decay)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)


def _need(cfg: RunConfig, key: str) -> str:
    path = getattr(cfg, key)
    if not path:
        raise ConfigurationError(f"no {key} corpus given (set '{key}' in the config or pass --{key})")
    if not Path(path).exists():
        raise ConfigurationError(f"{key} corpus {path} does not exist")
    return path


def _load(cfg: RunConfig, key: str):
    return load_corpus(_need(cfg, key), cfg.mode)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_corpus(cfg: RunConfig, args) -> None:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    if cfg.splits:
        if len(cfg.splits) != 3:
            raise ConfigurationError("splits needs three sizes: train dev test")
        for name, corpus in zip(("train", "dev", "test"), gen_splits(cfg.seed, *cfg.splits, noise=cfg.noise)):
            save_corpus(corpus, out / f"{name}.jsonl")
            print(f"wrote {len(corpus)} dialogs to {out / f'{name}.jsonl'}")
    else:
        corpus = gen_synthetic_corpus(cfg.seed, cfg.dialogs, cfg.noise)
        save_corpus(corpus, out / "corpus.jsonl")
        print(f"wrote {len(corpus)} dialogs to {out / 'corpus.jsonl'}")


def cmd_stats(cfg: RunConfig, args) -> None:
    paths = args.corpora or [p for p in (cfg.train, cfg.dev, cfg.test) if p]
    if not paths:
        raise ConfigurationError("no corpus given")
    report = {}
    corpora = {}
    for p in paths:
        corpora[p] = load_corpus(p, cfg.mode)
        report[p] = corpus_stats(corpora[p]).to_json()
    if cfg.train and cfg.train in corpora:
        train = corpora[cfg.train]
        report["vocabulary_size"] = len(build_vocab(train)) if train else 0
        for p, c in corpora.items():
            if p != cfg.train and train:
                report[p]["oov_rate_vs_train"] = oov_rate(train, c)
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        (cfg.out_dir / "stats.json").write_text(text + "\n")


def cmd_train(cfg: RunConfig, args) -> None:
    train = _load(cfg, "train")
    dev = _load(cfg, "dev") if cfg.dev else None
    vocab = build_vocab(train)
    specs = build_component_specs(train + (dev or []), cfg.components)
    model_config = ModelConfig(len(vocab), cfg.embedding_dim, cfg.emb_plus_out, cfg.hidden_size)
    tconf = TrainConfig(cfg.epochs, cfg.seed, cfg.optimizer, cfg.patience, tuple(cfg.components))
    ensemble, results = train_ensemble(train, dev, specs, vocab, tconf, model_config)
    meta = {name: {"best_epoch": r.best_epoch, "steps": r.steps} for name, r in results.items()}
    out = cfg.out_dir
    save_ensemble(ensemble, out / CHECKPOINTS, meta)
    _write_json(out / "train_history.json", {name: r.history for name, r in results.items()})
    for name, r in results.items():
        best = r.history[r.best_epoch - 1]
        print(f"{name:<12} best epoch {r.best_epoch:>3}  dev accuracy {best['dev_accuracy']:.4f}")


def _ensemble(cfg: RunConfig):
    return load_ensemble(cfg.out_dir / CHECKPOINTS)


def cmd_relabel(cfg: RunConfig, args) -> None:
    ensemble = _ensemble(cfg)
    out = cfg.out_dir
    data = relabel_corpus(ensemble, _load(cfg, "train"))
    data.save(out / RELABELED)
    print(f"wrote {len(data)} token records to {out / RELABELED}")
    if cfg.dev:
        dev = relabel_corpus(ensemble, _load(cfg, "dev"))
        dev.save(out / RELABELED_DEV)
        print(f"wrote {len(dev)} token records to {out / RELABELED_DEV}")


def cmd_train_ttd(cfg: RunConfig, args) -> None:
    ensemble = _ensemble(cfg)
    out = cfg.out_dir
    if not (out / RELABELED).exists():
        raise OrderingError(f"{out / RELABELED} missing; run `relabel` first")
    dataset = RelabeledDataset.load(out / RELABELED)
    dev_dataset = RelabeledDataset.load(out / RELABELED_DEV) if (out / RELABELED_DEV).exists() else None
    dev = _load(cfg, "dev") if dev_dataset is not None else None
    tconf = TTDConfig(cfg.ttd_epochs, cfg.seed, cfg.optimizer, cfg.ttd_patience, cfg.balance_classes)
    heads, history = train_ttd(dataset, ensemble, _load(cfg, "train"), tconf, dev_dataset, dev)
    save_heads(heads, out / TTD_DIR, ensemble.fingerprint())
    _write_json(out / "ttd_history.json", history)
    for c, h in history.items():
        best = max(h, key=lambda e: (e["dev_accuracy"], -e["epoch"])) if dev_dataset else h[-1]
        print(f"{c:<12} epochs {len(h):>3}  dev token accuracy {best['dev_accuracy']:.4f}")


def _heads(cfg: RunConfig, ensemble):
    return load_heads(cfg.out_dir / TTD_DIR, ensemble)


def cmd_eval(cfg: RunConfig, args) -> None:
    ensemble = _ensemble(cfg)
    heads = _heads(cfg, ensemble)
    tracks = [track_dialog(ensemble, d) for d in _load(cfg, "test")]
    d = cfg.threshold
    if args.match_ratio:
        det_ratio = evaluate_deterministic(ensemble, None, cfg.ratio, tracks=tracks).ratio
        d, _ = sweep_threshold(ensemble, heads, tracks, det_ratio)
    cmp = compare_report(ensemble, heads, None, cfg.ratio, d, "test", tracks)
    out = cfg.out_dir
    text = format_report(cmp)
    (out / "report.txt").write_text(text)
    _write_json(out / "report.json", cmp.to_json())
    write_traces(cmp.traces, out / "traces.jsonl")
    print(text, end="")


def cmd_curve(cfg: RunConfig, args) -> None:
    ensemble = _ensemble(cfg)
    grid = args.grid or [round(0.1 * i, 1) for i in range(1, 11)]
    rows = prefix_accuracy_curve(ensemble, _load(cfg, "test"), grid)
    write_curve_csv(rows, cfg.out_dir / "curve.csv")
    print((cfg.out_dir / "curve.csv").read_text(), end="")


def cmd_hist(cfg: RunConfig, args) -> None:
    ensemble = _ensemble(cfg)
    heads = _heads(cfg, ensemble)
    tracks = [track_dialog(ensemble, d) for d in _load(cfg, "test")]
    traces = learned_traces(ensemble, heads, tracks, cfg.threshold)
    write_histogram_csv(take_histogram(traces), cfg.out_dir / "hist.csv")
    print(f"wrote {cfg.out_dir / 'hist.csv'}")


def _top(spec, probs) -> str:
    hyp = spec.hypothesis(probs)
    if isinstance(hyp, frozenset):
        return "{" + ",".join(sorted(hyp)) + "}"
    return f"{hyp}({probs[spec.index(hyp)]:.2f})"


def cmd_repl(cfg: RunConfig, args, stdin=None, stdout=None) -> None:
    """Feed typed tokens one at a time and print the tracker and decider outputs.

    Each input line is a user utterance typed word by word; an empty line
    ends the dialog. ``:system <text>`` sets the system prompt preceding the
    next utterance and ``:conf <x>`` its confidence (default 1.0).
    """
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    ensemble = _ensemble(cfg)
    heads = _heads(cfg, ensemble)
    specs = ensemble.specs
    vocab = ensemble.vocab
    d = cfg.threshold

    def fresh():
        return {c: init_state(m) for c, m in ensemble.models.items()}

    states = fresh()
    system, confidence = [], 1.0
    print(f"threshold d = {d:g}; empty line starts a new dialog, ':quit' exits", file=stdout)
    for line in stdin:
        line = line.strip()
        if line in (":quit", ":q"):
            break
        if not line:
            states = fresh()
            print("-- new dialog --", file=stdout)
            continue
        if line.startswith(":system"):
            system = tokenize(line[len(":system"):])
            continue
        if line.startswith(":conf"):
            try:
                confidence = float(line.split()[1])
            except (IndexError, ValueError):
                print("usage: :conf <value in [0, 1]>", file=stdout)
                continue
            if not 0.0 <= confidence <= 1.0:
                print("confidence must lie in [0, 1]", file=stdout)
                confidence = 1.0
            continue
        for c, m in ensemble.models.items():
            for tok in system:
                states[c] = encode_step(m, states[c], vocab.lookup(tok), 1.0)
        system = []
        taken = False
        for tok in tokenize(line):
            p_take = []
            cells = []
            for c, m in ensemble.models.items():
                states[c] = encode_step(m, states[c], vocab.lookup(tok), confidence)
                dist = classify(m, states[c].h)
                p_take.append(float(ttd_forward(heads[c], states[c].h)[0]))
                cells.append(f"{c}={_top(specs[c], dist.probs)}")
            fires = not taken and decide(np.array(p_take), d)
            marker = "  TAKE" if fires else ""
            taken = taken or fires
            print(f"{tok:<14} {' '.join(cells)}  p_take(min)={min(p_take):.2f}{marker}", file=stdout)
        if not taken:
            print("(no threshold crossing; turn taken at the last token)", file=stdout)
        confidence = 1.0


COMMANDS = {
    "gen-corpus": (cmd_gen_corpus, "generate a synthetic annotated corpus"),
    "stats": (cmd_stats, "print corpus statistics"),
    "train": (cmd_train, "train one tracker per component"),
    "relabel": (cmd_relabel, "derive token-level turn-taking labels"),
    "train-ttd": (cmd_train_ttd, "train the turn-taking heads"),
    "eval": (cmd_eval, "compare the fixed-ratio and learned deciders"),
    "curve": (cmd_curve, "prefix-accuracy curve as CSV"),
    "hist": (cmd_hist, "take-point histogram as CSV"),
    "repl": (cmd_repl, "interactive token-by-token tracking"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, help="seed for every random choice (default 0)")
    common.add_argument("--mode", choices=("asr", "transcript"), help="user token stream (default asr)")
    common.add_argument("--ratio", type=float, help="fixed-ratio decider r in (0, 1] (default 0.6)")
    common.add_argument("--threshold", type=float, help="learned decider threshold d in [0, 1] (default 0.85)")
    common.add_argument("--epochs", type=int, help="maximum training epochs (default 30)")
    common.add_argument("--out", help="output directory (default ./run)")
    common.add_argument("--train", help="training corpus (JSONL)")
    common.add_argument("--dev", help="development corpus (JSONL)")
    common.add_argument("--test", help="test corpus (JSONL)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="incdst", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {name: sub.add_parser(name, parents=[common], help=h, description=h) for name, (_, h) in COMMANDS.items()}
    parsers["gen-corpus"].add_argument("--dialogs", type=int, help="number of dialogs (default 200)")
    parsers["gen-corpus"].add_argument("--noise", type=float, help="confidence noise level (default 0.1)")
    parsers["gen-corpus"].add_argument(
        "--splits", type=int, nargs=3, metavar=("TRAIN", "DEV", "TEST"), help="write train/dev/test corpora"
    )
    parsers["stats"].add_argument("corpora", nargs="*", help="corpus files (default: train/dev/test from config)")
    parsers["eval"].add_argument(
        "--match-ratio", action="store_true", help="pick d so the learned ratio matches the fixed-ratio decider"
    )
    parsers["curve"].add_argument("--grid", type=float, nargs="+", help="ratios to score (default 0.1 .. 1.0)")
    return parser


READ_ONLY = ("stats", "repl")  # never create the output directory
OVERRIDES = ("seed", "mode", "ratio", "threshold", "epochs", "out", "train", "dev", "test", "dialogs", "noise", "splits")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {k: getattr(args, k, None) for k in OVERRIDES}
    try:
        cfg = RunConfig.load(args.config, overrides)
        if args.command not in READ_ONLY:
            cfg.out_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command][0](cfg, args)
    except OrderingError as exc:
        print(f"incdst {args.command}: {exc}", file=sys.stderr)
        return 3
    except (IncDSTError, OSError, ValueError) as exc:
        print(f"incdst {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

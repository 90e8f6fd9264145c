import numpy as np
import pytest

from incdst.data import build_vocab
from incdst.model import ModelConfig, TrackerEnsemble, TrackerModel, build_component_specs, track_dialog
from incdst.relabel import relabel_corpus
from incdst.synthetic import gen_splits
from incdst.training import TrainConfig, train_ensemble
from incdst.ttd import TTDConfig, train_ttd


def tiny_config(vocab, hidden=6) -> ModelConfig:
    return ModelConfig(num_embeddings=len(vocab), embedding_dim=5, emb_plus_out=7, hidden_size=hidden)


@pytest.fixture(scope="session")
def small_splits():
    return gen_splits(7, 40, 15, 15, noise=0.1)


@pytest.fixture(scope="session")
def small_vocab(small_splits):
    return build_vocab(small_splits[0])


@pytest.fixture(scope="session")
def small_specs(small_splits):
    train, dev, _ = small_splits
    return build_component_specs(train + dev)


@pytest.fixture
def random_ensemble(small_specs, small_vocab):
    cfg = tiny_config(small_vocab)
    return TrackerEnsemble(
        {name: TrackerModel.initialize(cfg, spec, small_vocab, seed=3) for name, spec in small_specs.items()}
    )


@pytest.fixture(scope="session")
def trained_small(small_splits, small_specs, small_vocab):
    """A quickly trained ensemble plus turn-taking heads on the small corpus."""
    train, dev, test = small_splits
    cfg = ModelConfig(len(small_vocab), 16, 24, 12)
    ensemble, results = train_ensemble(train, dev, small_specs, small_vocab, TrainConfig(epochs=6, seed=0), cfg)
    tracks = [track_dialog(ensemble, d) for d in train]
    dataset = relabel_corpus(ensemble, train, tracks)
    heads, _ = train_ttd(dataset, ensemble, None, TTDConfig(epochs=5, seed=0), tracks=tracks)
    return {"ensemble": ensemble, "results": results, "heads": heads, "dataset": dataset, "test": test}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synthetic_pipeline():
    """The full seed-0 pipeline at 500/100/100 dialogs, run once per session and timed."""
    import time

    from incdst.evaluation import compare_report, evaluate_deterministic, sweep_threshold
    from incdst.ttd import token_features

    start = time.perf_counter()
    train, dev, test = gen_splits(0, 500, 100, 100, noise=0.1)
    vocab = build_vocab(train)
    specs = build_component_specs(train + dev)
    ensemble, results = train_ensemble(
        train, dev, specs, vocab, TrainConfig(epochs=30, seed=0), ModelConfig(num_embeddings=len(vocab))
    )
    tracks = {name: [track_dialog(ensemble, d) for d in split] for name, split in (("train", train), ("dev", dev), ("test", test))}
    dataset = relabel_corpus(ensemble, train, tracks["train"])
    dev_dataset = relabel_corpus(ensemble, dev, tracks["dev"])
    heads, ttd_history = train_ttd(
        dataset, ensemble, None, TTDConfig(seed=0), dev_dataset, None, tracks["train"], tracks["dev"]
    )
    r = 0.6
    det = evaluate_deterministic(ensemble, None, r, "test", tracks["test"])
    d, _ = sweep_threshold(ensemble, heads, tracks["test"], det.ratio)
    comparison = compare_report(ensemble, heads, None, r, d, "test", tracks["test"])
    elapsed = time.perf_counter() - start
    return {
        "splits": (train, dev, test),
        "vocab": vocab,
        "specs": specs,
        "ensemble": ensemble,
        "results": results,
        "tracks": tracks,
        "dataset": dataset,
        "dev_dataset": dev_dataset,
        "heads": heads,
        "ttd_history": ttd_history,
        "dev_features": token_features(dev_dataset, ensemble, None, tracks["dev"]),
        "test_features": token_features(
            relabel_corpus(ensemble, test, tracks["test"]), ensemble, None, tracks["test"]
        ),
        "comparison": comparison,
        "ratio": r,
        "threshold": d,
        "seconds": elapsed,
    }


# -- acceptance log -----------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL/SKIP line for an acceptance criterion; printed again in the terminal summary."""

    def record(name: str, status: str, detail: str = "") -> None:
        line = f"{status:<4}  {name}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

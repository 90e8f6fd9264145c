#!/usr/bin/env python3
"""Fixed-ratio versus learned turn taking across the whole operating range.

For each fixed ratio r, the learned decider's threshold is tuned to consume
the same share of each utterance; both are then scored on the same turns.
Also prints the prefix-accuracy curve and where the learned decider takes
the turn for short utterances. Run with ``python demos/decider_comparison.py``.
"""

# %%
from incdst import (
    ModelConfig,
    TTDConfig,
    TrainConfig,
    build_component_specs,
    build_vocab,
    compare_report,
    evaluate_deterministic,
    gen_splits,
    learned_traces,
    prefix_accuracy_curve,
    relabel_corpus,
    sweep_threshold,
    take_histogram,
    track_dialog,
    train_ensemble,
    train_ttd,
)

# %%
train, dev, test = gen_splits(seed=2, n_train=150, n_dev=40, n_test=60)
vocab = build_vocab(train)
ensemble, _ = train_ensemble(
    train, dev, build_component_specs(train + dev), vocab, TrainConfig(epochs=10, seed=0),
    ModelConfig(num_embeddings=len(vocab)),
)
tracks = {name: [track_dialog(ensemble, d) for d in split] for name, split in (("train", train), ("dev", dev), ("test", test))}
heads, _ = train_ttd(
    relabel_corpus(ensemble, train, tracks["train"]), ensemble, None, TTDConfig(epochs=15, seed=0),
    relabel_corpus(ensemble, dev, tracks["dev"]), None, tracks["train"], tracks["dev"],
)

# %% [markdown]
# Prefix-accuracy curve: every turn scored after round(r * n) tokens.

# %%
print(f"{'r':>5} {'goal':>7} {'method':>7} {'requested':>10}")
for row in prefix_accuracy_curve(ensemble, None, tracks=tracks["test"]):
    print(f"{row['ratio']:>5.1f} {row['goal_acc']:>7.3f} {row['method_acc']:>7.3f} {row['requested_acc']:>10.3f}")

# %% [markdown]
# Matched-ratio comparison. Thresholds are tuned on dev, then applied to test.

# %%
print(f"\n{'r':>5} {'d':>8} {'ratio det/learned':>18} {'goal det/learned':>17} {'requested det/learned':>22}")
for r in (0.3, 0.5, 0.7, 0.9):
    target = evaluate_deterministic(ensemble, None, r, tracks=tracks["dev"]).ratio
    d, _ = sweep_threshold(ensemble, heads, tracks["dev"], target)
    cmp = compare_report(ensemble, heads, None, r, d, "test", tracks["test"])
    det, lrn = cmp.deterministic, cmp.learned
    print(
        f"{r:>5.1f} {d:>8.4f} {det.ratio:>8.3f} / {lrn.ratio:<7.3f} "
        f"{det.metrics['goal']['accuracy']:>7.3f} / {lrn.metrics['goal']['accuracy']:<7.3f} "
        f"{det.metrics['requested']['accuracy']:>10.3f} / {lrn.metrics['requested']['accuracy']:<7.3f}"
    )

# %% [markdown]
# Take points of the learned decider at d = 0.85 for utterances of up to five
# tokens: counts per (length, take index).

# %%
counts = take_histogram(learned_traces(ensemble, heads, tracks["test"], 0.85))
for n in range(1, 6):
    row = [counts.get((n, k), 0) for k in range(1, n + 1)]
    if sum(row):
        print(f"length {n}: " + " ".join(f"k={k}:{c}" for k, c in enumerate(row, 1)))

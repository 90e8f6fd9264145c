#!/usr/bin/env python3
"""Whole pipeline on a small synthetic corpus: train, relabel, train the decider, compare.

Run with ``python demos/quickstart.py``; takes well under a minute.
"""

# %%
import time

from incdst import (
    ModelConfig,
    TTDConfig,
    TrainConfig,
    build_component_specs,
    build_vocab,
    compare_report,
    evaluate_deterministic,
    format_report,
    gen_splits,
    relabel_corpus,
    sweep_threshold,
    track_dialog,
    train_ensemble,
    train_ttd,
)

start = time.perf_counter()

# %% [markdown]
# A seeded generator produces restaurant-search dialogs. Each turn has a
# system prompt, a noisy user utterance with an ASR confidence, and the
# gold goal / method / requested-slot annotation.

# %%
train, dev, test = gen_splits(seed=0, n_train=150, n_dev=40, n_test=40, noise=0.1)
turn = train[0].turns[0]
print("system:", " ".join(turn.system_tokens))
print("user:  ", " ".join(turn.user_tokens), f"(confidence {turn.asr_confidence:.2f})")
print("gold:  ", turn.gold.to_json())

# %% [markdown]
# One LSTM tracker per micro-component: four goal slots, the method and the
# requested slots. The vocabulary comes from user tokens of the training
# split; value sets come from train and dev annotations.

# %%
vocab = build_vocab(train)
specs = build_component_specs(train + dev)
ensemble, results = train_ensemble(
    train, dev, specs, vocab, TrainConfig(epochs=10, seed=0), ModelConfig(num_embeddings=len(vocab))
)
for name, r in results.items():
    print(f"{name:<12} best epoch {r.best_epoch:>2}  dev accuracy {r.history[r.best_epoch - 1]['dev_accuracy']:.3f}")

# %% [markdown]
# Every user token of the training corpus gets a label per component:
# 0 if the tracker's hypothesis after that token already equals its
# hypothesis at the end of the turn, 1 otherwise. A two-way head on the
# frozen tracker learns to predict these labels.

# %%
tracks = {name: [track_dialog(ensemble, d) for d in split] for name, split in (("train", train), ("dev", dev), ("test", test))}
labels = relabel_corpus(ensemble, train, tracks["train"])
dev_labels = relabel_corpus(ensemble, dev, tracks["dev"])
heads, history = train_ttd(
    labels, ensemble, None, TTDConfig(epochs=15, seed=0), dev_labels, None, tracks["train"], tracks["dev"]
)

# %% [markdown]
# Compare the fixed-ratio decider (take the turn after 60% of the tokens)
# with the learned decider, its threshold tuned to consume about the same
# fraction of each utterance.

# %%
r = 0.6
target = evaluate_deterministic(ensemble, None, r, tracks=tracks["test"]).ratio
d, _ = sweep_threshold(ensemble, heads, tracks["test"], target)
print(format_report(compare_report(ensemble, heads, None, r, d, "test", tracks["test"])))
print(f"total {time.perf_counter() - start:.0f} s")

#!/usr/bin/env python3
"""Where in an utterance does the tracker settle? Token labels for a few turns.

Run with ``python demos/relabel_inspection.py``.
"""

# %%
import numpy as np

from incdst import (
    ModelConfig,
    TrainConfig,
    build_component_specs,
    build_vocab,
    gen_splits,
    labels_from_hypotheses,
    relabel_corpus,
    track_dialog,
    train_ensemble,
)

# %% [markdown]
# Train trackers for three components only; each component is independent,
# so a subset trains faster and behaves exactly as inside the full ensemble.

# %%
train, dev, test = gen_splits(seed=1, n_train=120, n_dev=30, n_test=10)
vocab = build_vocab(train)
components = ("area", "food", "requested")
specs = build_component_specs(train + dev, components)
ensemble, _ = train_ensemble(
    train, dev, specs, vocab, TrainConfig(epochs=8, seed=0, components=components), ModelConfig(num_embeddings=len(vocab))
)

# %% [markdown]
# For each user token the tracker emits a hypothesis. A token is labeled 0
# ("take") once the hypothesis matches the one at the end of the turn and 1
# ("wait") before that. The hypothesis can also flip back and forth, so a
# late token may be labeled 1 even after an earlier 0.

# %%
track = track_dialog(ensemble, test[0])
for turn_idx, (turn, tt) in enumerate(zip(test[0].turns, track.turns)):
    print(f"\nturn {turn_idx}: {' '.join(turn.user_tokens)}")
    for c in ensemble.components:
        hyps = [specs[c].hypothesis(p) for p in tt.probs[c]] if tt.n else []
        labels = labels_from_hypotheses(hyps)
        shown = ["{" + ",".join(sorted(h)) + "}" if isinstance(h, frozenset) else h for h in hyps]
        print(f"  {c:<10}", "  ".join(f"{tok}:{h}/{y}" for tok, h, y in zip(turn.user_tokens, shown, labels)))

# %% [markdown]
# Across the training corpus, how much of each utterance does the tracker
# need? The share of 0 labels per component is the share of tokens after
# which waiting would not change the final answer.

# %%
data = relabel_corpus(ensemble, train)
for c in ensemble.components:
    y = np.array([r.labels[c] for r in data.records])
    print(f"{c:<10} tokens already final: {np.mean(y == 0):.3f}")

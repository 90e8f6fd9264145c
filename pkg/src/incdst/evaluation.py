"""Scoring of incremental trackers: accuracy, L2, take ratios, curves and reports.

Every metric works from per-turn hypotheses or distributions taken at some
user-token index. The fixed-ratio decider takes each turn at
``round(r * n)``; the learned decider takes it where the turn-taking heads
fire. Macro-components are Goal (the four goal slots jointly), Method and
Requested.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from .data import GOAL_SLOTS, Dialog
from .errors import InvalidShapeError, UndefinedRatioError, ValidationError
from .model import CATEGORICAL, ComponentSpec, DialogTrack, TrackerEnsemble, track_dialog
from .ttd import DecisionTrace, attach_p_take, decisions_for_track

MACROS = ("goal", "method", "requested")
NORMALIZATION_TOLERANCE = 1e-6


# ---------------------------------------------------------------------------
# take points
# ---------------------------------------------------------------------------


def deterministic_take_index(n: int, r: float) -> int:
    """``clamp(round(r * n), 1, n)`` with halves rounded away from zero.

    The product is formed in decimal arithmetic on ``str(r)`` so that, for
    example, ``0.6 * 5`` is exactly 3 and ``0.5 * 3`` rounds up to 2.
    """
    if n < 1:
        raise ValueError("utterance length must be >= 1")
    if not 0.0 < r <= 1.0:
        raise ValueError(f"ratio must lie in (0, 1], got {r}")
    k = int((Decimal(str(r)) * n).quantize(Decimal(1), rounding=ROUND_HALF_UP))
    return min(max(k, 1), n)


def realized_ratio(take_indices, lengths) -> float:
    """Mean of take_index / length over turns, rounding shifts included."""
    if len(take_indices) != len(lengths):
        raise InvalidShapeError("take indices and lengths differ in length")
    if not len(lengths):
        raise UndefinedRatioError("no turns with user tokens; the ratio is undefined")
    k = np.asarray(take_indices, dtype=np.float64)
    n = np.asarray(lengths, dtype=np.float64)
    return float(np.mean(k / n))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _macro_value(annotation, macro: str):
    if macro == "goal":
        return {s: annotation.goal[s] for s in GOAL_SLOTS}
    if macro == "method":
        return annotation.method
    if macro == "requested":
        return frozenset(annotation.requested)
    raise ValueError(f"unknown macro-component {macro!r}")


def accuracy(hypotheses, golds, macro: str) -> float:
    """Fraction of turns whose hypothesis equals the gold value.

    Goal hypotheses are dicts over the four goal slots and only count when
    every slot is right; Requested compares sets exactly. ``golds`` may hold
    plain values or turn annotations.
    """
    if len(hypotheses) != len(golds):
        raise InvalidShapeError("hypotheses and golds differ in length")
    if macro not in MACROS:
        raise ValueError(f"unknown macro-component {macro!r}")
    if not len(golds):
        return float("nan")
    hits = 0
    for hyp, gold in zip(hypotheses, golds):
        if hasattr(gold, "goal"):
            gold = _macro_value(gold, macro)
        if macro == "requested":
            hyp, gold = frozenset(hyp), frozenset(gold)
        elif macro == "goal":
            hyp = {s: hyp[s] for s in gold}
        hits += hyp == gold
    return hits / len(golds)


def _check_normalized(p: np.ndarray) -> None:
    if abs(float(p.sum()) - 1.0) > NORMALIZATION_TOLERANCE:
        raise ValidationError(f"categorical distribution sums to {p.sum():.8f}, not 1")
    if (p < 0).any():
        raise ValidationError("categorical distribution has negative entries")


def l2_categorical(p, gold_index: int | None) -> float:
    """sqrt(sum_v (p_v - 1[v = gold])^2); a gold outside the support has p_gold = 0."""
    p = np.asarray(p, dtype=np.float64)
    _check_normalized(p)
    p_gold = p[gold_index] if gold_index is not None else 0.0
    return float(np.sqrt(max(float(p @ p) - 2.0 * p_gold + 1.0, 0.0)))


def l2_product(distributions, gold_indices) -> float:
    """L2 between a product of categoricals and the one-hot joint gold.

    sum over the joint space of (prod_i p_i(v_i) - 1[v = gold])^2 factorizes
    into prod_i sum_v p_i(v)^2 - 2 prod_i p_i(gold_i) + 1.
    """
    if len(distributions) != len(gold_indices):
        raise InvalidShapeError("one gold index per factor is required")
    sq, gold = 1.0, 1.0
    for p, g in zip(distributions, gold_indices):
        p = np.asarray(p, dtype=np.float64)
        _check_normalized(p)
        sq *= float(p @ p)
        gold *= p[g] if g is not None else 0.0
    return float(np.sqrt(max(sq - 2.0 * gold + 1.0, 0.0)))


def l2_bernoulli(probs, gold_mask, gold_in_support: bool = True) -> float:
    """L2 over the joint outcome space of independent per-slot Bernoullis.

    Each slot contributes p^2 + (1 - p)^2 to the squared mass and p or 1 - p
    to the gold outcome's probability. A gold set naming a slot the tracker
    does not model gets probability 0.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(gold_mask, dtype=bool)
    if p.shape != y.shape:
        raise InvalidShapeError("probabilities and gold mask differ in shape")
    if ((p < 0) | (p > 1)).any():
        raise ValidationError("Bernoulli probabilities must lie in [0, 1]")
    sq = float(np.prod(p * p + (1 - p) * (1 - p)))
    gold = float(np.prod(np.where(y, p, 1 - p))) if gold_in_support else 0.0
    return float(np.sqrt(max(sq - 2.0 * gold + 1.0, 0.0)))


def l2_metric(distributions: dict, gold, macro: str, specs: dict[str, ComponentSpec]) -> float:
    """L2 of one turn for a macro-component.

    ``distributions`` maps component name to its probability vector and
    ``gold`` is the turn annotation.
    """
    if macro == "goal":
        slots = [s for s in GOAL_SLOTS if s in specs]
        return l2_product(
            [distributions[s] for s in slots], [specs[s].index(gold.goal[s]) for s in slots]
        )
    if macro == "method":
        return l2_categorical(distributions["method"], specs["method"].index(gold.method))
    if macro == "requested":
        spec = specs["requested"]
        wanted = set(gold.requested)
        return l2_bernoulli(
            distributions["requested"], [v in wanted for v in spec.values], wanted <= set(spec.values)
        )
    raise ValueError(f"unknown macro-component {macro!r}")


def available_macros(specs: dict) -> list[str]:
    out = []
    if all(s in specs for s in GOAL_SLOTS):
        out.append("goal")
    if "method" in specs:
        out.append("method")
    if "requested" in specs:
        out.append("requested")
    return out


def _hypothesis(distributions: dict, macro: str, specs: dict):
    if macro == "goal":
        return {s: specs[s].hypothesis(distributions[s]) for s in GOAL_SLOTS}
    return specs[macro].hypothesis(distributions[macro])


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    decider: str
    split: str
    ratio: float
    metrics: dict  # macro -> {"accuracy": float, "l2": float}
    n_turns: int
    n_scored_turns: int  # turns with at least one user token
    forced: int = 0
    hypotheses: list = field(default_factory=list, repr=False)  # per turn: component -> hypothesis

    def to_json(self) -> dict:
        return {
            "decider": self.decider,
            "split": self.split,
            "ratio": self.ratio,
            "metrics": self.metrics,
            "n_turns": self.n_turns,
            "n_scored_turns": self.n_scored_turns,
            "forced": self.forced,
        }


def _tracks(ensemble, corpus, tracks):
    if tracks is not None:
        return tracks
    return [track_dialog(ensemble, d) for d in corpus]


def score_at(
    tracks: list[DialogTrack],
    take_indices: list[list[int]],
    specs: dict[str, ComponentSpec],
    decider: str,
    split: str = "",
    forced: int = 0,
) -> EvalReport:
    """Score every turn with the distributions at its take index (1-based).

    Turns without user tokens use the tracker's output before the turn and
    are left out of the ratio.
    """
    macros = available_macros(specs)
    hyps = {m: [] for m in macros}
    l2s = {m: [] for m in macros}
    golds = []
    per_turn = []
    ks, ns = [], []
    for track, turn_ks in zip(tracks, take_indices):
        if len(turn_ks) != len(track.turns):
            raise InvalidShapeError(f"{track.dialog_id}: one take index per turn is required")
        for turn, k in zip(track.turns, turn_ks):
            dist = {c: turn.distribution(c, k if turn.n else None) for c in specs}
            if turn.n:
                ks.append(k)
                ns.append(turn.n)
            golds.append(turn.gold)
            per_turn.append({c: specs[c].hypothesis(p) for c, p in dist.items()})
            for m in macros:
                hyps[m].append(_hypothesis(dist, m, specs))
                l2s[m].append(l2_metric(dist, turn.gold, m, specs))
    metrics = {
        m: {"accuracy": accuracy(hyps[m], golds, m), "l2": float(np.mean(l2s[m])) if l2s[m] else float("nan")}
        for m in macros
    }
    ratio = realized_ratio(ks, ns) if ns else float("nan")
    return EvalReport(decider, split, ratio, metrics, len(golds), len(ns), forced, per_turn)


def deterministic_indices(tracks: list[DialogTrack], r: float) -> list[list[int]]:
    return [[deterministic_take_index(t.n, r) if t.n else 0 for t in track.turns] for track in tracks]


def evaluate_deterministic(
    ensemble: TrackerEnsemble,
    corpus: list[Dialog] | None,
    r: float,
    split: str = "",
    tracks: list[DialogTrack] | None = None,
) -> EvalReport:
    tracks = _tracks(ensemble, corpus, tracks)
    return score_at(tracks, deterministic_indices(tracks, r), ensemble.specs, f"r={r:g}", split)


def learned_traces(ensemble, heads, tracks: list[DialogTrack], d: float) -> list[DecisionTrace]:
    traces = []
    for track in tracks:
        if track.turns and track.turns[0].p_take is None:
            attach_p_take(track, heads, ensemble.components)
        traces.append(decisions_for_track(track, d, ensemble.components))
    return traces


def evaluate_learned(
    ensemble: TrackerEnsemble,
    heads: dict,
    corpus: list[Dialog] | None,
    d: float,
    split: str = "",
    tracks: list[DialogTrack] | None = None,
) -> tuple[EvalReport, list[DecisionTrace]]:
    tracks = _tracks(ensemble, corpus, tracks)
    traces = learned_traces(ensemble, heads, tracks, d)
    indices = [[t.take_index for t in tr.turns] for tr in traces]
    forced = sum(t.forced for tr in traces for t in tr.turns if t.n_tokens)
    report = score_at(tracks, indices, ensemble.specs, f"d={d:g}", split, forced)
    return report, traces


def sweep_threshold(
    ensemble: TrackerEnsemble,
    heads: dict,
    tracks: list[DialogTrack],
    target_ratio: float,
    grid=None,
) -> tuple[float, float]:
    """Threshold whose realized ratio is nearest ``target_ratio``.

    The default grid covers [0, 1] in steps of 0.01, thresholds just below 1
    (1 - 10^-k) and quantiles of the per-token minimum p_take, so that fine
    ratio differences near the end of the utterance are reachable.
    Returns ``(d, realized_ratio)``; ties go to the smaller threshold.
    """
    learned_traces(ensemble, heads, tracks, 0.0)  # attaches p_take
    turns = [t for track in tracks for t in track.turns if t.n]
    if not turns:
        raise UndefinedRatioError("no turns with user tokens; the ratio is undefined")
    mins = [t.p_take.min(axis=1) for t in turns]
    if grid is None:
        all_mins = np.concatenate(mins)
        grid = np.concatenate(
            [
                np.linspace(0.0, 1.0, 101),
                1.0 - 10.0 ** -np.arange(3, 13),
                np.quantile(all_mins, np.linspace(0.0, 1.0, 201)),
            ]
        )
    grid = np.unique(np.clip(np.asarray(grid, dtype=np.float64), 0.0, 1.0))
    lengths = np.array([t.n for t in turns], dtype=np.float64)
    best_d, best_ratio, best_gap = None, None, np.inf
    for d in grid:
        ks = np.array([np.argmax(m >= d) + 1 if (m >= d).any() else len(m) for m in mins], dtype=np.float64)
        ratio = float(np.mean(ks / lengths))
        gap = abs(ratio - target_ratio)
        if gap < best_gap:
            best_d, best_ratio, best_gap = float(d), ratio, gap
    return best_d, best_ratio


def _winner(macro_metric: str, a: float, b: float) -> str:
    if a == b or (np.isnan(a) and np.isnan(b)):
        return "tie"
    higher_better = macro_metric == "accuracy"
    return "deterministic" if (a > b) == higher_better else "learned"


@dataclass
class Comparison:
    deterministic: EvalReport
    learned: EvalReport
    winners: dict  # macro -> {"accuracy": who, "l2": who}
    traces: list = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {
            "deterministic": self.deterministic.to_json(),
            "learned": self.learned.to_json(),
            "winners": self.winners,
        }


def compare_report(
    ensemble: TrackerEnsemble,
    heads: dict,
    corpus: list[Dialog] | None,
    r: float,
    d: float,
    split: str = "test",
    tracks: list[DialogTrack] | None = None,
) -> Comparison:
    """Evaluate the fixed-ratio decider at ``r`` and the learned one at ``d`` on the same turns."""
    tracks = _tracks(ensemble, corpus, tracks)
    det = evaluate_deterministic(ensemble, None, r, split, tracks)
    learned, traces = evaluate_learned(ensemble, heads, None, d, split, tracks)
    winners = {
        m: {k: _winner(k, det.metrics[m][k], learned.metrics[m][k]) for k in ("accuracy", "l2")}
        for m in det.metrics
    }
    return Comparison(det, learned, winners, traces)


def format_report(cmp: Comparison) -> str:
    """Plain-text table: one row per decider, Acc./L2 per macro-component, winners starred."""
    macros = list(cmp.deterministic.metrics)
    head = f"{'decider':<22}" + "".join(f"{m.title() + ' Acc.':>16}{m.title() + ' L2':>16}" for m in macros)
    head += f"{'ratio':>10}"
    lines = [f"split: {cmp.deterministic.split or '-'}", head, "-" * len(head)]
    for who, rep in (("deterministic", cmp.deterministic), ("learned", cmp.learned)):
        label = ("iDST " if who == "deterministic" else "iTTD ") + f"({rep.decider})"
        row = f"{label:<22}"
        for m in macros:
            for k in ("accuracy", "l2"):
                mark = "*" if cmp.winners[m][k] == who else " "
                row += f"{rep.metrics[m][k]:>15.4f}{mark}"
        row += f"{rep.ratio:>10.4f}"
        lines.append(row)
    lines.append("")
    lines.append("* marks the better decider per cell (higher accuracy, lower L2); ties are unmarked.")
    lines.append(
        f"turns: {cmp.deterministic.n_turns} ({cmp.deterministic.n_scored_turns} with user tokens); "
        f"learned decider forced at the last token on {cmp.learned.forced} turns"
    )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# curves and histograms
# ---------------------------------------------------------------------------

DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))


def prefix_accuracy_curve(
    ensemble: TrackerEnsemble,
    corpus: list[Dialog] | None,
    grid=DEFAULT_GRID,
    tracks: list[DialogTrack] | None = None,
) -> list[dict]:
    """Per-macro accuracy when every turn is scored at round(r * n), for each r in ``grid``."""
    tracks = _tracks(ensemble, corpus, tracks)
    rows = []
    for r in grid:
        rep = evaluate_deterministic(ensemble, None, float(r), tracks=tracks)
        row = {"ratio": float(r)}
        for m in MACROS:
            row[f"{m}_acc"] = rep.metrics[m]["accuracy"] if m in rep.metrics else float("nan")
        rows.append(row)
    return rows


def write_curve_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ratio", "goal_acc", "method_acc", "requested_acc"])
        for row in rows:
            w.writerow([f"{row['ratio']:g}"] + [f"{row[f'{m}_acc']:.6f}" for m in MACROS])


def take_histogram(traces: list[DecisionTrace]) -> dict[tuple[int, int], int]:
    """Raw counts keyed by (utterance length, take index); turns without user tokens are skipped."""
    counts: dict[tuple[int, int], int] = {}
    for tr in traces:
        for t in tr.turns:
            if t.n_tokens:
                key = (t.n_tokens, t.take_index)
                counts[key] = counts.get(key, 0) + 1
    return counts


def write_histogram_csv(counts: dict, path) -> None:
    """CSV rows (length, ratio_bucket, count) plus a metadata sidecar."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["length", "ratio_bucket", "count"])
        for (n, k), c in sorted(counts.items()):
            w.writerow([n, f"{k / n:.6f}", c])
    meta = {
        "counts": "raw, unclipped",
        "ratio_bucket": "take_index / length",
        "turns": int(sum(counts.values())),
    }
    path.with_name(path.name + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

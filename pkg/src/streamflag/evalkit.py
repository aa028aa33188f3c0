"""Evaluation protocol: top-k binarization, binary and ranking metrics,
assistive rank, and Copeland aggregation of rater rankings.

Points are keyed by (region_code, ISO date). Rater ranks are 1-based and may
tie; a smaller rank is better. Metrics that are undefined for a given label
configuration (empty or saturated truth sets, singleton rankings) come back
as None rather than a fabricated number.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "LIKELIHOOD_LEVELS",
    "LabeledPoint",
    "AlgorithmRanking",
    "binarize_topk",
    "binary_metrics",
    "ranking_metrics",
    "rbo_extrapolated",
    "kendall_tau_b",
    "assistive_rank",
    "copeland_aggregate",
    "evaluation_report",
    "load_labels",
]

LIKELIHOOD_LEVELS = (
    "unlikely",
    "somewhat_unlikely",
    "neither",
    "somewhat_likely",
    "likely",
)
_BOTTOM_TWO = frozenset(LIKELIHOOD_LEVELS[:2])

PointKey = tuple[str, str]


@dataclass(frozen=True)
class LabeledPoint:
    """One candidate point with its per-rater survey responses."""

    region_code: str
    date: dt.date
    rater_warrants: Mapping[str, bool] = field(default_factory=dict)
    rater_ranks: Mapping[str, int] = field(default_factory=dict)
    rater_likelihood: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for rank in self.rater_ranks.values():
            if rank < 1:
                raise ValueError("ranks are 1-based")
        for level in self.rater_likelihood.values():
            if level not in LIKELIHOOD_LEVELS:
                raise ValueError(f"unknown likelihood level {level!r}")

    @property
    def key(self) -> PointKey:
        return (self.region_code, self.date.isoformat())

    @property
    def warrants_investigation(self) -> bool:
        """Strict majority of votes; an exact split counts as not-warranting."""
        votes = list(self.rater_warrants.values())
        return bool(votes) and sum(votes) * 2 > len(votes)

    @property
    def hard_to_catch(self) -> bool:
        """Majority-warranted and >= 40% of the warranting raters put it in
        the bottom two likelihood levels."""
        if not self.warrants_investigation:
            return False
        warranting = [r for r, w in self.rater_warrants.items() if w]
        hits = sum(
            1 for r in warranting if self.rater_likelihood.get(r) in _BOTTOM_TWO
        )
        return hits >= 0.4 * len(warranting)


@dataclass(frozen=True)
class AlgorithmRanking:
    """A total order of points by descending outlier score."""

    entries: tuple[tuple[Hashable, float], ...]

    def __post_init__(self) -> None:
        keys = [k for k, _ in self.entries]
        if len(set(keys)) != len(keys):
            raise ValueError("ranking contains duplicate points")
        scores = [s for _, s in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("scores must be nonincreasing")

    @classmethod
    def from_scores(cls, scores: Mapping[Hashable, float]) -> "AlgorithmRanking":
        ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(tuple(ordered))

    def keys(self) -> list[Hashable]:
        return [k for k, _ in self.entries]

    def scores(self) -> dict[Hashable, float]:
        return dict(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def binarize_topk(ranking: AlgorithmRanking, k: int) -> list[Hashable]:
    """The top k points of the ranking as the predicted outlier set."""
    if k < 1:
        raise ValueError("k must be a positive integer")
    if k > len(ranking):
        raise ValueError(f"k={k} exceeds ranking length {len(ranking)}")
    return ranking.keys()[:k]


def binary_metrics(
    predicted: set,
    truth: set,
    universe: Sequence[Hashable],
    scores: Optional[Mapping[Hashable, float]] = None,
) -> dict[str, Optional[float]]:
    """Accuracy, balanced accuracy, F1, and ROC-AUC against a truth set.

    ROC-AUC consumes the continuous scores (midrank tie handling), not the
    binarized set. Balanced accuracy and ROC-AUC are None when the truth set
    is empty or covers the whole universe.
    """
    if not truth <= set(universe):
        raise ValueError("truth must be a subset of the universe")
    n = len(universe)
    if n == 0:
        raise ValueError("empty universe")
    tp = len(predicted & truth)
    fp = len(predicted - truth)
    fn = len(truth - predicted)
    tn = n - tp - fp - fn

    accuracy = (tp + tn) / n
    degenerate = not truth or len(truth) == n
    balanced = None if degenerate else 0.5 * (tp / len(truth) + tn / (n - len(truth)))
    f1_den = 2 * tp + fp + fn
    f1 = (2 * tp / f1_den) if f1_den else None

    auc: Optional[float] = None
    if scores is not None and not degenerate:
        vals = np.asarray([scores[key] for key in universe], dtype=float)
        pos = np.asarray([key in truth for key in universe])
        order = np.argsort(vals, kind="stable")
        ranks = np.empty(n)
        sorted_vals = vals[order]
        i = 0
        while i < n:
            j = i
            while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
                j += 1
            ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
            i = j + 1
        n_pos = int(pos.sum())
        n_neg = n - n_pos
        auc = float(
            (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
        )
    return {
        "accuracy": accuracy,
        "balanced_accuracy": balanced,
        "f1": f1,
        "roc_auc": auc,
    }


def _positional_hamming(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    if len(a) != len(b):
        raise ValueError("orders must have equal length")
    return sum(1 for x, y in zip(a, b) if x != y) / len(a)


def rbo_extrapolated(a: Sequence[Hashable], b: Sequence[Hashable], q: float = 0.9) -> float:
    """Rank-biased overlap (extrapolated) of two equal-length total orders.

    Prefix-overlap series with persistence q; equal orders score 1.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("persistence must be in (0, 1)")
    if set(a) != set(b) or len(a) != len(b):
        raise ValueError("orders must rank the same point set")
    n = len(a)
    if n == 0:
        raise ValueError("empty orders")
    seen_a: set = set()
    seen_b: set = set()
    overlap = 0
    series = 0.0
    for depth in range(1, n + 1):
        x, y = a[depth - 1], b[depth - 1]
        if x == y:
            overlap += 1
        else:
            overlap += (x in seen_b) + (y in seen_a)
        seen_a.add(x)
        seen_b.add(y)
        series += overlap / depth * q**depth
    return (1.0 - q) / q * series + overlap / n * q**n


def kendall_tau_b(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Tie-aware Kendall rank correlation of two aligned rank vectors."""
    n = len(x)
    if n != len(y):
        raise ValueError("rank vectors must align")
    if n < 2:
        return None
    concordant = discordant = 0
    ties_x = ties_y = 0
    for i in range(n - 1):
        for j in range(i + 1, n):
            sx = int(x[i] > x[j]) - int(x[i] < x[j])
            sy = int(y[i] > y[j]) - int(y[i] < y[j])
            if sx == 0 and sy == 0:
                ties_x += 1
                ties_y += 1
            elif sx == 0:
                ties_x += 1
            elif sy == 0:
                ties_y += 1
            elif sx == sy:
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    den = np.sqrt(float(n0 - ties_x) * float(n0 - ties_y))
    if den == 0:
        return None
    return float((concordant - discordant) / den)


def ranking_metrics(
    algorithm_order: Sequence[Hashable],
    rater_ranks: Mapping[Hashable, float],
    q: float = 0.9,
) -> dict[str, Optional[float]]:
    """Compare the algorithm's order with one rater's ranks over one set.

    Hamming distance and RBO need total orders, so the rater's (possibly
    tied) ranks are broken deterministically by point key; the swap
    correlation is tie-aware Kendall tau-b on the raw rank vectors.
    """
    keys = list(algorithm_order)
    if set(keys) != set(rater_ranks):
        raise ValueError("orders must cover the same point set")
    rater_order = sorted(keys, key=lambda key: (rater_ranks[key], key))
    algo_positions = list(range(1, len(keys) + 1))
    rater_vector = [rater_ranks[key] for key in keys]
    return {
        "hamming": _positional_hamming(keys, rater_order),
        "rbo": rbo_extrapolated(keys, rater_order, q),
        "swap_corr": kendall_tau_b(algo_positions, rater_vector),
    }


def assistive_rank(
    ranking: AlgorithmRanking, labels: Sequence[LabeledPoint]
) -> Optional[float]:
    """Mean 1-based rank of the points humans say they would have missed.

    Selection: majority-warranted points where at least 40% of the
    warranting raters chose the bottom two likelihood levels. None when
    nothing qualifies; an error if a selected point is absent from the
    ranking, which must be total over the candidate set.
    """
    selected = [point for point in labels if point.hard_to_catch]
    if not selected:
        return None
    positions = {key: i + 1 for i, key in enumerate(ranking.keys())}
    ranks = []
    for point in selected:
        if point.key not in positions:
            raise ValueError(f"point {point.key} missing from the ranking")
        ranks.append(positions[point.key])
    return float(np.mean(ranks))


def copeland_aggregate(
    rater_rankings: Sequence[Mapping[Hashable, float]],
) -> list[tuple[Hashable, int]]:
    """Aggregate rater rankings by pairwise-majority wins minus losses.

    Items a rater leaves unranked count as tied below every ranked item.
    The result is ordered by descending Copeland score with ties sharing a
    score (key order breaks presentation ties deterministically).
    """
    if not rater_rankings:
        raise ValueError("need at least one rater")
    items = sorted({item for ranking in rater_rankings for item in ranking})
    scores = {item: 0 for item in items}
    for i, a in enumerate(items):
        for b in items[i + 1 :]:
            a_wins = b_wins = 0
            for ranking in rater_rankings:
                ra = ranking.get(a, np.inf)
                rb = ranking.get(b, np.inf)
                if ra < rb:
                    a_wins += 1
                elif rb < ra:
                    b_wins += 1
            if a_wins > b_wins:
                scores[a] += 1
                scores[b] -= 1
            elif b_wins > a_wins:
                scores[b] += 1
                scores[a] -= 1
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


def evaluation_report(
    scores: Mapping[PointKey, float],
    labels: Sequence[LabeledPoint],
    q: float = 0.9,
) -> list[dict]:
    """Per-stream metric rows plus an OVERALL summary row.

    ``scores`` maps (region_code, iso date) to the algorithm's outlier score
    and must cover every labeled point. Per stream: truth is the
    majority-warranted subset, k = |truth| drives the top-k binarization,
    ranking metrics average over raters on the majority subset, and the
    assistive rank follows the hard-to-catch selection.
    """
    missing = [p.key for p in labels if p.key not in scores]
    if missing:
        raise ValueError(f"no scores for labeled points: {missing[:5]}")
    by_region: dict[str, list[LabeledPoint]] = {}
    for point in labels:
        by_region.setdefault(point.region_code, []).append(point)

    rows: list[dict] = []
    pooled_assistive: list[float] = []
    for region in sorted(by_region):
        points = by_region[region]
        ranking = AlgorithmRanking.from_scores({p.key: scores[p.key] for p in points})
        universe = ranking.keys()
        truth = {p.key for p in points if p.warrants_investigation}
        predicted = set(binarize_topk(ranking, len(truth))) if truth else set()
        binary = binary_metrics(predicted, truth, universe, ranking.scores())

        raters = sorted({r for p in points for r in p.rater_warrants})
        subset = [key for key in universe if key in truth]
        h_vals, rbo_vals, tau_vals = [], [], []
        if len(subset) >= 1:
            for rater in raters:
                ranks = {
                    p.key: float(p.rater_ranks.get(rater, np.inf))
                    for p in points
                    if p.key in truth
                }
                metrics = ranking_metrics(subset, ranks, q=q)
                h_vals.append(metrics["hamming"])
                rbo_vals.append(metrics["rbo"])
                if metrics["swap_corr"] is not None:
                    tau_vals.append(metrics["swap_corr"])
        assistive = assistive_rank(ranking, points)
        if assistive is not None:
            positions = {key: i + 1 for i, key in enumerate(universe)}
            pooled_assistive.extend(
                positions[p.key] for p in points if p.hard_to_catch
            )
        rows.append(
            {
                "region_code": region,
                "n_points": len(points),
                "n_truth": len(truth),
                "accuracy": binary["accuracy"],
                "balanced_accuracy": binary["balanced_accuracy"],
                "f1": binary["f1"],
                "roc_auc": binary["roc_auc"],
                "hamming": float(np.mean(h_vals)) if h_vals else None,
                "rbo": float(np.mean(rbo_vals)) if rbo_vals else None,
                "swap_corr": float(np.mean(tau_vals)) if tau_vals else None,
                "assistive_rank": assistive,
            }
        )

    def _mean(name: str) -> Optional[float]:
        vals = [r[name] for r in rows if r[name] is not None]
        return float(np.mean(vals)) if vals else None

    rows.append(
        {
            "region_code": "OVERALL",
            "n_points": sum(r["n_points"] for r in rows),
            "n_truth": sum(r["n_truth"] for r in rows),
            "accuracy": _mean("accuracy"),
            "balanced_accuracy": _mean("balanced_accuracy"),
            "f1": _mean("f1"),
            "roc_auc": _mean("roc_auc"),
            "hamming": _mean("hamming"),
            "rbo": _mean("rbo"),
            "swap_corr": _mean("swap_corr"),
            "assistive_rank": float(np.mean(pooled_assistive))
            if pooled_assistive
            else None,
        }
    )
    return rows


def load_labels(path: str | Path) -> list[LabeledPoint]:
    """Read the per-rater label table.

    Expected header: region_code,date,rater_id,warrants,rank,assistive_likelihood
    with ISO dates, boolean warrants (true/false/1/0), optional rank and
    likelihood columns (empty when the rater skipped them).
    """
    expected = ["region_code", "date", "rater_id", "warrants", "rank", "assistive_likelihood"]
    rows: dict[PointKey, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise ValueError(f"labels header must be {','.join(expected)!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise ValueError(f"labels line {lineno}: expected {len(expected)} fields")
            code, date_s, rater, warrants_s, rank_s, level = [f.strip() for f in row]
            try:
                day = dt.date.fromisoformat(date_s)
            except ValueError as exc:
                raise ValueError(f"labels line {lineno}: bad date {date_s!r}") from exc
            if warrants_s.lower() not in ("true", "false", "1", "0"):
                raise ValueError(f"labels line {lineno}: bad warrants {warrants_s!r}")
            warrants = warrants_s.lower() in ("true", "1")
            entry = rows.setdefault(
                (code, day.isoformat()),
                {"code": code, "date": day, "warrants": {}, "ranks": {}, "levels": {}},
            )
            if rater in entry["warrants"]:
                raise ValueError(f"labels line {lineno}: duplicate rater {rater!r} for point")
            entry["warrants"][rater] = warrants
            if rank_s:
                entry["ranks"][rater] = int(rank_s)
            if level:
                if level not in LIKELIHOOD_LEVELS:
                    raise ValueError(f"labels line {lineno}: unknown likelihood {level!r}")
                entry["levels"][rater] = level
    return [
        LabeledPoint(
            region_code=entry["code"],
            date=entry["date"],
            rater_warrants=entry["warrants"],
            rater_ranks=entry["ranks"],
            rater_likelihood=entry["levels"],
        )
        for entry in (rows[key] for key in sorted(rows))
    ]

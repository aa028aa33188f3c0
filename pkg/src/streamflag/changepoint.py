"""Regime segmentation via PELT with a Gaussian cost, jointly across streams.

A sibling group of streams is segmented with one shared changepoint set: the
segment cost is the sum of each stream's Gaussian cost over the segment, so
a shift must be supported across the group to pay for itself. Pruning is the
exact kind: with a subadditive cost the pruned optimum equals the exhaustive
dynamic-programming optimum, with removal delayed by the minimum segment
length so the spacing constraint cannot resurrect a pruned candidate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = ["RegimeSegmentation", "gaussian_cost", "pelt_segment", "VARIANCE_FLOOR"]

VARIANCE_FLOOR = 1e-8
"""Additive variance floor so constant segments cost n*log(floor), not -inf."""


@dataclass(frozen=True)
class RegimeSegmentation:
    """Changepoint indices delimiting regimes of a series.

    Each changepoint is the index of the first point of a new regime.
    Consecutive changepoints, and the distance to either series boundary,
    are at least ``min_spacing`` days apart.
    """

    changepoints: tuple[int, ...]
    min_spacing: int = 28
    penalty: float = 0.0
    length: int = 0

    def __post_init__(self) -> None:
        cps = tuple(int(c) for c in self.changepoints)
        object.__setattr__(self, "changepoints", cps)
        if list(cps) != sorted(set(cps)):
            raise ValueError("changepoints must be strictly increasing")
        if self.penalty < 0:
            raise ValueError("penalty must be nonnegative")
        if self.length:
            bounds = (0, *cps, self.length)
            for a, b in zip(bounds, bounds[1:]):
                if b - a < self.min_spacing and cps:
                    raise ValueError(
                        f"segment [{a},{b}) shorter than min_spacing {self.min_spacing}"
                    )
            if cps and not (0 < cps[0] and cps[-1] < self.length):
                raise ValueError("changepoints must be interior to the series")

    def regimes(self, n: int | None = None) -> list[tuple[int, int]]:
        """Half-open [start, end) regime bounds for a series of length n."""
        n = self.length if n is None else n
        bounds = (0, *self.changepoints, n)
        return [(a, b) for a, b in zip(bounds, bounds[1:])]


def gaussian_cost(segment: np.ndarray) -> float:
    """Gaussian segment cost n*log(var + floor) with population variance.

    Raises ValueError for segments shorter than 2 points; PELT never asks
    for those because min_spacing >= 2 in practice, but direct callers can.
    """
    seg = np.asarray(segment, dtype=float)
    if seg.size < 2:
        raise ValueError("gaussian_cost needs a segment of length >= 2")
    var = float(np.var(seg))
    return seg.size * float(np.log(var + VARIANCE_FLOOR))


class _JointGaussianCost:
    """O(1) summed Gaussian segment cost over aligned streams, via prefix sums."""

    def __init__(self, streams: np.ndarray) -> None:
        # streams: shape (S, T)
        s, t = streams.shape
        self.n_streams = s
        self.length = t
        self._cum = np.zeros((s, t + 1))
        self._cum2 = np.zeros((s, t + 1))
        np.cumsum(streams, axis=1, out=self._cum[:, 1:])
        np.cumsum(streams * streams, axis=1, out=self._cum2[:, 1:])

    def segment_cost(self, start: int, end: int) -> float:
        """Summed cost of [start, end) across all streams."""
        n = end - start
        total = (self._cum[:, end] - self._cum[:, start]) / n
        mean_sq = (self._cum2[:, end] - self._cum2[:, start]) / n
        var = np.maximum(mean_sq - total * total, 0.0)
        return float(n * np.sum(np.log(var + VARIANCE_FLOOR)))

    def costs_from(self, starts: np.ndarray, end: int) -> np.ndarray:
        """Summed cost of [s, end) for a vector of candidate starts."""
        n = (end - starts).astype(float)
        seg_sum = self._cum[:, end][:, None] - self._cum[:, starts]
        seg_sq = self._cum2[:, end][:, None] - self._cum2[:, starts]
        mean = seg_sum / n
        var = np.maximum(seg_sq / n - mean * mean, 0.0)
        return n * np.sum(np.log(var + VARIANCE_FLOOR), axis=0)


def pelt_segment(
    series_group: Sequence[np.ndarray],
    penalty: float,
    min_spacing: int = 28,
) -> RegimeSegmentation:
    """Optimal shared changepoints for a group of aligned series.

    Minimizes sum-of-segment Gaussian costs, summed over all streams, plus
    ``penalty`` per changepoint, subject to every segment spanning at least
    ``min_spacing`` points. Series shorter than one spacing (or too short to
    admit any changepoint) come back as a single regime.
    """
    if penalty <= 0:
        raise ValueError("penalty must be positive")
    if min_spacing < 2:
        raise ValueError("min_spacing must be >= 2")
    if not series_group:
        raise ValueError("series_group must be nonempty")
    mat = np.vstack([np.asarray(s, dtype=float) for s in series_group])
    if not np.all(np.isfinite(mat)):
        raise ValueError("series contain non-finite values; impute before segmenting")
    t_len = mat.shape[1]
    if t_len < 2 * min_spacing:
        return RegimeSegmentation((), min_spacing, penalty, t_len)

    cost = _JointGaussianCost(mat)
    inf = np.inf
    # best[t] = optimal cost of segmenting the first t points (+penalty per cp,
    # with a -penalty offset at t=0 so the first segment is free of charge).
    best = np.full(t_len + 1, inf)
    best[0] = -penalty
    last_cp = np.zeros(t_len + 1, dtype=int)
    # Candidate last-changepoint positions; dead_from[tau] delays pruning by
    # min_spacing so candidates stay admissible where the spacing constraint
    # blocks their dominator.
    candidates = [0]
    dead_from = {}

    for t in range(min_spacing, t_len + 1):
        active = [
            tau
            for tau in candidates
            if t - tau >= min_spacing and dead_from.get(tau, inf) > t
        ]
        if not active:
            continue
        starts = np.asarray(active, dtype=int)
        totals = best[starts] + cost.costs_from(starts, t) + penalty
        k = int(np.argmin(totals))
        best[t] = totals[k]
        last_cp[t] = active[k]
        # Exact pruning: tau is dominated for all t' >= t + min_spacing.
        for tau, tot in zip(active, totals):
            if tot - penalty >= best[t] and tau not in dead_from:
                dead_from[tau] = t + min_spacing
        if t <= t_len - min_spacing:
            candidates.append(t)

    cps: list[int] = []
    t = t_len
    while t > 0:
        tau = int(last_cp[t])
        if tau == 0:
            break
        cps.append(tau)
        t = tau
    cps.reverse()
    return RegimeSegmentation(tuple(cps), min_spacing, penalty, t_len)


def default_penalty(n_streams: int, length: int) -> float:
    """BIC-style default penalty, scaled by stream count so joint runs are
    comparable to single-stream ones."""
    return 2.0 * n_streams * float(np.log(max(length, 2)))

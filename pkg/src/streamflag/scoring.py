"""Binomial test statistic, pooled empirical nulls, and flag ranking.

The per-point statistic is the binomial tail probability that a draw from
Bin(population, predicted/population) exceeds the observed (weekday
corrected) count. Holdout statistics from every stream in a sibling group
are pooled into one null; a real-time statistic converts to an empirical
p-value against that pool and the two-sided extremity |2p - 1| orders the
day's flag list.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.special import betainc, gammaln

from streamflag.core import OutlierCategory

__all__ = [
    "EXACT_POPULATION_LIMIT",
    "TestStatRecord",
    "PooledNull",
    "FlagRecord",
    "binom_stat",
    "binom_stat_many",
    "build_pooled_null",
    "empirical_p",
    "rank_score",
    "rank_flags",
]

EXACT_POPULATION_LIMIT = 10_000
"""Populations up to this size use exact pmf summation; larger ones use the
regularized incomplete beta form of the tail."""


@dataclass(frozen=True)
class TestStatRecord:
    """One point's binomial tail statistic and the values behind it."""

    region_code: str
    date: dt.date
    k: float
    observed_corrected: float
    predicted: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.k <= 1.0:
            raise ValueError(f"test statistic {self.k} outside [0, 1]")


@dataclass(frozen=True)
class PooledNull:
    """Holdout test statistics pooled across a sibling group.

    ``stats`` is stored sorted; membership is a multiset, so building is
    insensitive to region iteration order.
    """

    group: frozenset[str]
    stats: np.ndarray
    built_at: Optional[dt.date] = None

    def __post_init__(self) -> None:
        arr = np.sort(np.asarray(self.stats, dtype=float))
        object.__setattr__(self, "stats", arr)
        arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.stats)


@dataclass(frozen=True)
class FlagRecord:
    """A scored real-time point, ready for the ranked review list."""

    region_code: str
    region_level: str
    date: dt.date
    p_value: float
    rank_score: float
    k: float
    observed: float
    observed_corrected: float
    predicted: float
    residual_per_capita: float
    annotations: tuple[OutlierCategory, ...] = ()
    reviewed: bool = False
    reviewer_note: Optional[str] = None

    def __post_init__(self) -> None:
        if abs(self.rank_score - abs(2.0 * self.p_value - 1.0)) > 0.0:
            raise ValueError("rank_score must equal |2p - 1| exactly")

    def with_review(self, reviewed: bool, note: Optional[str]) -> "FlagRecord":
        return replace(self, reviewed=reviewed, reviewer_note=note)


def _exact_tail(k: int, n: int, p: float) -> float:
    """P(D > k) for D ~ Bin(n, p) by direct pmf summation in log space."""
    if k >= n:
        return 0.0
    if k < 0:
        return 1.0
    j = np.arange(k + 1, n + 1, dtype=float)
    log_pmf = (
        gammaln(n + 1.0)
        - gammaln(j + 1.0)
        - gammaln(n - j + 1.0)
        + j * np.log(p)
        + (n - j) * np.log1p(-p)
    )
    peak = log_pmf.max()
    return float(min(np.exp(peak) * np.exp(log_pmf - peak).sum(), 1.0))


def binom_stat(observed: float, predicted: float, population: int) -> float:
    """Tail probability P(D > floor(observed)), D ~ Bin(N, predicted/N).

    The prediction is clamped into [0, N] before forming the rate, so a
    negative prediction degenerates to a point mass at zero. Exact summation
    is used for N <= 10^4 and the regularized incomplete beta identity above
    that; both sides agree to well under 1e-6.
    """
    if population < 1:
        raise ValueError("population must be >= 1")
    if observed < 0:
        raise ValueError("observed must be nonnegative")
    n = int(population)
    k = int(np.floor(observed))
    if k >= n:
        return 0.0
    p = min(max(float(predicted), 0.0), float(n)) / n
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    if n <= EXACT_POPULATION_LIMIT:
        return _exact_tail(k, n, p)
    # P(D >= k+1) = I_p(k+1, n-k) for 0 <= k < n.
    return float(betainc(k + 1.0, float(n - k), p))


def binom_stat_many(
    observed: np.ndarray, predicted: np.ndarray, population: int
) -> np.ndarray:
    """Vectorized binom_stat over aligned observation/prediction vectors."""
    observed = np.asarray(observed, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if population < 1:
        raise ValueError("population must be >= 1")
    n = int(population)
    k = np.floor(observed)
    p = np.clip(predicted, 0.0, float(n)) / n
    out = np.zeros(len(observed))
    live = (k < n) & (p > 0.0)
    out[(k < n) & (p >= 1.0)] = 1.0
    live &= p < 1.0
    if n <= EXACT_POPULATION_LIMIT:
        for i in np.nonzero(live)[0]:
            out[i] = _exact_tail(int(k[i]), n, float(p[i]))
    else:
        idx = np.nonzero(live)[0]
        if idx.size:
            out[idx] = betainc(k[idx] + 1.0, n - k[idx], p[idx])
    return out


def build_pooled_null(
    holdout_stats: Mapping[str, Sequence[float]],
    group: Iterable[str],
    built_at: Optional[dt.date] = None,
) -> PooledNull:
    """Union the holdout statistics of every region in the group.

    Raises if the union is empty: callers must defer flagging until at least
    one stream has contributed a null.
    """
    codes = frozenset(group)
    pooled: list[float] = []
    for code in sorted(codes):
        pooled.extend(float(s) for s in holdout_stats.get(code, ()))
    if not pooled:
        raise ValueError(f"no holdout statistics available for group {sorted(codes)}")
    return PooledNull(codes, np.asarray(pooled), built_at)


def empirical_p(k_t: float, null: PooledNull) -> float:
    """Empirical p-value of a real-time statistic against the pooled null.

    p = (1 + #{k <= k_t}) / (n + 2), which keeps p strictly inside (0, 1)
    and therefore |2p - 1| strictly below 1.
    """
    n = len(null)
    if n == 0:
        raise ValueError("pooled null is empty")
    count = int(np.searchsorted(null.stats, k_t, side="right"))
    return (1.0 + count) / (n + 2.0)


def rank_score(p: float) -> float:
    """Two-sided extremity |2p - 1|: either tail ranks to the top."""
    return abs(2.0 * p - 1.0)


def rank_flags(records: Sequence[FlagRecord]) -> list[FlagRecord]:
    """Order flags for review: extremity first, deterministic throughout.

    Ties on the score break toward the larger per-capita residual, then the
    lexicographically smaller region code.
    """
    return sorted(
        records,
        key=lambda r: (-r.rank_score, -r.residual_per_capita, r.region_code),
    )

"""Retrain triggers: KS uniformity drift test, calendar schedule, manual.

Between retrains every scored point's empirical p-value accumulates per
sibling group. Under the no-changepoint null those p-values are uniform, so
a Kolmogorov-Smirnov departure from uniformity is evidence of drift. A
calendar fallback retrains on age alone, and a reviewer can always force
one through the CLI or the HTTP endpoint.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

__all__ = [
    "RetrainDecision",
    "MonitorState",
    "ks_statistic",
    "ks_critical_value",
    "should_retrain",
]

MIN_SAMPLES_FOR_DRIFT = 30


class RetrainDecision(str, Enum):
    NONE = "none"
    DRIFT = "drift"
    SCHEDULED = "scheduled"


@dataclass
class MonitorState:
    """Accumulated real-time p-values for one sibling group.

    Mutated only by its owning group's scorer; cleared on every retrain.
    """

    last_retrain: dt.date
    alpha: float = 0.01
    max_age_days: int = 90
    pvalues: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.max_age_days <= 0:
            raise ValueError("max_age_days must be positive")

    def record(self, pvalues: Sequence[float]) -> None:
        self.pvalues.extend(float(p) for p in pvalues)

    def reset(self, retrained_on: dt.date) -> None:
        self.pvalues.clear()
        self.last_retrain = retrained_on


def ks_statistic(samples: Sequence[float]) -> float:
    """One-sample KS distance of the samples from Uniform(0, 1).

    D_n = sup_x |F_n(x) - x|, evaluated at the order statistics:
    max_i max(i/n - x_(i), x_(i) - (i-1)/n).
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n == 0:
        raise ValueError("ks_statistic needs at least one sample")
    grid = np.arange(1, n + 1, dtype=float) / n
    return float(np.max(np.maximum(grid - x, x - (grid - 1.0 / n))))


def ks_critical_value(alpha: float, n: int) -> float:
    """Asymptotic level-alpha critical value c(alpha)/sqrt(n)."""
    return math.sqrt(-math.log(alpha / 2.0) / 2.0) / math.sqrt(n)


def should_retrain(state: MonitorState, today: dt.date) -> RetrainDecision:
    """Decide whether the group needs retraining as of ``today``.

    Drift requires at least 30 accumulated p-values and a KS statistic over
    the asymptotic critical value; it takes precedence over the calendar
    rule, which fires when the model is max_age_days old or older.
    """
    n = len(state.pvalues)
    if n >= MIN_SAMPLES_FOR_DRIFT:
        if ks_statistic(state.pvalues) > ks_critical_value(state.alpha, n):
            return RetrainDecision.DRIFT
    if (today - state.last_retrain).days >= state.max_age_days:
        return RetrainDecision.SCHEDULED
    return RetrainDecision.NONE

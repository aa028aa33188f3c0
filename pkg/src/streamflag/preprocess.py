"""Within-regime outlier detection, imputation, and weekday correction.

The normative order is: out-of-range clamping, then day-of-week outliers
against each weekday's own bucket, then a multiplicative weekday correction,
then global outliers on the corrected values. Detection uses population
standard deviations, which puts a hard floor on sensitivity: over n points
the largest attainable |z| is sqrt(n - 1), so a single point can only reach
|z| = 3 when its bucket holds at least 10 points. Streams shorter than the
modeling cutoff skip all of this and get interquartile-range labels only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from streamflag.changepoint import RegimeSegmentation
from streamflag.core import (
    OutlierCategory,
    ProcessedSeries,
    StreamSeries,
    is_missing,
)

__all__ = [
    "WeekdayModel",
    "ZScoreConfig",
    "clamp_out_of_range",
    "detect_dow_outliers",
    "fit_weekday_model",
    "apply_weekday_correction",
    "detect_global_outliers",
    "short_series_outliers",
    "process_stream",
]

# Half-count floor applied to weekday bucket means before the log-space fit,
# so an all-zero weekday still yields a finite positive factor.
_BUCKET_FLOOR = 0.5


@dataclass(frozen=True)
class ZScoreConfig:
    """Threshold config for the z-score outlier checks (population sd)."""

    threshold: float = 3.0

    def __post_init__(self) -> None:
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")


@dataclass(frozen=True)
class WeekdayModel:
    """Multiplicative weekday effects, normalized so the log factors sum to 0.

    The corrected value for a point on weekday d is value / factors[d].
    """

    factors: tuple[float, float, float, float, float, float, float]

    def __post_init__(self) -> None:
        if len(self.factors) != 7:
            raise ValueError("exactly 7 weekday factors required")
        if any(f <= 0 for f in self.factors):
            raise ValueError("weekday factors must be positive")
        if abs(sum(math.log(f) for f in self.factors)) > 1e-9:
            raise ValueError("weekday log-factors must sum to zero")

    @classmethod
    def identity(cls) -> "WeekdayModel":
        return cls((1.0,) * 7)

    def array(self) -> np.ndarray:
        return np.asarray(self.factors, dtype=float)

    def correct(self, value: float, weekday: int) -> float:
        return max(value / self.factors[weekday], 0.0)


def clamp_out_of_range(
    series: StreamSeries,
) -> tuple[np.ndarray, list[Optional[OutlierCategory]]]:
    """Clamp values into [0, population] and fill missing days.

    Negative values go to 0, values above the population to the population,
    and missing days take the previous day's post-imputation value (0 at the
    head of the series). Every touched point is labeled out_of_range.
    """
    values = series.values
    imputed = np.array(values, dtype=float)
    labels: list[Optional[OutlierCategory]] = [None] * len(values)
    missing = is_missing(values)
    pop = float(series.population)
    for i in range(len(values)):
        if missing[i]:
            imputed[i] = imputed[i - 1] if i > 0 else 0.0
            labels[i] = OutlierCategory.OUT_OF_RANGE
        elif values[i] < 0.0:
            imputed[i] = 0.0
            labels[i] = OutlierCategory.OUT_OF_RANGE
        elif values[i] > pop:
            imputed[i] = pop
            labels[i] = OutlierCategory.OUT_OF_RANGE
    return imputed, labels


def _bucket_zscores(values: np.ndarray, weekdays: np.ndarray, threshold: float) -> np.ndarray:
    """|z| >= threshold mask, with z computed within each weekday bucket.

    A bucket with zero spread defines z = 0 for all its points.
    """
    flag = np.zeros(len(values), dtype=bool)
    for d in range(7):
        idx = np.nonzero(weekdays == d)[0]
        if idx.size == 0:
            continue
        bucket = values[idx]
        sd = float(np.std(bucket))
        if sd == 0.0:
            continue
        z = (bucket - bucket.mean()) / sd
        flag[idx[np.abs(z) >= threshold]] = True
    return flag


def detect_dow_outliers(
    values: np.ndarray,
    weekdays: np.ndarray,
    cfg: ZScoreConfig,
    prior_value: Optional[float] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Day-of-week outliers within one regime, plus their imputed values.

    A point is flagged when it sits >= threshold population-sd's from its
    weekday bucket's mean. A flagged point at position t is imputed as the
    previous day's (already imputed) value plus the regime's median
    same-weekday first difference. ``prior_value`` supplies the day before
    the regime for t = 0; without one, the bucket mean is used.

    Returns (flag mask, imputed values).
    """
    values = np.asarray(values, dtype=float)
    flags = _bucket_zscores(values, weekdays, cfg.threshold)
    imputed = values.copy()
    if not flags.any():
        return flags, imputed

    diffs = np.diff(values)
    median_step = {}
    for d in range(7):
        d_idx = np.nonzero(weekdays[1:] == d)[0]
        median_step[d] = float(np.median(diffs[d_idx])) if d_idx.size else 0.0

    for t in np.nonzero(flags)[0]:
        d = int(weekdays[t])
        if t > 0:
            base = imputed[t - 1]
        elif prior_value is not None:
            base = prior_value
        else:
            bucket = values[weekdays == d]
            base = float(bucket.mean())
        imputed[t] = base + median_step[d]
    return flags, imputed


def fit_weekday_model(values: np.ndarray, weekdays: np.ndarray) -> WeekdayModel:
    """Maximum-likelihood multiplicative weekday factors for one regime.

    Under a Poisson model with a segment-level mean and per-weekday
    multipliers, the likelihood separates by weekday and each bucket's
    log-mean is its maximizer; the factors are the bucket means divided by
    their geometric mean, which enforces the zero-sum log constraint. Bucket
    means are floored at half a count so empty-looking weekdays keep a
    finite factor; an all-zero regime therefore comes out as the identity.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("cannot fit a weekday model on an empty regime")
    overall = float(values.mean()) if values.size else 0.0
    means = np.empty(7)
    for d in range(7):
        bucket = values[weekdays == d]
        means[d] = float(bucket.mean()) if bucket.size else max(overall, _BUCKET_FLOOR)
    means = np.maximum(means, _BUCKET_FLOOR)
    log_means = np.log(means)
    log_factors = log_means - log_means.mean()
    factors = np.exp(log_factors)
    # Renormalize in log space so the invariant holds to float precision.
    factors /= np.exp(np.log(factors).mean())
    return WeekdayModel(tuple(float(f) for f in factors))


def apply_weekday_correction(
    values: np.ndarray, weekdays: np.ndarray, model: WeekdayModel
) -> np.ndarray:
    """Divide out the weekday factors; output is clipped below at zero."""
    corrected = np.asarray(values, dtype=float) / model.array()[weekdays]
    return np.maximum(corrected, 0.0)


def detect_global_outliers(
    corrected: np.ndarray, cfg: ZScoreConfig
) -> tuple[np.ndarray, float]:
    """Regime-wide outliers in the corrected values.

    z-scores use the regime's mean and population sd over all weekdays; the
    regime mean (outliers included) is also the imputation value, returned
    for the caller to apply. Zero spread means no flags.
    """
    corrected = np.asarray(corrected, dtype=float)
    mean = float(corrected.mean())
    sd = float(np.std(corrected))
    if sd == 0.0:
        return np.zeros(len(corrected), dtype=bool), mean
    z = (corrected - mean) / sd
    return np.abs(z) >= cfg.threshold, mean


def short_series_outliers(series: StreamSeries, multiplier: float = 1.5) -> list[Optional[OutlierCategory]]:
    """Interquartile-range outlier labels for streams too short to model.

    Quartiles use linear interpolation; points outside
    [Q1 - multiplier*IQR, Q3 + multiplier*IQR] are labeled global. Fewer
    than 4 finite points leaves everything unlabeled.
    """
    values = series.values
    labels: list[Optional[OutlierCategory]] = [None] * len(values)
    finite = values[~is_missing(values)]
    if finite.size < 4:
        return labels
    q1, q3 = np.quantile(finite, [0.25, 0.75])
    iqr = q3 - q1
    lo, hi = q1 - multiplier * iqr, q3 + multiplier * iqr
    for i, v in enumerate(values):
        if not math.isnan(v) and (v < lo or v > hi):
            labels[i] = OutlierCategory.GLOBAL
    return labels


def process_stream(
    series: StreamSeries,
    segmentation: RegimeSegmentation,
    cfg: ZScoreConfig = ZScoreConfig(),
) -> ProcessedSeries:
    """Full per-stream processing over a precomputed segmentation.

    Order is normative: clamp out-of-range values, then per regime detect and
    impute day-of-week outliers, fit and apply the weekday correction, and
    detect global outliers on the corrected series. Each point keeps at most
    one label; the first stage to claim it wins.
    """
    weekdays = series.weekdays()
    imputed, labels = clamp_out_of_range(series)
    corrected = np.empty_like(imputed)
    pop = float(series.population)
    models: list[WeekdayModel] = []

    for start, end in segmentation.regimes(len(series)):
        sl = slice(start, end)
        prior = float(imputed[start - 1]) if start > 0 else None
        dow_flags, dow_imputed = detect_dow_outliers(
            imputed[sl], weekdays[sl], cfg, prior_value=prior
        )
        imputed[sl] = np.clip(dow_imputed, 0.0, pop)
        for local in np.nonzero(dow_flags)[0]:
            i = start + int(local)
            if labels[i] is None:
                labels[i] = OutlierCategory.DAY_OF_WEEK

        model = fit_weekday_model(imputed[sl], weekdays[sl])
        models.append(model)
        corrected[sl] = apply_weekday_correction(imputed[sl], weekdays[sl], model)

        global_flags, regime_mean = detect_global_outliers(corrected[sl], cfg)
        factors = model.array()
        for local in np.nonzero(global_flags)[0]:
            i = start + int(local)
            if labels[i] is None:
                labels[i] = OutlierCategory.GLOBAL
            raw = np.clip(regime_mean * factors[weekdays[i]], 0.0, pop)
            imputed[i] = raw
            corrected[i] = raw / factors[weekdays[i]]

    return ProcessedSeries(
        source=series,
        imputed_values=imputed,
        labels=tuple(labels),
        weekday_corrected=corrected,
        segmentation=segmentation,
        weekday_models=tuple(models),
    )

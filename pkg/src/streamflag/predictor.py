"""Lag-7 linear autoregressive null model, fit on a small training prefix.

The model has no intercept: the one-step prediction is a dot product of the
seven most recent weekday-corrected values with the fitted weights. A small
ridge term keeps the normal equations solvable on degenerate (for example
constant or all-zero) training windows, where it selects the zero solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ARModel", "DEFAULT_LAG", "training_split", "fit_ar", "predict"]

DEFAULT_LAG = 7
DEFAULT_RIDGE = 1e-6
MIN_TRAIN = 30


@dataclass(frozen=True)
class ARModel:
    """Fitted autoregressive weights, most recent lag first."""

    weights: tuple[float, ...]
    ridge: float = DEFAULT_RIDGE
    train_end: int = 0

    def __post_init__(self) -> None:
        if not all(np.isfinite(self.weights)):
            raise ValueError("AR weights must be finite")

    @property
    def lag(self) -> int:
        return len(self.weights)

    def array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


def training_split(history_length: int, lag: int = DEFAULT_LAG) -> tuple[range, range]:
    """Chronological (train, holdout) index ranges for a processed history.

    The training prefix is the larger of 10% of the history or 30 points;
    everything after it is holdout. Histories too short to leave at least
    one holdout point after the lags are rejected (those streams belong to
    the short-series path).
    """
    minimum = MIN_TRAIN + lag + 1
    if history_length < minimum:
        raise ValueError(
            f"history of {history_length} points is too short to split "
            f"(need >= {minimum})"
        )
    n_train = max(int(np.ceil(0.10 * history_length)), MIN_TRAIN)
    return range(0, n_train), range(n_train, history_length)


def _lag_matrix(values: np.ndarray, lag: int) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix and targets: row t is [x[t-1], ..., x[t-lag]]."""
    n = len(values) - lag
    cols = [values[lag - i - 1 : lag - i - 1 + n] for i in range(lag)]
    x = np.column_stack(cols)
    y = values[lag:]
    return x, y


def fit_ar(
    training_values: np.ndarray, ridge: float = DEFAULT_RIDGE, lag: int = DEFAULT_LAG
) -> ARModel:
    """Ridge-regularized least-squares fit of the lag weights.

    Solves (X'X + ridge*I) beta = X'y on the lagged design built from the
    training values. Deterministic: identical inputs give identical weights.
    """
    values = np.asarray(training_values, dtype=float)
    if len(values) < 2 * lag + 1:
        raise ValueError(
            f"need at least {lag + 1} usable rows ({2 * lag + 1} points), got {len(values)}"
        )
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    x, y = _lag_matrix(values, lag)
    gram = x.T @ x + ridge * np.eye(lag)
    beta = np.linalg.solve(gram, x.T @ y)
    return ARModel(tuple(float(b) for b in beta), ridge=ridge, train_end=len(values))


def predict(model: ARModel, corrected_values: np.ndarray, t: int) -> float:
    """One-step prediction at index t from the preceding ``lag`` values.

    Returns the raw dot product; the caller clamps into [0, population]
    before any binomial use.
    """
    lag = model.lag
    if t < lag:
        raise ValueError(f"index {t} has fewer than {lag} preceding values")
    window = np.asarray(corrected_values[t - lag : t], dtype=float)[::-1]
    return float(window @ model.array())


def predict_all(model: ARModel, corrected_values: np.ndarray, start: int) -> np.ndarray:
    """Vectorized one-step predictions for every index in [start, len)."""
    values = np.asarray(corrected_values, dtype=float)
    lag = model.lag
    if start < lag:
        raise ValueError(f"start {start} has fewer than {lag} preceding values")
    n = len(values) - start
    if n <= 0:
        return np.empty(0)
    cols = [values[start - i - 1 : start - i - 1 + n] for i in range(lag)]
    return np.column_stack(cols) @ model.array()

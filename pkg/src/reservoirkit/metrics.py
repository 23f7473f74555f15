"""Scalar evaluation metrics shared by the forecasting and propagation code."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MdaConfig:
    """Flat-band width for market direction accuracy, in price units."""

    flat_threshold: float = 0.05

    def __post_init__(self):
        if self.flat_threshold < 0:
            raise ValueError("flat_threshold must be >= 0")


def _check_pair(pred, actual):
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {actual.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    return pred, actual


def mae(pred, actual) -> float:
    """Mean absolute error."""
    pred, actual = _check_pair(pred, actual)
    return float(np.mean(np.abs(pred - actual)))


def mse(pred, actual) -> float:
    """Mean squared error."""
    pred, actual = _check_pair(pred, actual)
    return float(np.mean(np.abs(pred - actual) ** 2))


def _directions(moves: np.ndarray, threshold: float) -> np.ndarray:
    """Map price moves to {+1, 0, -1} with a +-threshold flat band."""
    d = np.zeros(moves.shape, dtype=int)
    d[moves > threshold] = 1
    d[moves < -threshold] = -1
    return d


def mda(pred, actual, cfg: MdaConfig = MdaConfig()) -> float:
    """Market direction accuracy.

    Per step t >= 1 the move of both the prediction and the actual series is
    taken against the previous *actual* value, classified up/flat/down with
    the flat band ``+-cfg.flat_threshold``, and scored as the fraction of
    steps where the two classes agree.
    """
    pred, actual = _check_pair(pred, actual)
    if pred.ndim != 1:
        raise ValueError("mda expects 1-d series")
    if pred.size < 2:
        raise ValueError("mda needs at least 2 points")
    base = actual[:-1]
    d_pred = _directions(pred[1:] - base, cfg.flat_threshold)
    d_act = _directions(actual[1:] - base, cfg.flat_threshold)
    return float(np.mean(d_pred == d_act))

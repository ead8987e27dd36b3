"""Small robust-statistics helpers shared by the IRLS-based estimators."""

import numpy as np


def mad(values: np.ndarray) -> float:
    """Median absolute deviation (unscaled)."""
    v = np.asarray(values, dtype=np.float64)
    return float(np.median(np.abs(v - np.median(v))))


def huber_weights(residuals: np.ndarray, delta: float) -> np.ndarray:
    """IRLS weights for the Huber loss: 1 inside delta, delta/|r| outside."""
    r = np.abs(np.asarray(residuals, dtype=np.float64))
    w = np.ones_like(r)
    out = r > delta
    w[out] = delta / r[out]
    return w


def huber_cost(residuals: np.ndarray, delta: float) -> float:
    """Sum of Huber losses of the residual magnitudes."""
    r = np.abs(np.asarray(residuals, dtype=np.float64))
    inside = r <= delta
    cost = np.empty_like(r)
    cost[inside] = 0.5 * r[inside] ** 2
    cost[~inside] = delta * (r[~inside] - 0.5 * delta)
    return float(cost.sum())


def mad_scale(residuals: np.ndarray, floor: float = 1e-12) -> float:
    """Normal-consistent robust sigma estimate (1.4826 * MAD), floored."""
    return max(1.4826 * mad(residuals), floor)

"""
Shared numerical helpers: compensated summation and log-domain accumulation.

Series terms for exit/entrance chains span hundreds of orders of magnitude, so
everything upstream works with log-terms and only leaves the log domain when a
sum is known to be representable.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

LOG_MAX = float(np.log(np.finfo(float).max))


def compensated_cumsum(values: np.ndarray) -> np.ndarray:
    """Neumaier-compensated prefix sums."""
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    total = 0.0
    comp = 0.0
    for k, x in enumerate(values):
        t = total + x
        if abs(total) >= abs(x):
            comp += (total - t) + x
        else:
            comp += (x - t) + total
        total = t
        out[k] = total + comp
    return out


def compensated_sum(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return 0.0
    return float(compensated_cumsum(values)[-1])


def log_cumsum(log_values: np.ndarray) -> np.ndarray:
    """log of prefix sums of exp(log_values)."""
    return np.logaddexp.accumulate(np.asarray(log_values, dtype=float))


def log_revcumsum(log_values: np.ndarray) -> np.ndarray:
    """log of suffix sums: out[k] = log sum_{j>=k} exp(log_values[j])."""
    return np.logaddexp.accumulate(np.asarray(log_values, dtype=float)[::-1])[::-1]


def log_total(log_values: np.ndarray) -> float:
    if len(log_values) == 0:
        return -np.inf
    return float(logsumexp(log_values))


def safe_exp(log_values: np.ndarray | float) -> np.ndarray | float:
    """exp() that returns inf instead of warning on overflow."""
    with np.errstate(over="ignore", under="ignore"):
        return np.exp(log_values)


def representable(log_value: float) -> bool:
    return bool(np.isfinite(log_value) and log_value < LOG_MAX)

"""Separation curves and convergence-rate reports."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from birthdeath.app.models.duality import BoundCheck


@dataclass(frozen=True)
class SeparationReport:
    t: np.ndarray
    starts: np.ndarray
    s: np.ndarray  # s[k, m] = s_{starts[k]}(t[m])
    sup_s: np.ndarray
    tv: np.ndarray  # (1/2) sum_j |p_ij(t) - pi_j|
    l1: np.ndarray  # sum_j |p_ij(t) - pi_j|
    sst_tail: np.ndarray  # upper bounds on P_i[tau > t]
    dual_tail: np.ndarray  # upper bound on P_0[zeta* > t]
    markov_envelope: np.ndarray  # E_0 tau / t
    beta_lower: float
    N: int
    tail_mass: float  # stationary mass beyond the window
    checks: dict[str, bool] = field(default_factory=dict)
    discrepancies: list[BoundCheck] = field(default_factory=list)  # evaluated, expected to fail


@dataclass(frozen=True)
class BetaReport:
    beta_lower: float
    T: float
    spectral_sum: float
    dual_mean: float
    window: int | None
    relative_spread: float
    fitted_slope: float | None = None
    spectrum_size: int = 0

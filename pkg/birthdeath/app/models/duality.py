"""Dual chain and strong-stationary-time results."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from birthdeath.app.models.laws import Bracket
from birthdeath.app.models.rates import BoundaryReport, RateSpec, SeriesVerdict


@dataclass(frozen=True)
class DualModel:
    """
    The dual chain of a strongly ergodic birth-death chain.

    `dual` is a table chain: explicit dual rates up to `length`, then the
    primal's closed form with roles swapped (pi/H is below double precision
    there). With a finite `window` the dual lives on 0..N and is absorbed at N.
    """

    primal: RateSpec
    dual: RateSpec
    pi: np.ndarray
    H: np.ndarray
    tail: np.ndarray  # 1 - H_i
    log_mu_star: np.ndarray
    length: int
    window: int | None = None
    report: BoundaryReport | None = None  # dual classification (infinite case)
    R_star: SeriesVerdict | None = None

    @property
    def a_star(self) -> np.ndarray:
        """a*_1..a*_{length}."""
        return self.dual.a_values(np.arange(1, self.length + 1))

    @property
    def b_star(self) -> np.ndarray:
        """b*_0..b*_{length-1}."""
        return self.dual.b_values(np.arange(self.length))


@dataclass(frozen=True)
class IntertwiningReport:
    N: int
    interior: float  # max |(Lambda Q - Q* Lambda)_ij| over rows i < N
    last_row: float
    scale: float  # max rate on the window
    row_residuals: np.ndarray = field(repr=False)

    @property
    def relative(self) -> float:
        return self.interior / self.scale


@dataclass(frozen=True)
class SSTDistribution:
    """P_i[tau <= t] on a grid, bracketed, with a conditioning flag per point."""

    i: int
    t: np.ndarray
    cdf: Bracket
    tail: np.ndarray  # upper bound on P_i[tau > t]
    raw: np.ndarray  # unclamped combination value
    certified: np.ndarray  # bracket narrower than the combination's rounding error
    clamped: bool


@dataclass(frozen=True)
class BoundCheck:
    quantity: str
    lhs: float
    rhs: float
    passed: bool
    note: str = ""


@dataclass(frozen=True)
class MomentReport:
    mean: float
    checks: list[BoundCheck]
    discrepancies: list[BoundCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

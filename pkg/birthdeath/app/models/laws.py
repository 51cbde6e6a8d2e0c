"""Hitting-time laws as ratio-of-products Laplace transforms, and what is computed from them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RationalExpLaw:
    """
    phi(s) = prod_p p/(s+p) / prod_z z/(s+z) over the kept poles and zeros.

    For laws built from infinite spectra, `tail_sum` bounds the reciprocal sum
    of the neglected poles and `zero_tail_sum` that of the neglected zeros.
    """

    poles: np.ndarray
    zeros: np.ndarray
    tail_sum: float = 0.0
    zero_tail_sum: float = 0.0
    provenance: str = ""
    start: float = 0.0  # i; math.inf for a start at the boundary
    target: float = 0.0  # n; math.inf for the life time
    meta: dict = field(default_factory=dict)

    @property
    def finite(self) -> bool:
        return self.tail_sum == 0.0 and self.zero_tail_sum == 0.0

    @property
    def order(self) -> int:
        return len(self.poles) - len(self.zeros)


@dataclass(frozen=True)
class Bracket:
    """lower <= value <= upper, elementwise over the grid."""

    grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def exact(self) -> bool:
        return bool(np.all(self.lower == self.upper))

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class DensityTable:
    t: np.ndarray
    density: np.ndarray
    cdf: np.ndarray
    survival: np.ndarray
    mass: float  # total mass of the partial-fraction expansion
    repeated_poles: bool  # some poles merged into higher-order terms
    negative: bool  # density dipped below -abs_error somewhere on the grid
    abs_error: float  # rounding bound from the expansion coefficients


@dataclass(frozen=True)
class Moments:
    mean: float
    variance: float
    mean_bracket: tuple[float, float] = (math.nan, math.nan)
    variance_bracket: tuple[float, float] = (math.nan, math.nan)

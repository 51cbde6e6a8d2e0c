"""Monte Carlo samples."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class HittingSample:
    """
    Sampled hitting or life times.

    Censored paths (event budget exhausted) keep their elapsed time in
    `censor_times` and never enter `values`.
    """

    values: np.ndarray
    start: int
    target: float  # n, or math.inf for the life time
    censor_times: np.ndarray
    seed: int
    n_samples: int
    bias_bound: float = 0.0  # for life-time surrogates: E(zeta - T_{0,L})
    level: int | None = None
    chain_sha256: str = ""
    level_means: dict[int, float] = field(default_factory=dict)

    @property
    def censored_count(self) -> int:
        return len(self.censor_times)

    @property
    def mean(self) -> float:
        return float(self.values.mean()) if len(self.values) else math.nan

    @property
    def standard_error(self) -> float:
        n = len(self.values)
        return float(self.values.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan


@dataclass(frozen=True)
class Path:
    times: np.ndarray  # jump epochs, times[0] = 0
    states: np.ndarray
    stopped_by: str  # "hit", "level", "horizon", "budget"

    @property
    def censored(self) -> bool:
        return self.stopped_by == "budget"


@dataclass(frozen=True)
class LaplaceEstimate:
    s: np.ndarray
    value: np.ndarray
    se: np.ndarray
    lower: np.ndarray  # censored paths counted as 0
    upper: np.ndarray  # censored paths counted as exp(-s * censor time)


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float
    alpha: float
    n: int

    @property
    def passed(self) -> bool:
        return self.pvalue >= self.alpha

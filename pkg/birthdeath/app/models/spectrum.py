"""Truncated generators, their symmetric forms, and spectra."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

MatrixKind = Literal["absorbed_top", "absorbed_bottom_reflected_top", "reflected"]


@dataclass(frozen=True)
class GeneratorMatrix:
    """
    Tridiagonal birth-death generator on a window of states.

    `factor` holds the signed off-diagonals of the Golub-Kahan form of the
    square-root factor B (J = B^T B); eigenvalues are computed from it so
    that small eigenvalues keep their relative accuracy.
    """

    kind: MatrixKind
    level: tuple[int, ...]
    states: np.ndarray
    diag: np.ndarray
    upper: np.ndarray  # q_{i,i+1} = b_i
    lower: np.ndarray  # q_{i+1,i} = a_{i+1}
    killing: tuple[float, float]  # (bottom, top)
    log_mu: np.ndarray
    factor: np.ndarray
    parity: int  # position of state components in Golub-Kahan vectors
    n_positive: int

    @property
    def dim(self) -> int:
        return len(self.diag)

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.upper, 1) + np.diag(self.lower, -1)

    def row_sums(self) -> np.ndarray:
        return self.dense().sum(axis=1)


@dataclass(frozen=True)
class SymTridiagonal:
    """J = D^{1/2} (-Q) D^{-1/2} with D = diag(mu) on the window."""

    d: np.ndarray
    e: np.ndarray
    kind: MatrixKind
    level: tuple[int, ...]
    factor: np.ndarray
    parity: int
    n_positive: int
    log_sqrt_mu: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.d)

    def dense(self) -> np.ndarray:
        return np.diag(self.d) + np.diag(self.e, 1) + np.diag(self.e, -1)


@dataclass(frozen=True)
class Spectrum:
    values: np.ndarray  # strictly increasing, positive
    kind: str
    level: tuple[int, ...]
    reciprocal_sum: float
    tail_bound: float | None = None  # bound on the neglected reciprocal sum
    converged: bool = True
    partial: bool = False
    vectors: np.ndarray | None = field(default=None, repr=False)  # sqrt(mu) coordinates
    meta: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ResidualReport:
    values: np.ndarray
    residuals: np.ndarray  # |D(f) - lambda mu(f^2)| / (lambda mu(f^2))
    tol: float

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max()) if len(self.residuals) else 0.0

    @property
    def passed(self) -> bool:
        return bool(np.all(self.residuals <= self.tol))

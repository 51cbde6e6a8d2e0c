"""
Birth-death rate specifications and the series bookkeeping types.

Indexing:
- b_i is the birth rate out of state i >= 0
- a_i is the death rate out of state i >= 1 (a_0 is never read)

Laws are evaluated in the log domain; super-exponential families stay finite
until a caller explicitly asks for plain values.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from birthdeath.app.core.config import settings
from birthdeath.app.core.numerics import compensated_sum, safe_exp

Family = Literal["constant", "geometric", "power", "table"]
ClosedFamily = Literal["constant", "geometric", "power"]
Verdict = Literal["finite", "infinite", "undetermined"]
Classification = Literal["Regular", "Exit", "Entrance", "Natural", "Undetermined"]


# ---------------------------------------------------------------------------
# Rate laws
# ---------------------------------------------------------------------------


class ConstantLaw(BaseModel):
    """x_i = value"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    value: float = Field(gt=0, allow_inf_nan=False)

    def log_eval(self, idx: np.ndarray) -> np.ndarray:
        return np.full(idx.shape, math.log(self.value))

    def shifted(self, k: int) -> ConstantLaw:  # noqa: ARG002
        return self


class GeometricLaw(BaseModel):
    """x_i = base * ratio**i"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    base: float = Field(gt=0, allow_inf_nan=False)
    ratio: float = Field(gt=0, allow_inf_nan=False)

    def log_eval(self, idx: np.ndarray) -> np.ndarray:
        return math.log(self.base) + idx.astype(float) * math.log(self.ratio)

    def shifted(self, k: int) -> GeometricLaw:
        return GeometricLaw(base=self.base * self.ratio**k, ratio=self.ratio)


class PowerLaw(BaseModel):
    """x_i = coef * (i + shift)**exponent"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    coef: float = Field(gt=0, allow_inf_nan=False)
    exponent: float = Field(allow_inf_nan=False)
    shift: float = Field(default=1.0, gt=0, allow_inf_nan=False)

    def log_eval(self, idx: np.ndarray) -> np.ndarray:
        return math.log(self.coef) + self.exponent * np.log(idx.astype(float) + self.shift)

    def shifted(self, k: int) -> PowerLaw:
        return PowerLaw(coef=self.coef, exponent=self.exponent, shift=self.shift + k)


class TableLaw(BaseModel):
    """Explicit values at indices start, start+1, ...; the tail rule covers the rest."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    values: list[float] = Field(min_length=1)
    start: int = Field(default=0, ge=0)

    @field_validator("values")
    @classmethod
    def _positive(cls, v: list[float]) -> list[float]:
        if not all(math.isfinite(x) and x > 0 for x in v):
            raise ValueError("table rates must be positive and finite")
        return v

    @property
    def end(self) -> int:
        return self.start + len(self.values)


ClosedFormLaw = ConstantLaw | GeometricLaw | PowerLaw
RateLaw = ConstantLaw | GeometricLaw | PowerLaw | TableLaw

FAMILY_LAWS: dict[str, type[BaseModel]] = {
    "constant": ConstantLaw,
    "geometric": GeometricLaw,
    "power": PowerLaw,
}


class TailRule(BaseModel):
    """Closed-form family used past the end of a table."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    family: ClosedFamily
    a: ClosedFormLaw
    b: ClosedFormLaw

    @model_validator(mode="after")
    def _laws_match_family(self) -> TailRule:
        expected = FAMILY_LAWS[self.family]
        if not (isinstance(self.a, expected) and isinstance(self.b, expected)):
            raise ValueError(f"tail laws must both be {self.family}")
        return self


def _log_eval(law: RateLaw, tail: ClosedFormLaw | None, idx: np.ndarray) -> np.ndarray:
    if not isinstance(law, TableLaw):
        return law.log_eval(idx)
    out = np.empty(idx.shape, dtype=float)
    inside = (idx >= law.start) & (idx < law.end)
    if inside.any():
        out[inside] = np.log(np.asarray(law.values, dtype=float))[idx[inside] - law.start]
    if (~inside).any():
        out[~inside] = tail.log_eval(idx[~inside])
    return out


class RateSpec(BaseModel):
    """A birth-death chain given by a closed-form family or a table with a tail rule."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    family: Family
    a: RateLaw
    b: RateLaw
    tail: TailRule | None = None
    description: str = ""

    @model_validator(mode="after")
    def _check_family(self) -> RateSpec:
        if self.family == "table":
            if not (isinstance(self.a, TableLaw) and isinstance(self.b, TableLaw)):
                raise ValueError("family 'table' needs table laws for a and b")
            if self.tail is None:
                raise ValueError("family 'table' needs a tail rule")
            if self.a.start > 1 or self.b.start != 0:
                raise ValueError("tables must start at index 1 (a) and 0 (b)")
        else:
            expected = FAMILY_LAWS[self.family]
            if not (isinstance(self.a, expected) and isinstance(self.b, expected)):
                raise ValueError(f"laws must both be {self.family}")
            if self.tail is not None:
                raise ValueError("tail rule only applies to family 'table'")
        return self

    # -- evaluation ---------------------------------------------------------

    def log_a(self, idx) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        return _log_eval(self.a, self.tail.a if self.tail else None, idx)

    def log_b(self, idx) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        return _log_eval(self.b, self.tail.b if self.tail else None, idx)

    def a_values(self, idx) -> np.ndarray:
        return safe_exp(self.log_a(idx))

    def b_values(self, idx) -> np.ndarray:
        return safe_exp(self.log_b(idx))

    @property
    def far_field_start(self) -> int:
        """First index from which both rates follow the closed form."""
        if self.family != "table":
            return 0
        return max(self.a.end, self.b.end, 1)

    def closed_form(self) -> TailRule:
        if self.tail is not None:
            return self.tail
        return TailRule(family=self.family, a=self.a, b=self.b)

    def dual_tail(self) -> TailRule:
        """Far field of the dual chain: a* <- b, b* <- a shifted by one."""
        cf = self.closed_form()
        return TailRule(family=cf.family, a=cf.b, b=cf.a.shifted(1))

    @classmethod
    def from_tables(
        cls,
        a_values: np.ndarray,
        b_values: np.ndarray,
        tail: TailRule,
        description: str = "",
    ) -> RateSpec:
        """a_values hold a_1..a_L, b_values hold b_0..b_{L'}."""
        return cls(
            family="table",
            a=TableLaw(values=[float(x) for x in a_values], start=1),
            b=TableLaw(values=[float(x) for x in b_values], start=0),
            tail=tail,
            description=description,
        )

    def chain_hash(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode()).hexdigest()


class TailPolicy(BaseModel):
    """How far series are summed and when a tail verdict is accepted."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    horizon: int = Field(default_factory=lambda: settings.TAIL_HORIZON, ge=8)
    delta: float = Field(default_factory=lambda: settings.TAIL_DELTA, gt=0, lt=1)
    abs_tol: float = Field(default_factory=lambda: settings.TAIL_ABS_TOL, gt=0)
    window: int = Field(default_factory=lambda: settings.TAIL_WINDOW, ge=4)

    @classmethod
    def from_settings(cls) -> TailPolicy:
        return cls()


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SeriesVerdict:
    """Extended-real value of a positive series with the rule that decided it."""

    name: str
    verdict: Verdict
    value: float  # partial sum; inf when the series diverges
    error_bound: float  # bound on the neglected tail; nan unless finite
    rule: str
    witness: str
    log_terms: np.ndarray = field(repr=False)
    start: int = 0  # index of the first term

    @property
    def is_finite(self) -> bool:
        return self.verdict == "finite"

    @property
    def is_infinite(self) -> bool:
        return self.verdict == "infinite"

    @property
    def terms(self) -> np.ndarray:
        return safe_exp(self.log_terms)

    @property
    def partial_sums(self) -> np.ndarray:
        return np.cumsum(self.terms)

    def resolved(self, abs_tol: float) -> bool:
        return self.is_finite and self.error_bound <= abs_tol * max(1.0, abs(self.value))

    def remainder(self, k: int) -> float:
        """Upper bound on the sum of the terms with index >= k."""
        if not self.is_finite:
            return math.inf
        offset = max(k - self.start, 0)
        return compensated_sum(self.terms[offset:]) + self.error_bound


@dataclass(frozen=True)
class MeasureTable:
    """mu_i, and pi_i / H_i when the total mass is finite."""

    log_mu: np.ndarray
    mu: np.ndarray | None  # None when some mu_i overflows doubles
    mu_total: SeriesVerdict
    pi: np.ndarray | None
    H: np.ndarray | None
    tail: np.ndarray | None  # 1 - H_i, summed from the far end
    horizon: int

    @property
    def scaled(self) -> bool:
        return self.mu is None


@dataclass(frozen=True)
class BoundaryReport:
    R: SeriesVerdict
    S: SeriesVerdict
    T: SeriesVerdict
    u1: SeriesVerdict
    scale: SeriesVerdict
    mu: SeriesVerdict
    classification: Classification
    dirichlet_unique: bool | None
    consistency: dict[str, bool] = field(default_factory=dict)

    @property
    def strongly_ergodic(self) -> bool:
        return self.classification == "Entrance"

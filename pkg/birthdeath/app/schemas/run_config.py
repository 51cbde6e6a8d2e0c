"""Run configuration for the command-line surface."""

from __future__ import annotations

import math
from typing import Annotated, Literal

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, field_validator

from birthdeath.app.models.rates import RateSpec, TailPolicy


def _parse_index(v: object) -> object:
    """States are nonnegative integers; "inf" names the boundary."""
    if isinstance(v, str) and v.strip().lower() in ("inf", "infinity", "∞"):
        return math.inf
    if isinstance(v, float) and math.isinf(v):
        return v
    if isinstance(v, bool):
        raise ValueError("state must be an integer or 'inf'")
    if isinstance(v, (int, float, str)):
        x = float(v)
        if not x.is_integer() or x < 0:
            raise ValueError("state must be a nonnegative integer or 'inf'")
        return int(x)
    return v


StateIndex = Annotated[int | float, BeforeValidator(_parse_index)]
SpectrumKind = Literal["exit", "entrance", "ergodic", "absorbed", "reflected"]


class RunConfig(BaseModel):
    """Every parameter a subcommand reads; validated before any computation."""

    model_config = ConfigDict(extra="forbid")

    chain: str | RateSpec = "unit"

    # hitting / simulate
    i: StateIndex = 0
    n: StateIndex | None = None
    N: int | None = Field(default=None, ge=1)
    s: list[float] = Field(default_factory=lambda: [0.1, 0.5, 1.0, 2.0])
    t: list[float] | None = None

    # spectrum
    kind: SpectrumKind = "exit"
    count: int | None = Field(default=None, ge=1)

    # sst / separation
    starts: list[int] | None = None

    # tolerances
    policy: TailPolicy = Field(default_factory=TailPolicy.from_settings)
    spectral_tol: float | None = Field(default=None, gt=0, lt=1)
    samples: int | None = Field(default=None, ge=2)
    seed: int | None = Field(default=None, ge=0, lt=2**64)
    threads: int | None = Field(default=None, ge=1)

    # verify
    quick: bool = False
    monte_carlo: bool = True

    # output
    out: str | None = None
    format: Literal["json", "csv"] = "json"
    save_sample: bool = False

    @field_validator("s", "t")
    @classmethod
    def _nonnegative_grid(cls, v: list[float] | None) -> list[float] | None:
        if v is not None and any(not math.isfinite(x) or x < 0 for x in v):
            raise ValueError("grid values must be finite and >= 0")
        return v

    @field_validator("starts")
    @classmethod
    def _nonnegative_starts(cls, v: list[int] | None) -> list[int] | None:
        if v is not None and any(x < 0 for x in v):
            raise ValueError("start states must be >= 0")
        return v

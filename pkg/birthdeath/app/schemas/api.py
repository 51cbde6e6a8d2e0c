"""Request bodies of the HTTP API."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

from birthdeath.app.models.rates import RateSpec, TailPolicy
from birthdeath.app.schemas.run_config import StateIndex


class ChainRequest(BaseModel):
    """A gallery name or an inline RateSpec."""

    model_config = ConfigDict(extra="forbid")

    chain: str | RateSpec
    policy: TailPolicy | None = None


class LimitSpectrumRequest(ChainRequest):
    kind: Literal["exit", "entrance", "ergodic"] = "exit"
    n: int = Field(default=0, ge=0)  # entrance only
    count: int | None = Field(default=8, ge=1, le=512)
    tol: float | None = Field(default=None, gt=0, lt=1)


class LaplaceRequest(ChainRequest):
    i: StateIndex
    n: StateIndex
    N: int | None = Field(default=None, ge=1)
    s: list[float] = Field(default_factory=lambda: [0.1, 0.5, 1.0, 2.0], max_length=1000)


class SSTRequest(ChainRequest):
    N: int | None = Field(default=None, ge=1)  # finite reflected window
    s: list[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0], max_length=1000)
    t: list[float] = Field(default_factory=lambda: [0.1, 1.0, 5.0], max_length=1000)
    starts: list[int] = Field(default_factory=lambda: [0])

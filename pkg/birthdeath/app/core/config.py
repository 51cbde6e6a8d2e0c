"""
Application configuration.

Only defaults live here. Every operation still receives its tolerances
explicitly (TailPolicy, spectral tol, seeds); the settings object is where
those defaults come from when a caller does not pass them.
"""

from pathlib import Path

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Logging
    LOG_LEVEL: str = "INFO"

    # Series verdicts (TailPolicy defaults)
    TAIL_HORIZON: int = 10_000
    TAIL_DELTA: float = 0.05
    TAIL_ABS_TOL: float = 1e-12
    TAIL_WINDOW: int = 32

    # Spectra
    SPECTRAL_TOL: float = 1e-8
    SPECTRAL_START_LEVEL: int = 16
    SPECTRAL_MAX_LEVEL: int = 2**14
    SPECTRAL_MAX_COUNT: int = 512
    BISECTION_RTOL: float = 1e-12
    RATE_CEILING: float = 1e150  # keeps squared off-diagonals finite
    GAP_COLLAPSE: float = 1e-14

    # Hitting laws
    POLE_MERGE_TOL: float = 1e-9
    DENSITY_MASS_TOL: float = 1e-8

    # Monte Carlo
    MC_SAMPLES: int = 100_000
    MC_EVENT_BUDGET: int = 10_000_000
    MC_BLOCK_SIZE: int = 4096
    SEED: int = 20240917
    THREADS: int = 4

    # Separation
    UNIFORMIZATION_EPS: float = 1e-12
    UNIFORMIZATION_MAX_TERMS: int = 200_000
    SEPARATION_TAIL_MASS: float = 1e-8

    # Output
    OUT_DIR: str = "./out"

    @property
    def out_path(self) -> Path:
        p = Path(self.OUT_DIR)
        p.mkdir(parents=True, exist_ok=True)
        return p

    model_config = {"env_file": ".env", "env_file_encoding": "utf-8"}


settings = Settings()

"""
Simulation service: exact event-driven sampling of hitting and life times.

Design:
- paths are simulated in blocks of MC_BLOCK_SIZE, in lockstep: every live
  path takes one jump per iteration (exponential holding time with rate
  a_i + b_i, up with probability b_i / (a_i + b_i))
- block k draws from Philox keyed by SeedSequence(seed, spawn_key=(k,)), and
  blocks are concatenated in block order, so output does not depend on the
  number of worker threads
- paths still running after the event budget are censored, never averaged
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path as FilePath

import numpy as np
from scipy.stats import ks_2samp, kstest

from birthdeath.app.core.config import settings
from birthdeath.app.core.exceptions import ConfigError, DomainError, PreconditionRefused
from birthdeath.app.models.laws import RationalExpLaw
from birthdeath.app.models.rates import RateSpec, TailPolicy
from birthdeath.app.models.sampling import HittingSample, KSResult, LaplaceEstimate, Path
from birthdeath.app.services import hitting_service, rates_service, spectral_service

logger = logging.getLogger(__name__)

MAGIC = b"BDSAMPLE"
FORMAT_VERSION = 1
HEADER = np.dtype(
    [
        ("magic", "S8"),
        ("version", "<u4"),
        ("seed", "<u8"),
        ("n", "<u8"),
        ("censored", "<u8"),
        ("start", "<i8"),
        ("target", "<i8"),  # -1 for the life time
        ("bias", "<f8"),
        ("chain_sha256", "S64"),
    ]
)


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


class _RateCache:
    """a_i, b_i for visited states, grown by doubling; reflection zeroes b at the top."""

    def __init__(self, rates: RateSpec, reflect_at: int | None = None, size: int = 64):
        self.rates = rates
        self.reflect_at = reflect_at
        self.size = 0
        self._grow(size if reflect_at is None else reflect_at + 1)

    def _grow(self, size: int) -> None:
        idx = np.arange(size)
        a = np.concatenate([[0.0], self.rates.a_values(idx[1:])])
        b = self.rates.b_values(idx)
        if self.reflect_at is not None:
            b[self.reflect_at :] = 0.0
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise DomainError(f"rates overflow below state {size}; lower the level")
        self.a, self.b, self.size = a, b, size

    def lookup(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        top = int(states.max())
        if top >= self.size:
            self._grow(max(2 * self.size, top + 1))
        return self.a[states], self.b[states]


def _run_block(
    rates: RateSpec,
    start: int,
    checkpoints: np.ndarray,
    size: int,
    rng: np.random.Generator,
    budget: int,
    reflect_at: int | None,
) -> tuple[np.ndarray, np.ndarray]:
    """First-passage times through each checkpoint, in order; rows of censored paths are nan."""
    cache = _RateCache(rates, reflect_at)
    hits = np.full((size, len(checkpoints)), np.nan)
    state = np.full(size, start, dtype=np.int64)
    clock = np.zeros(size)
    nxt = np.zeros(size, dtype=np.int64)
    live = np.arange(size)

    for _ in range(budget):
        if live.size == 0:
            break
        a, b = cache.lookup(state[live])
        total = a + b
        clock[live] += rng.exponential(size=live.size) / total
        up = rng.random(live.size) * total < b
        state[live] += np.where(up, 1, -1)

        arrived = state[live] == checkpoints[nxt[live]]
        if arrived.any():
            who = live[arrived]
            hits[who, nxt[who]] = clock[who]
            nxt[who] += 1
            live = live[nxt[live] < len(checkpoints)]

    censor = clock[live].copy()
    hits[live] = np.nan
    return hits, censor


def _sample(
    rates: RateSpec,
    start: int,
    checkpoints: np.ndarray,
    n: int,
    seed: int,
    reflect_at: int | None,
    event_budget: int | None,
    threads: int | None,
) -> tuple[np.ndarray, np.ndarray]:
    budget = event_budget or settings.MC_EVENT_BUDGET
    block = settings.MC_BLOCK_SIZE
    sizes = [min(block, n - k) for k in range(0, n, block)]

    def run(k: int):
        return _run_block(rates, start, checkpoints, sizes[k], block_rng(seed, k), budget, reflect_at)

    with ThreadPoolExecutor(max_workers=threads or settings.THREADS) as pool:
        results = list(pool.map(run, range(len(sizes))))
    hits = np.vstack([r[0] for r in results])
    censor = np.concatenate([r[1] for r in results])
    return hits, censor


def _check_target(start: int, target: int, reflect_at: int | None) -> None:
    if start < 0 or target < 0 or start == target:
        raise DomainError("need distinct nonnegative start and target")
    if reflect_at is not None and max(start, target) > reflect_at:
        raise DomainError("start and target must lie below the reflecting state")


def sample_hitting_times(
    rates: RateSpec,
    start: int,
    target: int,
    n: int | None = None,
    seed: int | None = None,
    reflect_at: int | None = None,
    event_budget: int | None = None,
    threads: int | None = None,
) -> HittingSample:
    """n independent copies of T_{start,target}."""
    _check_target(start, target, reflect_at)
    n = n or settings.MC_SAMPLES
    seed = settings.SEED if seed is None else seed
    step = 1 if target > start else -1
    checkpoints = np.array([target])
    hits, censor = _sample(rates, start, checkpoints, n, seed, reflect_at, event_budget, threads)
    values = hits[:, 0][~np.isnan(hits[:, 0])]
    if len(censor):
        logger.warning("%d of %d paths censored (T_%d,%d)", len(censor), n, start, target)
    logger.info("sampled %d paths of T_%d,%d (direction %+d)", n, start, target, step)
    return HittingSample(
        values=values,
        start=start,
        target=float(target),
        censor_times=censor,
        seed=seed,
        n_samples=n,
        chain_sha256=rates.chain_hash(),
    )


def sample_trajectory(
    rates: RateSpec,
    start: int,
    seed: int | None = None,
    hit: int | None = None,
    level: int | None = None,
    horizon: float | None = None,
    event_budget: int | None = None,
) -> Path:
    """One exact path, stopped at the first of: hitting `hit`, reaching `level`, time `horizon`."""
    if hit is None and level is None and horizon is None:
        raise DomainError("a stop rule is required")
    rng = block_rng(settings.SEED if seed is None else seed, 0)
    budget = event_budget or settings.MC_EVENT_BUDGET
    cache = _RateCache(rates)
    times, states = [0.0], [start]
    state, clock = start, 0.0
    for _ in range(budget):
        if hit is not None and state == hit:
            return Path(np.array(times), np.array(states), "hit")
        if level is not None and state >= level:
            return Path(np.array(times), np.array(states), "level")
        a, b = cache.lookup(np.array([state]))
        total = float(a[0] + b[0])
        clock += rng.exponential() / total
        if horizon is not None and clock >= horizon:
            return Path(np.array(times), np.array(states), "horizon")
        state += 1 if rng.random() * total < b[0] else -1
        times.append(clock)
        states.append(state)
    return Path(np.array(times), np.array(states), "budget")


def lifetime_levels(rates: RateSpec, R_rem, bias_tol: float, start: int = 8) -> list[int]:
    """Doubling levels until the remaining mean life time is below bias_tol or rates get too big."""
    top = spectral_service.ceiling_level(rates, 0, settings.SPECTRAL_MAX_LEVEL)
    levels = [min(start, top)]
    while R_rem(levels[-1]) > bias_tol and levels[-1] < top:
        levels.append(min(2 * levels[-1], top))
    return levels


def sample_lifetime_exit(
    rates: RateSpec,
    n: int | None = None,
    seed: int | None = None,
    levels: list[int] | None = None,
    bias_tol: float | None = None,
    policy: TailPolicy | None = None,
    threads: int | None = None,
) -> HittingSample:
    """zeta from 0 through T_{0,L} on a doubling level schedule; the bias is E(zeta - T_{0,L})."""
    report = rates_service.require_class(rates, "Exit", policy, "life-time sampling")
    R = report.R
    n = n or settings.MC_SAMPLES
    seed = settings.SEED if seed is None else seed
    bias_tol = bias_tol if bias_tol is not None else 1e-9 * R.value
    levels = levels or lifetime_levels(rates, R.remainder, bias_tol)
    checkpoints = np.asarray(sorted(levels))

    hits, censor = _sample(rates, 0, checkpoints, n, seed, None, None, threads)
    done = ~np.isnan(hits[:, -1])
    level_means = {int(L): float(hits[done, k].mean()) for k, L in enumerate(checkpoints)}
    bias = R.remainder(int(checkpoints[-1]))
    if bias > bias_tol:
        logger.warning("life-time bias %.3g above tolerance %.3g at level %d", bias, bias_tol, checkpoints[-1])
    return HittingSample(
        values=hits[done, -1],
        start=0,
        target=math.inf,
        censor_times=censor,
        seed=seed,
        n_samples=n,
        bias_bound=bias,
        level=int(checkpoints[-1]),
        chain_sha256=rates.chain_hash(),
        level_means=level_means,
    )


def sample_states_at(
    rates: RateSpec,
    start: int,
    t: float,
    n: int,
    seed: int | None = None,
    reflect_at: int | None = None,
    threads: int | None = None,
) -> np.ndarray:
    """Counts of X_t over states 0..reflect_at (or up to the largest state seen)."""
    seed = settings.SEED if seed is None else seed
    block = settings.MC_BLOCK_SIZE
    sizes = [min(block, n - k) for k in range(0, n, block)]

    def run(k: int) -> np.ndarray:
        rng = block_rng(seed, k)
        cache = _RateCache(rates, reflect_at)
        state = np.full(sizes[k], start, dtype=np.int64)
        clock = np.zeros(sizes[k])
        live = np.arange(sizes[k])
        for _ in range(settings.MC_EVENT_BUDGET):
            if live.size == 0:
                break
            a, b = cache.lookup(state[live])
            total = a + b
            clock[live] += rng.exponential(size=live.size) / total
            up = rng.random(live.size) * total < b
            moving = clock[live] < t
            state[live[moving]] += np.where(up[moving], 1, -1)
            live = live[moving]
        return state

    with ThreadPoolExecutor(max_workers=threads or settings.THREADS) as pool:
        states = np.concatenate(list(pool.map(run, range(len(sizes)))))
    size = (reflect_at + 1) if reflect_at is not None else int(states.max()) + 1
    return np.bincount(states, minlength=size)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


def empirical_laplace(sample: HittingSample, s) -> LaplaceEstimate:
    """Mean of exp(-s T) with standard errors; censored paths widen the bracket only."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s < 0):
        raise DomainError("Laplace argument must be >= 0")
    total = len(sample.values) + sample.censored_count
    e = np.exp(-s[:, None] * sample.values[None, :])
    observed = e.sum(axis=1)
    censored = np.exp(-s[:, None] * sample.censor_times[None, :]).sum(axis=1)
    lower = observed / total
    upper = (observed + censored) / total
    value = e.mean(axis=1) if sample.censored_count == 0 else 0.5 * (lower + upper)
    m = len(sample.values)
    se = e.std(axis=1, ddof=1) / math.sqrt(m) if m > 1 else np.full(s.shape, np.nan)
    return LaplaceEstimate(s=s, value=value, se=se, lower=lower, upper=upper)


def ks_test(sample: HittingSample, law: RationalExpLaw, alpha: float = 0.01) -> KSResult:
    """Two-sided KS test of the sample against the law's partial-fraction CDF."""
    if sample.censored_count:
        raise PreconditionRefused(
            f"{sample.censored_count} censored paths; KS needs a complete sample"
        )
    result = kstest(sample.values, hitting_service.cdf_function(law))
    return KSResult(float(result.statistic), float(result.pvalue), alpha, len(sample.values))


def two_sample_ks(x: np.ndarray, y: np.ndarray, alpha: float = 0.01) -> KSResult:
    result = ks_2samp(x, y)
    return KSResult(float(result.statistic), float(result.pvalue), alpha, min(len(x), len(y)))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_sample(sample: HittingSample, path: str | FilePath) -> FilePath:
    """Header record, then values and censor times as little-endian float64 columns."""
    path = FilePath(path)
    header = np.zeros(1, dtype=HEADER)
    header["magic"] = MAGIC
    header["version"] = FORMAT_VERSION
    header["seed"] = sample.seed
    header["n"] = len(sample.values)
    header["censored"] = sample.censored_count
    header["start"] = sample.start
    header["target"] = -1 if math.isinf(sample.target) else int(sample.target)
    header["bias"] = sample.bias_bound
    header["chain_sha256"] = sample.chain_sha256.encode()
    with path.open("wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.asarray(sample.values, dtype="<f8").tobytes())
        fh.write(np.asarray(sample.censor_times, dtype="<f8").tobytes())
    logger.info("saved %d values to %s", len(sample.values), path)
    return path


def load_sample(path: str | FilePath) -> HittingSample:
    raw = FilePath(path).read_bytes()
    if len(raw) < HEADER.itemsize:
        raise ConfigError(f"{path}: too short for a sample header")
    header = np.frombuffer(raw[: HEADER.itemsize], dtype=HEADER)[0]
    if header["magic"] != MAGIC or int(header["version"]) != FORMAT_VERSION:
        raise ConfigError(f"{path}: not a version {FORMAT_VERSION} sample file")
    n, c = int(header["n"]), int(header["censored"])
    body = np.frombuffer(raw[HEADER.itemsize :], dtype="<f8")
    if len(body) != n + c:
        raise ConfigError(f"{path}: expected {n + c} values, found {len(body)}")
    target = int(header["target"])
    return HittingSample(
        values=body[:n].astype(float),
        start=int(header["start"]),
        target=math.inf if target < 0 else float(target),
        censor_times=body[n:].astype(float),
        seed=int(header["seed"]),
        n_samples=n + c,
        bias_bound=float(header["bias"]),
        chain_sha256=header["chain_sha256"].decode(),
    )

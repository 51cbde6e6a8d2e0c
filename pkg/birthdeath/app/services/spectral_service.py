"""
Spectral service: truncated generators, certified eigenvalues, limit spectra.

Design:
- every truncation is stored with the square-root factor B of J = B^T B;
  eigenvalues are lambda = sigma^2 with sigma from Sturm bisection on the
  zero-diagonal Golub-Kahan matrix of B (LAPACK stebz), which keeps small
  eigenvalues relatively accurate however large the rates grow
- each eigenvalue is then certified by an independent Sturm count and
  re-bisected (geometric midpoints) when the count disagrees
- limits over truncation levels double the level until the leading
  eigenvalues stop moving and the eigentime sum reaches its series value
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable

import numpy as np
from scipy.linalg import eigh_tridiagonal, eigvalsh_tridiagonal

from birthdeath.app.core.config import settings
from birthdeath.app.core.exceptions import (
    BisectionError,
    DomainError,
    IdentityViolation,
    InvalidRatesError,
    NumericalError,
    RateOverflowError,
)
from birthdeath.app.core.numerics import compensated_sum, safe_exp
from birthdeath.app.models.rates import RateSpec, SeriesVerdict, TailPolicy
from birthdeath.app.models.spectrum import (
    GeneratorMatrix,
    ResidualReport,
    Spectrum,
    SymTridiagonal,
)
from birthdeath.app.services import rates_service

logger = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-10
_TINY = 2 * np.finfo(float).tiny


# ---------------------------------------------------------------------------
# Matrix builds
# ---------------------------------------------------------------------------


def _rates_or_raise(log_values: np.ndarray, what: str) -> np.ndarray:
    ceiling = math.log(settings.RATE_CEILING)
    if log_values.size and float(log_values.max()) > ceiling:
        raise RateOverflowError(
            f"{what} exceeds {settings.RATE_CEILING:.3g} at index "
            f"{int(np.argmax(log_values > ceiling))}; truncate lower"
        )
    return safe_exp(log_values)


def _interleave(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    out = np.empty(len(first) + len(second))
    out[0::2] = first
    out[1::2] = second
    return out


def build_absorbed_top(rates: RateSpec, n: int) -> GeneratorMatrix:
    """States 0..n-1, killed at n with rate b_{n-1}."""
    if n < 1:
        raise DomainError("absorbed-top truncation needs n >= 1")
    b = _rates_or_raise(rates.log_b(np.arange(n)), "birth rate")
    a = _rates_or_raise(rates.log_a(np.arange(1, n)), "death rate") if n > 1 else np.empty(0)
    diag = -(b + np.concatenate([[0.0], a]))
    return GeneratorMatrix(
        kind="absorbed_top",
        level=(n,),
        states=np.arange(n),
        diag=diag,
        upper=b[:-1].copy(),
        lower=a,
        killing=(0.0, float(b[-1])),
        log_mu=rates_service.log_mu_array(rates, n - 1)[:n],
        factor=_interleave(np.sqrt(b), -np.sqrt(a)),
        parity=0,
        n_positive=n,
    )


def build_absorbed_bottom_reflected_top(rates: RateSpec, n: int, N: int) -> GeneratorMatrix:
    """States n+1..N, killed at n with rate a_{n+1}, reflecting at N."""
    if not 0 <= n < N:
        raise DomainError("need 0 <= n < N")
    m = N - n
    a = _rates_or_raise(rates.log_a(np.arange(n + 1, N + 1)), "death rate")
    b = (
        _rates_or_raise(rates.log_b(np.arange(n + 1, N)), "birth rate")
        if m > 1
        else np.empty(0)
    )
    diag = -(a + np.concatenate([b, [0.0]]))
    signed_a = -np.sqrt(a)
    signed_a[0] = -signed_a[0]
    return GeneratorMatrix(
        kind="absorbed_bottom_reflected_top",
        level=(n, N),
        states=np.arange(n + 1, N + 1),
        diag=diag,
        upper=b,
        lower=a[1:].copy(),
        killing=(float(a[0]), 0.0),
        log_mu=rates_service.log_mu_array(rates, N)[n + 1 :],
        factor=_interleave(signed_a, np.sqrt(b)),
        parity=1,
        n_positive=m,
    )


def build_reflected(rates: RateSpec, N: int) -> GeneratorMatrix:
    """The ergodic chain on 0..N, reflecting at N."""
    if N < 1:
        raise DomainError("reflected truncation needs N >= 1")
    b = _rates_or_raise(rates.log_b(np.arange(N)), "birth rate")
    a = _rates_or_raise(rates.log_a(np.arange(1, N + 1)), "death rate")
    diag = -(np.concatenate([[0.0], a]) + np.concatenate([b, [0.0]]))
    return GeneratorMatrix(
        kind="reflected",
        level=(N,),
        states=np.arange(N + 1),
        diag=diag,
        upper=b,
        lower=a,
        killing=(0.0, 0.0),
        log_mu=rates_service.log_mu_array(rates, N),
        factor=_interleave(np.sqrt(b), -np.sqrt(a)),
        parity=0,
        n_positive=N,
    )


def symmetrize(g: GeneratorMatrix) -> SymTridiagonal:
    prod = g.upper * g.lower
    if np.any(~(prod > 0)) or not np.all(np.isfinite(prod)):
        raise InvalidRatesError("off-diagonal products must be positive and finite")
    return SymTridiagonal(
        d=-g.diag,
        e=-np.sqrt(prod),
        kind=g.kind,
        level=g.level,
        factor=g.factor,
        parity=g.parity,
        n_positive=g.n_positive,
        log_sqrt_mu=0.5 * g.log_mu,
    )


# ---------------------------------------------------------------------------
# Sturm counts and bisection
# ---------------------------------------------------------------------------


def _count_sigma(factor: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Eigenvalues of the zero-diagonal tridiagonal with off-diagonal `factor` below y."""
    y = np.asarray(y, dtype=float)
    e2 = factor**2
    pivmin = _TINY * max(1.0, float(e2.max()) if e2.size else 1.0)
    q = -y.copy()
    q[np.abs(q) < pivmin] = -pivmin
    count = (q < 0).astype(np.int64)
    for k in range(len(e2)):
        q = -y - e2[k] / q
        q[np.abs(q) < pivmin] = -pivmin
        count += q < 0
    return count


def sturm_count(J: SymTridiagonal, x) -> np.ndarray:
    """Number of eigenvalues of J strictly below each shift x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros(x.shape, dtype=np.int64)
    pos = x > 0
    if pos.any():
        dim = len(J.factor) + 1
        out[pos] = _count_sigma(J.factor, np.sqrt(x[pos])) - (dim - J.n_positive)
    return out


def _bisect(factor: np.ndarray, nonpositive: int, indices: np.ndarray, rtol: float) -> np.ndarray:
    """Geometric-midpoint bisection for sigma_j, j in `indices` (0-based, ascending)."""
    hi0 = float(2 * np.abs(factor).max()) if factor.size else 1.0
    lo = np.full(len(indices), 1e-300)
    hi = np.full(len(indices), hi0)
    for _ in range(400):
        if np.all(hi / lo - 1.0 < rtol):
            return np.sqrt(lo * hi)
        mid = np.sqrt(lo * hi)
        below = _count_sigma(factor, mid) - nonpositive
        move_hi = below >= indices + 1
        hi = np.where(move_hi, mid, hi)
        lo = np.where(move_hi, lo, mid)
    raise BisectionError(
        {
            "message": "bisection did not reach the requested width",
            "indices": indices.tolist(),
            "lower": lo.tolist(),
            "upper": hi.tolist(),
        }
    )


def eigenvalues(
    J: SymTridiagonal,
    count: int | None = None,
    vectors: bool = False,
    rtol: float | None = None,
) -> Spectrum:
    """The `count` smallest positive eigenvalues of J, ascending and certified."""
    rtol = rtol or settings.BISECTION_RTOL
    k = J.n_positive if count is None else min(count, J.n_positive)
    if k <= 0:
        return Spectrum(np.empty(0), J.kind, J.level, 0.0)

    dim = len(J.factor) + 1
    nonpositive = dim - J.n_positive
    select = (nonpositive, nonpositive + k - 1)
    sigma = eigvalsh_tridiagonal(
        np.zeros(dim),
        np.abs(J.factor),
        select="i",
        select_range=select,
        lapack_driver="stebz",
        tol=_TINY,
    )

    idx = np.arange(k)
    lo_count = _count_sigma(J.factor, sigma * (1 - 4 * rtol)) - nonpositive
    hi_count = _count_sigma(J.factor, sigma * (1 + 4 * rtol)) - nonpositive
    bad = (lo_count != idx) | (hi_count != idx + 1)
    if bad.any():
        logger.debug("re-bisecting %d of %d eigenvalues", int(bad.sum()), k)
        sigma = sigma.copy()
        sigma[bad] = _bisect(J.factor, nonpositive, idx[bad], rtol)

    lam = np.sort(sigma) ** 2
    if k > 1:
        gaps = np.diff(lam)
        if np.any(gaps <= settings.GAP_COLLAPSE * lam[1:]):
            j = int(np.argmin(gaps))
            raise NumericalError(
                f"eigenvalue gap collapsed at index {j}: {lam[j]:.17g} vs {lam[j + 1]:.17g}"
            )

    vecs = None
    if vectors:
        _, x = eigh_tridiagonal(
            np.zeros(dim),
            J.factor,
            select="i",
            select_range=select,
            lapack_driver="stebz",
            tol=_TINY,
        )
        vecs = x[J.parity :: 2, :]
        vecs = vecs / np.linalg.norm(vecs, axis=0)

    return Spectrum(
        values=lam,
        kind=J.kind,
        level=J.level,
        reciprocal_sum=compensated_sum(1.0 / lam),
        vectors=vecs,
    )


def spectrum_of(g: GeneratorMatrix, count: int | None = None, vectors: bool = False) -> Spectrum:
    return eigenvalues(symmetrize(g), count=count, vectors=vectors)


def dirichlet_residual(g: GeneratorMatrix, spectrum: Spectrum, tol: float = 1e-8) -> ResidualReport:
    """Check D(f) = lambda mu(f^2) for each eigenpair, boundary killing included."""
    if spectrum.vectors is None:
        raise DomainError("eigenvectors were not requested at solve time")
    v = spectrum.vectors
    edges = np.sqrt(g.upper)[:, None] * v[:-1] - np.sqrt(g.lower)[:, None] * v[1:]
    form = (edges**2).sum(axis=0)
    form = form + g.killing[0] * v[0] ** 2 + g.killing[1] * v[-1] ** 2
    norm = (v**2).sum(axis=0)
    scale = spectrum.values * norm
    return ResidualReport(
        values=spectrum.values,
        residuals=np.abs(form - scale) / scale,
        tol=tol,
    )


def eigenfunction_recurrence(rates: RateSpec, lam: float, length: int) -> np.ndarray:
    """
    g_0 = 1, g_{k+1} = g_k - (lam/(mu_k b_k)) sum_{i<=k} mu_i g_i.

    Runs on c_k = sum_{i<=k} mu_i g_i / mu_k, which never touches mu itself.
    """
    b = rates.b_values(np.arange(length))
    a = rates.a_values(np.arange(1, length + 1))
    g = np.empty(length + 1)
    g[0] = 1.0
    c = 1.0
    for k in range(length):
        g[k + 1] = g[k] - lam * c / b[k]
        c = c * a[k] / b[k] + g[k + 1]
    return g


# ---------------------------------------------------------------------------
# Limit spectra
# ---------------------------------------------------------------------------


def ceiling_level(rates: RateSpec, offset: int, max_level: int) -> int:
    """Largest level L <= max_level whose rates (up to index L + offset) stay below the ceiling."""
    # a_N enters the reflected truncations, so the first offending index is excluded.
    ceiling = math.log(settings.RATE_CEILING)
    idx = np.arange(max_level + offset + 1)
    over = (rates.log_b(idx) > ceiling) | (np.concatenate([[-np.inf], rates.log_a(idx[1:])]) > ceiling)
    if not over.any():
        return max_level
    return max(int(np.argmax(over)) - offset - 1, 1)


def _levels(start: int, stop: int) -> list[int]:
    levels = []
    level = start
    while level < stop:
        levels.append(level)
        level *= 2
    levels.append(stop)
    return levels


def _drive_limit(
    label: str,
    builder: Callable[[int], GeneratorMatrix],
    levels: list[int],
    target: SeriesVerdict,
    count: int | None,
    tol: float,
    strict_monotone: bool,
) -> Spectrum:
    cap = settings.SPECTRAL_MAX_COUNT if count is None else count
    prev: np.ndarray | None = None
    history: list[dict] = []
    goal = target.value
    lam = np.empty(0)
    K = 0

    for level in levels:
        J = symmetrize(builder(level))
        lam = eigenvalues(J, count=min(cap, J.n_positive)).values
        history.append({"level": level, "lambda_1": float(lam[0]), "count": len(lam)})
        logger.debug("%s level %d: lambda_1=%.12g", label, level, lam[0])

        if prev is not None:
            m = min(len(prev), len(lam))
            worse = lam[:m] > prev[:m] * (1 + MONOTONE_SLACK)
            if strict_monotone and worse.any():
                j = int(np.argmax(worse))
                raise IdentityViolation(
                    f"{label}: eigenvalue {j + 1} increased from {prev[j]:.17g} "
                    f"to {lam[j]:.17g} at level {level}"
                )
            settled = np.abs(lam[:m] - prev[:m]) < tol * lam[:m]
            K = m if settled.all() else int(np.argmin(settled))
            partial = compensated_sum(1.0 / lam[:K]) if K else 0.0
            if partial > goal * (1 + tol) + target.error_bound:
                raise IdentityViolation(
                    f"{label}: reciprocal sum {partial:.12g} exceeds series value {goal:.12g}"
                )
            if count is not None and K >= count:
                return _finish(label, lam[:count], level, target, history, tol, converged=True)
            if count is None and K and goal - partial < tol * goal:
                cum = np.cumsum(1.0 / lam[:K])
                K = int(np.argmax(goal - cum < tol * goal)) + 1
                return _finish(label, lam[:K], level, target, history, tol, converged=True)
        prev = lam

    logger.warning("%s: level budget exhausted with %d settled eigenvalues", label, K)
    keep = lam[: max(K, 1)] if count is None else lam[: min(count, max(K, 1))]
    return _finish(label, keep, levels[-1], target, history, tol, converged=False)


def _finish(
    label: str,
    values: np.ndarray,
    level: int,
    target: SeriesVerdict,
    history: list[dict],
    tol: float,
    converged: bool,
) -> Spectrum:
    recip = compensated_sum(1.0 / values)
    tail = max(target.value - recip, 0.0) + target.error_bound
    if converged:
        logger.info("%s converged: %d eigenvalues at level %d, tail %.3g", label, len(values), level, tail)
    return Spectrum(
        values=values,
        kind=label,
        level=(level,),
        reciprocal_sum=recip,
        tail_bound=tail,
        converged=converged,
        partial=not converged,
        meta={"history": history, "tol": tol, "series": target.name, "series_value": target.value},
    )


def limit_spectrum_exit(
    rates: RateSpec,
    count: int | None = None,
    tol: float | None = None,
    policy: TailPolicy | None = None,
) -> Spectrum:
    """lambda_nu = lim_n lambda_nu^(n); sum of reciprocals certified against R."""
    tol = tol or settings.SPECTRAL_TOL
    report = rates_service.require_class(rates, "Exit", policy, "exit limit spectrum")
    top = ceiling_level(rates, 0, settings.SPECTRAL_MAX_LEVEL)
    levels = _levels(min(settings.SPECTRAL_START_LEVEL, top), top)
    return _drive_limit(
        "exit",
        lambda n: build_absorbed_top(rates, n),
        levels,
        report.R,
        count,
        tol,
        strict_monotone=True,
    )


def limit_spectrum_entrance(
    rates: RateSpec,
    n: int = 0,
    count: int | None = None,
    tol: float | None = None,
    policy: TailPolicy | None = None,
) -> Spectrum:
    """lambda-hat_{n,nu} = lim_N of the reflected truncations; certified against S_n."""
    tol = tol or settings.SPECTRAL_TOL
    policy = policy or TailPolicy.from_settings()
    rates_service.require_class(rates, "Entrance", policy, "entrance limit spectrum")
    target = rates_service.series_S(rates, n, policy)
    top = ceiling_level(rates, 0, n + settings.SPECTRAL_MAX_LEVEL)
    if top <= n:
        raise RateOverflowError(f"rates exceed the ceiling before level {n + 1}")
    levels = [n + w for w in _levels(min(settings.SPECTRAL_START_LEVEL, top - n), top - n)]
    spectrum = _drive_limit(
        f"entrance[n={n}]",
        lambda N: build_absorbed_bottom_reflected_top(rates, n, N),
        levels,
        target,
        count,
        tol,
        strict_monotone=True,
    )
    return spectrum


def ergodic_spectrum(
    rates: RateSpec,
    count: int | None = None,
    tol: float | None = None,
    policy: TailPolicy | None = None,
) -> Spectrum:
    """Positive eigenvalues of -Q for a strongly ergodic chain; certified against T."""
    tol = tol or settings.SPECTRAL_TOL
    report = rates_service.require_class(rates, "Entrance", policy, "ergodic spectrum")
    top = ceiling_level(rates, 0, settings.SPECTRAL_MAX_LEVEL)
    levels = _levels(min(settings.SPECTRAL_START_LEVEL, top), top)
    return _drive_limit(
        "ergodic",
        lambda N: build_reflected(rates, N),
        levels,
        report.T,
        count,
        tol,
        strict_monotone=False,
    )


def levels_monotone(
    rates: RateSpec, levels: list[int], nu: int = 1, n: int | None = None
) -> np.ndarray:
    """lambda_nu along a list of truncation levels (absorbed-top, or reflected above n)."""
    out = []
    for level in levels:
        g = build_absorbed_top(rates, level) if n is None else build_absorbed_bottom_reflected_top(rates, n, level)
        out.append(spectrum_of(g, count=nu).values[nu - 1])
    return np.asarray(out)

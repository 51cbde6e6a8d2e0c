"""
Hitting service: laws of T_{i,n} as ratios of products over spectra.

Four cases:
- up, finite target: poles from the chain absorbed at n, zeros from the one absorbed at i
- down, finite window reflected at N: poles/zeros from the windows above n and above i
- up to the boundary (exit chains): the life time, poles from the limit spectrum
- down from anywhere including the boundary (entrance chains): limit spectra above n and above i

Transforms of infinite laws are returned as brackets; densities only exist for
finite laws (partial fractions with repeated-pole handling).
"""

from __future__ import annotations

import logging
import math
from math import comb, factorial

import numpy as np
from scipy.special import gammainc, gammaincc

from birthdeath.app.core.config import settings
from birthdeath.app.core.exceptions import DomainError, NumericalError, PreconditionRefused
from birthdeath.app.core.numerics import compensated_sum
from birthdeath.app.models.laws import Bracket, DensityTable, Moments, RationalExpLaw
from birthdeath.app.models.rates import RateSpec, TailPolicy
from birthdeath.app.services import rates_service, spectral_service

logger = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


# ---------------------------------------------------------------------------
# Law construction
# ---------------------------------------------------------------------------


def _finite_values(g) -> np.ndarray:
    return spectral_service.spectrum_of(g).values


def law_up(rates: RateSpec, i: int, n: int) -> RationalExpLaw:
    """T_{i,n} for 0 <= i < n < inf."""
    if not 0 <= i < n:
        raise DomainError("law_up needs 0 <= i < n")
    poles = _finite_values(spectral_service.build_absorbed_top(rates, n))
    zeros = (
        _finite_values(spectral_service.build_absorbed_top(rates, i)) if i > 0 else np.empty(0)
    )
    return RationalExpLaw(poles, zeros, provenance="up-finite", start=i, target=n)


def law_down_finite(rates: RateSpec, i: int, n: int, N: int) -> RationalExpLaw:
    """T_{i,n} for n < i <= N on the chain reflected at N."""
    if not 0 <= n < i <= N:
        raise DomainError("law_down_finite needs 0 <= n < i <= N")
    poles = _finite_values(spectral_service.build_absorbed_bottom_reflected_top(rates, n, N))
    zeros = (
        _finite_values(spectral_service.build_absorbed_bottom_reflected_top(rates, i, N))
        if i < N
        else np.empty(0)
    )
    return RationalExpLaw(
        poles, zeros, provenance="down-reflected", start=i, target=n, meta={"N": N}
    )


def law_lifetime_exit(
    rates: RateSpec,
    i: int = 0,
    tol: float | None = None,
    count: int | None = None,
    policy: TailPolicy | None = None,
) -> RationalExpLaw:
    """Life time from i on an exit chain; mean from 0 is R."""
    if i < 0:
        raise DomainError("i must be nonnegative")
    spectrum = spectral_service.limit_spectrum_exit(rates, count=count, tol=tol, policy=policy)
    zeros = (
        _finite_values(spectral_service.build_absorbed_top(rates, i)) if i > 0 else np.empty(0)
    )
    if len(zeros) and zeros[-1] >= spectrum.values[-1]:
        logger.warning("lifetime law from %d keeps fewer poles than zeros above the cut", i)
    return RationalExpLaw(
        poles=spectrum.values,
        zeros=zeros,
        tail_sum=float(spectrum.tail_bound),
        provenance="lifetime-exit",
        start=i,
        target=math.inf,
        meta={"level": spectrum.level, "converged": spectrum.converged},
    )


def law_down_entrance(
    rates: RateSpec,
    i: float,
    n: int,
    tol: float | None = None,
    count: int | None = None,
    policy: TailPolicy | None = None,
) -> RationalExpLaw:
    """T_{i,n} for n < i <= inf on an entrance chain; i = inf is the descent from the boundary."""
    if not (0 <= n < i):
        raise DomainError("law_down_entrance needs 0 <= n < i")
    poles = spectral_service.limit_spectrum_entrance(rates, n, count=count, tol=tol, policy=policy)
    if math.isinf(i):
        zeros, zero_tail = np.empty(0), 0.0
    else:
        inner = spectral_service.limit_spectrum_entrance(
            rates, int(i), count=count, tol=tol, policy=policy
        )
        zeros, zero_tail = inner.values, float(inner.tail_bound)
    return RationalExpLaw(
        poles=poles.values,
        zeros=zeros,
        tail_sum=float(poles.tail_bound),
        zero_tail_sum=zero_tail,
        provenance="down-entrance",
        start=i,
        target=n,
        meta={"level": poles.level, "converged": poles.converged},
    )


def hitting_law(
    rates: RateSpec,
    i: float,
    n: float,
    N: int | None = None,
    tol: float | None = None,
    policy: TailPolicy | None = None,
) -> RationalExpLaw:
    """Pick the case from (i, n, N) and the boundary class."""
    if i == n:
        raise DomainError("start and target coincide")
    if i < n:
        if math.isinf(i):
            raise DomainError("cannot start at the boundary and move up")
        if math.isinf(n):
            return law_lifetime_exit(rates, int(i), tol=tol, policy=policy)
        return law_up(rates, int(i), int(n))
    if N is not None:
        if math.isinf(i):
            raise DomainError("a start at the boundary needs the infinite chain, drop N")
        return law_down_finite(rates, int(i), int(n), N)
    return law_down_entrance(rates, i, int(n), tol=tol, policy=policy)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _log_phi(law: RationalExpLaw, s: np.ndarray) -> np.ndarray:
    out = -np.log1p(s[:, None] / law.poles[None, :]).sum(axis=1)
    if len(law.zeros):
        out = out + np.log1p(s[:, None] / law.zeros[None, :]).sum(axis=1)
    return out


def evaluate_laplace(law: RationalExpLaw, s) -> Bracket:
    """E exp(-s T) bracketed: neglected poles lower it by at most exp(-s tail), zeros raise it."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise DomainError("Laplace argument must be finite and >= 0")
    log_phi = _log_phi(law, s)
    lower = np.exp(log_phi - s * law.tail_sum)
    upper = np.minimum(1.0, np.exp(log_phi + s * law.zero_tail_sum))
    if law.finite:
        upper = lower = np.exp(log_phi)
    return Bracket(grid=s, lower=np.minimum(lower, upper), upper=upper)


def moments(law: RationalExpLaw) -> Moments:
    """Mean and variance from reciprocal sums; brackets account for the neglected factors."""
    pole_mean = compensated_sum(1.0 / law.poles)
    zero_mean = compensated_sum(1.0 / law.zeros) if len(law.zeros) else 0.0
    pole_var = compensated_sum(law.poles**-2.0)
    zero_var = compensated_sum(law.zeros**-2.0) if len(law.zeros) else 0.0

    base_mean = pole_mean - zero_mean
    base_var = pole_var - zero_var
    mean = base_mean + law.tail_sum - law.zero_tail_sum
    return Moments(
        mean=mean,
        variance=base_var,
        mean_bracket=(base_mean - law.zero_tail_sum, base_mean + law.tail_sum),
        variance_bracket=(base_var - law.zero_tail_sum**2, base_var + law.tail_sum**2),
    )


# ---------------------------------------------------------------------------
# Partial fractions
# ---------------------------------------------------------------------------


def _cluster(poles: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Merge poles closer than tol * max; returns (centres, multiplicities)."""
    order = np.sort(poles)
    cut = tol * order[-1]
    groups: list[list[float]] = [[order[0]]]
    for p in order[1:]:
        if p - groups[-1][-1] <= cut:
            groups[-1].append(p)
        else:
            groups.append([p])
    centres = np.array([float(np.mean(g)) for g in groups])
    mult = np.array([len(g) for g in groups])
    return centres, mult


def _coefficients(
    centres: np.ndarray, mult: np.ndarray, zeros: np.ndarray
) -> list[tuple[float, int, float]]:
    """(q, r, A) with phi(s) = sum A / (s + q)^r."""
    out = []
    for k, (q, m) in enumerate(zip(centres, mult, strict=True)):
        others = np.delete(np.arange(len(centres)), k)
        qo, mo = centres[others], mult[others]

        log_abs = (
            float(np.sum(mult * np.log(centres)))
            - float(np.sum(mo * np.log(np.abs(qo - q))))
            + float(np.sum(np.log(np.abs(zeros - q))))
            - float(np.sum(np.log(zeros)))
        )
        sign = float(np.prod(np.sign(qo - q) ** mo) * np.prod(np.sign(zeros - q)))
        G = sign * math.exp(log_abs)

        # derivatives of log G at s = -q
        h = [0.0]
        for j in range(1, m):
            zsum = float(np.sum((zeros - q) ** -float(j)))
            psum = float(np.sum(mo * (qo - q) ** -float(j)))
            h.append((-1) ** (j - 1) * factorial(j - 1) * (zsum - psum))
        B = [1.0]
        for kk in range(m - 1):
            B.append(sum(comb(kk, j) * B[j] * h[kk + 1 - j] for j in range(kk + 1)))

        for r in range(1, m + 1):
            out.append((float(q), r, G * B[m - r] / factorial(m - r)))
    return out


def density_cdf(law: RationalExpLaw, t) -> DensityTable:
    """Density, CDF and survival of a finite law on a t-grid."""
    if not law.finite:
        raise PreconditionRefused(
            "density inversion needs a finite law; use transforms or Monte Carlo for "
            f"{law.provenance}"
        )
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise DomainError("t must be >= 0")

    centres, mult = _cluster(law.poles, settings.POLE_MERGE_TOL)
    repeated = bool(np.any(mult > 1))
    if repeated:
        logger.warning(
            "%s: %d poles merged into repeated terms", law.provenance, int((mult - 1).sum())
        )
    coeffs = _coefficients(centres, mult, law.zeros)

    density = np.zeros_like(t)
    cdf = np.zeros_like(t)
    survival = np.zeros_like(t)
    magnitude = np.zeros_like(t)
    condition = 0.0
    mass = 0.0
    for q, r, A in coeffs:
        with np.errstate(under="ignore"):
            term = A * t ** (r - 1) * np.exp(-q * t) / factorial(r - 1)
        density += term
        magnitude += np.abs(term)
        w = A / q**r
        cdf += w * gammainc(r, q * t)
        survival += w * gammaincc(r, q * t)
        mass += w
        condition += abs(w)

    abs_error = 4 * _EPS * condition * len(coeffs)
    if abs_error > settings.DENSITY_MASS_TOL:
        raise NumericalError(
            f"{law.provenance}: partial fractions ill-conditioned "
            f"(rounding bound {abs_error:.3g}); use Monte Carlo for the CDF"
        )
    if abs(mass - 1.0) > settings.DENSITY_MASS_TOL + abs_error:
        raise NumericalError(f"{law.provenance}: density mass {mass:.12g} differs from 1")

    point_error = 4 * _EPS * magnitude * len(coeffs)
    negative = bool(np.any(density < -point_error))
    if negative:
        logger.warning("%s: density negative on the grid beyond rounding", law.provenance)
    return DensityTable(
        t=t,
        density=density,
        cdf=cdf,
        survival=survival,
        mass=mass,
        repeated_poles=repeated,
        negative=negative,
        abs_error=abs_error,
    )


def cdf_function(law: RationalExpLaw):
    """Vectorized CDF callable, as the KS tests want it."""

    def F(x):
        x = np.asarray(x, dtype=float)
        return density_cdf(law, np.maximum(x.ravel(), 0.0)).cdf.reshape(x.shape)

    return F


def mean_hitting_series(rates: RateSpec, i: int, n: int) -> float:
    """E T_{i,n} = partial R over [i, n), the oracle for law_up means."""
    return rates_service.partial_R(rates, n) - rates_service.partial_R(rates, i)

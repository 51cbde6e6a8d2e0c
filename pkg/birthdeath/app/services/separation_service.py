"""
Separation service: transient kernels on reflected windows, separation curves, beta.

Kernels come from uniformization. U = I + Q/Lambda is entrywise nonnegative, so
every power and every Poisson-weighted sum is computed without cancellation and
p_ij(t) keeps relative accuracy even where pi_j is tiny; the Poisson cut is
then the only error and is set against the smallest pi_j of the window.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy.stats import poisson

from birthdeath.app.core.config import settings
from birthdeath.app.core.exceptions import (
    DomainError,
    IdentityViolation,
    NumericalError,
    PreconditionRefused,
)
from birthdeath.app.models.duality import BoundCheck, DualModel
from birthdeath.app.models.rates import RateSpec, TailPolicy
from birthdeath.app.models.separation import BetaReport, SeparationReport
from birthdeath.app.services import duality_service, rates_service, spectral_service

logger = logging.getLogger(__name__)

BETA_MATCH = 1e-6
SST_SLACK = 1e-6


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def _uniformize(U: np.ndarray, rate: float, ts: np.ndarray, eps: float) -> np.ndarray:
    """sum_k Poisson(k; rate t) U^k for each t, sharing the powers of U."""
    dim = len(U)
    out = np.zeros((len(ts), dim, dim))
    if len(ts) == 0:
        return out
    means = rate * ts
    K = int(poisson.isf(eps, means.max())) + 1 if means.max() > 0 else 0
    weights = poisson.pmf(np.arange(K + 1)[:, None], means[None, :])
    power = np.eye(dim)
    for k in range(K + 1):
        out += weights[k][:, None, None] * power
        power = power @ U
    return out


def transient_kernels(rates: RateSpec, N: int, t) -> np.ndarray:
    """p_ij(t) on {0..N} for the chain reflected at N, for every t in the grid."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise DomainError("t must be >= 0")
    g = spectral_service.build_reflected(rates, N)
    Q = g.dense()
    rate = float(np.max(-np.diag(Q)))
    U = np.eye(N + 1) + Q / rate

    pi, _, _ = rates_service.window_measures(rates, N)
    eps = max(min(settings.UNIFORMIZATION_EPS, 1e-9 * float(pi.min())), 1e-300)

    zero = t == 0
    with np.errstate(invalid="ignore"):
        terms = np.where(zero, 0.0, poisson.isf(eps, np.where(zero, 1.0, rate * t)))
    direct = ~zero & (terms <= settings.UNIFORMIZATION_MAX_TERMS)
    out = np.empty((len(t), N + 1, N + 1))
    out[zero] = np.eye(N + 1)
    out[direct] = _uniformize(U, rate, t[direct], eps)

    for m in np.nonzero(~direct & ~zero)[0]:
        halvings = math.ceil(math.log2(rate * t[m] / (0.5 * settings.UNIFORMIZATION_MAX_TERMS)))
        logger.warning("t=%.6g needs squaring (%d halvings)", t[m], halvings)
        P = _uniformize(U, rate, np.array([t[m] / 2**halvings]), eps / 2**halvings)[0]
        for _ in range(halvings):
            P = P @ P
        out[m] = P

    rows = out.sum(axis=2)
    if np.any(np.abs(rows - 1.0) > 1e-10):
        raise NumericalError(f"kernel rows drift from 1 by {np.abs(rows - 1).max():.3g}")
    return out


def transient_kernel(rates: RateSpec, N: int, t: float) -> np.ndarray:
    return transient_kernels(rates, N, [t])[0]


# ---------------------------------------------------------------------------
# Separation
# ---------------------------------------------------------------------------


def separation_curve(
    rates: RateSpec,
    N: int,
    t,
    starts=None,
    dual: DualModel | None = None,
    policy: TailPolicy | None = None,
) -> SeparationReport:
    """
    s_i(t) = max_j (1 - p_ij(t)/pi_j) on the window, against the SST tail bound.

    The time grid is sorted and deduplicated; every array in the report follows
    the sorted grid.
    """
    policy = policy or TailPolicy.from_settings()
    rates_service.require_class(rates, "Entrance", policy, "separation")
    t = np.unique(np.atleast_1d(np.asarray(t, dtype=float)))
    starts = np.arange(min(N, 10) + 1) if starts is None else np.asarray(starts, dtype=int)
    if np.any(starts > N) or np.any(starts < 0):
        raise DomainError("start states must lie in the window")

    measures = rates_service.build_measures(rates, N, policy)
    tail_mass = float(measures.tail[N])
    if tail_mass > settings.SEPARATION_TAIL_MASS:
        raise PreconditionRefused(
            f"stationary mass beyond N={N} is {tail_mass:.3g}; "
            f"raise N until it is below {settings.SEPARATION_TAIL_MASS:.0e}"
        )

    pi_window, _, _ = rates_service.window_measures(rates, N)
    P = transient_kernels(rates, N, t)[:, starts, :]  # (time, start, j)
    ratio = P / pi_window[None, None, :]
    s = np.clip(1.0 - ratio.min(axis=2), 0.0, 1.0).T
    diff = np.abs(P - pi_window[None, None, :]).sum(axis=2).T
    tv = 0.5 * diff

    dual = dual or duality_service.build_dual(rates, policy)
    sst_tail = np.vstack(
        [duality_service.sst_cdf_from_state(rates, int(i), t, dual=dual).tail for i in starts]
    )
    dual_tail = duality_service.dual_lifetime_survival(dual, 0, t).upper
    mean_tau = float(duality_service.dual_remainders(dual)[0])
    with np.errstate(divide="ignore"):
        markov = np.where(t > 0, mean_tau / t, np.inf)

    sup_s = s.max(axis=0)
    checks = {
        "separation <= sst tail": bool(np.all(s <= sst_tail + SST_SLACK)),
        "total variation <= separation": bool(np.all(tv <= s + 1e-12)),
        "sst tail <= dual life-time tail": bool(np.all(sst_tail <= dual_tail[None, :] + 1e-12)),
        "separation <= markov envelope": bool(np.all(sup_s <= markov + SST_SLACK)),
        "separation nonincreasing": bool(np.all(np.diff(sup_s) <= 1e-10)),
    }
    failed = [k for k, ok in checks.items() if not ok]
    if failed:
        logger.warning("separation checks failed: %s", ", ".join(failed))
    discrepancies = [_l1_form(diff, s, starts, t)]
    logger.info("separation on N=%d: S(t_end)=%.3g, tail mass %.3g", N, sup_s[-1], tail_mass)
    return SeparationReport(
        t=t,
        starts=starts,
        s=s,
        sup_s=sup_s,
        tv=tv,
        l1=diff,
        sst_tail=sst_tail,
        dual_tail=dual_tail,
        markov_envelope=markov,
        beta_lower=1.0 / mean_tau,
        N=N,
        tail_mass=tail_mass,
        checks=checks,
        discrepancies=discrepancies,
    )


def _l1_form(l1: np.ndarray, s: np.ndarray, starts: np.ndarray, t: np.ndarray) -> BoundCheck:
    """sum_j |p_ij(t) - pi_j| <= s_i(t), the total-variation bound without its factor 1/2."""
    excess = l1 - s
    k, m = np.unravel_index(int(np.argmax(excess)), excess.shape)
    worst = float(excess[k, m])
    return BoundCheck(
        "sum_j |p_ij - pi_j| <= s_i(t)",
        worst,
        0.0,
        worst <= 1e-12,
        note=f"largest excess at start {int(starts[k])}, t={t[m]:.6g}",
    )


def _fit_slope(curve: SeparationReport) -> float | None:
    """Least-squares decay rate of S(t) where it is between 1e-12 and 0.25."""
    keep = (curve.sup_s > 1e-12) & (curve.sup_s < 0.25) & (curve.t > 0)
    if keep.sum() < 3:
        return None
    slope, _ = np.polyfit(curve.t[keep], np.log(curve.sup_s[keep]), 1)
    return float(-slope)


def beta_report(
    rates: RateSpec,
    window: int | None = None,
    curve: SeparationReport | None = None,
    policy: TailPolicy | None = None,
) -> BetaReport:
    """beta >= 1/E_0 tau, with E_0 tau from the spectrum, from T, and from the dual."""
    policy = policy or TailPolicy.from_settings()
    if window is not None:
        N = window
        T = rates_service.reflected_T(rates, N)
        dual = duality_service.build_dual(rates, policy, window=N)
    else:
        rates_service.require_class(rates, "Entrance", policy, "beta report")
        T_series = rates_service.series_T(rates, policy)
        T = T_series.value
        # smallest N whose reflected truncation leaves less than 1e-9 of T outside
        remainders = np.cumsum(T_series.terms[::-1])[::-1] + T_series.error_bound
        cut = np.nonzero(remainders <= 1e-9 * T)[0]
        N = max(int(cut[0]) if len(cut) else len(remainders), 8)
        N = min(N, spectral_service.ceiling_level(rates, 0, settings.SPECTRAL_MAX_LEVEL))
        dual = duality_service.build_dual(rates, policy)

    spectrum = spectral_service.spectrum_of(spectral_service.build_reflected(rates, N))
    dual_mean = float(duality_service.dual_remainders(dual)[0])
    values = np.array([spectrum.reciprocal_sum, T, dual_mean])
    spread = float((values.max() - values.min()) / values.max())
    if spread > BETA_MATCH:
        raise IdentityViolation(
            {
                "message": "E_0 tau disagrees across spectrum, T and dual life time",
                "spectral_sum": spectrum.reciprocal_sum,
                "T": T,
                "dual_mean": dual_mean,
            }
        )
    return BetaReport(
        beta_lower=1.0 / T,
        T=T,
        spectral_sum=spectrum.reciprocal_sum,
        dual_mean=dual_mean,
        window=window,
        relative_spread=spread,
        fitted_slope=_fit_slope(curve) if curve is not None else None,
        spectrum_size=spectrum.count,
    )

"""
Duality service: the dual chain, intertwining, and the strong stationary time.

Design:
- dual rates are written with pi/H instead of H-ratios, so nothing cancels
  when H is close to 1:  a*_i = b_i (1 - pi_i/H_i),  b*_i = a_{i+1} (1 + pi_{i+1}/H_i)
- past the index where pi_i/H_i drops below double precision the dual follows
  the primal closed form with roles swapped (RateSpec.dual_tail)
- the SST from 0 is the life time of the dual from 0; from i >= 1 it is a
  combination of two dual life-time CDFs, bracketed and flagged per point
"""

from __future__ import annotations

import logging
import math
from math import comb, factorial

import numpy as np

from birthdeath.app.core.exceptions import DomainError, IdentityViolation
from birthdeath.app.core.numerics import compensated_sum, log_cumsum, safe_exp
from birthdeath.app.models.duality import (
    BoundCheck,
    DualModel,
    IntertwiningReport,
    MomentReport,
    SSTDistribution,
)
from birthdeath.app.models.laws import Bracket, RationalExpLaw
from birthdeath.app.models.rates import RateSpec, TailPolicy
from birthdeath.app.services import hitting_service, rates_service, spectral_service

logger = logging.getLogger(__name__)

PRECISION_FLOOR = 1e-17  # pi_i / H_i below this leaves dual rates unchanged in doubles
SPECTRUM_MATCH = 1e-6
CERTIFY_WIDTH = 1e-6
_EPS = np.finfo(float).eps


# ---------------------------------------------------------------------------
# Dual chain
# ---------------------------------------------------------------------------


def _dual_tables(
    rates: RateSpec, pi: np.ndarray, H: np.ndarray, length: int
) -> tuple[np.ndarray, np.ndarray]:
    """(a*_1..a*_length, b*_0..b*_{length-1})."""
    i = np.arange(1, length + 1)
    a_star = rates.b_values(i) * (1.0 - pi[i] / H[i])
    k = np.arange(length)
    b_star = rates.a_values(k + 1) * (1.0 + pi[k + 1] / H[k])
    return a_star, b_star


def _log_mu_star(rates: RateSpec, log_mu: np.ndarray, H: np.ndarray, length: int) -> np.ndarray:
    i = np.arange(length + 1)
    return (
        float(rates.log_b(0)[0])
        - log_mu[i]
        - rates.log_b(i)
        + 2.0 * (np.log(H[i]) - math.log(H[0]))
    )



def log_mu_star_products(dual: DualModel, count: int | None = None) -> np.ndarray:
    """log mu*_i for i <= count as prod_{k<i} b*_k / a*_{k+1} over the dual rates."""
    count = dual.length if count is None else count
    if dual.window is not None and count > dual.window:
        raise DomainError(f"the windowed dual stops at {dual.window}")
    return rates_service.log_mu_array(dual.dual, count)


def log_mu_star_closed(dual: DualModel, count: int | None = None) -> np.ndarray:
    """log mu*_i = log b_0 - log(mu_i b_i) + 2 log(H_i / H_0) for i <= count."""
    count = dual.length if count is None else count
    if count >= len(dual.H):
        raise DomainError(f"H is only known up to {len(dual.H) - 1}")
    log_mu = rates_service.log_mu_array(dual.primal, count)
    return _log_mu_star(dual.primal, log_mu, dual.H, count)


def mu_star_mismatch(dual: DualModel, count: int | None = None) -> float:
    """Largest relative gap between the two forms of log mu*."""
    products = log_mu_star_products(dual, count)
    closed = log_mu_star_closed(dual, count)
    return float(np.max(np.abs(products - closed) / np.maximum(1.0, np.abs(closed))))


def build_dual(
    rates: RateSpec,
    policy: TailPolicy | None = None,
    window: int | None = None,
) -> DualModel:
    """
    Dual of a strongly ergodic chain, or of its truncation reflected at `window`.

    The windowed dual lives on 0..N and is absorbed at N; it needs no boundary
    class, which is what makes finite chains (two states included) valid input.
    """
    policy = policy or TailPolicy.from_settings()
    if window is not None:
        if window < 1:
            raise DomainError("window must be >= 1")
        pi, H, tail = rates_service.window_measures(rates, window)
        a_star, b_star = _dual_tables(rates, np.append(pi, 0.0), H, window)
        dual = RateSpec.from_tables(
            a_star, b_star, rates.dual_tail(), description=f"dual[{window}] of {rates.description}"
        )
        log_mu = rates_service.log_mu_array(rates, window)
        return DualModel(
            primal=rates,
            dual=dual,
            pi=pi,
            H=H,
            tail=tail,
            log_mu_star=_log_mu_star(rates, log_mu, H, window),
            length=window,
            window=window,
        )

    rates_service.require_class(rates, "Entrance", policy, "dual chain")
    horizon = max(policy.horizon, rates.far_field_start + 2)
    measures = rates_service.build_measures(rates, horizon, policy)
    pi, H = measures.pi, measures.H

    small = np.nonzero(pi[1:] / H[1:] < PRECISION_FLOOR)[0]
    length = int(small[0]) + 1 if len(small) else horizon - 1
    length = min(max(length, rates.far_field_start + 1), horizon - 1)

    a_star, b_star = _dual_tables(rates, pi, H, length)
    dual = RateSpec.from_tables(
        a_star, b_star, rates.dual_tail(), description=f"dual of {rates.description}"
    )
    report = rates_service.classify_boundary(dual, policy)
    if report.classification != "Exit":
        raise IdentityViolation(
            f"dual of a strongly ergodic chain must be exit, got {report.classification}"
        )
    logger.info("dual built: %d explicit rates, R*=%.12g", length, report.R.value)
    return DualModel(
        primal=rates,
        dual=dual,
        pi=pi,
        H=H,
        tail=measures.tail,
        log_mu_star=_log_mu_star(rates, measures.log_mu, H, length),
        length=length,
        report=report,
        R_star=report.R,
    )


def intertwining_residual(
    rates: RateSpec,
    N: int,
    dual: DualModel | None = None,
    policy: TailPolicy | None = None,
) -> IntertwiningReport:
    """Residual of Lambda Q = Q* Lambda on the (N+1)^2 window; the last row is reported apart."""
    if N < 2:
        raise DomainError("intertwining window needs N >= 2")
    dual = dual or build_dual(rates, policy)
    if dual.window is not None and dual.window < N:
        raise DomainError("windowed dual must cover the intertwining window")
    pi, H = dual.pi[: N + 1], dual.H[: N + 1]

    states = np.arange(N + 1)
    lam = np.tril(np.ones((N + 1, N + 1))) * pi[None, :] / H[:, None]

    a = rates.a_values(np.arange(1, N + 2))
    b = rates.b_values(states)
    Q = np.diag(-(b + np.concatenate([[0.0], a[:-1]])))
    Q += np.diag(b[:-1], 1) + np.diag(a[:-1], -1)

    a_s = dual.dual.a_values(np.arange(1, N + 1))
    b_s = dual.dual.b_values(states)
    Qs = np.diag(-(b_s + np.concatenate([[0.0], a_s])))
    Qs += np.diag(b_s[:-1], 1) + np.diag(a_s, -1)

    # row N of Q* Lambda misses the jump to N+1, so it carries the truncation error
    resid = np.abs(lam @ Q - Qs @ lam).max(axis=1)
    scale = float(max(a.max(), b.max(), a_s.max(), b_s.max()))
    return IntertwiningReport(
        N=N,
        interior=float(resid[:N].max()),
        last_row=float(resid[N]),
        scale=scale,
        row_residuals=resid,
    )


# ---------------------------------------------------------------------------
# SST law
# ---------------------------------------------------------------------------


def sst_law(
    rates: RateSpec,
    tol: float | None = None,
    policy: TailPolicy | None = None,
    dual: DualModel | None = None,
    check_count: int = 5,
) -> RationalExpLaw:
    """E_0 exp(-s tau) = prod lambda/(s+lambda) over the ergodic spectrum, via the dual life time."""
    dual = dual or build_dual(rates, policy)
    if dual.window is not None:
        law = hitting_service.law_up(dual.dual, 0, dual.window)
        ergodic = spectral_service.spectrum_of(spectral_service.build_reflected(rates, dual.window))
        primal = ergodic.values
    else:
        law = hitting_service.law_lifetime_exit(dual.dual, 0, tol=tol, policy=policy)
        primal = spectral_service.ergodic_spectrum(rates, count=check_count, tol=tol, policy=policy).values

    k = min(check_count, len(primal), len(law.poles))
    rel = np.abs(law.poles[:k] - primal[:k]) / primal[:k]
    if np.any(rel > SPECTRUM_MATCH):
        raise IdentityViolation(
            {
                "message": "dual exit spectrum differs from the ergodic spectrum",
                "dual": law.poles[:k].tolist(),
                "ergodic": primal[:k].tolist(),
            }
        )
    return RationalExpLaw(
        poles=law.poles,
        zeros=law.zeros,
        tail_sum=law.tail_sum,
        provenance="sst",
        start=0,
        target=math.inf,
        meta={**law.meta, "spectrum_match": rel.tolist()},
    )


def _dual_terms(dual: DualModel, count: int) -> tuple[np.ndarray, float]:
    """Mean-passage terms t_k = E T*_{k,k+1} for k < count, and the bound on the rest."""
    if dual.window is not None:
        top = dual.window
        log_mu = rates_service.log_mu_array(dual.dual, top - 1)
        log_terms = log_cumsum(log_mu) - log_mu - dual.dual.log_b(np.arange(top))
        return safe_exp(log_terms), 0.0
    terms = dual.R_star.terms
    if count > len(terms):
        raise DomainError(f"state {count} beyond the dual horizon {len(terms)}")
    return terms, dual.R_star.error_bound


def dual_remainders(dual: DualModel) -> np.ndarray:
    """r_j = E_j zeta* for every j the dual resolves."""
    terms, err = _dual_terms(dual, 0)
    rev = np.cumsum(terms[::-1])[::-1]
    return np.append(rev, 0.0) + err


def _lifetime_level(dual: DualModel, j: int, target: float) -> tuple[int, float]:
    """Smallest L > j whose remaining mean life time is below target."""
    if dual.window is not None:
        return dual.window, 0.0
    r = dual_remainders(dual)
    ok = np.nonzero(r[j + 1 :] <= target)[0]
    L = j + 1 + (int(ok[0]) if len(ok) else len(r) - j - 2)
    ceiling = spectral_service.ceiling_level(dual.dual, 0, L)
    if ceiling < L:
        L = max(ceiling, j + 1)
        logger.warning("dual level capped at %d by the rate ceiling (remainder %.3g)", L, r[L])
    return L, float(r[L])


def dual_lifetime_survival(
    dual: DualModel,
    j: int,
    t,
    level: int | None = None,
    target: float = 1e-15,
) -> Bracket:
    """
    Bracket for P_j[zeta* > t].

    zeta* from j is T*_{j,L} plus an independent life time from L, whose mean
    r_L bounds the gap through Markov's inequality.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if level is None:
        L, r_L = _lifetime_level(dual, j, target * max(1.0, float(dual_remainders(dual)[0])))
    else:
        L, r_L = level, (0.0 if dual.window is not None else float(dual_remainders(dual)[level]))
    if L <= j:
        raise DomainError("level must exceed the start state")

    law = hitting_service.law_up(dual.dual, j, L)
    table = hitting_service.density_cdf(law, t)
    err = table.abs_error
    lower = np.clip(table.survival - err, 0.0, 1.0)
    if r_L == 0.0:
        return Bracket(t, lower, np.clip(table.survival + err, 0.0, 1.0))

    fractions = np.geomspace(1e-9, 1.0, 48)
    u = t[:, None] * fractions[None, :]
    shifted = hitting_service.density_cdf(law, (t[:, None] - u).ravel()).survival.reshape(u.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        candidates = shifted + err + np.where(u > 0, r_L / u, np.inf)
    upper = np.minimum(1.0, candidates.min(axis=1))
    return Bracket(t, lower, np.maximum(upper, lower))


def sst_cdf_from_state(
    rates: RateSpec,
    i: int,
    t,
    dual: DualModel | None = None,
    policy: TailPolicy | None = None,
) -> SSTDistribution:
    """P_i[tau <= t] = (H_i P_i[zeta* <= t] - H_{i-1} P_{i-1}[zeta* <= t]) / pi_i."""
    if i < 0:
        raise DomainError("i must be nonnegative")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    dual = dual or build_dual(rates, policy)

    G_i = dual_lifetime_survival(dual, i, t)
    if i == 0:
        lower, upper = 1.0 - G_i.upper, 1.0 - G_i.lower
        raw = 1.0 - G_i.mid
        tail = G_i.upper.copy()
        err = np.full(t.shape, 4 * _EPS)
    else:
        G_prev = dual_lifetime_survival(dual, i - 1, t)
        H_i, H_prev, p_i = dual.H[i], dual.H[i - 1], dual.pi[i]
        lower = (H_i * (1.0 - G_i.upper) - H_prev * (1.0 - G_prev.lower)) / p_i
        upper = (H_i * (1.0 - G_i.lower) - H_prev * (1.0 - G_prev.upper)) / p_i
        raw = (H_i * (1.0 - G_i.mid) - H_prev * (1.0 - G_prev.mid)) / p_i
        err = np.full(t.shape, 4 * _EPS * (H_i + H_prev) / p_i)
        lower, upper = lower - err, upper + err
        # F_i >= F_{i-1} pathwise, so P_i[tau > t] <= P_{i-1}[zeta* > t]
        tail = np.minimum(np.clip(1.0 - lower, 0.0, 1.0), G_prev.upper)

    clamped = bool(np.any((raw < -err) | (raw > 1.0 + err)))
    if clamped:
        logger.warning("SST CDF from %d left [0, 1]; clamped", i)
    certified = (upper - lower) <= CERTIFY_WIDTH
    if not certified.all():
        logger.warning(
            "SST CDF from %d: %d of %d points wider than %.0e",
            i, int((~certified).sum()), len(t), CERTIFY_WIDTH,
        )
    return SSTDistribution(
        i=i,
        t=t,
        cdf=Bracket(t, np.clip(lower, 0.0, 1.0), np.clip(upper, 0.0, 1.0)),
        tail=tail,
        raw=raw,
        certified=certified,
        clamped=clamped,
    )


def sst_mean_from_state(
    rates: RateSpec,
    i: int,
    dual: DualModel | None = None,
    policy: TailPolicy | None = None,
) -> float:
    """E_i tau = r_i - (H_{i-1}/pi_i) t_{i-1}, with r_j = E_j zeta* and t_k = E T*_{k,k+1}."""
    dual = dual or build_dual(rates, policy)
    r = dual_remainders(dual)
    if i >= len(r) - 1:
        raise DomainError(f"state {i} beyond the dual horizon")
    if i == 0:
        return float(r[0])
    terms, _ = _dual_terms(dual, i)
    mean = float(r[i] - dual.H[i - 1] / dual.pi[i] * terms[i - 1])
    slack = 1e-9 * r[0]
    if not (mean <= r[i - 1] + slack and r[i - 1] <= r[0] + slack):
        raise IdentityViolation(
            f"E_{i} tau={mean:.12g}, E_{i - 1} zeta*={r[i - 1]:.12g}, E_0 tau={r[0]:.12g} out of order"
        )
    return mean


# ---------------------------------------------------------------------------
# Moment and MGF bounds
# ---------------------------------------------------------------------------


def product_lower_bound(x: np.ndarray) -> tuple[float, float]:
    """(prod (1 - x), 1 - sum x) for x in [0, 1]; the first is never below the second."""
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)):
        raise DomainError("product bound needs 0 <= x <= 1")
    return float(np.exp(np.sum(np.log1p(-x)))), 1.0 - compensated_sum(x)


def _raw_moments(kappa: list[float], l_max: int) -> list[float]:
    mom = [1.0]
    for n in range(1, l_max + 1):
        mom.append(sum(comb(n - 1, k - 1) * kappa[k] * mom[n - k] for k in range(1, n + 1)))
    return mom


def _bracket_note(lhs_lo: float, lhs_hi: float, rhs_lo: float, rhs_hi: float) -> str:
    if lhs_hi <= rhs_lo:
        return "certified"
    if lhs_lo > rhs_hi:
        return "violated"
    return f"inconclusive: [{lhs_lo:.12g}, {lhs_hi:.12g}] against [{rhs_lo:.12g}, {rhs_hi:.12g}]"


def sst_moment_mgf_bounds(
    rates: RateSpec,
    l_max: int = 6,
    lam_grid=None,
    law: RationalExpLaw | None = None,
    policy: TailPolicy | None = None,
) -> MomentReport:
    """
    E e^{lam tau} <= 1/(1 - lam E tau) on the grid, and E tau^l <= l! (E tau)^l.

    Both sides are known as brackets, from the kept poles and the tail bound.
    A check passes only when the upper end of the left side sits below the
    lower end of the right side; overlapping brackets are reported as
    inconclusive. The variant with l! in the denominator is evaluated too and
    kept in `discrepancies`; it fails for every l >= 2.
    """
    law = law or sst_law(rates, policy=policy)
    lam_nu, tail = law.poles, law.tail_sum
    partial = compensated_sum(1.0 / lam_nu)
    mean_hi = partial + tail

    lam_grid = (
        np.linspace(0.05, 0.95, 19) / mean_hi
        if lam_grid is None
        else np.atleast_1d(np.asarray(lam_grid, dtype=float))
    )
    if np.any(lam_grid <= 0) or np.any(lam_grid * mean_hi >= 1.0):
        raise DomainError("lambda must lie in (0, 1/E_0 tau)")

    checks: list[BoundCheck] = []
    last = lam_nu[-1]
    for lam in lam_grid:
        x = lam / lam_nu
        prod, weier = product_lower_bound(x)
        mgf_lo = 1.0 / prod
        mgf_hi = mgf_lo * math.exp(lam * tail / (1.0 - lam / last))
        rhs_lo, rhs_hi = 1.0 / (1.0 - lam * partial), 1.0 / (1.0 - lam * mean_hi)
        checks.append(
            BoundCheck(
                f"mgf(lambda={lam:.6g})",
                mgf_hi,
                rhs_lo,
                mgf_hi <= rhs_lo * (1 + 1e-12),
                note=_bracket_note(mgf_lo, mgf_hi, rhs_lo, rhs_hi),
            )
        )
        checks.append(
            BoundCheck(f"weierstrass(lambda={lam:.6g})", prod, weier, prod >= weier - 1e-15)
        )

    # cumulants (m-1)! sum lambda^-m; the neglected part is at most (m-1)! tail^m
    kappa_lo = [0.0] + [
        factorial(m - 1) * compensated_sum(lam_nu ** -float(m)) for m in range(1, l_max + 1)
    ]
    kappa_hi = [0.0] + [
        k + factorial(m - 1) * tail**m for m, k in enumerate(kappa_lo[1:], start=1)
    ]
    mom_lo, mom_hi = _raw_moments(kappa_lo, l_max), _raw_moments(kappa_hi, l_max)

    discrepancies: list[BoundCheck] = []
    checks.append(
        BoundCheck(
            "E tau^1 = E tau",
            mom_hi[1],
            mean_hi,
            abs(mom_hi[1] - mean_hi) <= 1e-12 * mean_hi,
            note="first moment is the mean",
        )
    )
    for ell in range(2, l_max + 1):
        rhs_lo, rhs_hi = factorial(ell) * partial**ell, factorial(ell) * mean_hi**ell
        checks.append(
            BoundCheck(
                f"E tau^{ell} <= {ell}! (E tau)^{ell}",
                mom_hi[ell],
                rhs_lo,
                mom_hi[ell] <= rhs_lo * (1 + 1e-10),
                note=_bracket_note(mom_lo[ell], mom_hi[ell], rhs_lo, rhs_hi),
            )
        )
        reversed_form = mean_hi**ell / factorial(ell)
        discrepancies.append(
            BoundCheck(
                f"E tau^{ell} <= (E tau)^{ell} / {ell}!",
                mom_lo[ell],
                reversed_form,
                mom_lo[ell] <= reversed_form,
                note="factorial in the denominator; fails by Jensen",
            )
        )
    failed = [c.quantity for c in checks if not c.passed]
    if failed:
        logger.warning("SST bound checks failed: %s", ", ".join(failed))
    return MomentReport(mean=mean_hi, checks=checks, discrepancies=discrepancies)

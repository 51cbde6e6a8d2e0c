"""
Verification service: every cross-identity, run on the gallery, as a pass/fail matrix.

Design:
- each check is a small function returning (passed, value, reference, detail)
- service errors inside a check mark it failed; they never abort the suite,
  except where a refusal is exactly what the check expects
- hard checks are deterministic identities; Monte Carlo checks are soft
  (3-SE and KS acceptance fail at a known small rate)
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable

import numpy as np
from scipy.linalg import expm

from birthdeath.app.core.config import settings
from birthdeath.app.core.exceptions import AppException, PreconditionRefused
from birthdeath.app.models.rates import RateSpec, TailPolicy
from birthdeath.app.models.verification import CheckResult, VerificationReport
from birthdeath.app.services import (
    duality_service,
    gallery_service,
    hitting_service,
    rates_service,
    separation_service,
    simulation_service,
    spectral_service,
)

logger = logging.getLogger(__name__)

IDENTITY_RTOL = 1e-10
LIMIT_RTOL = 1e-6
MU_STAR_RTOL = 1e-12
EXPECTED_CLASS = {
    "unit": "Natural",
    "exit-geometric": "Exit",
    "entrance-geometric": "Entrance",
    "regular": "Regular",
}
EIGENTIME_CHAINS = ("unit", "table-ergodic-a", "table-ergodic-b")
LAPLACE_GRID = np.array([0.1, 0.5, 1.0, 2.0])
LIFETIME_GRID = np.array([0.5, 1.0, 2.0])

Outcome = tuple[bool, float | None, float | None, str]


def _rel(x: float, y: float) -> float:
    return abs(x - y) / max(abs(y), 1e-300)


def _run(name: str, chain: str, hard: bool, fn: Callable[[], Outcome]) -> CheckResult:
    started = time.perf_counter()
    try:
        passed, value, reference, detail = fn()
    except AppException as e:
        passed, value, reference, detail = False, None, None, f"{type(e).__name__}: {e.detail}"
    elapsed = time.perf_counter() - started
    level = logging.INFO if passed else logging.WARNING
    logger.log(level, "%-40s %-20s %s (%.2fs)", name, chain, "pass" if passed else "FAIL", elapsed)
    return CheckResult(name, chain, bool(passed), hard, value, reference, detail, elapsed)


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


def check_detailed_balance(rates: RateSpec, horizon: int = 200) -> Outcome:
    log_mu = rates_service.log_mu_array(rates, horizon)
    i = np.arange(horizon)
    lhs = log_mu[:-1] + rates.log_b(i)
    rhs = log_mu[1:] + rates.log_a(i + 1)
    err = float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(lhs))))
    return err <= 1e-12, err, 1e-12, "max relative error in mu_i b_i = mu_{i+1} a_{i+1}"


def check_classification(rates: RateSpec, expected: str, policy: TailPolicy) -> Outcome:
    report = rates_service.classify_boundary(rates, policy)
    ok = report.classification == expected and all(report.consistency.values())
    return ok, None, None, f"{report.classification} (expected {expected})"


def check_T_below_S(rates: RateSpec, policy: TailPolicy) -> Outcome:
    T = rates_service.series_T(rates, policy)
    S = rates_service.series_S(rates, 0, policy)
    if not (T.is_finite and S.is_finite):
        return True, None, None, "not applicable: T or S infinite"
    return T.value <= S.value + S.error_bound, T.value, S.value, "T <= S"


def check_absorbed_eigentime(rates: RateSpec, levels: tuple[int, ...]) -> Outcome:
    worst = 0.0
    for n in levels:
        spectrum = spectral_service.spectrum_of(spectral_service.build_absorbed_top(rates, n))
        worst = max(worst, _rel(spectrum.reciprocal_sum, hitting_service.mean_hitting_series(rates, 0, n)))
    return worst <= IDENTITY_RTOL, worst, IDENTITY_RTOL, f"levels {list(levels)}"


def check_reflected_eigentime(rates: RateSpec, grid: tuple[tuple[int, int], ...]) -> Outcome:
    worst = 0.0
    for n, N in grid:
        g = spectral_service.build_absorbed_bottom_reflected_top(rates, n, N)
        spectrum = spectral_service.spectrum_of(g)
        worst = max(worst, _rel(spectrum.reciprocal_sum, rates_service.reflected_S(rates, n, N)))
    return worst <= IDENTITY_RTOL, worst, IDENTITY_RTOL, f"(n, N) in {list(grid)}"


def check_eigenvectors(rates: RateSpec, n: int = 30) -> Outcome:
    g = spectral_service.build_absorbed_top(rates, n)
    spectrum = spectral_service.spectrum_of(g, vectors=True)
    residual = spectral_service.dirichlet_residual(g, spectrum)
    f = spectral_service.eigenfunction_recurrence(rates, float(spectrum.values[0]), n)
    vanish = abs(f[n]) / np.abs(f).max()
    ok = residual.passed and vanish <= 1e-8
    return ok, residual.max_residual, residual.tol, f"eigenfunction at the absorbing state {vanish:.2e}"


def check_exit_limit(rates: RateSpec, policy: TailPolicy) -> Outcome:
    R = rates_service.series_R(rates, policy)
    spectrum = spectral_service.limit_spectrum_exit(rates, policy=policy)
    err = _rel(spectrum.reciprocal_sum, R.value)
    steps = [spectral_service.levels_monotone(rates, [8, 16, 32, 64], nu) for nu in (1, 2, 3)]
    monotone = all(np.all(np.diff(v) <= 1e-12 * v[1:]) for v in steps)
    ok = spectrum.converged and err <= LIMIT_RTOL and monotone
    return ok, spectrum.reciprocal_sum, R.value, f"monotone in n: {monotone}"


def check_entrance_limit(rates: RateSpec, policy: TailPolicy) -> Outcome:
    S = rates_service.series_S(rates, 0, policy)
    spectrum = spectral_service.limit_spectrum_entrance(rates, 0, policy=policy)
    err = _rel(spectrum.reciprocal_sum, S.value)
    steps = [spectral_service.levels_monotone(rates, [8, 16, 32, 64], nu, n=0) for nu in (1, 2, 3)]
    monotone = all(np.all(np.diff(v) <= 1e-12 * v[1:]) for v in steps)
    ok = spectrum.converged and err <= LIMIT_RTOL and monotone
    return ok, spectrum.reciprocal_sum, S.value, f"monotone in N: {monotone}"


def check_intertwining(rates: RateSpec, dual, N: int = 50) -> Outcome:
    report = duality_service.intertwining_residual(rates, N, dual=dual)
    return report.relative < 1e-10, report.relative, 1e-10, f"last row {report.last_row:.3g}"


def check_mu_star(dual, count: int | None = None) -> Outcome:
    err = duality_service.mu_star_mismatch(dual, count)
    reach = dual.length if count is None else count
    return err <= MU_STAR_RTOL, err, MU_STAR_RTOL, f"dual-rate products vs closed form up to {reach}"


def check_sst_spectrum(rates: RateSpec, dual) -> Outcome:
    law = duality_service.sst_law(rates, dual=dual)
    worst = max(law.meta["spectrum_match"])
    ok = worst <= duality_service.SPECTRUM_MATCH
    return ok, worst, duality_service.SPECTRUM_MATCH, "first dual exit eigenvalues vs ergodic"


def check_beta(rates: RateSpec, window: int | None = None) -> Outcome:
    report = separation_service.beta_report(rates, window=window)
    ok = report.relative_spread <= separation_service.BETA_MATCH
    return ok, report.relative_spread, separation_service.BETA_MATCH, (
        f"spectral {report.spectral_sum:.12g}, T {report.T:.12g}, dual {report.dual_mean:.12g}"
    )


def check_two_state_beta(rates: RateSpec) -> Outcome:
    report = separation_service.beta_report(rates, window=1)
    expected = float(rates.a_values(1)[0] + rates.b_values(0)[0])
    err = _rel(report.beta_lower, expected)
    return err <= 1e-12, report.beta_lower, expected, "beta = a_1 + b_0 on two states"


def check_separation(rates: RateSpec, dual, N: int = 12) -> Outcome:
    t = np.geomspace(1e-2, 10.0, 20)
    curve = separation_service.separation_curve(rates, N, t, starts=np.arange(11), dual=dual)
    failed = [k for k, ok in curve.checks.items() if not ok]
    worst = float(np.max(curve.s - curve.sst_tail))
    return not failed, worst, separation_service.SST_SLACK, ", ".join(failed) or "all bounds hold"


def check_moment_bounds(rates: RateSpec, dual) -> Outcome:
    law = duality_service.sst_law(rates, dual=dual)
    report = duality_service.sst_moment_mgf_bounds(rates, law=law)
    flagged = not report.discrepancies[0].passed
    return report.passed and flagged, report.mean, None, (
        f"{sum(not c.passed for c in report.checks)} bound failures; "
        f"denominator form at l=2 violated: {flagged}"
    )


def check_kernel_oracle(rates: RateSpec, N: int = 20) -> Outcome:
    t = np.array([0.5, 3.0])
    P = separation_service.transient_kernels(rates, N, t)
    Q = spectral_service.build_reflected(rates, N).dense()
    err = max(float(np.abs(P[k] - expm(Q * tk)).max()) for k, tk in enumerate(t))
    return err <= 1e-10, err, 1e-10, "uniformization vs matrix exponential"


def check_refusals(rates: RateSpec) -> Outcome:
    refused = []
    for label, call in (
        ("dual", lambda: duality_service.build_dual(rates)),
        ("separation", lambda: separation_service.separation_curve(rates, 10, [1.0])),
        ("life time", lambda: simulation_service.sample_lifetime_exit(rates, n=10)),
    ):
        try:
            call()
        except PreconditionRefused:
            refused.append(label)
    return len(refused) == 3, None, None, f"refused: {', '.join(refused)}"


def check_keilson_mc(rates: RateSpec, n: int, samples: int, seed: int, threads: int | None) -> Outcome:
    law = hitting_service.law_up(rates, 0, n)
    sample = simulation_service.sample_hitting_times(rates, 0, n, samples, seed + n, threads=threads)
    est = simulation_service.empirical_laplace(sample, LAPLACE_GRID)
    exact = hitting_service.evaluate_laplace(law, LAPLACE_GRID).mid
    z = float(np.max(np.abs(est.value - exact) / np.maximum(est.se, 1e-300)))
    ks = simulation_service.ks_test(sample, law)
    return z <= 3.0 and ks.passed, z, 3.0, f"KS p-value {ks.pvalue:.3g}"


def check_strong_markov(rates: RateSpec, samples: int, seed: int, threads: int | None) -> Outcome:
    first = simulation_service.sample_hitting_times(rates, 0, 2, samples, seed + 101, threads=threads)
    second = simulation_service.sample_hitting_times(rates, 2, 5, samples, seed + 102, threads=threads)
    direct = simulation_service.sample_hitting_times(rates, 0, 5, samples, seed + 103, threads=threads)
    ks = simulation_service.two_sample_ks(first.values + second.values, direct.values)
    return ks.passed, ks.pvalue, ks.alpha, "T_{0,2} + T_{2,5} vs T_{0,5}"


def check_lifetime_mc(rates: RateSpec, samples: int, seed: int, threads: int | None) -> Outcome:
    R = rates_service.series_R(rates)
    sample = simulation_service.sample_lifetime_exit(rates, n=samples, seed=seed, threads=threads)
    z_mean = abs(sample.mean - R.value) <= 3 * sample.standard_error + sample.bias_bound
    law = hitting_service.law_lifetime_exit(rates)
    bracket = hitting_service.evaluate_laplace(law, LIFETIME_GRID)
    est = simulation_service.empirical_laplace(sample, LIFETIME_GRID)
    # T_{0,L} <= zeta, so the sampled transform sits above by at most s * bias
    inside = np.all(est.value >= bracket.lower - 3 * est.se) and np.all(
        est.value <= bracket.upper + LIFETIME_GRID * sample.bias_bound + 3 * est.se
    )
    levels = list(sample.level_means.values())
    monotone = all(x <= y for x, y in zip(levels, levels[1:], strict=False))
    return bool(z_mean and inside and monotone), sample.mean, R.value, (
        f"bias {sample.bias_bound:.3g}, level means increasing: {monotone}"
    )


# ---------------------------------------------------------------------------
# Suite
# ---------------------------------------------------------------------------


def run_suite(
    quick: bool = False,
    samples: int | None = None,
    seed: int | None = None,
    threads: int | None = None,
    policy: TailPolicy | None = None,
    monte_carlo: bool = True,
) -> VerificationReport:
    policy = policy or TailPolicy.from_settings()
    seed = settings.SEED if seed is None else seed
    samples = samples or (settings.MC_SAMPLES // 5 if quick else settings.MC_SAMPLES)
    chains = gallery_service.gallery()
    absorbed_levels = (2, 5, 20, 50) if quick else (2, 5, 10, 50, 100, 200)
    reflected_grid = ((0, 5), (2, 20), (10, 60)) if quick else ((0, 5), (2, 20), (10, 80), (50, 200))

    results: list[CheckResult] = []
    for name, rates in chains.items():
        results.append(_run("detailed balance", name, True, lambda r=rates: check_detailed_balance(r)))
        results.append(_run("T <= S", name, True, lambda r=rates: check_T_below_S(r, policy)))
    for name, expected in EXPECTED_CLASS.items():
        rates = chains[name]
        results.append(
            _run("classification", name, True, lambda r=rates, e=expected: check_classification(r, e, policy))
        )
    for name in EIGENTIME_CHAINS:
        rates = chains[name]
        results.append(
            _run("absorbed eigentime", name, True, lambda r=rates: check_absorbed_eigentime(r, absorbed_levels))
        )
        results.append(
            _run("reflected eigentime", name, True, lambda r=rates: check_reflected_eigentime(r, reflected_grid))
        )
    results.append(_run("eigenvectors", "unit", True, lambda: check_eigenvectors(chains["unit"])))

    exit_chain, entrance = chains["exit-geometric"], chains["entrance-geometric"]
    results.append(_run("exit limit spectrum", "exit-geometric", True, lambda: check_exit_limit(exit_chain, policy)))
    results.append(
        _run("entrance limit spectrum", "entrance-geometric", True, lambda: check_entrance_limit(entrance, policy))
    )

    try:
        dual = duality_service.build_dual(entrance, policy)
    except AppException as e:
        logger.warning("dual of the entrance chain failed: %s", e.detail)
        dual = None
    results.append(_run("dual is exit", "entrance-geometric", True, lambda: (dual is not None, None, None, "")))
    if dual is not None:
        results.append(_run("intertwining", "entrance-geometric", True, lambda: check_intertwining(entrance, dual)))
        results.append(_run("dual measure", "entrance-geometric", True, lambda: check_mu_star(dual, 50)))
        results.append(_run("sst spectrum", "entrance-geometric", True, lambda: check_sst_spectrum(entrance, dual)))
        results.append(_run("beta three-way", "entrance-geometric", True, lambda: check_beta(entrance)))
        results.append(_run("separation bounds", "entrance-geometric", True, lambda: check_separation(entrance, dual)))
        results.append(_run("moment and mgf bounds", "entrance-geometric", True, lambda: check_moment_bounds(entrance, dual)))
    for name in ("table-ergodic-a", "table-ergodic-b"):
        rates = chains[name]
        results.append(_run("beta three-way (window)", name, True, lambda r=rates: check_beta(r, window=20)))
        results.append(
            _run(
                "dual measure (window)",
                name,
                True,
                lambda r=rates: check_mu_star(duality_service.build_dual(r, policy, window=20)),
            )
        )
        results.append(_run("two-state beta", name, True, lambda r=rates: check_two_state_beta(r)))
        results.append(_run("kernel oracle", name, True, lambda r=rates: check_kernel_oracle(r)))
    results.append(_run("refusals", "unit", True, lambda: check_refusals(chains["unit"])))

    if monte_carlo:
        unit = chains["unit"]
        for n in (2, 5, 8):
            results.append(
                _run(f"keilson mc n={n}", "unit", False, lambda n=n: check_keilson_mc(unit, n, samples, seed, threads))
            )
        results.append(_run("strong markov", "unit", False, lambda: check_strong_markov(unit, samples, seed, threads)))
        results.append(
            _run("life-time mc", "exit-geometric", False, lambda: check_lifetime_mc(exit_chain, samples, seed, threads))
        )

    report = VerificationReport(results, quick=quick, samples=samples, seed=seed)
    logger.info(
        "verification: %d checks, %d failed (%d hard)",
        len(results),
        len(report.failures),
        sum(c.hard for c in report.failures),
    )
    return report

"""
Rates service: measures mu/pi/H and the boundary series R, S_n, T, u1.

Series are decided, never guessed:
- terms are built as log-terms (mu_i overflows doubles for exit chains)
- convergence is read off the closed-form far field (tables included), whose
  laws give every series term an exact asymptotic growth class
- the final window only has to confirm that class before its tail bound is used;
  when it does not, the verdict is "undetermined"
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from birthdeath.app.core.exceptions import (
    DomainError,
    IdentityViolation,
    NumericalError,
    PreconditionRefused,
    UndeterminedError,
)
from birthdeath.app.core.numerics import (
    compensated_cumsum,
    compensated_sum,
    log_cumsum,
    log_revcumsum,
    log_total,
    representable,
    safe_exp,
)
from birthdeath.app.models.rates import (
    BoundaryReport,
    ClosedFormLaw,
    ConstantLaw,
    GeometricLaw,
    MeasureTable,
    RateSpec,
    SeriesVerdict,
    TailPolicy,
    TailRule,
)
from birthdeath.app.schemas.reports import boundary_report_dict

logger = logging.getLogger(__name__)

EXACT = 1e-12


# ---------------------------------------------------------------------------
# Closed-form growth classes
# ---------------------------------------------------------------------------


def _zero(x: float) -> bool:
    return abs(x) <= EXACT


@dataclass(frozen=True)
class Growth:
    """log t_k = quad k^2 + klogk k log k + lin k + power log k + loglog log log k + O(1)."""

    quad: float = 0.0
    klogk: float = 0.0
    lin: float = 0.0
    power: float = 0.0
    loglog: float = 0.0

    @property
    def coefficients(self) -> tuple[float, ...]:
        raw = (self.quad, self.klogk, self.lin, self.power, self.loglog)
        return tuple(0.0 if _zero(x) else x for x in raw)

    def __add__(self, other: Growth) -> Growth:
        return Growth(*(x + y for x, y in zip(self.coefficients, other.coefficients)))

    def __neg__(self) -> Growth:
        return Growth(*(-x for x in self.coefficients))

    def __sub__(self, other: Growth) -> Growth:
        return self + (-other)

    @property
    def lead(self) -> float:
        """First nonzero of the exponential-scale coefficients, 0 for power-type terms."""
        for x in self.coefficients[:3]:
            if x != 0.0:
                return x
        return 0.0

    @property
    def summable(self) -> bool:
        if self.lead != 0.0:
            return self.lead < 0
        _, _, _, p, e = self.coefficients
        if not _zero(p + 1.0):
            return p < -1.0
        return e < -1.0

    def slower(self, other: Growth) -> Growth:
        return self if self.coefficients >= other.coefficients else other

    def describe(self) -> str:
        names = ("k^2", "k log k", "k", "log k", "log log k")
        parts = [f"{x:.6g}*{n}" for x, n in zip(self.coefficients, names) if x != 0.0]
        return "log t ~ " + (" + ".join(parts) if parts else "const")


def law_growth(law: ClosedFormLaw) -> Growth:
    if isinstance(law, ConstantLaw):
        return Growth()
    if isinstance(law, GeometricLaw):
        return Growth(lin=math.log(law.ratio))
    return Growth(power=law.exponent)


def mu_growth(cf: TailRule) -> Growth:
    """Growth of mu_k = prod_{j<k} b_j / a_{j+1} under the closed-form laws."""
    a, b = cf.a, cf.b
    if cf.family == "constant":
        return Growth(lin=math.log(b.value / a.value))
    if cf.family == "geometric":
        theta = math.log(b.ratio / a.ratio)
        return Growth(quad=theta / 2, lin=math.log(b.base / (a.base * a.ratio)) - theta / 2)
    p, q = a.exponent, b.exponent
    c = math.log(b.coef / a.coef)
    if not _zero(q - p):
        return Growth(klogk=q - p, lin=c - (q - p))
    # b_j / a_{j+1} = e^c (1 - p (1 + shift_a - shift_b) / j + O(j^-2))
    return Growth(lin=c, power=-p * (1.0 + a.shift - b.shift))


def series_growth(rates: RateSpec) -> dict[str, Growth | None]:
    """Growth class of the terms of every boundary series; None where mu diverges."""
    cf = rates.closed_form()
    g_mu, g_a, g_b = mu_growth(cf), law_growth(cf.a), law_growth(cf.b)
    lead, p = g_mu.lead, g_mu.power

    # sum_{j<=k} mu_j / mu_k tends to a constant unless mu is power-type
    if lead > 0:
        R = -g_b
    elif lead < 0 or (p < -1.0 and not _zero(p + 1.0)):
        R = -(g_mu + g_b)
    elif _zero(p + 1.0):
        R = Growth(power=1.0, loglog=1.0) - g_b
    else:
        R = Growth(power=1.0) - g_b

    S = None
    if g_mu.summable:
        # sum_{j>k} mu_j / mu_k ~ const * b_k / a_{k+1}, or ~ k for power-type mu
        S = -g_a if lead < 0 else Growth(power=1.0) - g_b
    scale = -(g_mu + g_b)
    return {"mu": g_mu, "R": R, "S": S, "T": S, "scale": scale, "u1": scale.slower(g_mu)}


# ---------------------------------------------------------------------------
# Verdict machinery
# ---------------------------------------------------------------------------


def _verdict(
    name: str,
    log_terms: np.ndarray,
    growth: Growth,
    policy: TailPolicy,
    start: int = 0,
    extra_error: float = 0.0,
) -> SeriesVerdict:
    """Decide a positive series from its growth class; bound the tail on the final window."""
    n = len(log_terms)
    last = start + n - 1
    rule = f"closed-form {growth.describe()}"
    if not growth.summable:
        return SeriesVerdict(
            name, "infinite", math.inf, math.nan, rule,
            f"log t_{last}={float(log_terms[-1]):.6g}", log_terms, start,
        )

    w = min(policy.window, n - 1)
    if w < 2:
        return SeriesVerdict(
            name, "undetermined", math.nan, math.nan, "too-few-terms", f"terms={n}", log_terms, start
        )
    window = log_terms[-(w + 1):]
    steps = np.diff(window)
    half = steps[w // 2:]
    t_last = float(window[-1])

    quad, klogk = growth.coefficients[:2]
    if quad < 0 or (quad == 0.0 and klogk < 0):
        # ratios fall to zero monotonically; the last one caps every later one
        scale = max(1.0, float(np.abs(steps).max()))
        ok = bool(steps[-1] < 0 and np.all(np.diff(steps) <= 1e-9 * scale))
        log_r = float(steps[-1])
        cert = f"ratio<={math.exp(log_r):.6g}"
    elif growth.lead < 0:
        # ratios tend to e^lin; e^(lin (1 - delta)) caps them once the window agrees
        log_r = growth.lin * (1.0 - policy.delta)
        ok = bool(np.all(half <= log_r))
        cert = f"ratio<={math.exp(log_r):.6g}"
    elif growth.power < -1.0 and not _zero(growth.power + 1.0):
        # t_k (k+1)^(-q) nonincreasing, q a delta-fraction of the way from the exponent to -1
        q = growth.power + policy.delta * (-1.0 - growth.power)
        k = np.arange(last - w, last + 1, dtype=float) + 1.0
        adjusted = np.diff(window - q * np.log(k))[w // 2:]
        ok = bool(np.all(adjusted <= 1e-12 * max(1.0, abs(t_last))))
        log_r = None
        cert = f"k^{q:.6g} majorant"
    else:
        ok, log_r, cert = False, None, "no tail majorant"

    if not ok:
        logger.warning("%s: window at %d does not yet follow %s", name, last, growth.describe())
        return SeriesVerdict(
            name, "undetermined", float(np.sum(safe_exp(log_terms))), math.nan,
            f"{rule}; horizon short", cert, log_terms, start,
        )
    if log_r is not None:
        tail = float(safe_exp(t_last + log_r - math.log(-math.expm1(log_r))))
    else:
        # sum_{k>N} (k+1)^q <= (N+1)^(q+1) / (-q-1)
        tail = float(safe_exp(t_last + math.log(last + 1.0) - math.log(-q - 1.0)))
    return _finite(name, log_terms, tail + extra_error, f"{rule}; {cert}", start)


def _finite(name: str, log_terms: np.ndarray, tail: float, rule: str, start: int) -> SeriesVerdict:
    value = compensated_sum(safe_exp(log_terms))
    if not math.isfinite(value):
        raise NumericalError(f"{name}: convergent series overflows doubles")
    return SeriesVerdict(name, "finite", value, tail, rule, f"tail<={tail:.3g}", log_terms, start)


def _infinite_mass(name: str, mass: SeriesVerdict) -> SeriesVerdict:
    if mass.is_infinite:
        return SeriesVerdict(
            name, "infinite", math.inf, math.nan, "mass-infinite", mass.rule, mass.log_terms, 0
        )
    return SeriesVerdict(
        name, "undetermined", math.nan, math.nan, "mass-undetermined", mass.rule, mass.log_terms, 0
    )


# ---------------------------------------------------------------------------
# Shared arrays
# ---------------------------------------------------------------------------


@dataclass
class _Context:
    """Log-arrays on 0..2M; series use 0..M, inner tails see the whole range."""

    M: int
    log_mu: np.ndarray
    log_a: np.ndarray  # log_a[i] = log a_i, log_a[0] = nan
    log_b: np.ndarray
    log_cum: np.ndarray
    mass: SeriesVerdict  # mu over 0..2M
    log_inner_tail: np.ndarray | None  # log sum_{i>j} mu_i for j in 0..M
    growth: dict[str, Growth | None]


def log_mu_array(rates: RateSpec, horizon: int) -> np.ndarray:
    idx = np.arange(horizon)
    steps = rates.log_b(idx) - rates.log_a(idx + 1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def _context(rates: RateSpec, policy: TailPolicy) -> _Context:
    M = max(policy.horizon, rates.far_field_start + 4 * policy.window)
    size = 2 * M + 1
    idx = np.arange(size)
    log_b = rates.log_b(idx)
    log_a = np.concatenate([[math.nan], rates.log_a(idx[1:])])
    log_mu = np.concatenate([[0.0], np.cumsum(log_b[:-1] - log_a[1:])])
    growth = series_growth(rates)
    mass = _verdict("mu", log_mu, growth["mu"], policy)

    inner = None
    if mass.is_finite:
        log_eps = math.log(mass.error_bound) if mass.error_bound > 0 else -math.inf
        suffix = log_revcumsum(log_mu[1:])  # suffix[j] = log sum_{i>j} mu_i
        inner = np.logaddexp(suffix[: M + 1], log_eps)
    return _Context(M, log_mu, log_a, log_b, log_cumsum(log_mu), mass, inner, growth)


def _inner_excess(ctx: _Context, lo: int) -> float:
    """Bound on what the mass-tail floor adds to S-type terms j >= lo."""
    if ctx.mass.error_bound <= 0:
        return 0.0
    j = np.arange(lo, ctx.M + 1)
    logs = math.log(ctx.mass.error_bound) - ctx.log_mu[j] - ctx.log_b[j]
    return float(safe_exp(log_total(logs)))


# ---------------------------------------------------------------------------
# Public series
# ---------------------------------------------------------------------------


def series_mu(rates: RateSpec, policy: TailPolicy | None = None) -> SeriesVerdict:
    policy = policy or TailPolicy.from_settings()
    ctx = _context(rates, policy)
    return _verdict("mu", ctx.log_mu[: ctx.M + 1], ctx.growth["mu"], policy)


def _R(ctx: _Context, policy: TailPolicy) -> SeriesVerdict:
    m = ctx.M + 1
    log_terms = ctx.log_cum[:m] - ctx.log_mu[:m] - ctx.log_b[:m]
    return _verdict("R", log_terms, ctx.growth["R"], policy)


def _S(ctx: _Context, policy: TailPolicy, n: int) -> SeriesVerdict:
    name = "S" if n == 0 else f"S_{n}"
    if ctx.log_inner_tail is None:
        return _infinite_mass(name, ctx.mass)
    j = np.arange(n, ctx.M + 1)
    log_terms = ctx.log_inner_tail[j] - ctx.log_mu[j] - ctx.log_b[j]
    return _verdict(
        name, log_terms, ctx.growth["S"], policy, start=n, extra_error=_inner_excess(ctx, n)
    )


def _T(ctx: _Context, policy: TailPolicy) -> SeriesVerdict:
    if ctx.log_inner_tail is None:
        return _infinite_mass("T", ctx.mass)
    m = ctx.M + 1
    log_total_mass = math.log(ctx.mass.value + ctx.mass.error_bound)
    log_terms = (
        ctx.log_cum[:m] + ctx.log_inner_tail - ctx.log_mu[:m] - ctx.log_b[:m] - log_total_mass
    )
    return _verdict("T", log_terms, ctx.growth["T"], policy, extra_error=_inner_excess(ctx, 0))


def _scale(ctx: _Context, policy: TailPolicy) -> SeriesVerdict:
    m = ctx.M + 1
    return _verdict("scale", -ctx.log_mu[:m] - ctx.log_b[:m], ctx.growth["scale"], policy)


def _u1(ctx: _Context, policy: TailPolicy) -> SeriesVerdict:
    m = ctx.M + 1
    log_terms = np.logaddexp(-ctx.log_mu[:m] - ctx.log_b[:m], ctx.log_mu[:m])
    return _verdict("u1", log_terms, ctx.growth["u1"], policy)


def series_R(rates: RateSpec, policy: TailPolicy | None = None) -> SeriesVerdict:
    """R = sum_i (1/(mu_i b_i)) sum_{j<=i} mu_j."""
    policy = policy or TailPolicy.from_settings()
    return _R(_context(rates, policy), policy)


def series_S(rates: RateSpec, n: int = 0, policy: TailPolicy | None = None) -> SeriesVerdict:
    """S_n = sum_{j>=n} (1/(pi_j b_j)) sum_{i>j} pi_i; infinite whenever mu is."""
    policy = policy or TailPolicy.from_settings()
    if n < 0:
        raise DomainError("n must be nonnegative")
    ctx = _context(rates, policy)
    if n > ctx.M - policy.window:
        raise DomainError(f"n={n} too close to the horizon {ctx.M}")
    return _S(ctx, policy, n)


def series_T(rates: RateSpec, policy: TailPolicy | None = None) -> SeriesVerdict:
    """Average hitting time of 0 from stationarity; needs mu finite."""
    policy = policy or TailPolicy.from_settings()
    return _T(_context(rates, policy), policy)


def series_u1(rates: RateSpec, policy: TailPolicy | None = None) -> SeriesVerdict:
    policy = policy or TailPolicy.from_settings()
    return _u1(_context(rates, policy), policy)


def series_scale(rates: RateSpec, policy: TailPolicy | None = None) -> SeriesVerdict:
    policy = policy or TailPolicy.from_settings()
    return _scale(_context(rates, policy), policy)


def classify_boundary(rates: RateSpec, policy: TailPolicy | None = None) -> BoundaryReport:
    policy = policy or TailPolicy.from_settings()
    ctx = _context(rates, policy)
    R, S, T = _R(ctx, policy), _S(ctx, policy, 0), _T(ctx, policy)
    u1, scale = _u1(ctx, policy), _scale(ctx, policy)
    mu = _verdict("mu", ctx.log_mu[: ctx.M + 1], ctx.growth["mu"], policy)

    if "undetermined" in (R.verdict, S.verdict):
        cls = "Undetermined"
    elif R.is_finite and S.is_finite:
        cls = "Regular"
    elif R.is_finite:
        cls = "Exit"
    elif S.is_finite:
        cls = "Entrance"
    else:
        cls = "Natural"

    consistency = {
        "S finite => mu finite": not S.is_finite or mu.is_finite,
        "R finite => scale finite": not R.is_finite or scale.is_finite,
        "T <= S": not (T.is_finite and S.is_finite) or T.value <= S.value + S.error_bound,
    }
    report = BoundaryReport(
        R=R,
        S=S,
        T=T,
        u1=u1,
        scale=scale,
        mu=mu,
        classification=cls,
        dirichlet_unique=None if u1.verdict == "undetermined" else u1.is_infinite,
        consistency=consistency,
    )
    failed = [k for k, ok in consistency.items() if not ok]
    if failed:
        raise IdentityViolation(f"boundary certificates inconsistent: {', '.join(failed)}")
    logger.info(
        "classified %s: %s (R %s, S %s)",
        rates.description or rates.family, cls, R.verdict, S.verdict,
    )
    return report


def build_measures(
    rates: RateSpec, horizon: int, policy: TailPolicy | None = None
) -> MeasureTable:
    """mu_i for i <= horizon; pi and H only when the mass series converges."""
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    policy = policy or TailPolicy.from_settings()
    ctx = _context(rates, policy)
    total = _verdict("mu", ctx.log_mu[: ctx.M + 1], ctx.growth["mu"], policy)

    log_mu = log_mu_array(rates, horizon)
    mu = None
    if representable(float(log_mu.max())):
        mu = safe_exp(log_mu)
    else:
        logger.warning("mu overflows doubles before %d; keeping log-domain values only", horizon)

    pi = H = tail = None
    if total.is_finite:
        log_Z = math.log(total.value)
        ext = log_mu_array(rates, max(horizon, ctx.M)) - log_Z
        pi_ext = safe_exp(ext)
        pi = pi_ext[: horizon + 1]
        H = compensated_cumsum(pi)
        rev = safe_exp(log_revcumsum(ext))
        far = total.error_bound / total.value
        tail = np.append(rev[1 : horizon + 1], rev[horizon + 1] if len(rev) > horizon + 1 else 0.0)
        tail = tail + far
    return MeasureTable(
        log_mu=log_mu, mu=mu, mu_total=total, pi=pi, H=H, tail=tail, horizon=horizon
    )


# ---------------------------------------------------------------------------
# Finite-window sums (the eigentime oracles)
# ---------------------------------------------------------------------------


def partial_R(rates: RateSpec, n: int) -> float:
    """sum_{k<n} (1/(mu_k b_k)) sum_{j<=k} mu_j, the mean of T_{0,n}."""
    log_mu = log_mu_array(rates, max(n - 1, 1))[:n]
    log_b = rates.log_b(np.arange(n))
    return compensated_sum(safe_exp(log_cumsum(log_mu) - log_mu - log_b))


def reflected_S(rates: RateSpec, n: int, N: int) -> float:
    """sum_{j=n}^{N} (1/(pi_j b_j)) sum_{i=j+1}^{N} pi_i on the window reflected at N."""
    if not 0 <= n < N:
        raise DomainError("need 0 <= n < N")
    log_mu = log_mu_array(rates, N)
    j = np.arange(n, N)
    suffix = log_revcumsum(log_mu)  # suffix[k] = log sum_{i>=k}^{N} mu_i
    log_terms = suffix[j + 1] - log_mu[j] - rates.log_b(j)
    return compensated_sum(safe_exp(log_terms))


def reflected_T(rates: RateSpec, N: int) -> float:
    """Average hitting time of 0 for the chain reflected at N."""
    if N < 1:
        raise DomainError("need N >= 1")
    log_mu = log_mu_array(rates, N)
    log_Z = log_total(log_mu)
    k = np.arange(N)
    log_terms = (
        log_cumsum(log_mu)[k] + log_revcumsum(log_mu)[k + 1] - log_mu[k] - rates.log_b(k) - log_Z
    )
    return compensated_sum(safe_exp(log_terms))


def window_measures(rates: RateSpec, N: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(pi, H, 1 - H) for the chain reflected at N, H_N = 1."""
    log_mu = log_mu_array(rates, N)
    log_pi = log_mu - log_total(log_mu)
    pi = safe_exp(log_pi)
    H = compensated_cumsum(pi)
    rev = safe_exp(log_revcumsum(log_pi))
    tail = np.append(rev[1:], 0.0)
    H[-1] = 1.0
    return pi, H, tail


def require_determined(report: BoundaryReport, purpose: str = "") -> BoundaryReport:
    """Raise UndeterminedError, carrying the report, when a verdict was inconclusive."""
    if report.classification == "Undetermined":
        undecided = [v.name for v in (report.R, report.S) if v.verdict == "undetermined"]
        raise UndeterminedError(
            {
                "message": f"{purpose or 'classification'}: {', '.join(undecided)} inconclusive "
                "at the configured horizon",
                "report": boundary_report_dict(report),
            }
        )
    return report


def require_class(
    rates: RateSpec, expected: str, policy: TailPolicy | None = None, purpose: str = ""
) -> BoundaryReport:
    """Classify and refuse unless the boundary is `expected`."""
    report = require_determined(classify_boundary(rates, policy), purpose)
    if report.classification != expected:
        logger.warning(
            "%s refused: boundary is %s, needs %s", purpose or "operation",
            report.classification, expected,
        )
        raise PreconditionRefused(
            {
                "message": f"{purpose or 'operation'} needs an {expected.lower()} boundary, "
                f"chain is {report.classification}",
                "report": boundary_report_dict(report),
            }
        )
    return report

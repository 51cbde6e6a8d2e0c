"""
JSON-ready views of the numerical results.

Every top-level report carries ``"schema": 1``. Floats that are not finite
never reach the encoder: infinite series become {"verdict": "infinite", ...},
other infinities the string "inf", NaN becomes null.
"""

from __future__ import annotations

import math
from typing import Any

import numpy as np

from birthdeath.app.models.duality import (
    BoundCheck,
    DualModel,
    IntertwiningReport,
    MomentReport,
    SSTDistribution,
)
from birthdeath.app.models.laws import Bracket, DensityTable, Moments, RationalExpLaw
from birthdeath.app.models.rates import BoundaryReport, MeasureTable, SeriesVerdict
from birthdeath.app.models.sampling import HittingSample, KSResult, LaplaceEstimate
from birthdeath.app.models.separation import BetaReport, SeparationReport
from birthdeath.app.models.spectrum import ResidualReport, Spectrum
from birthdeath.app.models.verification import VerificationReport

SCHEMA_VERSION = 1


def num(x: float | None) -> float | str | None:
    if x is None:
        return None
    x = float(x)
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def nums(values: np.ndarray | None) -> list | None:
    if values is None:
        return None
    return [num(v) for v in np.asarray(values, dtype=float).ravel()]


def index(x: float) -> int | str:
    return "inf" if math.isinf(x) else int(x)


def series_dict(v: SeriesVerdict) -> dict[str, Any]:
    if v.is_infinite:
        return {"name": v.name, "verdict": "infinite", "witness": v.witness, "rule": v.rule}
    return {
        "name": v.name,
        "verdict": v.verdict,
        "value": num(v.value),
        "error_bound": num(v.error_bound),
        "rule": v.rule,
        "witness": v.witness,
        "terms": len(v.log_terms),
    }


def boundary_report_dict(report: BoundaryReport) -> dict[str, Any]:
    series = [report.R, report.S, report.T, report.u1, report.scale, report.mu]
    return {
        "schema": SCHEMA_VERSION,
        "class": report.classification,
        "R": series_dict(report.R),
        "S": series_dict(report.S),
        "T": series_dict(report.T),
        "u1": series_dict(report.u1),
        "dirichlet_unique": report.dirichlet_unique,
        "certificates": [
            {"series": v.name, "verdict": v.verdict, "rule": v.rule, "witness": v.witness}
            for v in series
        ],
        "consistency": report.consistency,
    }


def measures_dict(m: MeasureTable) -> dict[str, Any]:
    return {
        "schema": SCHEMA_VERSION,
        "horizon": m.horizon,
        "log_mu": nums(m.log_mu),
        "mu": nums(m.mu),
        "mu_total": series_dict(m.mu_total),
        "pi": nums(m.pi),
        "H": nums(m.H),
    }


def spectrum_dict(s: Spectrum) -> dict[str, Any]:
    return {
        "schema": SCHEMA_VERSION,
        "kind": s.kind,
        "level": list(s.level),
        "values": nums(s.values),
        "reciprocal_sum": num(s.reciprocal_sum),
        "tail_bound": num(s.tail_bound),
        "converged": s.converged,
        "partial": s.partial,
    }


def residual_dict(r: ResidualReport) -> dict[str, Any]:
    return {
        "schema": SCHEMA_VERSION,
        "values": nums(r.values),
        "residuals": nums(r.residuals),
        "tol": r.tol,
        "passed": r.passed,
    }


def law_dict(law: RationalExpLaw) -> dict[str, Any]:
    return {
        "schema": SCHEMA_VERSION,
        "start": index(law.start),
        "target": index(law.target),
        "poles": nums(law.poles),
        "zeros": nums(law.zeros),
        "tail_sum": num(law.tail_sum),
        "zero_tail_sum": num(law.zero_tail_sum),
        "provenance": law.provenance,
    }


def bracket_rows(b: Bracket, key: str = "s") -> list[dict[str, Any]]:
    return [
        {key: num(x), "value": num(0.5 * (lo + hi)), "lower": num(lo), "upper": num(hi)}
        for x, lo, hi in zip(b.grid, b.lower, b.upper, strict=True)
    ]


def density_rows(d: DensityTable) -> list[dict[str, Any]]:
    return [
        {"t": num(t), "density": num(f), "cdf": num(F), "survival": num(G)}
        for t, f, F, G in zip(d.t, d.density, d.cdf, d.survival, strict=True)
    ]


def moments_dict(m: Moments) -> dict[str, Any]:
    return {
        "mean": num(m.mean),
        "variance": num(m.variance),
        "mean_bracket": [num(x) for x in m.mean_bracket],
        "variance_bracket": [num(x) for x in m.variance_bracket],
    }


def dual_dict(d: DualModel) -> dict[str, Any]:
    return {
        "schema": SCHEMA_VERSION,
        "length": d.length,
        "window": d.window,
        "a_star": nums(d.a_star),
        "b_star": nums(d.b_star),
        "log_mu_star": nums(d.log_mu_star),
        "far_field": d.dual.tail.model_dump() if d.dual.tail else None,
        "R_star": series_dict(d.R_star) if d.R_star else None,
        "class": d.report.classification if d.report else None,
    }


def intertwining_dict(r: IntertwiningReport) -> dict[str, Any]:
    return {
        "schema": SCHEMA_VERSION,
        "N": r.N,
        "interior": r.interior,
        "last_row": r.last_row,
        "scale": r.scale,
        "relative": r.relative,
    }


def check_dict(c: BoundCheck) -> dict[str, Any]:
    return {"quantity": c.quantity, "lhs": num(c.lhs), "rhs": num(c.rhs), "pass": c.passed, "note": c.note}


def moment_report_dict(r: MomentReport) -> dict[str, Any]:
    return {
        "schema": SCHEMA_VERSION,
        "mean": num(r.mean),
        "checks": [check_dict(c) for c in r.checks],
        "discrepancies": [check_dict(c) for c in r.discrepancies],
        "passed": r.passed,
    }


def sst_cdf_rows(d: SSTDistribution) -> list[dict[str, Any]]:
    return [
        {"i": d.i, "t": num(t), "lower": num(lo), "upper": num(hi), "tail": num(g), "certified": bool(c)}
        for t, lo, hi, g, c in zip(d.t, d.cdf.lower, d.cdf.upper, d.tail, d.certified, strict=True)
    ]


def separation_rows(r: SeparationReport) -> list[dict[str, Any]]:
    bound = r.sst_tail.max(axis=0)
    return [
        {
            "t": num(t),
            "S": num(s),
            "bound": num(b),
            "dual_bound": num(d),
            "markov": num(m),
        }
        for t, s, b, d, m in zip(r.t, r.sup_s, bound, r.dual_tail, r.markov_envelope, strict=True)
    ]


def separation_dict(r: SeparationReport) -> dict[str, Any]:
    return {
        "schema": SCHEMA_VERSION,
        "N": r.N,
        "tail_mass": r.tail_mass,
        "beta_lower": r.beta_lower,
        "starts": [int(i) for i in r.starts],
        "certificates": r.checks,
        "discrepancies": [check_dict(c) for c in r.discrepancies],
        "curve": separation_rows(r),
    }


def beta_dict(b: BetaReport) -> dict[str, Any]:
    return {
        "schema": SCHEMA_VERSION,
        "beta_lower": b.beta_lower,
        "T": b.T,
        "spectral_sum": b.spectral_sum,
        "dual_mean": b.dual_mean,
        "window": b.window,
        "relative_spread": b.relative_spread,
        "fitted_slope": num(b.fitted_slope),
        "spectrum_size": b.spectrum_size,
    }


def sample_dict(s: HittingSample) -> dict[str, Any]:
    return {
        "schema": SCHEMA_VERSION,
        "start": s.start,
        "target": index(s.target),
        "n_samples": s.n_samples,
        "censored": s.censored_count,
        "seed": s.seed,
        "mean": num(s.mean),
        "standard_error": num(s.standard_error),
        "bias_bound": s.bias_bound,
        "level": s.level,
        "level_means": {str(k): v for k, v in s.level_means.items()},
    }


def laplace_rows(e: LaplaceEstimate) -> list[dict[str, Any]]:
    return [
        {"s": num(s), "value": num(v), "se": num(se), "lower": num(lo), "upper": num(hi)}
        for s, v, se, lo, hi in zip(e.s, e.value, e.se, e.lower, e.upper, strict=True)
    ]


def ks_dict(k: KSResult) -> dict[str, Any]:
    return {"statistic": k.statistic, "pvalue": k.pvalue, "alpha": k.alpha, "n": k.n, "pass": k.passed}


def verification_dict(r: VerificationReport) -> dict[str, Any]:
    return {
        "schema": SCHEMA_VERSION,
        "passed": r.passed,
        "quick": r.quick,
        "samples": r.samples,
        "seed": r.seed,
        "matrix": r.matrix(),
        "checks": [
            {
                "name": c.name,
                "chain": c.chain,
                "pass": c.passed,
                "hard": c.hard,
                "value": num(c.value),
                "reference": num(c.reference),
                "detail": c.detail,
                "seconds": round(c.seconds, 3),
            }
            for c in r.checks
        ],
    }

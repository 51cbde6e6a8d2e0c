"""
birthdeath command line.

    birthdeath [--config PATH] [--chain NAME] [--seed U64] [--threads N]
               [--out DIR] [--format json|csv] [--log-level LEVEL] COMMAND ...

Exit codes: 0 ok, 2 configuration error, 3 undetermined, 4 precondition
refused, 5 identity violation or numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from birthdeath.app.core.config import settings
from birthdeath.app.core.exceptions import AppException, ConfigError, DomainError
from birthdeath.app.models.rates import RateSpec
from birthdeath.app.schemas import reports
from birthdeath.app.schemas.run_config import RunConfig
from birthdeath.app.services import (
    duality_service,
    gallery_service,
    hitting_service,
    rates_service,
    separation_service,
    simulation_service,
    spectral_service,
    verification_service,
)

logger = logging.getLogger("birthdeath")

Tables = dict[str, list[dict[str, Any]]]
Result = tuple[dict[str, Any], Tables, int]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_classify(cfg: RunConfig, rates: RateSpec) -> Result:
    report = rates_service.require_determined(rates_service.classify_boundary(rates, cfg.policy))
    return reports.boundary_report_dict(report), {}, 0


def cmd_spectrum(cfg: RunConfig, rates: RateSpec) -> Result:
    tol, count = cfg.spectral_tol, cfg.count
    if cfg.kind == "exit":
        spectrum = spectral_service.limit_spectrum_exit(rates, count, tol, cfg.policy)
    elif cfg.kind == "entrance":
        n = _finite_state(cfg.n, "n") if cfg.n is not None else 0
        spectrum = spectral_service.limit_spectrum_entrance(rates, n, count, tol, cfg.policy)
    elif cfg.kind == "ergodic":
        spectrum = spectral_service.ergodic_spectrum(rates, count, tol, cfg.policy)
    elif cfg.kind == "absorbed":
        if cfg.n is None:
            raise ConfigError("--kind absorbed needs --n")
        g = spectral_service.build_absorbed_top(rates, _finite_state(cfg.n, "n"))
        spectrum = spectral_service.spectrum_of(g, count)
    else:
        if cfg.N is None:
            raise ConfigError("--kind reflected needs --N")
        if cfg.n is None:
            g = spectral_service.build_reflected(rates, cfg.N)
        else:
            g = spectral_service.build_absorbed_bottom_reflected_top(rates, _finite_state(cfg.n, "n"), cfg.N)
        spectrum = spectral_service.spectrum_of(g, count)
    doc = reports.spectrum_dict(spectrum)
    rows = [{"nu": k + 1, "lambda": reports.num(v)} for k, v in enumerate(spectrum.values)]
    return doc, {"eigenvalues": rows}, 0


def cmd_hitting(cfg: RunConfig, rates: RateSpec) -> Result:
    if cfg.n is None:
        raise ConfigError("hitting needs a target --n")
    law = hitting_service.hitting_law(rates, cfg.i, cfg.n, cfg.N, cfg.spectral_tol, cfg.policy)
    transform = hitting_service.evaluate_laplace(law, cfg.s)
    stats = hitting_service.moments(law)
    tables: Tables = {"transform": reports.bracket_rows(transform)}
    doc = {
        "schema": reports.SCHEMA_VERSION,
        "law": reports.law_dict(law),
        "moments": reports.moments_dict(stats),
        "transform": tables["transform"],
    }
    if law.finite:
        t = cfg.t if cfg.t is not None else np.linspace(0.0, 5.0 * stats.mean, 51)
        table = hitting_service.density_cdf(law, t)
        tables["density"] = reports.density_rows(table)
        doc["density"] = tables["density"]
        doc["density_flags"] = {
            "repeated_poles": table.repeated_poles,
            "negative": table.negative,
            "abs_error": table.abs_error,
        }
    return doc, tables, 0


def _time_grid(cfg: RunConfig) -> np.ndarray:
    return np.asarray(cfg.t) if cfg.t is not None else np.geomspace(1e-2, 10.0, 20)


def cmd_sst(cfg: RunConfig, rates: RateSpec) -> Result:
    dual = duality_service.build_dual(rates, cfg.policy, window=cfg.N)
    law = duality_service.sst_law(rates, cfg.spectral_tol, cfg.policy, dual=dual)
    t = _time_grid(cfg)
    cdf_rows = []
    for i in cfg.starts or [0]:
        cdf_rows += reports.sst_cdf_rows(duality_service.sst_cdf_from_state(rates, i, t, dual=dual))
    bounds = duality_service.sst_moment_mgf_bounds(rates, law=law, policy=cfg.policy)
    tables: Tables = {
        "transform": reports.bracket_rows(hitting_service.evaluate_laplace(law, cfg.s)),
        "cdf": cdf_rows,
    }
    doc = {
        "schema": reports.SCHEMA_VERSION,
        "law": reports.law_dict(law),
        "dual": reports.dual_dict(dual),
        "mean": reports.num(duality_service.dual_remainders(dual)[0]),
        "bounds": reports.moment_report_dict(bounds),
        **tables,
    }
    return doc, tables, 0


def _default_window(rates: RateSpec, cfg: RunConfig) -> int:
    """Smallest N leaving stationary mass below SEPARATION_TAIL_MASS outside {0..N}."""
    measures = rates_service.build_measures(rates, 200, cfg.policy)
    if measures.tail is None:
        return 20
    ok = np.nonzero(measures.tail <= settings.SEPARATION_TAIL_MASS)[0]
    return max(int(ok[0]) if len(ok) else 200, 10)


def cmd_separation(cfg: RunConfig, rates: RateSpec) -> Result:
    rates_service.require_class(rates, "Entrance", cfg.policy, "separation")
    N = cfg.N or _default_window(rates, cfg)
    starts = cfg.starts if cfg.starts is not None else list(range(min(N, 10) + 1))
    curve = separation_service.separation_curve(rates, N, _time_grid(cfg), starts, policy=cfg.policy)
    beta = separation_service.beta_report(rates, curve=curve, policy=cfg.policy)
    doc = reports.separation_dict(curve)
    doc["beta"] = reports.beta_dict(beta)
    code = 0 if all(curve.checks.values()) else 5
    return doc, {"curve": doc["curve"]}, code


def cmd_simulate(cfg: RunConfig, rates: RateSpec) -> Result:
    if cfg.n is None:
        raise ConfigError("simulate needs a target --n (or 'inf' for the life time)")
    samples = cfg.samples or settings.MC_SAMPLES
    seed = settings.SEED if cfg.seed is None else cfg.seed
    if math.isinf(cfg.n):
        if cfg.i != 0:
            raise DomainError("life-time sampling starts at 0")
        sample = simulation_service.sample_lifetime_exit(
            rates, samples, seed, policy=cfg.policy, threads=cfg.threads
        )
    else:
        sample = simulation_service.sample_hitting_times(
            rates,
            _finite_state(cfg.i, "i"),
            int(cfg.n),
            samples,
            seed,
            reflect_at=cfg.N,
            threads=cfg.threads,
        )
    estimate = simulation_service.empirical_laplace(sample, cfg.s)
    doc = reports.sample_dict(sample)
    doc["transform"] = reports.laplace_rows(estimate)

    law_case = not math.isinf(cfg.n) and (cfg.n > cfg.i or cfg.N is not None)
    if law_case and sample.censored_count == 0:
        law = hitting_service.hitting_law(rates, cfg.i, cfg.n, cfg.N, policy=cfg.policy)
        doc["exact_transform"] = reports.bracket_rows(hitting_service.evaluate_laplace(law, cfg.s))
        doc["ks"] = reports.ks_dict(simulation_service.ks_test(sample, law))
    if cfg.save_sample:
        out = Path(cfg.out) if cfg.out else settings.out_path
        out.mkdir(parents=True, exist_ok=True)
        doc["sample_file"] = str(simulation_service.save_sample(sample, out / "sample.bin"))
    return doc, {"transform": doc["transform"]}, 0


def cmd_verify(cfg: RunConfig, rates: RateSpec) -> Result:  # noqa: ARG001
    report = verification_service.run_suite(
        quick=cfg.quick,
        samples=cfg.samples,
        seed=cfg.seed,
        threads=cfg.threads,
        policy=cfg.policy,
        monte_carlo=cfg.monte_carlo,
    )
    doc = reports.verification_dict(report)
    rows = [{k: v for k, v in row.items() if k != "detail"} for row in doc["checks"]]
    return doc, {"checks": rows}, 0 if report.passed else 5


COMMANDS: dict[str, Callable[[RunConfig, RateSpec], Result]] = {
    "classify": cmd_classify,
    "spectrum": cmd_spectrum,
    "hitting": cmd_hitting,
    "sst": cmd_sst,
    "separation": cmd_separation,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def _finite_state(x: float, name: str) -> int:
    if math.isinf(x):
        raise DomainError(f"{name} must be finite here")
    return int(x)


# ---------------------------------------------------------------------------
# Arguments and configuration
# ---------------------------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="birthdeath",
        description="Hitting-time laws, spectra and separation bounds for birth-death chains.",
    )
    parser.add_argument("--config", type=Path, help="RunConfig JSON file")
    parser.add_argument("--chain", help="gallery chain name (overrides the config)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--out", help="output directory; stdout when absent")
    parser.add_argument("--format", choices=["json", "csv"])
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("classify", help="boundary classification report")

    p = sub.add_parser("spectrum", help="limit or truncated spectra")
    p.add_argument("--kind", choices=["exit", "entrance", "ergodic", "absorbed", "reflected"])
    p.add_argument("--n")
    p.add_argument("--N", type=int)
    p.add_argument("--count", type=int)

    p = sub.add_parser("hitting", help="hitting-time law of T_{i,n}")
    p.add_argument("--i")
    p.add_argument("--n")
    p.add_argument("--N", type=int)
    p.add_argument("--s", type=_floats)
    p.add_argument("--t", type=_floats)

    p = sub.add_parser("sst", help="strong stationary time law")
    p.add_argument("--N", type=int, help="finite reflected window")
    p.add_argument("--s", type=_floats)
    p.add_argument("--t", type=_floats)
    p.add_argument("--starts", type=_ints)

    p = sub.add_parser("separation", help="separation curve against the SST bound")
    p.add_argument("--N", type=int)
    p.add_argument("--t", type=_floats)
    p.add_argument("--starts", type=_ints)

    p = sub.add_parser("simulate", help="Monte Carlo hitting or life times")
    p.add_argument("--i")
    p.add_argument("--n")
    p.add_argument("--N", type=int, help="reflect at N")
    p.add_argument("--s", type=_floats)
    p.add_argument("--samples", type=int)
    p.add_argument("--save-sample", action="store_true", default=None)

    p = sub.add_parser("verify", help="run the identity suite on the gallery")
    p.add_argument("--quick", action="store_true", default=None)
    p.add_argument("--samples", type=int)
    p.add_argument("--no-mc", dest="monte_carlo", action="store_false", default=None)
    return parser


GLOBAL_ONLY = {"config", "command", "log_level", "format"}


def load_config(args: argparse.Namespace) -> RunConfig:
    """Config file first, then every flag that was given."""
    data: dict[str, Any] = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read {args.config}: {e.strerror}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}: malformed JSON ({e.msg} at line {e.lineno})")
        if not isinstance(data, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
    for key, value in vars(args).items():
        if key not in GLOBAL_ONLY and value is not None:
            data[key] = value
    if args.format is not None:
        data["format"] = args.format
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(
            [
                {"loc": ".".join(str(p) for p in err["loc"]), "msg": err["msg"]}
                for err in e.errors(include_url=False)
            ]
        )


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _csv_text(rows: list[dict[str, Any]]) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()


def emit(name: str, doc: dict[str, Any], tables: Tables, cfg: RunConfig) -> list[Path]:
    """JSON report (and CSV tables in csv mode) to the output directory or stdout."""
    written: list[Path] = []
    out = Path(cfg.out) if cfg.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{name}.json"
        path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
        written.append(path)
        if cfg.format == "csv":
            for table, rows in tables.items():
                path = out / f"{name}_{table}.csv"
                path.write_text(_csv_text(rows), encoding="utf-8")
                written.append(path)
        for path in written:
            logger.info("wrote %s", path)
        return written

    if cfg.format == "csv" and tables:
        for table, rows in tables.items():
            sys.stdout.write(f"# {table}\n{_csv_text(rows)}")
    else:
        sys.stdout.write(json.dumps(doc, indent=2) + "\n")
    return written


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = args.log_level or settings.LOG_LEVEL
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args)
        rates = gallery_service.resolve_chain(cfg.chain)
        doc, tables, code = COMMANDS[args.command](cfg, rates)
        emit(args.command, doc, tables, cfg)
        return code
    except AppException as e:
        logger.error("%s failed: %s", args.command, e.detail if isinstance(e.detail, str) else type(e).__name__)
        sys.stderr.write(json.dumps({"detail": e.detail, "exit_code": e.exit_code}, indent=2, default=str) + "\n")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())

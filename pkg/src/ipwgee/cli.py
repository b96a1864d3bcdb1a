"""Command-line interface: ``ipwgee fit | simulate | diagnose``.

Exit codes: 0 success, 1 input or configuration error (including usage
errors), 2 non-convergence.  JSON reports are canonical: keys sorted, no
timestamps, non-finite numbers written as ``null``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .diagnostics import compute_diagnostics, diagnostics_trend, write_trend_csv
from .errors import IPWGEEError, NotConvergedError
from .estimator import FitConfig, FitResult, fit_workflow
from .inference import wald_report
from .longcsv import ingest
from .simulate import config_from_mapping, generate, load_config, parse_mapping, run_monte_carlo

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2

FAMILY_CHOICES = ("normal", "poisson", "binomial")
CORRELATION_CHOICES = ("independence", "one-dependent", "exchangeable")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with code 1 rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def canonical_json(payload: dict) -> str:
    return json.dumps(_clean(payload), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _origin(exc) -> str:
    """Name of the module where ``exc`` was raised."""
    tb = exc.__traceback__
    name = "ipwgee"
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("ipwgee"):
            name = mod
        tb = tb.tb_next
    return name


def _fail(cmd, exc) -> int:
    print(f"ipwgee {cmd}: {_origin(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_INPUT


# --------------------------------------------------------------------- fit


def fit_report(dataset, fit: FitResult, settings: dict, source: str) -> dict:
    """Canonical report dictionary for one fit."""
    coefficients, inference_error = None, None
    if fit.converged:
        try:
            coefficients = wald_report(fit.beta_hat, fit.B_hat, fit.coef_names).to_dict()["coefficients"]
        except ArithmeticError as exc:
            inference_error = str(exc)
    if coefficients is None:
        coefficients = [{"name": n, "estimate": float(b), "std_error": None, "z": None, "p_value": None}
                        for n, b in zip(fit.coef_names, fit.beta_hat)]
    diagnostics = None
    if fit.converged:
        diagnostics = compute_diagnostics(dataset, fit).to_dict()
    return {
        "schema_version": SCHEMA_VERSION,
        "command": "fit",
        "status": "converged" if fit.converged else "not_converged",
        "input": {
            "file": os.path.basename(source),
            "n": dataset.n,
            "m": dataset.m,
            "p": dataset.p,
            "n_missing": dataset.n_missing,
            "covariate_names": list(dataset.covariate_names),
        },
        "settings": settings,
        "missingness": {
            "fitted": fit.gamma_hat is not None,
            "gamma_hat": fit.gamma_hat,
            "pi_floor": fit.pi_floor,
            "clamp_activations": fit.clamp_activations,
        },
        "correlation": {"structure": fit.structure, "alpha_hat": fit.alpha_hat},
        "coefficients": coefficients,
        "inference_error": inference_error,
        "fit": fit.to_dict(),
        "diagnostics": diagnostics,
    }


def start_failure_report(dataset, settings: dict, source: str, exc: Exception) -> dict:
    """Report for a run that stopped before the weighted fit (no estimates)."""
    return {
        "schema_version": SCHEMA_VERSION,
        "command": "fit",
        "status": "not_converged",
        "input": {
            "file": os.path.basename(source),
            "n": dataset.n,
            "m": dataset.m,
            "p": dataset.p,
            "n_missing": dataset.n_missing,
            "covariate_names": list(dataset.covariate_names),
        },
        "settings": settings,
        "missingness": {"fitted": None, "gamma_hat": None, "pi_floor": settings["pi_floor"],
                        "clamp_activations": None},
        "correlation": {"structure": settings["correlation"], "alpha_hat": None},
        "coefficients": [],
        "inference_error": None,
        "fit": {"stage": "independence_start", "message": str(exc)},
        "diagnostics": None,
    }


def _fmt(v, digits=3):
    return "NA" if v is None else f"{v:.{digits}f}"


def format_fit_report(report: dict) -> str:
    """Text table derived from the JSON report."""
    coefs = report["coefficients"]
    width = max([len(c["name"]) for c in coefs] + [9])
    head = f"{'':<{width}}  {'estimate':>10}  {'s.e.':>10}  {'p-value':>10}"
    lines = [
        f"{report['settings']['family']} family, {report['correlation']['structure']} working correlation",
        f"n={report['input']['n']} clusters, m={report['input']['m']} occasions, "
        f"{report['input']['n_missing']} missing responses",
    ]
    if report["missingness"]["fitted"]:
        g = ", ".join(_fmt(v, 4) for v in report["missingness"]["gamma_hat"])
        lines.append(f"missingness model gamma_hat = ({g})")
    else:
        lines.append("no missing responses: all observation probabilities set to 1")
    alpha = report["correlation"]["alpha_hat"]
    if alpha:
        lines.append("alpha_hat = (" + ", ".join(_fmt(a, 4) for a in alpha) + ")")
    lines += ["", head, "-" * len(head)]
    for c in coefs:
        lines.append(f"{c['name']:<{width}}  {_fmt(c['estimate']):>10}  "
                     f"{_fmt(c['std_error']):>10}  {_fmt(c['p_value']):>10}")
    fit = report["fit"]
    lines += ["", f"status: {report['status']} after {fit['iterations']} iterations "
                  f"(score sup-norm {_diag_value(fit['final_score_norm'])})"]
    diag = report["diagnostics"]
    if diag is not None:
        lines += ["", "diagnostics"]
        lines += [f"  {k:<22} {_diag_value(diag[k])}" for k in sorted(diag)]
    return "\n".join(lines)


def _diag_value(v):
    if v is None:
        return "n/a"
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, int):
        return str(v)
    return f"{v:.6g}"


def cmd_fit(args) -> int:
    settings = {
        "family": args.family,
        "correlation": args.correlation,
        "pi_floor": args.pi_floor,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "seed": args.seed,
    }
    try:
        dataset = ingest(args.data)
        config = FitConfig(tol_score=args.tol, max_iter=args.max_iter)
        fit = fit_workflow(dataset, args.family, args.correlation, args.pi_floor, config)
    except RuntimeError as exc:
        print(f"ipwgee fit: {_origin(exc)}: {exc}", file=sys.stderr)
        if args.out:
            _write(args.out, canonical_json(start_failure_report(dataset, settings, args.data, exc)))
        return EXIT_NOT_CONVERGED
    except (IPWGEEError, ValueError, OSError) as exc:
        return _fail("fit", exc)
    try:
        report = fit_report(dataset, fit, settings, args.data)
    except (IPWGEEError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail("fit", exc)
    text = canonical_json(report)
    if args.out:
        _write(args.out, text)
    print(format_fit_report(json.loads(text)))
    return EXIT_OK if fit.converged else EXIT_NOT_CONVERGED


# ---------------------------------------------------------------- simulate

SIM_FLAGS = ("n", "m", "family", "beta", "gamma", "covariates", "corr", "indicators",
             "seed", "k", "working", "pi_mode", "pi_floor")


def _sim_mapping(args) -> dict:
    kv = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            kv = parse_mapping(fh.read())
    for key in SIM_FLAGS:
        value = getattr(args, key)
        if value is not None:
            kv[key] = str(value)
    return kv


def cmd_simulate(args, parser) -> int:
    try:
        kv = _sim_mapping(args)
        if "n" not in kv or "m" not in kv or "beta" not in kv:
            raise UsageError("a design needs n, m and beta (from --config or flags)")
        design, settings, K = config_from_mapping(kv)
    except UsageError as exc:
        parser.error(str(exc))
    except (IPWGEEError, ValueError, OSError) as exc:
        return _fail("simulate", exc)
    if K < 100:
        parser.error(f"K must be at least 100, got {K}")
    try:
        summary = run_monte_carlo(design, K, settings, n_jobs=args.jobs)
    except RuntimeError as exc:
        print(f"ipwgee simulate: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (IPWGEEError, ValueError) as exc:
        return _fail("simulate", exc)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "simulate",
        "design": design.to_dict(),
        "settings": {"working": settings.structure, "pi_mode": settings.pi_mode,
                     "pi_floor": settings.pi_floor},
        "summary": summary.to_dict(),
    }
    text = canonical_json(payload)
    if args.out:
        _write(args.out, text)
    if args.csv:
        summary.write_csv(args.csv)
    print(summary.format_table())
    return EXIT_NOT_CONVERGED if summary.nonconverged_flag else EXIT_OK


# ---------------------------------------------------------------- diagnose


def cmd_diagnose(args, parser) -> int:
    if args.trend:
        return _diagnose_trend(args, parser)
    if not args.data or not args.fit:
        parser.error("diagnose needs a data file and --fit REPORT (or --trend)")
    try:
        dataset = ingest(args.data)
        with open(args.fit, encoding="utf-8") as fh:
            saved = json.load(fh)
        if saved.get("status") == "not_converged":
            raise NotConvergedError(f"{os.path.basename(args.fit)} records a fit that did not converge")
        fit = FitResult.from_dict(saved["fit"] if "fit" in saved else saved)
        report = compute_diagnostics(dataset, fit)
    except NotConvergedError as exc:
        print(f"ipwgee diagnose: refusing: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (IPWGEEError, ValueError, KeyError, OSError) as exc:
        return _fail("diagnose", exc)
    payload = {"schema_version": SCHEMA_VERSION, "command": "diagnose",
               "diagnostics": report.to_dict()}
    text = canonical_json(payload)
    if args.out:
        _write(args.out, text)
    diag = json.loads(text)["diagnostics"]
    print("\n".join(f"{k:<22} {_diag_value(diag[k])}" for k in sorted(diag)))
    return EXIT_OK


def _diagnose_trend(args, parser) -> int:
    if not args.config:
        parser.error("--trend needs --config DESIGN")
    try:
        sizes = sorted(int(s) for s in args.sizes.split(","))
    except ValueError:
        parser.error(f"--sizes must be comma-separated integers, got {args.sizes!r}")
    if len(sizes) < 3:
        parser.error("--sizes needs at least three sample sizes")
    try:
        design, settings, _ = load_config(args.config)
        full = generate(design.with_n(sizes[-1]), 0)
        datasets = [full.subset(np.arange(n)) for n in sizes]
        config = settings.config

        def fit_fn(ds):
            return fit_workflow(ds, design.family, settings.structure, settings.pi_floor, config)

        rows = diagnostics_trend(datasets, fit_fn)
    except (IPWGEEError, ValueError, OSError) as exc:
        return _fail("diagnose", exc)
    except RuntimeError as exc:
        print(f"ipwgee diagnose: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    out = args.out or "trend.csv"
    write_trend_csv(rows, out)
    for row in rows:
        print("  ".join(f"{k}={_diag_value(row.get(k))}" for k in ("n", "iw_ratio", "gamma_star", "nd_proxy")))
    return EXIT_OK if all(r["converged"] for r in rows) else EXIT_NOT_CONVERGED


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ipwgee", description="Weighted GEE for longitudinal data with missing responses.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver warnings")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p_fit = sub.add_parser("fit", help="fit a long-format CSV")
    p_fit.add_argument("data", help="CSV with columns id,time,y,x1..xp; empty y = missing")
    p_fit.add_argument("--family", choices=FAMILY_CHOICES, default="normal")
    p_fit.add_argument("--correlation", choices=CORRELATION_CHOICES, default="exchangeable")
    p_fit.add_argument("--pi-floor", type=float, default=0.01)
    p_fit.add_argument("--tol", type=float, default=None, help="score sup-norm tolerance (default 1e-8*n*m)")
    p_fit.add_argument("--max-iter", type=int, default=50)
    p_fit.add_argument("--out", help="write the JSON report here")
    p_fit.add_argument("--seed", type=int, default=0, help="reserved; the fit uses no randomness")

    p_sim = sub.add_parser("simulate", help="Monte Carlo experiment")
    p_sim.add_argument("--config", help="key=value design file; flags override it")
    p_sim.add_argument("--n", type=int)
    p_sim.add_argument("--m", type=int)
    p_sim.add_argument("--family", choices=FAMILY_CHOICES)
    p_sim.add_argument("--beta", help="comma-separated true coefficients")
    p_sim.add_argument("--gamma", help="comma-separated missingness coefficients, or none")
    p_sim.add_argument("--covariates", help="e.g. 'intercept,uniform(-1,1),bernoulli(0.5)'")
    p_sim.add_argument("--corr", help="independent | exchangeable(rho) | one_dependent(r1,...)")
    p_sim.add_argument("--indicators", help="independent | pairwise_dependent(kappa)")
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("-K", "--K", dest="k", type=int, help="replications (>= 100)")
    p_sim.add_argument("--working", choices=CORRELATION_CHOICES)
    p_sim.add_argument("--pi-mode", choices=("estimated", "true"))
    p_sim.add_argument("--pi-floor", type=float)
    p_sim.add_argument("--jobs", type=int, default=1)
    p_sim.add_argument("--out", help="summary JSON path")
    p_sim.add_argument("--csv", help="summary CSV path")

    p_diag = sub.add_parser("diagnose", help="diagnostics for a saved fit, or a trend over n")
    p_diag.add_argument("data", nargs="?", help="the CSV the fit was run on")
    p_diag.add_argument("--fit", help="JSON report written by 'ipwgee fit'")
    p_diag.add_argument("--trend", action="store_true", help="simulate growing n and tabulate")
    p_diag.add_argument("--config", help="design file for --trend")
    p_diag.add_argument("--sizes", default="100,400,1600")
    p_diag.add_argument("--out", help="JSON (single fit) or CSV (--trend) output path")
    for p in (p_fit, p_sim, p_diag):
        p.set_defaults(subparser=p)
    return parser


def main(argv=None) -> int:
    """Run the command line; returns the exit code rather than raising ``SystemExit``."""
    try:
        return _dispatch(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT


def _dispatch(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(name)s: %(message)s")
    if args.command is None:
        parser.error("choose a command: fit, simulate or diagnose")
    if args.command == "fit":
        return cmd_fit(args)
    if args.command == "simulate":
        return cmd_simulate(args, args.subparser)
    return cmd_diagnose(args, args.subparser)


if __name__ == "__main__":
    sys.exit(main())

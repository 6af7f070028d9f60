"""Command-line front end.

Exit codes: 0 when every verdict passes, 1 when a verdict fails, 2 for
usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .core import InvalidArgumentError
from .systems import SYSTEMS, InvalidModeError, PrecisionBudgetError, get_system, orbit

MODE_ALIASES = {
    "exact": "exact_modular", "exact_modular": "exact_modular",
    "float": "float64", "float64": "float64",
    "hp": "high_precision", "high_precision": "high_precision",
}

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def parse_schedule(text: str) -> dict:
    """``power:a1,a2[:c1,c2]`` or an inline JSON object."""
    text = text.strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--schedule is not valid JSON: {exc}") from None
    parts = text.split(":")
    if parts[0] != "power" or len(parts) not in (2, 3):
        raise UsageError(f"cannot read schedule {text!r}; use power:a1,a2[:c1,c2] or JSON")
    try:
        out = {"family": "power", "exponents": [float(v) for v in parts[1].split(",")]}
        if len(parts) == 3:
            out["scales"] = [float(v) for v in parts[2].split(",")]
    except ValueError:
        raise UsageError(f"non-numeric entry in schedule {text!r}") from None
    return out


def parse_mode(text: str | None) -> str | None:
    if text is None:
        return None
    try:
        return MODE_ALIASES[text]
    except KeyError:
        raise UsageError(f"unknown mode {text!r}; choose from {', '.join(MODE_ALIASES)}") from None


def _coords(text: str) -> list:
    return [c.strip() for c in text.split(",") if c.strip()]


def _threads(value) -> int | None:
    if value is not None:
        return value
    env = os.environ.get("RECLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"RECLAB_THREADS={env!r} is not an integer") from None
    return None


# -- subcommands -------------------------------------------------------------------

def cmd_simulate(args) -> int:
    sysm = get_system(args.system)
    mode = parse_mode(args.mode) or sysm.default_mode
    coords = _coords(args.x0)
    if mode == "exact_modular":
        x0 = [Fraction(c) for c in coords]
    elif mode == "high_precision":
        x0 = coords
    else:
        x0 = [float(Fraction(c)) for c in coords]
    for point in orbit(sysm, x0, args.n, mode, args.precision_bits):
        print(" ".join(_fmt(v, mode) for v in point))
    return EXIT_OK


def _fmt(v, mode) -> str:
    if isinstance(v, Fraction):
        return str(v)
    if mode == "high_precision":
        return str(v)
    return repr(float(v))


def _load_config(args, experiment: str) -> dict:
    data = {}
    if args.config:
        path = Path(args.config)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise UsageError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
    elif not args.system:
        raise UsageError("no config: pass --config FILE or at least --system, --schedule and --n")
    overrides = {
        "system": args.system, "N": args.n, "ensemble": args.ensemble, "seed": args.seed,
        "out": args.out, "format": args.format,
    }
    if args.schedule:
        overrides["schedule"] = parse_schedule(args.schedule)
    if args.mode:
        overrides["mode"] = parse_mode(args.mode)
    threads = _threads(args.threads)
    if threads is not None:
        overrides["threads"] = threads
    if getattr(args, "hat", False):
        overrides["hat"] = True
    data.update({k: v for k, v in overrides.items() if v is not None})
    if data.get("experiment", experiment) != experiment:
        raise UsageError(f"config declares experiment {data['experiment']!r}, command runs {experiment!r}")
    data["experiment"] = experiment
    return data


def cmd_verify(args, experiment: str) -> int:
    from .harness import ExperimentConfig, export_report, run_experiment

    cfg = ExperimentConfig.from_dict(_load_config(args, experiment))
    if args.dry_run:
        plan = {"config": cfg.to_dict(), "config_hash": cfg.hash,
                "mode": cfg.resolved_mode, "checkpoints": len(cfg.checkpoints()),
                "map_steps": cfg.ensemble * cfg.N}
        print(json.dumps(plan, sort_keys=True, indent=2))
        return EXIT_OK
    report = run_experiment(cfg)
    _print_summary(report)
    if cfg.out:
        export_report(report, cfg.out, cfg.format)
        print(f"report written to {cfg.out}")
    return EXIT_OK if report.passed else EXIT_FAIL


def _print_summary(report) -> None:
    agg = report.aggregates
    print(f"experiment {report.experiment}  system {report.config['system']}  "
          f"seeds {agg['seeds']}  N {report.config['N']}  hash {report.config_hash[:12]}")
    for key in sorted(agg):
        if not isinstance(agg[key], dict):
            print(f"  {key}: {agg[key]}")
    for note in report.notes:
        print(f"  note: {note}")
    for name, v in sorted(report.verdicts.items()):
        print(f"verdict {name}: {'n/a' if v is None else 'PASS' if v else 'FAIL'}")


def cmd_correlations(args) -> int:
    import numpy as np

    from .correlations import (InsufficientSignalError, estimate_correlation,
                               fit_decay_rate, observable)

    sysm = get_system(args.system)
    curve = estimate_correlation(sysm, observable(args.f, sysm), observable(args.g, sysm),
                                 args.lags, args.samples, args.estimator,
                                 np.random.default_rng(args.seed))
    print("lag estimate stderr")
    for n, c, s in zip(curve.lags, curve.estimates, curve.stderr):
        print(f"{n} {c!r} {s!r}")
    out = {"curve": curve.to_dict()}
    code = EXIT_OK
    try:
        fit = fit_decay_rate(curve)
        print(f"fit C={fit.C!r} tau={fit.tau!r} lags={list(fit.lags)}")
        out["fit"] = {"C": fit.C, "tau": fit.tau, "lags": list(fit.lags)}
    except InsufficientSignalError as exc:
        print(f"fit: {exc}")
        out["fit"] = None
        code = EXIT_FAIL if args.require_fit else EXIT_OK
    if args.out:
        Path(args.out).write_text(json.dumps(out, sort_keys=True, indent=2) + "\n")
    return code


def cmd_conditions(args) -> int:
    from .correlations import condition_IV_check, condition_V_check, cylinder_boundary_growth
    from .systems import check_expansion

    names = list(SYSTEMS) if args.system in (None, "all") else [args.system]
    ok, out = True, {}
    for name in names:
        exp = check_expansion(name, n_pairs=args.pairs)
        iv = condition_IV_check(name)
        v = condition_V_check(name)
        growth = cylinder_boundary_growth(name, range(1, args.depth + 1))
        passed = (exp["violations"] == 0 and iv.passed and all(r["passed"] for r in v)
                  and all(r["passed"] for r in growth))
        ok &= passed
        print(f"{name}: expansion L={exp['L']} violations={exp['violations']}; "
              f"boundary K1={iv.K1_hat:.4g} (bound {iv.bound}); "
              f"concentration counts={[r['count'] for r in v]}; "
              f"cylinder growth to depth {args.depth}: "
              f"{'ok' if all(r['passed'] for r in growth) else 'FAIL'}  -> {'PASS' if passed else 'FAIL'}")
        out[name] = {"expansion": exp, "boundary": iv.__dict__, "concentration": v,
                     "cylinder_growth": growth, "passed": passed}
    if args.out:
        Path(args.out).write_text(json.dumps(out, sort_keys=True, indent=2, default=float) + "\n")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_scale_target(args) -> int:
    from .recurrence import scale_to_measure

    sysm = get_system(args.system)
    x = [float(Fraction(c)) for c in _coords(args.x)]
    r = [float(c) for c in _coords(args.r)]
    if len(r) == 1 and sysm.dim > 1:
        r = r * sysm.dim
    t = scale_to_measure(sysm, x, r, args.gamma)
    print(repr(t.scale))
    print(f"radii {' '.join(repr(v) for v in t.radii)}  measure {t.achieved!r}  residual {t.residual:.3g}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .harness import export_report, load_report

    report = load_report(args.input)
    _print_summary(report)
    if args.out:
        export_report(report, args.out, args.format or "json")
        print(f"report written to {args.out}")
    return EXIT_OK if report.passed else EXIT_FAIL


# -- parser ------------------------------------------------------------------------

def _experiment_flags(p) -> None:
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--system", choices=sorted(SYSTEMS))
    p.add_argument("--schedule", help="power:a1,a2[:c1,c2] or a JSON object")
    p.add_argument("--n", type=int, help="orbit length N")
    p.add_argument("--ensemble", type=int, help="number of seeds M")
    p.add_argument("--seed", type=int, help="master rng seed")
    p.add_argument("--mode", help="float64 | exact_modular | high_precision (or float/exact/hp)")
    p.add_argument("--threads", type=int, help="worker cap (falls back to RECLAB_THREADS)")
    p.add_argument("--out", help="report path")
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--dry-run", action="store_true", help="validate and print the plan only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reclab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"reclab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log timing to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="print an orbit")
    p.add_argument("--system", required=True, choices=sorted(SYSTEMS))
    p.add_argument("--x0", required=True, help="comma-separated coordinates; a/q allowed")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--mode")
    p.add_argument("--precision-bits", type=int, default=512)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify-sbc", help="divergent-schedule ensemble experiment")
    _experiment_flags(p)
    p.add_argument("--hat", action="store_true", help="use the measure-scaled targets")
    p.set_defaults(func=lambda a: cmd_verify(a, "sbc"))

    p = sub.add_parser("verify-convergence", help="convergent-schedule ensemble experiment")
    _experiment_flags(p)
    p.set_defaults(func=lambda a: cmd_verify(a, "convergence"))

    p = sub.add_parser("estimate-correlations", help="correlation curve and decay fit")
    p.add_argument("--system", required=True, choices=sorted(SYSTEMS))
    p.add_argument("--f", default="x0", help="observable: x<i> or one")
    p.add_argument("--g", default="x0")
    p.add_argument("--lags", type=int, default=6)
    p.add_argument("--samples", type=int, default=10**6)
    p.add_argument("--estimator", default="monte-carlo", choices=("monte-carlo", "birkhoff"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--require-fit", action="store_true", help="exit 1 if no rate can be fitted")
    p.add_argument("--out")
    p.set_defaults(func=cmd_correlations)

    p = sub.add_parser("check-conditions", help="expansion, boundary and concentration checks")
    p.add_argument("--system", default="all", choices=sorted(SYSTEMS) + ["all"])
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--pairs", type=int, default=100_000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_conditions)

    p = sub.add_parser("scale-target", help="solve mu(R(x, l r)) = gamma for l")
    p.add_argument("--system", required=True, choices=sorted(SYSTEMS))
    p.add_argument("--x", required=True)
    p.add_argument("--r", required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.set_defaults(func=cmd_scale_target)

    p = sub.add_parser("report", help="summarise or re-export a saved JSON report")
    p.add_argument("--input", required=True)
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "csv"))
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidArgumentError, InvalidModeError, PrecisionBudgetError,
            ValueError) as exc:
        print(f"reclab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"reclab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Command line interface.

Exit codes: 0 on success, 1 for usage or input errors, 2 when a solve is
infeasible or tuning fails to produce a usable iterate.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from typing import Optional

from .experiment import (
    ConfigError,
    ExperimentConfig,
    build_distribution,
    load_case,
    parse_config_file,
    run_experiment,
    write_report,
)
from .grid import CaseError, parse_case_file
from .ptdf import compute_ptdf, ptdf_to_csv
from .reformulation import build_catalog, participation_factors, solve_dispatch
from .tuner import TuningConfig, TuningError, trace_to_csv, tune
from .uncertainty import (
    MixtureSpec,
    derive_seed,
    empirical_moments,
    sample,
    sampleset_to_csv,
    spec_moments,
)
from .violation import evaluate, report_to_json

USAGE_ERROR = 1
SOLVE_ERROR = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; reserve 2 for solver failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _write_or_print(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _load_context(args):
    """Resolve (case, raw config) from --config and --case flags."""
    raw = parse_config_file(args.config) if args.config else {}
    case_key = getattr(args, "case", None) or raw.get("case", "rts24")
    return load_case(case_key), raw


def _distribution(args, raw, case):
    name = getattr(args, "distribution", None)
    if name is None:
        names = [n.strip() for n in raw.get("distributions", "gaussian").split(",")]
        name = names[0]
    return name, build_distribution(name, raw, case)


def _catalog(case, raw, spec, moment_source: str, samples=None):
    if moment_source == "auto":
        use_empirical = samples is not None and isinstance(spec, MixtureSpec)
        moment_source = "empirical" if use_empirical else "spec"
    if moment_source == "empirical":
        if samples is None:
            raise ConfigError("empirical moments need a sample set")
        moments = empirical_moments(samples)
    else:
        moments = spec_moments(spec, case)
    return build_catalog(case, compute_ptdf(case), participation_factors(case), moments)


def cmd_parse(args) -> int:
    case = parse_case_file(args.file)
    load = sum(b.load_mw for b in case.buses)
    cap = sum(g.p_max_mw for g in case.generators)
    uncertain = ",".join(str(b) for b in case.uncertain_buses) or "-"
    print(
        f"buses={len(case.buses)} lines={len(case.lines)} "
        f"generators={len(case.generators)} load_mw={load:g} "
        f"capacity_mw={cap:g} uncertain_buses={uncertain}"
    )
    return 0


def cmd_ptdf(args) -> int:
    case, _ = _load_context(args)
    ptdf = compute_ptdf(case, slack=args.slack)
    _write_or_print(ptdf_to_csv(ptdf), args.out)
    return 0


def cmd_sample(args) -> int:
    case, raw = _load_context(args)
    _, spec = _distribution(args, raw, case)
    seed = args.seed if args.seed is not None else int(raw.get("seed", 1))
    samples = sample(spec, args.n, seed, case)
    _write_or_print(sampleset_to_csv(samples, case), args.out)
    return 0


def cmd_solve(args) -> int:
    case, raw = _load_context(args)
    _, spec = _distribution(args, raw, case)
    catalog = _catalog(case, raw, spec, raw.get("moment_source", "spec"))
    solution = solve_dispatch(case, catalog, args.s)
    if not solution.feasible:
        print(f"infeasible at s={args.s:g}", file=sys.stderr)
        return SOLVE_ERROR
    lines = [f"s={args.s:.12g}", f"cost={solution.objective:.12g}"]
    for bus, value in enumerate(solution.p_g, start=1):
        if value != 0.0:
            lines.append(f"p{bus}={value * case.base_mva:.6g}")
    _write_or_print("\n".join(lines) + "\n", args.out)
    return 0


def cmd_tune(args) -> int:
    case, raw = _load_context(args)
    _, spec = _distribution(args, raw, case)
    seed = args.seed if args.seed is not None else int(raw.get("seed", 1))
    n = int(raw.get("tuning.samples", 10_000))
    samples = sample(spec, n, derive_seed(seed, 0, 1), case)
    catalog = _catalog(case, raw, spec, raw.get("moment_source", "auto"), samples)
    config = TuningConfig(
        eps_des=args.eps if args.eps is not None else raw.get("eps", "0.1").split(",")[0].strip(),
        gamma=raw.get("gamma", "1e-4"),
        mode=args.mode or raw.get("modes", "single").split(",")[0].strip(),
        width_tol=float(raw.get("width_tol", 1e-6)),
        max_iterations=int(raw.get("max_iterations", 60)),
    )
    result = tune(case, catalog, samples, config)
    print(
        f"s={result.s:.6g} iterations={result.iterations} "
        f"cost={result.objective:.6g} eps_single={float(result.eps_single):.6g} "
        f"eps_joint={float(result.eps_joint):.6g} terminated_by={result.terminated_by}"
    )
    if args.out:
        if args.format == "json":
            payload = {
                "s": result.s,
                "cost": result.objective,
                "iterations": result.iterations,
                "terminated_by": result.terminated_by,
                "eps_single": float(result.eps_single),
                "eps_joint": float(result.eps_joint),
                "trace": [
                    {
                        "iteration": it.iteration,
                        "s": it.s,
                        "feasible": it.feasible,
                        "eps_single": None if it.eps_single is None else float(it.eps_single),
                        "eps_joint": None if it.eps_joint is None else float(it.eps_joint),
                        "cost": it.cost,
                    }
                    for it in result.trace
                ],
            }
            _write_or_print(json.dumps(payload, indent=2), args.out)
        else:
            _write_or_print(trace_to_csv(result), args.out)
    return 0


def cmd_evaluate(args) -> int:
    case, raw = _load_context(args)
    _, spec = _distribution(args, raw, case)
    catalog = _catalog(case, raw, spec, raw.get("moment_source", "spec"))
    solution = solve_dispatch(case, catalog, args.s)
    if not solution.feasible:
        print(f"infeasible at s={args.s:g}", file=sys.stderr)
        return SOLVE_ERROR
    seed = args.seed if args.seed is not None else int(raw.get("seed", 1))
    samples = sample(spec, args.n, seed, case)
    report = evaluate(solution.p_g, samples, catalog)
    text = report_to_json(report, catalog)
    if args.out:
        _write_or_print(text, args.out)
    else:
        print(
            f"eps_single={float(report.eps_single):.6g} "
            f"eps_joint={float(report.eps_joint):.6g} n={report.n_samples}"
        )
    return 0


def cmd_experiment(args) -> int:
    raw = parse_config_file(args.config)
    if args.eps is not None:
        raw["eps"] = str(args.eps)
    if args.mode is not None:
        raw["modes"] = args.mode
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    config = ExperimentConfig.from_mapping(raw)
    report = run_experiment(config, jobs=args.jobs)
    if report.rows and all(r.failed for r in report.rows):
        print("all replications failed", file=sys.stderr)
        return SOLVE_ERROR
    if args.out:
        write_report(report, args.out, fmt=args.format)
    for a in report.averages:
        if not a.replications:
            print(f"{a.mode} {a.distribution} eps={a.eps_des:g} reps=0 (all failed)")
            continue
        s_true = "" if a.s_true is None else f" s_true={a.s_true:.4f}"
        print(
            f"{a.mode} {a.distribution} eps={a.eps_des:g} reps={a.replications} "
            f"iters={a.iterations:.1f} cost={a.cost:.1f} s={a.s:.4f}{s_true} "
            f"eps_oos_single={a.eps_oos_single:.4f} eps_oos_joint={a.eps_oos_joint:.4f}"
        )
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="cctuner", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="validate a case file and print a summary")
    p.add_argument("file")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("ptdf", help="write the injection shift factor matrix as CSV")
    p.add_argument("--case", default=None, help="case key or path (default rts24)")
    p.add_argument("--config", default=None)
    p.add_argument("--slack", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ptdf)

    p = sub.add_parser("sample", help="draw uncertainty samples as CSV")
    p.add_argument("--case", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--distribution", choices=("gaussian", "mixture"), default=None)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("solve", help="solve the tightened dispatch at a fixed s")
    p.add_argument("--case", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--distribution", choices=("gaussian", "mixture"), default=None)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("tune", help="bisect s to the target violation probability")
    p.add_argument("--case", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--distribution", choices=("gaussian", "mixture"), default=None)
    p.add_argument("--eps", default=None)
    p.add_argument("--mode", choices=("single", "joint"), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="write the bisection trace here")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("evaluate", help="measure violation frequencies at a fixed s")
    p.add_argument("--case", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--distribution", choices=("gaussian", "mixture"), default=None)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="write the full JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run a replicated tuning sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--eps", default=None)
    p.add_argument("--mode", choices=("single", "joint"), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (CaseError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except TuningError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return SOLVE_ERROR


if __name__ == "__main__":
    sys.exit(main())

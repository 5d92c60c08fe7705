"""Command-line interface.

Subcommands: validate, score, compare, optimize, simulate. Reports go to
standard output (JSON and CSV formats are stable; text is for humans),
diagnostics go to standard error.

Exit codes: 0 success, 1 validation failure, 2 usage error, 3 computation
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .allocator import OptimizationResult, grid_search, optimize_descent, sqrt_rule_allocation
from .errors import DPBudgetError, HeavyTailWarning, ValidationError
from .scoring import RankedAllocation, UtilityReport, compare_allocations, score_allocation
from .simulation import SimulationReport, simulate_with_series
from .workload import (
    BudgetAllocation,
    MetricOptions,
    Workload,
    allocation_to_dict,
    load_allocation,
    load_workload,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2
EXIT_COMPUTE = 3


class _UsageError(Exception):
    pass


def _parse_seed(text: str) -> int:
    try:
        value = int(text, 16) if text.lower().startswith("0x") else int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be a decimal or 0x-hex integer, got {text!r}") from None
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 bits, got {text!r}")
    return value


def _add_common(parser: argparse.ArgumentParser, *, allocation: str | None = None, estimator: bool = False):
    parser.add_argument("--workload", required=True, metavar="PATH", help="workload document (JSON)")
    if allocation == "single":
        parser.add_argument("--allocation", required=True, metavar="PATH", help="allocation document (JSON)")
    elif allocation == "optional":
        parser.add_argument("--allocation", metavar="PATH", help="allocation document (JSON)")
    parser.add_argument("--format", choices=("json", "csv", "text"), default="json", help="output format")
    parser.add_argument("--threads", type=int, default=None, help="parallelism hint (kernels are vectorized)")
    if estimator:
        parser.add_argument("--estimator", choices=("analytic", "montecarlo"), default=None,
                            help="override the workload's estimator")
        parser.add_argument("--mc-samples", type=int, default=None, help="override the Monte Carlo sample count")
        parser.add_argument("--seed", type=_parse_seed, default=None,
                            help="rng seed (decimal or 0x-hex); required for montecarlo")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpbudget",
        description="Plan privacy-budget allocations for Laplace-released summary statistics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a workload (and optionally an allocation) document")
    _add_common(p, allocation="optional")

    p = sub.add_parser("score", help="score one allocation against a workload")
    _add_common(p, allocation="single", estimator=True)

    p = sub.add_parser("compare", help="rank two or more allocations")
    _add_common(p, estimator=True)
    p.add_argument("allocations", nargs="*", metavar="ALLOCATION", help="allocation documents (JSON)")
    p.add_argument("--allocation", action="append", default=[], metavar="PATH", dest="allocation_flags",
                   help="additional allocation document (repeatable)")

    p = sub.add_parser("optimize", help="search for a low-metric allocation")
    _add_common(p)
    p.add_argument("--method", choices=("sqrt", "grid", "descent"), default="descent")
    p.add_argument("--grid-resolution", type=int, default=100, help="lattice parts for --method grid")
    p.add_argument("--max-iters", type=int, default=5000, help="iteration cap for --method descent")
    p.add_argument("--tol", type=float, default=1e-10, help="relative improvement tolerance for --method descent")
    p.add_argument("--allow-nonconverged", action="store_true",
                   help="exit 0 even when descent hits the iteration cap")
    p.add_argument("--out", metavar="PATH", help="write the resulting allocation document here")

    p = sub.add_parser("simulate", help="replay noisy releases and check errors against predictions")
    _add_common(p, allocation="single")
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=_parse_seed, default=None, required=False,
                   help="rng seed (decimal or 0x-hex); required")
    p.add_argument("--dump-trials", metavar="PATH", help="also write per-trial errors as CSV")

    return parser


def _read_file(path: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise _UsageError(f"file not found: {path}")
    return p.read_text(encoding="utf-8")


def _load_workload_file(path: str) -> Workload:
    return load_workload(_read_file(path))


def _load_allocation_file(path: str, workload: Workload) -> BudgetAllocation:
    return load_allocation(_read_file(path), workload)


def _effective_options(workload: Workload, args: argparse.Namespace) -> MetricOptions:
    options = workload.options
    changes = {}
    if getattr(args, "estimator", None) is not None:
        changes["estimator"] = args.estimator
    if getattr(args, "mc_samples", None) is not None:
        changes["mc_samples"] = args.mc_samples
    return replace(options, **changes) if changes else options


def _require_seed_for_montecarlo(options: MetricOptions, args: argparse.Namespace):
    if options.estimator == "montecarlo" and args.seed is None:
        raise _UsageError("the montecarlo estimator requires an explicit --seed")


def _dump_json(payload) -> None:
    print(json.dumps(payload, sort_keys=True, indent=2))


def _csv_writer():
    return csv.writer(sys.stdout, lineterminator="\n")


def _print_report(report: UtilityReport, workload: Workload, fmt: str):
    if fmt == "json":
        _dump_json(report.to_dict())
    elif fmt == "csv":
        writer = _csv_writer()
        writer.writerow(["kind", "id", "value"])
        writer.writerow(["metric", "", repr(report.metric)])
        for stat_id in workload.statistic_ids:
            writer.writerow(["us", stat_id, repr(report.us_terms[stat_id])])
        for equation in workload.equations:
            writer.writerow(["ue", equation.id, repr(report.ue_terms[equation.id])])
    else:
        print(f"metric: {report.metric:.6g}  (lower is better)")
        for stat_id in workload.statistic_ids:
            print(f"  statistic {stat_id}: {report.us_terms[stat_id]:.6g}")
        for equation in workload.equations:
            print(f"  equation {equation.id}: {report.ue_terms[equation.id]:.6g}")


def _print_ranking(ranking: list[RankedAllocation], fmt: str):
    if fmt == "json":
        _dump_json([entry.to_dict() for entry in ranking])
    elif fmt == "csv":
        writer = _csv_writer()
        writer.writerow(["rank", "name", "metric"])
        for entry in ranking:
            writer.writerow([entry.rank, entry.name, repr(entry.report.metric)])
    else:
        for entry in ranking:
            print(f"{entry.rank}. {entry.name}: metric {entry.report.metric:.6g}")


def _print_optimization(result: OptimizationResult, fmt: str):
    if fmt == "json":
        _dump_json(result.to_dict())
    elif fmt == "csv":
        writer = _csv_writer()
        writer.writerow(["id", "budget"])
        for stat_id, budget in result.allocation.budgets.items():
            writer.writerow([stat_id, repr(budget)])
    else:
        state = "converged" if result.converged else "NOT converged"
        print(f"method {result.method}: metric {result.metric:.6g} after {result.iterations} iterations ({state})")
        for stat_id, budget in result.allocation.budgets.items():
            print(f"  {stat_id}: {budget:.6g}")


def _print_simulation(report: SimulationReport, fmt: str):
    if fmt == "json":
        _dump_json(report.to_dict())
    elif fmt == "csv":
        writer = _csv_writer()
        writer.writerow(["kind", "id", "empirical_rmse", "trimmed_rmse", "bias", "predicted_rmse"])
        for stat_id, summary in report.per_statistic.items():
            writer.writerow(["stat", stat_id, repr(summary.empirical_rmse), "", "", repr(summary.predicted_rmse)])
        for eq_id, summary in report.per_equation.items():
            writer.writerow([
                "eq", eq_id, repr(summary.empirical_rmse), repr(summary.trimmed_rmse),
                repr(summary.bias), repr(summary.predicted_rmse),
            ])
    else:
        reliable = "" if report.rmse_reliable else "  [rmse unreliable: too few trials]"
        print(f"trials: {report.trials}  seed: {report.seed}{reliable}")
        for stat_id, summary in report.per_statistic.items():
            print(f"  statistic {stat_id}: empirical {summary.empirical_rmse:.6g}, predicted {summary.predicted_rmse:.6g}")
        for eq_id, summary in report.per_equation.items():
            print(
                f"  equation {eq_id}: empirical {summary.empirical_rmse:.6g}, trimmed {summary.trimmed_rmse:.6g}, "
                f"bias {summary.bias:.6g}, predicted {summary.predicted_rmse:.6g}"
            )


def _cmd_validate(args: argparse.Namespace) -> int:
    issues = []
    workload = None
    try:
        workload = _load_workload_file(args.workload)
    except ValidationError as exc:
        issues.extend(exc.issues)
    if workload is not None and args.allocation:
        try:
            _load_allocation_file(args.allocation, workload)
        except ValidationError as exc:
            issues.extend(exc.issues)
    if args.format == "json":
        _dump_json({
            "valid": not issues,
            "issues": [{"code": i.code, "message": i.message, "subject": i.subject} for i in issues],
        })
    elif args.format == "csv":
        writer = _csv_writer()
        writer.writerow(["code", "subject", "message"])
        for issue in issues:
            writer.writerow([issue.code, issue.subject or "", issue.message])
    else:
        if issues:
            for issue in issues:
                print(str(issue))
        else:
            print("OK")
    return EXIT_VALIDATION if issues else EXIT_OK


def _cmd_score(args: argparse.Namespace) -> int:
    workload = _load_workload_file(args.workload)
    options = _effective_options(workload, args)
    _require_seed_for_montecarlo(options, args)
    allocation = _load_allocation_file(args.allocation, workload)
    report = score_allocation(workload, allocation, options, args.seed)
    _print_report(report, workload, args.format)
    return EXIT_OK


def _cmd_compare(args: argparse.Namespace) -> int:
    paths = list(args.allocations) + list(args.allocation_flags)
    if len(paths) < 2:
        raise _UsageError("compare needs at least two allocation documents")
    workload = _load_workload_file(args.workload)
    options = _effective_options(workload, args)
    _require_seed_for_montecarlo(options, args)
    named = []
    for path in paths:
        try:
            named.append((Path(path).name, _load_allocation_file(path, workload)))
        except ValidationError as exc:
            raise ValidationError(
                [type(issue)(issue.code, f"{path}: {issue.message}", issue.subject) for issue in exc.issues]
            ) from None
    ranking = compare_allocations(workload, named, options, args.seed)
    _print_ranking(ranking, args.format)
    return EXIT_OK


def _cmd_optimize(args: argparse.Namespace) -> int:
    workload = _load_workload_file(args.workload)
    if args.method == "sqrt":
        result = sqrt_rule_allocation(workload)
    elif args.method == "grid":
        result = grid_search(workload, args.grid_resolution)
    else:
        result = optimize_descent(workload, max_iters=args.max_iters, tol=args.tol)
    _print_optimization(result, args.format)
    if not result.converged and not args.allow_nonconverged:
        print(
            f"descent did not converge within {args.max_iters} iterations "
            "(pass --allow-nonconverged to accept the best allocation found)",
            file=sys.stderr,
        )
        return EXIT_COMPUTE
    if args.out:
        Path(args.out).write_text(
            json.dumps(allocation_to_dict(result.allocation), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
    return EXIT_OK


def _cmd_simulate(args: argparse.Namespace) -> int:
    if args.seed is None:
        raise _UsageError("simulate requires an explicit --seed")
    workload = _load_workload_file(args.workload)
    allocation = _load_allocation_file(args.allocation, workload)
    report, series = simulate_with_series(workload, allocation, args.trials, args.seed)
    _print_simulation(report, args.format)
    if args.dump_trials:
        _write_trial_dump(args.dump_trials, workload, report.trials, series)
    return EXIT_OK


def _write_trial_dump(path: str, workload: Workload, trials: int, series) -> None:
    columns = [f"stat:{stat_id}" for stat_id in workload.statistic_ids]
    columns += [f"eq:{equation.id}" for equation in workload.equations]
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["trial"] + columns)
        for t in range(trials):
            row = [t]
            for column in columns:
                value = series[column][t]
                row.append("" if value != value else repr(float(value)))
            writer.writerow(row)


_HANDLERS = {
    "validate": _cmd_validate,
    "score": _cmd_score,
    "compare": _cmd_compare,
    "optimize": _cmd_optimize,
    "simulate": _cmd_simulate,
}


def run_cli(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _HANDLERS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        for issue in exc.issues:
            print(str(issue), file=sys.stderr)
        return EXIT_VALIDATION
    except HeavyTailWarning as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except (DPBudgetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()

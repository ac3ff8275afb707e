"""
Command-line harness: generate ensembles, solve for means, benchmark solvers
Exit codes: 0 success, 1 solver failure, 2 invalid configuration
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv
from pydantic import ValidationError

load_dotenv()

from models.bench import BenchConfig
from models.ensemble import InitChoice, Method, SolverConfig
from services.benchmark_service import (
    SWEEP_SIZES,
    BenchmarkService,
    gen_ensemble,
    report_render,
    run_oracle_check,
)
from services.karcher_mean import load_ensemble, save_ensemble, solve_mean
from utils.errors import ConfigError, SpdFrankWolfeError
from utils.logger import RunContext, logger

EXIT_OK = 0
EXIT_SOLVER_FAILURE = 1
EXIT_INVALID_CONFIG = 2


def _init_choice(value: str) -> InitChoice:
    try:
        return InitChoice(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid init {value!r}; expected H or mid")


def _method(value: str) -> Method:
    try:
        return Method(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid method {value!r}; expected one of {[m.value for m in Method]}")


def _size(value: str) -> Tuple[int, int]:
    try:
        dim, count = (int(part) for part in value.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid size {value!r}; expected NxM, e.g. 40x10")
    return dim, count


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Frank-Wolfe solvers for the Karcher mean of SPD matrices")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Generate a random SPD ensemble as JSON")
    gen.add_argument("--dim", type=int, required=True, help="Matrix size N")
    gen.add_argument("--count", type=int, required=True, help="Number of matrices M")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--condition-number", type=float, default=10.0)
    gen.add_argument("--weights", default="uniform", help="uniform or random-simplex")
    gen.add_argument("--out", required=True, help="Output ensemble JSON file")

    mean = sub.add_parser("mean", help="Compute the mean of an ensemble file")
    mean.add_argument("ensemble", help="Ensemble JSON file")
    mean.add_argument("--method", type=_method, default=Method.RFW)
    mean.add_argument("--init", type=_init_choice, default=InitChoice.HARMONIC)
    mean.add_argument("--max-iter", type=int, default=None)
    mean.add_argument("--gap-tol", type=float, default=None)
    mean.add_argument("--out", default=".", help="Output directory for mean.json and the trace")

    bench = sub.add_parser("bench", help="Compare solvers on a generated ensemble")
    bench.add_argument("config", nargs="?", default=None, help="Benchmark config JSON (flags override it)")
    bench.add_argument("--seed", type=int, default=None)
    bench.add_argument("--dim", type=int, default=None)
    bench.add_argument("--count", type=int, default=None)
    bench.add_argument("--max-iter", type=int, default=None)
    bench.add_argument("--method", type=_method, action="append", default=None,
                       help="Method to run (repeatable, default all)")
    bench.add_argument("--init", type=_init_choice, default=None)
    bench.add_argument("--gap-tol", type=float, default=None)
    bench.add_argument("--out", default=None, help="Output directory")
    bench.add_argument("--no-timings", action="store_true", help="Write zero timings for byte-identical traces")

    check = sub.add_parser("oracle-check", help="Closed-form oracles against brute force")
    check.add_argument("--dim", type=int, default=2)
    check.add_argument("--trials", type=int, default=20)
    check.add_argument("--seed", type=int, default=0)

    sweep = sub.add_parser("sweep", help="Iterations-to-gap over sizes and initializations")
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--max-iter", type=int, default=200)
    sweep.add_argument("--gap-tol", type=float, default=1e-6)
    sweep.add_argument("--size", type=_size, action="append", default=None,
                       help="Matrix size and count as NxM (repeatable, default 40x10 100x10 40x60)")
    sweep.add_argument("--out", default=None)

    serve = sub.add_parser("serve", help="Run the HTTP API")
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def cmd_gen(args: argparse.Namespace) -> int:
    ensemble = gen_ensemble(args.dim, args.count, args.seed, args.condition_number, args.weights)
    path = save_ensemble(ensemble, args.out)
    print(f"wrote {ensemble.count} matrices of size {ensemble.dim} to {path}")
    return EXIT_OK


def cmd_mean(args: argparse.Namespace) -> int:
    ensemble = load_ensemble(args.ensemble)
    overrides: Dict[str, Any] = {"x0": args.init}
    if args.max_iter is not None:
        overrides["max_iter"] = args.max_iter
    if args.gap_tol is not None:
        overrides["gap_tol"] = args.gap_tol
    config = SolverConfig(**overrides)

    with RunContext(f"mean-{Path(args.ensemble).stem}", args.method.value):
        result = solve_mean(ensemble, args.method, config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "mean.json").write_text(json.dumps(result.to_json_dict(), indent=2))
    (out / f"{args.method.value}_trace.csv").write_text(result.trace.to_csv())
    (out / f"{args.method.value}_trace.json").write_text(result.trace.to_json())
    print(f"{args.method.value}: cost {result.trace.final_cost!r} after {result.trace.iterations} iterations "
          f"({result.trace.stop_reason})")
    return EXIT_OK


def _bench_config(args: argparse.Namespace) -> BenchConfig:
    data: Dict[str, Any] = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read benchmark config {args.config}: {exc}") from exc
    flags = {
        "seed": args.seed,
        "dim": args.dim,
        "count": args.count,
        "max_iter": args.max_iter,
        "methods": args.method,
        "init": args.init,
        "gap_tol": args.gap_tol,
        "output_dir": args.out,
    }
    data.update({key: value for key, value in flags.items() if value is not None})
    if args.no_timings:
        data["record_timings"] = False
    return BenchConfig.model_validate(data)


def cmd_bench(args: argparse.Namespace) -> int:
    config = _bench_config(args)
    report = BenchmarkService().run_benchmark(config)
    table, _ = report_render(report)
    print(f"reference cost {report.reference_cost!r}")
    print(table, end="")
    failed: List[str] = [row.method.value for row in report.methods if row.error]
    return EXIT_SOLVER_FAILURE if failed else EXIT_OK


def cmd_oracle_check(args: argparse.Namespace) -> int:
    summary = run_oracle_check(args.dim, args.trials, args.seed)
    print(json.dumps({**summary.model_dump(), "passed": summary.passed}, indent=2))
    return EXIT_OK if summary.passed else EXIT_SOLVER_FAILURE


def cmd_sweep(args: argparse.Namespace) -> int:
    sizes = args.size or SWEEP_SIZES
    report = BenchmarkService(args.out).sweep(sizes, max_iter=args.max_iter, gap_tol=args.gap_tol, seed=args.seed)
    for entry in report.entries:
        print(f"N={entry.dim:<4} M={entry.count:<4} init={entry.init.value:<9} {entry.method.value:<4} "
              f"iterations_to_gap={entry.iterations_to_gap} min_relative_gap={entry.min_relative_gap:.3e}")
    for key, sensitive in report.init_sensitivity.items():
        print(f"{key} init-sensitive={sensitive}")
    # entries short of gap_tol are reported, not failed
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from main import serve
    serve(args.host, args.port)
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "mean": cmd_mean,
    "bench": cmd_bench,
    "oracle-check": cmd_oracle_check,
    "sweep": cmd_sweep,
    "serve": cmd_serve,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_arg_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValidationError) as e:
        logger.error("Invalid configuration", error_message=str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID_CONFIG
    except SpdFrankWolfeError as e:
        logger.error("Solver failure", error=e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE


if __name__ == "__main__":
    sys.exit(main())

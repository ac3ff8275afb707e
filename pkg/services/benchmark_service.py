"""
Benchmark Service - random ensembles, solver comparisons and trace files
Writes per-method traces plus summary tables under an output directory
"""

import csv
import io
import json
import time
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from models.bench import (
    REPORT_COLUMNS,
    BenchConfig,
    BenchReport,
    MethodSummary,
    OracleCheckSummary,
    SweepEntry,
    SweepReport,
    WeightScheme,
)
from models.ensemble import InitChoice, MeanResult, Method, SolverConfig, WeightedEnsemble
from models.interval import OperatorInterval
from services.karcher_mean import feasible_interval, reference_mean, save_ensemble, solve_mean
from services.linear_oracles import (
    brute_force_oracle,
    euclid_oracle,
    feasibility_check,
    haar_orthogonal,
    make_interval,
    riem_objective,
    riem_oracle,
)
from services.manifold import congruence, log_frechet_derivative, symmetrize
from utils.errors import ConfigError, SpdFrankWolfeError
from utils.logger import RunContext, log_function_call, log_performance_issue, log_solver_event, logger

SWEEP_SIZES = ((40, 10), (100, 10), (40, 60))
SWEEP_INITS = (InitChoice.HARMONIC, InitChoice.MIDPOINT)


def random_spd(dim: int, rng: np.random.Generator, condition_number: float = 10.0) -> np.ndarray:
    """Q diag(lambda) Q^T, Q Haar-orthogonal, lambda log-uniform in [1, condition_number]"""
    if condition_number == 1.0:
        return np.eye(dim)
    Q = haar_orthogonal(dim, rng)
    eigenvalues = np.exp(rng.uniform(0.0, np.log(condition_number), dim))
    return symmetrize((Q * eigenvalues) @ Q.T)


def gen_ensemble(dim: int, count: int, seed: int, condition_number: float = 10.0,
                 weights: Union[WeightScheme, str] = WeightScheme.UNIFORM) -> WeightedEnsemble:
    """Deterministic random ensemble for a seed"""
    if dim < 1 or count < 1:
        raise ConfigError(f"ensemble needs dim >= 1 and count >= 1, got {dim} and {count}")
    if not condition_number >= 1.0:
        raise ConfigError(f"condition number must be >= 1, got {condition_number}")
    try:
        weights = WeightScheme(weights)
    except ValueError as exc:
        raise ConfigError(f"unknown weight scheme {weights!r}") from exc
    rng = np.random.default_rng(seed)
    matrices = np.array([random_spd(dim, rng, condition_number) for _ in range(count)])
    if weights == WeightScheme.UNIFORM:
        w = np.full(count, 1.0 / count)
    else:
        w = rng.dirichlet(np.ones(count))
        w = w / np.sum(w)
    return WeightedEnsemble(matrices=matrices, weights=w)


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def report_render(report: BenchReport) -> Tuple[str, str]:
    """Fixed-width text table and lossless CSV with columns REPORT_COLUMNS"""
    rows = [[_format_cell(getattr(row, col)) for col in REPORT_COLUMNS] for row in report.methods]
    widths = [max([len(col)] + [len(r[i]) for r in rows]) for i, col in enumerate(REPORT_COLUMNS)]
    lines = ["  ".join(col.ljust(widths[i]) for i, col in enumerate(REPORT_COLUMNS)).rstrip()]
    for r in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip())
    table = "\n".join(lines) + "\n"

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    writer.writerows(rows)
    return table, buffer.getvalue()


def parse_report_csv(text: str) -> List[MethodSummary]:
    """Inverse of the CSV half of report_render"""
    summaries = []
    for row in csv.DictReader(io.StringIO(text)):
        data = {key: value for key, value in row.items() if value != ""}
        data["converged"] = data.get("converged") == "true"
        summaries.append(MethodSummary.model_validate(data))
    return summaries


def random_interval(dim: int, rng: np.random.Generator) -> OperatorInterval:
    """L random SPD, U = L + B B^T with B Gaussian"""
    lower = random_spd(dim, rng, 10.0)
    B = rng.standard_normal((dim, dim))
    return make_interval(lower, lower + B @ B.T)


def _random_symmetric(dim: int, rng: np.random.Generator) -> np.ndarray:
    return symmetrize(rng.standard_normal((dim, dim)))


def _riem_gradient(S: np.ndarray, X: np.ndarray):
    """Gradient of Z -> tr(S log(XZX)): X Dlog_{XZX}[S] X"""
    def gradient(Z: np.ndarray) -> np.ndarray:
        return congruence(X, log_frechet_derivative(congruence(X, Z), S))
    return gradient


def run_oracle_check(dim: int, trials: int = 20, seed: int = 0, budget: int = 1000,
                     starts: int = 20, steps: int = 200) -> OracleCheckSummary:
    """
    Euclidean oracle vs brute force on random instances, and the Riemannian
    oracle vs brute force on commuting and on general instances. General
    instances also compare the safeguarded oracle with its bare closed form.
    """
    summary = OracleCheckSummary(dim=dim, trials=trials, seed=seed)
    started = time.perf_counter()
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        interval = random_interval(dim, rng)

        S = _random_symmetric(dim, rng)
        solution = euclid_oracle(S, interval)
        search = brute_force_oracle(lambda Z, S=S: float(np.sum(S * Z)), interval, budget, seed=trial,
                                    starts=starts, steps=steps, gradient=lambda Z, S=S: S)
        shortfall = search.objective_value - solution.objective_value
        summary.max_euclid_shortfall = max(summary.max_euclid_shortfall, shortfall)
        if shortfall > 1e-6 * (1.0 + abs(solution.objective_value)):
            summary.euclid_failures += 1
        summary.infeasible += int(not feasibility_check(solution.Z, interval).feasible)

        # commuting instance: S, X, L, U share eigenvectors
        Q = haar_orthogonal(dim, rng)
        lower_diag = np.exp(rng.uniform(0.0, np.log(10.0), dim))
        upper_diag = lower_diag + rng.uniform(0.1, 3.0, dim)

        def diag(values: np.ndarray, Q=Q) -> np.ndarray:
            return symmetrize((Q * values) @ Q.T)

        commuting = make_interval(diag(lower_diag), diag(upper_diag))
        S_c = diag(rng.standard_normal(dim))
        X_c = diag(np.exp(rng.uniform(-1.0, 1.0, dim)))
        solution = riem_oracle(S_c, X_c, commuting, safeguard=False)
        search = brute_force_oracle(lambda Z, S=S_c, X=X_c: riem_objective(S, X, Z), commuting, budget,
                                    seed=trial, starts=starts, steps=steps, gradient=_riem_gradient(S_c, X_c))
        shortfall = search.objective_value - solution.objective_value
        summary.max_riem_shortfall = max(summary.max_riem_shortfall, shortfall)
        if shortfall > 1e-6 * (1.0 + abs(solution.objective_value)):
            summary.riem_failures += 1
        summary.infeasible += int(not feasibility_check(solution.Z, commuting).feasible)

        # general instance: brute force on non-commuting data, and the safeguard
        # must never do worse than the closed form
        S_g = _random_symmetric(dim, rng)
        X_g = random_spd(dim, rng, 10.0)
        closed = riem_oracle(S_g, X_g, interval, safeguard=False)
        guarded = riem_oracle(S_g, X_g, interval)
        search = brute_force_oracle(lambda Z, S=S_g, X=X_g: riem_objective(S, X, Z), interval, budget,
                                    seed=trial, starts=starts, steps=steps, gradient=_riem_gradient(S_g, X_g))
        shortfall = search.objective_value - guarded.objective_value
        summary.max_riem_shortfall = max(summary.max_riem_shortfall, shortfall)
        if shortfall > 1e-6 * (1.0 + abs(guarded.objective_value)):
            summary.riem_failures += 1
        tolerance = 1e-10 * (1.0 + abs(closed.objective_value))
        if guarded.objective_value < closed.objective_value - tolerance:
            summary.safeguard_regressions += 1
        if guarded.objective_value > closed.objective_value + tolerance:
            summary.safeguard_improvements += 1
        summary.infeasible += int(not feasibility_check(closed.Z, interval).feasible)
        summary.infeasible += int(not feasibility_check(guarded.Z, interval).feasible)

    log_performance_issue("oracle_check", time.perf_counter() - started, threshold=120.0)
    logger.info("Oracle check finished", dim=dim, trials=trials, passed=summary.passed,
                euclid_failures=summary.euclid_failures, riem_failures=summary.riem_failures,
                safeguard_improvements=summary.safeguard_improvements)
    return summary


class BenchmarkService:
    """
    Runs solver comparisons and writes results under output_dir:
    <method>_trace.csv, <method>_trace.json, summary.json, summary.csv, report.txt
    """

    def __init__(self, output_dir: Optional[Union[str, Path]] = None):
        self.output_dir = Path(output_dir) if output_dir is not None else None

    def _run_dir(self, config: BenchConfig) -> Path:
        run_dir = self.output_dir if self.output_dir is not None else Path(config.output_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        return run_dir

    def _write_trace(self, run_dir: Path, result: MeanResult):
        name = result.method.value
        (run_dir / f"{name}_trace.csv").write_text(result.trace.to_csv())
        (run_dir / f"{name}_trace.json").write_text(result.trace.to_json())

    def _summarize(self, method: Method, result: MeanResult, reference_cost: float, wall_time: float,
                   interval: OperatorInterval) -> MethodSummary:
        final_cost = result.trace.final_cost
        gap = final_cost - reference_cost
        counts = result.trace.counts
        return MethodSummary(
            method=method,
            final_cost=final_cost,
            relative_gap=gap / reference_cost if reference_cost > 0 else gap,
            iterations=result.trace.iterations,
            grad_calls=counts.grad_calls,
            cost_calls=counts.cost_calls,
            report_cost_calls=counts.report_cost_calls,
            oracle_calls=counts.oracle_calls,
            wall_time_s=wall_time,
            converged=result.trace.converged,
            means_margin=feasibility_check(result.mean, interval).margin,
        )

    @log_function_call
    def run_benchmark(self, config: BenchConfig) -> BenchReport:
        """Run every configured method on one generated ensemble"""
        run_dir = self._run_dir(config)
        run_id = f"bench-{config.seed}-{config.dim}x{config.count}"
        ensemble = gen_ensemble(config.dim, config.count, config.seed, config.condition_number, config.weights)
        save_ensemble(ensemble, run_dir / "ensemble.json")
        interval = feasible_interval(ensemble)

        with RunContext(run_id):
            _, reference_cost = reference_mean(ensemble)
            log_solver_event("benchmark_started", "bench", {
                "dim": config.dim, "count": config.count, "methods": [m.value for m in config.methods],
                "reference_cost": reference_cost,
            })
            solver_config = SolverConfig(
                x0=config.init,
                max_iter=config.max_iter,
                gap_tol=config.gap_tol,
                oracle_refine_iters=config.oracle_refine_iters,
                record_timings=config.record_timings,
                reference_cost=reference_cost,
            )

            report = BenchReport(config=config, reference_cost=reference_cost)
            for method in config.methods:
                with RunContext(run_id, method.value):
                    started = time.perf_counter()
                    try:
                        result = solve_mean(ensemble, method, solver_config)
                    except SpdFrankWolfeError as e:
                        logger.error(f"Benchmark method {method.value} failed", error=e)
                        report.methods.append(MethodSummary(method=method, error=str(e)))
                        continue
                    wall_time = time.perf_counter() - started if config.record_timings else 0.0
                    self._write_trace(run_dir, result)
                    report.methods.append(self._summarize(method, result, reference_cost, wall_time, interval))

        self.write_report(report, run_dir)
        log_solver_event("benchmark_finished", "bench", {"run_dir": str(run_dir)})
        return report

    def write_report(self, report: BenchReport, run_dir: Path):
        table, table_csv = report_render(report)
        (run_dir / "summary.json").write_text(json.dumps(report.model_dump(mode="json"), indent=2))
        (run_dir / "summary.csv").write_text(table_csv)
        header = f"reference_cost {report.reference_cost!r}\n"
        (run_dir / "report.txt").write_text(header + table)

    def sweep(self, sizes: Iterable[Tuple[int, int]] = SWEEP_SIZES,
              inits: Sequence[InitChoice] = SWEEP_INITS,
              methods: Sequence[Method] = (Method.RFW, Method.EFW),
              max_iter: int = 200, gap_tol: float = 1e-6, seed: int = 0,
              condition_number: float = 10.0) -> SweepReport:
        """
        Iterations-to-gap over matrix sizes and initializations. An entry
        that never reaches gap_tol keeps iterations_to_gap=None and reports
        the smallest relative gap it did reach.
        """
        report = SweepReport(gap_tol=gap_tol)
        for dim, count in sizes:
            ensemble = gen_ensemble(dim, count, seed, condition_number)
            fingerprints = {}
            for init in inits:
                config = SolverConfig(x0=init, max_iter=max_iter, gap_tol=gap_tol, record_timings=False)
                for method in methods:
                    with RunContext(f"sweep-{seed}-{dim}x{count}", method.value):
                        result = solve_mean(ensemble, method, config)
                    trace = result.trace
                    hit = next((r.k for r in trace.records if r.fw_gap <= gap_tol * (1.0 + abs(r.cost))), None)
                    relative = [r.fw_gap / (1.0 + abs(r.cost)) for r in trace.records]
                    fingerprint = trace.fingerprint()
                    fingerprints.setdefault(method, set()).add(fingerprint)
                    report.entries.append(SweepEntry(
                        dim=dim, count=count, init=init, method=method,
                        iterations=trace.iterations, iterations_to_gap=hit,
                        final_gap=trace.records[-1].fw_gap, min_relative_gap=min(relative),
                        converged=trace.converged,
                        fingerprint=fingerprint,
                    ))
            for method, seen in fingerprints.items():
                report.init_sensitivity[f"{dim}x{count}:{method.value}"] = len(seen) > 1
        if self.output_dir is not None:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            (self.output_dir / "sweep.json").write_text(json.dumps(report.model_dump(mode="json"), indent=2))
        return report

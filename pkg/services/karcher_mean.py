"""
Karcher Mean Service - weighted Riemannian mean of SPD matrices
Objective and gradients, the harmonic/arithmetic feasible interval,
Frank-Wolfe solvers and the steepest-descent / Richardson baselines
"""

import functools
import json
import threading
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.linalg
from pydantic import ValidationError

from models.ensemble import EnsemblePayload, InitChoice, MeanResult, Method, SolverConfig, WeightedEnsemble
from models.interval import OperatorInterval
from models.solver import CallCounts, ConvergenceTrace, IterationRecord, ObjectiveProblem
from services.frank_wolfe import efw_solve, report_gap, rfw_solve
from services.linear_oracles import make_interval
from services.manifold import (
    _square,
    congruence,
    distance,
    exp_map,
    expm_sym,
    inner,
    logm_spd,
    riem_grad,
    riem_norm,
    sqrt_pair,
    symmetrize,
)
from utils.errors import ConfigError, DimensionError, NonFiniteError, SolverFailure
from utils.logger import log_function_call, log_solver_event, log_solver_iteration, logger

RICHARDSON_DEFAULT_ALPHA = 0.1
RICHARDSON_MAX_HALVINGS = 30
REFERENCE_GRAD_TOL = 1e-12
REFERENCE_CACHE_SIZE = 32

# least recently used entry first
_reference_cache: "OrderedDict[str, Tuple[np.ndarray, float]]" = OrderedDict()
_reference_lock = threading.Lock()


def _check_dims(X: np.ndarray, ens: WeightedEnsemble) -> np.ndarray:
    X = symmetrize(_square(X))
    if X.shape[0] != ens.dim:
        raise DimensionError(f"point has dim {X.shape[0]}, ensemble has dim {ens.dim}")
    return X


def _weighted_sum(term: Callable[[int], Union[float, np.ndarray]], ens: WeightedEnsemble, workers: int):
    """sum_i w_i term(i); terms may run on a thread pool, reduction is always in index order"""
    if workers > 1 and ens.count > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            terms = list(pool.map(term, range(ens.count)))
    else:
        terms = [term(i) for i in range(ens.count)]
    total = ens.weights[0] * terms[0]
    for i in range(1, ens.count):
        total = total + ens.weights[i] * terms[i]
    return total


def karcher_cost(X, ens: WeightedEnsemble, workers: int = 1) -> float:
    """sum_i w_i d(X, A_i)^2"""
    X = _check_dims(X, ens)
    return float(_weighted_sum(lambda i: distance(X, ens.matrices[i]) ** 2, ens, workers))


def karcher_eucl_grad(X, ens: WeightedEnsemble, workers: int = 1) -> np.ndarray:
    """
    sum_i w_i X^{-1/2} log(X^{1/2} A_i^{-1} X^{1/2}) X^{-1/2}, which equals
    sum_i w_i X^{-1} log(X A_i^{-1}). Half the calculus gradient of karcher_cost.
    """
    X = _check_dims(X, ens)
    _, inv_root = sqrt_pair(X)
    # log(X^{1/2} A^{-1} X^{1/2}) = -log(X^{-1/2} A X^{-1/2})
    grad = _weighted_sum(
        lambda i: -congruence(inv_root, logm_spd(congruence(inv_root, ens.matrices[i]))), ens, workers
    )
    return symmetrize(grad)


def karcher_riem_grad(X, ens: WeightedEnsemble, workers: int = 1) -> np.ndarray:
    """X grad X = -sum_i w_i log_map(X, A_i)"""
    X = _check_dims(X, ens)
    return riem_grad(X, karcher_eucl_grad(X, ens, workers))


def harmonic_mean(ens: WeightedEnsemble) -> np.ndarray:
    inverses = [scipy.linalg.inv(A) for A in ens.matrices]
    return symmetrize(scipy.linalg.inv(symmetrize(np.tensordot(ens.weights, np.array(inverses), axes=1))))


def arithmetic_mean(ens: WeightedEnsemble) -> np.ndarray:
    return symmetrize(np.tensordot(ens.weights, ens.matrices, axes=1))


def feasible_interval(ens: WeightedEnsemble) -> OperatorInterval:
    """[H, A]: the Karcher mean lies between the harmonic and arithmetic means"""
    return make_interval(harmonic_mean(ens), arithmetic_mean(ens))


def commuting_mean(ens: WeightedEnsemble) -> np.ndarray:
    """exp(sum_i w_i log A_i); the Karcher mean when the A_i commute"""
    return expm_sym(np.tensordot(ens.weights, np.array([logm_spd(A) for A in ens.matrices]), axes=1))


def initial_point(ens: WeightedEnsemble, choice: Union[InitChoice, str]) -> np.ndarray:
    choice = InitChoice(choice)
    if choice == InitChoice.HARMONIC:
        return harmonic_mean(ens)
    if choice == InitChoice.ARITHMETIC:
        return arithmetic_mean(ens)
    return symmetrize((harmonic_mean(ens) + arithmetic_mean(ens)) / 2)


def karcher_problem(ens: WeightedEnsemble, workers: int = 1) -> ObjectiveProblem:
    """Karcher objective on [H, A] with the calculus gradient 2 * karcher_eucl_grad"""
    return ObjectiveProblem(
        cost=lambda X: karcher_cost(X, ens, workers),
        eucl_grad=lambda X: 2.0 * karcher_eucl_grad(X, ens, workers),
        interval=feasible_interval(ens),
        name="karcher",
    )


def _is_positive_definite(X: np.ndarray) -> bool:
    if not np.all(np.isfinite(X)):
        return False
    try:
        scipy.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return False
    return True


def _guarded_richardson(X: np.ndarray, grad: np.ndarray, alpha: float) -> Tuple[np.ndarray, float]:
    for _ in range(RICHARDSON_MAX_HALVINGS + 1):
        candidate = symmetrize(X - alpha * grad)
        if _is_positive_definite(candidate):
            return candidate, alpha
        alpha *= 0.5
    raise SolverFailure(f"Richardson step lost positive definiteness after {RICHARDSON_MAX_HALVINGS} halvings")


def richardson_step(X, ens: WeightedEnsemble, alpha: float = RICHARDSON_DEFAULT_ALPHA,
                    workers: int = 1) -> np.ndarray:
    """
    X - alpha X sum_i w_i log(A_i^{-1} X). The step is halved until the
    result is positive definite (at most 30 times).
    """
    if alpha <= 0:
        raise ConfigError(f"Richardson step must be positive, got {alpha}")
    X = _check_dims(X, ens)
    return _guarded_richardson(X, karcher_riem_grad(X, ens, workers), alpha)[0]


def adaptive_richardson_alpha(X, ens: WeightedEnsemble) -> float:
    """
    theta = 2 / sum_i w_i ((c_i + 1) / (c_i - 1)) log c_i with c_i the
    condition number of X^{-1/2} A_i X^{-1/2}; each term tends to 2 as c_i -> 1.
    """
    X = _check_dims(X, ens)
    total = 0.0
    for w, A in zip(ens.weights, ens.matrices):
        eigs = scipy.linalg.eigh(A, X, eigvals_only=True)
        c = float(eigs[-1] / eigs[0])
        if c - 1.0 <= 1e-8:
            total += w * 2.0
        else:
            total += w * (c + 1.0) / (c - 1.0) * np.log(c)
    return 2.0 / total


class _BaselineRecorder:
    """Trace bookkeeping shared by the steepest-descent and Richardson baselines"""

    def __init__(self, method: Method, ens: WeightedEnsemble, config: SolverConfig):
        self.method = method.value
        self.ens = ens
        self.config = config
        self.problem = karcher_problem(ens, config.workers)
        self.counts = CallCounts()
        self.trace = ConvergenceTrace(method=self.method)

    def cost(self, X: np.ndarray, report: bool = False) -> float:
        if report:
            self.counts.report_cost_calls += 1
        else:
            self.counts.cost_calls += 1
        value = karcher_cost(X, self.ens, self.config.workers)
        if not np.isfinite(value):
            raise NonFiniteError(f"non-finite Karcher cost in {self.method}")
        return value

    def grad(self, X: np.ndarray) -> np.ndarray:
        self.counts.grad_calls += 1
        return karcher_riem_grad(X, self.ens, self.config.workers)

    def gap(self, X: np.ndarray) -> float:
        return report_gap(self.problem, X, self.config.oracle_refine_iters)

    def record(self, k: int, cost: float, gap: float, step: float, started: float, X: np.ndarray):
        elapsed = time.perf_counter() - started if self.config.record_timings else 0.0
        if self.config.keep_iterates:
            self.trace.iterates.append(X)
        self.trace.append(IterationRecord(k=k, cost=cost, fw_gap=gap, step_size=step, iter_time_s=elapsed))
        log_solver_iteration(self.method, k, cost, gap, step)

    def finish(self, X: np.ndarray, stop_reason: str, converged: bool) -> ConvergenceTrace:
        self.trace.final_point = X
        self.trace.stop_reason = stop_reason
        self.trace.converged = converged
        self.trace.counts = self.counts
        return self.trace


def richardson_solve(ens: WeightedEnsemble, config: Optional[SolverConfig] = None,
                     x0=None) -> MeanResult:
    """Richardson-like fixed-point iteration, fixed or adaptive step"""
    config = config or SolverConfig()
    X = _check_dims(x0 if x0 is not None else initial_point(ens, config.x0), ens)
    recorder = _BaselineRecorder(Method.RICHARDSON, ens, config)
    log_solver_event("started", recorder.method, {"dim": ens.dim, "count": ens.count, "max_iter": config.max_iter})

    stop_reason, converged = "max_iter", False
    for k in range(config.max_iter + 1):
        started = time.perf_counter()
        cost = recorder.cost(X, report=True)
        gap = recorder.gap(X)
        if gap <= config.gap_tol * (1.0 + abs(cost)):
            recorder.record(k, cost, gap, 0.0, started, X)
            stop_reason, converged = "gap_tol", True
            break
        if k == config.max_iter:
            recorder.record(k, cost, gap, 0.0, started, X)
            break
        grad = recorder.grad(X)
        alpha = adaptive_richardson_alpha(X, ens) if config.richardson_adaptive else config.richardson_alpha
        X_next, alpha = _guarded_richardson(X, grad, alpha)
        recorder.record(k, cost, gap, alpha, started, X)
        X = X_next

    trace = recorder.finish(X, stop_reason, converged)
    log_solver_event("finished", recorder.method, {"iterations": trace.iterations, "final_cost": trace.final_cost})
    return MeanResult(mean=X, trace=trace, method=Method.RICHARDSON, reference_cost=config.reference_cost)


def _armijo_step(X: np.ndarray, grad: np.ndarray, cost: float, cost_fn: Callable[[np.ndarray], float],
                 config: SolverConfig) -> Tuple[Optional[np.ndarray], float, float]:
    """Backtracking along exp_map(X, -t grad); (None, 0, cost) when exhausted"""
    slope = inner(X, grad, grad)
    t = config.rsd_initial_step
    for _ in range(config.rsd_max_halvings):
        candidate = exp_map(X, -t * grad)
        candidate_cost = cost_fn(candidate)
        if candidate_cost <= cost - config.rsd_sufficient_decrease * t * slope:
            return candidate, t, candidate_cost
        t *= config.rsd_shrink
    return None, 0.0, cost


def rsd_solve(ens: WeightedEnsemble, config: Optional[SolverConfig] = None, x0=None) -> MeanResult:
    """Riemannian steepest descent with Armijo backtracking on the Karcher cost"""
    config = config or SolverConfig()
    X = _check_dims(x0 if x0 is not None else initial_point(ens, config.x0), ens)
    recorder = _BaselineRecorder(Method.RSD, ens, config)
    log_solver_event("started", recorder.method, {"dim": ens.dim, "count": ens.count, "max_iter": config.max_iter})

    stop_reason, converged = "max_iter", False
    cost = recorder.cost(X)
    for k in range(config.max_iter + 1):
        started = time.perf_counter()
        gap = recorder.gap(X)
        if gap <= config.gap_tol * (1.0 + abs(cost)):
            recorder.record(k, cost, gap, 0.0, started, X)
            stop_reason, converged = "gap_tol", True
            break
        if k == config.max_iter:
            recorder.record(k, cost, gap, 0.0, started, X)
            break
        grad = recorder.grad(X)
        X_next, t, cost_next = _armijo_step(X, grad, cost, recorder.cost, config)
        recorder.record(k, cost, gap, t, started, X)
        if X_next is None:
            stop_reason, converged = "line_search_exhausted", True
            break
        X, cost = X_next, cost_next

    trace = recorder.finish(X, stop_reason, converged)
    log_solver_event("finished", recorder.method, {"iterations": trace.iterations, "final_cost": trace.final_cost})
    return MeanResult(mean=X, trace=trace, method=Method.RSD, reference_cost=config.reference_cost)


@log_function_call
def reference_mean(ens: WeightedEnsemble, grad_tol: float = REFERENCE_GRAD_TOL,
                   max_iter: int = 10000) -> Tuple[np.ndarray, float]:
    """
    High-accuracy optimum (X*, cost(X*)): steepest descent until
    ||grad||_X <= grad_tol (1 + cost), then unit fixed-point steps while the
    gradient norm keeps shrinking. The last REFERENCE_CACHE_SIZE results are
    cached per ensemble fingerprint.
    """
    key = f"{ens.fingerprint()}:{grad_tol!r}:{max_iter}"
    with _reference_lock:
        if key in _reference_cache:
            _reference_cache.move_to_end(key)
            X, cost = _reference_cache[key]
            return X.copy(), cost

    config = SolverConfig(max_iter=max_iter, gap_tol=0.0)
    X = initial_point(ens, InitChoice.MIDPOINT)
    cost = karcher_cost(X, ens)
    cost_fn = functools.partial(karcher_cost, ens=ens)
    for _ in range(max_iter):
        grad = karcher_riem_grad(X, ens)
        if riem_norm(X, grad) <= grad_tol * (1.0 + cost):
            break
        X_next, _, cost_next = _armijo_step(X, grad, cost, cost_fn, config)
        if X_next is None:
            break
        X, cost = X_next, cost_next

    # polish with unit fixed-point steps once Armijo stalls at rounding level
    norm = riem_norm(X, karcher_riem_grad(X, ens))
    for _ in range(50):
        if norm <= grad_tol * (1.0 + cost):
            break
        candidate = exp_map(X, -karcher_riem_grad(X, ens))
        candidate_norm = riem_norm(candidate, karcher_riem_grad(candidate, ens))
        if candidate_norm >= norm:
            break
        X, norm = candidate, candidate_norm
    cost = karcher_cost(X, ens)

    logger.debug("Reference mean computed", dim=ens.dim, count=ens.count, cost=cost, grad_norm=norm)
    with _reference_lock:
        _reference_cache[key] = (X.copy(), cost)
        _reference_cache.move_to_end(key)
        while len(_reference_cache) > REFERENCE_CACHE_SIZE:
            _reference_cache.popitem(last=False)
    return X, cost


def solve_mean(ens: WeightedEnsemble, method: Union[Method, str] = Method.RFW,
               config: Optional[SolverConfig] = None) -> MeanResult:
    """Karcher mean by Frank-Wolfe (RFW/EFW) on [H, A] or by a baseline (RSD/Richardson)"""
    try:
        method = Method(method)
    except ValueError as exc:
        raise ConfigError(f"unknown method {method!r}; expected one of {[m.value for m in Method]}") from exc
    config = config or SolverConfig()

    if method == Method.RSD:
        return rsd_solve(ens, config)
    if method == Method.RICHARDSON:
        return richardson_solve(ens, config)

    problem = karcher_problem(ens, config.workers)
    x0 = initial_point(ens, config.x0)
    if method == Method.RFW:
        trace = rfw_solve(
            problem, x0, config.step_rule, config.max_iter, config.gap_tol,
            keep_iterates=config.keep_iterates, refine_iters=config.oracle_refine_iters,
            reference_cost=config.reference_cost, record_timings=config.record_timings,
        )
    else:
        trace = efw_solve(
            problem, x0, config.step_rule, config.max_iter, config.gap_tol,
            keep_iterates=config.keep_iterates, reference_cost=config.reference_cost,
            record_timings=config.record_timings,
        )
    return MeanResult(mean=trace.final_point, trace=trace, method=method, reference_cost=config.reference_cost)


def _first_violation(error: ValidationError) -> str:
    first = error.errors()[0]
    location = ".".join(str(part) for part in first.get("loc", ())) or "ensemble"
    return f"{location}: {first.get('msg')}"


def parse_ensemble(data) -> WeightedEnsemble:
    """Validate an ensemble document; ConfigError names the first violation"""
    try:
        return EnsemblePayload.model_validate(data).to_ensemble()
    except ValidationError as exc:
        raise ConfigError(f"invalid ensemble: {_first_violation(exc)}") from exc


def load_ensemble(path: Union[str, Path]) -> WeightedEnsemble:
    path = Path(path)
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"ensemble file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"ensemble file {path} is not valid JSON: {exc}") from exc
    return parse_ensemble(data)


def save_ensemble(ens: WeightedEnsemble, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(EnsemblePayload.from_ensemble(ens).model_dump(), f, indent=2)
    return path

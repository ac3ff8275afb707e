"""
Frank-Wolfe Service - Euclidean and Riemannian conditional-gradient solvers
Step-size rules, FW-gap certificates, curvature estimation and call instrumentation
"""

import itertools
import time
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from models.solver import (
    CallCounts,
    ConvergenceTrace,
    CurvatureEstimate,
    CurvatureMethod,
    Geometry,
    IterationRecord,
    ObjectiveProblem,
    StepRule,
    StepVariant,
)
from services.linear_oracles import euclid_oracle, feasibility_check, random_feasible_point, riem_oracle
from services.manifold import _square, congruence, distance, geodesic, log_map, sqrt_pair, symmetrize
from utils.errors import InconsistencyError, InfeasiblePointError, NonFiniteError, RangeError
from utils.logger import log_solver_event, log_solver_iteration, logger

# gaps below -GAP_NEGATIVE_RTOL * max(1, ||G|| ||x||) indicate an oracle or gradient bug
GAP_NEGATIVE_RTOL = 1e-8
CURVATURE_ETAS = tuple(np.round(np.arange(1, 11) * 0.1, 1))


class CountingProblem:
    """Wraps an ObjectiveProblem and tallies cost / gradient / oracle calls"""

    def __init__(self, problem: ObjectiveProblem):
        self.problem = problem
        self.interval = problem.interval
        self.counts = CallCounts()

    def cost(self, x: np.ndarray) -> float:
        self.counts.cost_calls += 1
        return self._finite_cost(x)

    def report_cost(self, x: np.ndarray) -> float:
        """Cost evaluated only for the trace, not used by the iteration"""
        self.counts.report_cost_calls += 1
        return self._finite_cost(x)

    def grad(self, x: np.ndarray) -> np.ndarray:
        self.counts.grad_calls += 1
        G = np.asarray(self.problem.eucl_grad(x), dtype=float)
        if not np.all(np.isfinite(G)):
            raise NonFiniteError(f"non-finite gradient in {self.problem.name}")
        return symmetrize(G)

    def _finite_cost(self, x: np.ndarray) -> float:
        value = float(self.problem.cost(x))
        if not np.isfinite(value):
            raise NonFiniteError(f"non-finite cost {value} in {self.problem.name}")
        return value


def step_size(rule: StepRule, k: int, current_cost: Optional[float] = None,
              gap: Optional[float] = None) -> float:
    """
    classic: 2 / (k + 2)
    adaptive_linear: min(1, r sqrt(mu (cost - f*)) / (sqrt(2) M)), 0 once cost <= f*
    efw_optimal: min(1, gap / M)
    """
    if k < 0:
        raise RangeError(f"iteration index must be nonnegative, got {k}")
    if rule.variant == StepVariant.CLASSIC:
        return 2.0 / (k + 2)
    if rule.variant == StepVariant.ADAPTIVE_LINEAR:
        if current_cost is None:
            raise RangeError("adaptive_linear step rule needs the current cost")
        delta = max(current_cost - rule.f_star, 0.0)
        return min(1.0, rule.r * np.sqrt(rule.mu * delta) / (np.sqrt(2.0) * rule.M))
    if gap is None:
        raise RangeError("efw_optimal step rule needs the current FW-gap")
    return min(1.0, max(gap, 0.0) / rule.M)


def _checked_gap(gap: float, G: np.ndarray, x: np.ndarray) -> float:
    threshold = -GAP_NEGATIVE_RTOL * max(1.0, float(np.linalg.norm(G)) * float(np.linalg.norm(x)))
    if gap < threshold:
        raise InconsistencyError(f"negative FW-gap {gap:.3e} (threshold {threshold:.3e})")
    return max(gap, 0.0)


def _euclidean_direction(x: np.ndarray, G: np.ndarray, interval, refine_iters: int) -> Tuple[np.ndarray, float]:
    z = euclid_oracle(-G, interval).Z
    return z, float(np.sum(G * (x - z)))


def _riemannian_direction(x: np.ndarray, G: np.ndarray, interval, refine_iters: int) -> Tuple[np.ndarray, float]:
    # max tr(S log(x^{-1/2} z x^{-1/2})) with S = -x^{1/2} G x^{1/2}
    root, inv_root = sqrt_pair(x)
    solution = riem_oracle(-congruence(root, G), inv_root, interval, refine_iters=refine_iters)
    report = feasibility_check(solution.Z, interval)
    if not report.feasible:
        raise InconsistencyError(f"Riemannian oracle returned an infeasible point (margin {report.margin:.3e})")
    return solution.Z, solution.objective_value


def fw_gap(problem: ObjectiveProblem, x, geometry: Union[Geometry, str] = Geometry.RIEMANNIAN,
           refine_iters: int = 0) -> float:
    """Frank-Wolfe gap at x: zero exactly at the constrained optimum"""
    geometry = Geometry(geometry)
    x = symmetrize(_square(x))
    G = symmetrize(np.asarray(problem.eucl_grad(x), dtype=float))
    direction = _riemannian_direction if geometry == Geometry.RIEMANNIAN else _euclidean_direction
    _, gap = direction(x, G, problem.interval, refine_iters)
    return _checked_gap(gap, G, x)


def report_gap(problem: ObjectiveProblem, x, refine_iters: int = 0) -> float:
    """
    Riemannian FW-gap for iterates of solvers that may leave the interval;
    not a certificate there, so negative values are clipped without checking.
    """
    x = symmetrize(_square(x))
    G = symmetrize(np.asarray(problem.eucl_grad(x), dtype=float))
    _, gap = _riemannian_direction(x, G, problem.interval, refine_iters)
    return max(gap, 0.0)


def _euclidean_update(x: np.ndarray, z: np.ndarray, s: float) -> np.ndarray:
    return symmetrize((1.0 - s) * x + s * z)


def _fw_loop(problem: ObjectiveProblem, x0, rule: Optional[StepRule], max_iter: int, gap_tol: float,
             geometry: Geometry, keep_iterates: bool, refine_iters: int,
             reference_cost: Optional[float], record_timings: bool) -> ConvergenceTrace:
    rule = rule or StepRule.classic()
    if max_iter < 0:
        raise RangeError(f"max_iter must be nonnegative, got {max_iter}")
    x = symmetrize(_square(x0, "x0"))
    report = feasibility_check(x, problem.interval)
    if not report.feasible:
        raise InfeasiblePointError(f"starting point is outside the interval (margin {report.margin:.3e})", report=report)

    riemannian = geometry == Geometry.RIEMANNIAN
    method = "rfw" if riemannian else "efw"
    direction = _riemannian_direction if riemannian else _euclidean_direction
    update = geodesic if riemannian else _euclidean_update
    counting = CountingProblem(problem)
    trace = ConvergenceTrace(method=method)

    log_solver_event("started", method, {"problem": problem.name, "dim": problem.interval.dim,
                                         "max_iter": max_iter, "rule": rule.variant.value})

    for k in range(max_iter + 1):
        iter_start = time.perf_counter()
        G = counting.grad(x)

        oracle_start = time.perf_counter()
        z, gap = direction(x, G, problem.interval, refine_iters)
        oracle_time = time.perf_counter() - oracle_start
        counting.counts.oracle_calls += 1
        gap = _checked_gap(gap, G, x)

        if rule.variant == StepVariant.ADAPTIVE_LINEAR:
            cost = counting.cost(x)
        else:
            cost = counting.report_cost(x)

        if k == 0:
            trace.h0 = cost - reference_cost if reference_cost is not None else gap

        stop_reason = None
        s = 0.0
        if gap <= gap_tol * (1.0 + abs(cost)):
            stop_reason = "gap_tol"
        elif k == max_iter:
            stop_reason = "max_iter"
        else:
            s = step_size(rule, k, cost, gap)
            if s <= 0.0:
                stop_reason = "step_zero"

        if keep_iterates:
            trace.iterates.append(x)
            trace.oracle_points.append(z)

        if stop_reason is None:
            x = update(x, z, s)

        iter_time = time.perf_counter() - iter_start
        trace.append(IterationRecord(
            k=k,
            cost=cost,
            fw_gap=gap,
            step_size=s,
            oracle_time_s=oracle_time if record_timings else 0.0,
            iter_time_s=iter_time if record_timings else 0.0,
        ))
        log_solver_iteration(method, k, cost, gap, s)

        if stop_reason is not None:
            trace.stop_reason = stop_reason
            trace.converged = stop_reason != "max_iter"
            break

    trace.final_point = x
    trace.counts = counting.counts
    log_solver_event("finished", method, {
        "iterations": trace.iterations,
        "final_cost": trace.final_cost,
        "stop_reason": trace.stop_reason,
        "grad_calls": trace.counts.grad_calls,
    })
    return trace


def efw_solve(problem: ObjectiveProblem, x0, rule: Optional[StepRule] = None, max_iter: int = 200,
              gap_tol: float = 1e-8, *, keep_iterates: bool = False,
              reference_cost: Optional[float] = None, record_timings: bool = True) -> ConvergenceTrace:
    """
    Euclidean Frank-Wolfe: x_{k+1} = (1 - s_k) x_k + s_k z_k with z_k from
    the Euclidean oracle on -grad. Iterates stay feasible as convex combinations.
    """
    return _fw_loop(problem, x0, rule, max_iter, gap_tol, Geometry.EUCLIDEAN, keep_iterates, 0,
                    reference_cost, record_timings)


def rfw_solve(problem: ObjectiveProblem, x0, rule: Optional[StepRule] = None, max_iter: int = 200,
              gap_tol: float = 1e-8, *, keep_iterates: bool = False, refine_iters: int = 0,
              reference_cost: Optional[float] = None, record_timings: bool = True) -> ConvergenceTrace:
    """
    Riemannian Frank-Wolfe: x_{k+1} = x_k #_{s_k} z_k with z_k from the
    Riemannian oracle. The recorded gap is -<x^{1/2} grad x^{1/2}, log(x^{-1/2} z x^{-1/2})>.
    """
    return _fw_loop(problem, x0, rule, max_iter, gap_tol, Geometry.RIEMANNIAN, keep_iterates, refine_iters,
                    reference_cost, record_timings)


def estimate_f_star(problem: ObjectiveProblem, x0, geometry: Union[Geometry, str] = Geometry.RIEMANNIAN,
                    max_iter: int = 50) -> float:
    """Lower bound on the optimum from a classic-step run: best cost minus its own gap"""
    geometry = Geometry(geometry)
    solve = rfw_solve if geometry == Geometry.RIEMANNIAN else efw_solve
    trace = solve(problem, x0, StepRule.classic(), max_iter=max_iter, gap_tol=0.0, record_timings=False)
    best = min(trace.records, key=lambda r: r.cost)
    return best.cost - best.fw_gap


def _bregman_gap(problem: ObjectiveProblem, x: np.ndarray, y: np.ndarray, cost_x: float,
                 G: np.ndarray, riemannian: bool) -> float:
    step = log_map(x, y) if riemannian else y - x
    return float(problem.cost(y)) - cost_x - float(np.sum(G * step))


def estimate_curvature(problem: ObjectiveProblem, samples: int = 100, seed: int = 0,
                       geometry: Union[Geometry, str] = Geometry.RIEMANNIAN,
                       method: Union[CurvatureMethod, str] = CurvatureMethod.SAMPLED,
                       lipschitz: Optional[float] = None,
                       pairs: Optional[Sequence[Tuple[np.ndarray, np.ndarray]]] = None) -> CurvatureEstimate:
    """
    Sampled curvature constant: max over feasible x, z and eta in {0.1, ..., 1}
    of (2 / eta^2) [phi(y) - phi(x) - <grad phi(x), Exp_x^{-1}(y)>] with y on
    the segment (or geodesic) from x to z at eta. This is a lower bound on the
    supremum. With method=lipschitz_bound the result is L * diam^2, where the
    diameter is the largest pairwise distance among the sampled points.
    """
    geometry = Geometry(geometry)
    method = CurvatureMethod(method)
    if samples < 10:
        raise RangeError(f"curvature estimation needs at least 10 samples, got {samples}")
    if method == CurvatureMethod.LIPSCHITZ_BOUND and lipschitz is None:
        raise RangeError("lipschitz_bound curvature requires a Lipschitz constant")

    riemannian = geometry == Geometry.RIEMANNIAN
    interval = problem.interval
    rng = np.random.default_rng(seed)

    candidate_pairs: List[Tuple[np.ndarray, np.ndarray]] = [
        (interval.lower, interval.upper),
        (interval.upper, interval.lower),
    ]
    for index in range(samples):
        x = random_feasible_point(interval, rng, extreme=False)
        z = random_feasible_point(interval, rng, extreme=bool(index % 2))
        candidate_pairs.append((x, z))
    for x, z in pairs or []:
        candidate_pairs.append((symmetrize(_square(x)), symmetrize(_square(z))))

    M_phi = 0.0
    if method == CurvatureMethod.SAMPLED:
        for x, z in candidate_pairs:
            cost_x = float(problem.cost(x))
            G = symmetrize(np.asarray(problem.eucl_grad(x), dtype=float))
            for eta in CURVATURE_ETAS:
                y = geodesic(x, z, eta) if riemannian else _euclidean_update(x, z, eta)
                value = 2.0 / eta ** 2 * _bregman_gap(problem, x, y, cost_x, G, riemannian)
                if np.isfinite(value):
                    M_phi = max(M_phi, value)

    measure: Callable[[np.ndarray, np.ndarray], float] = (
        distance if riemannian else (lambda a, b: float(np.linalg.norm(a - b)))
    )
    points = [interval.lower, interval.upper] + [p for pair in candidate_pairs[2:2 + samples] for p in pair]
    diameter = max(measure(a, b) for a, b in itertools.combinations(points, 2))

    if method == CurvatureMethod.LIPSCHITZ_BOUND:
        estimate = CurvatureEstimate(
            M_phi=lipschitz * diameter ** 2, method=method, L_lipschitz=lipschitz, diameter=diameter,
            geometry=geometry, samples=samples, is_lower_bound=False,
        )
    else:
        estimate = CurvatureEstimate(
            M_phi=M_phi, method=method, L_lipschitz=lipschitz, diameter=diameter,
            geometry=geometry, samples=samples, is_lower_bound=True,
        )
    logger.debug("Curvature estimate", M_phi=estimate.M_phi, diameter=diameter,
                 geometry=geometry.value, method=method.value, pairs=len(candidate_pairs))
    return estimate


def check_gradient(problem: ObjectiveProblem, x, h: float = 1e-5) -> float:
    """
    Relative Frobenius error between eucl_grad(x) and central finite
    differences of the cost along the symmetric basis.
    """
    x = symmetrize(_square(x))
    d = x.shape[0]
    numeric = np.zeros((d, d))
    for i in range(d):
        for j in range(i, d):
            E = np.zeros((d, d))
            E[i, j] = E[j, i] = 1.0 if i == j else 0.5
            numeric[i, j] = numeric[j, i] = (problem.cost(x + h * E) - problem.cost(x - h * E)) / (2 * h)
    analytic = symmetrize(np.asarray(problem.eucl_grad(x), dtype=float))
    scale = max(float(np.linalg.norm(analytic)), np.finfo(float).tiny)
    return float(np.linalg.norm(numeric - analytic)) / scale

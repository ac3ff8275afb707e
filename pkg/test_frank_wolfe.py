"""Frank-Wolfe loops, step rules, gaps and curvature estimates"""

import numpy as np
import pytest
from pydantic import ValidationError

from models.solver import ConvergenceTrace, CurvatureMethod, Geometry, ObjectiveProblem, StepRule
from services.frank_wolfe import (
    CountingProblem,
    check_gradient,
    efw_solve,
    estimate_curvature,
    estimate_f_star,
    fw_gap,
    rfw_solve,
    step_size,
)
from services.benchmark_service import gen_ensemble
from services.karcher_mean import commuting_mean, feasible_interval, karcher_cost, karcher_problem, reference_mean
from services.linear_oracles import feasibility_check, interior_radius, make_interval
from services.manifold import symmetrize
from utils.errors import InfeasiblePointError, NonFiniteError, RangeError
from models.ensemble import WeightedEnsemble


def scalar_ensemble():
    return WeightedEnsemble(matrices=[1.0, 4.0])


def linear_problem(S, interval):
    return ObjectiveProblem(
        cost=lambda X: float(np.sum(S * X)),
        eucl_grad=lambda X: S,
        interval=interval,
        name="linear",
    )


class TestStepSize:
    def test_classic(self):
        assert step_size(StepRule.classic(), 0) == 1.0
        assert step_size(StepRule.classic(), 2) == 0.5

    def test_adaptive_linear_converged(self):
        rule = StepRule.adaptive_linear(mu=2.0, r=0.5, M=1.0, f_star=3.0)
        assert step_size(rule, 5, current_cost=3.0) == 0.0
        assert step_size(rule, 5, current_cost=2.0) == 0.0

    def test_adaptive_linear_formula(self):
        rule = StepRule.adaptive_linear(mu=2.0, r=0.5, M=4.0, f_star=0.0)
        expected = 0.5 * np.sqrt(2.0 * 0.5) / (np.sqrt(2.0) * 4.0)
        assert step_size(rule, 0, current_cost=0.5) == pytest.approx(expected)

    def test_efw_optimal(self):
        rule = StepRule.efw_optimal(M=2.0)
        assert step_size(rule, 3, gap=1.0) == 0.5
        assert step_size(rule, 3, gap=5.0) == 1.0

    def test_negative_iteration(self):
        with pytest.raises(RangeError):
            step_size(StepRule.classic(), -1)

    def test_missing_parameters(self):
        with pytest.raises(ValidationError):
            StepRule(variant="adaptive_linear", mu=1.0)
        with pytest.raises(ValidationError):
            StepRule(variant="efw_optimal")


class TestFwGap:
    def test_linear_scalar_euclidean(self):
        problem = linear_problem(np.ones((1, 1)), make_interval([[1.0]], [[2.0]]))
        assert fw_gap(problem, [[1.0]], Geometry.EUCLIDEAN) == pytest.approx(0.0, abs=1e-15)
        assert fw_gap(problem, [[2.0]], Geometry.EUCLIDEAN) == pytest.approx(1.0)

    def test_linear_scalar_riemannian(self):
        problem = linear_problem(np.ones((1, 1)), make_interval([[1.0]], [[2.0]]))
        assert fw_gap(problem, [[1.0]], "riemannian") == pytest.approx(0.0, abs=1e-15)
        assert fw_gap(problem, [[2.0]], "riemannian") == pytest.approx(2.0 * np.log(2.0))

    def test_small_at_optimum(self, commuting_ensemble):
        ens = commuting_ensemble(3, 4)
        problem = karcher_problem(ens)
        X = commuting_mean(ens)
        assert fw_gap(problem, X, Geometry.RIEMANNIAN) <= 1e-8
        assert fw_gap(problem, X, Geometry.EUCLIDEAN) <= 1e-8


class TestScalarKarcher:
    def test_efw_short_steps(self):
        problem = karcher_problem(scalar_ensemble())
        estimate = estimate_curvature(problem, samples=10, geometry="euclidean",
                                      method="lipschitz_bound", lipschitz=1.0)
        trace = efw_solve(problem, [[1.6]], StepRule.efw_optimal(estimate.M_phi), max_iter=200, gap_tol=1e-12)
        assert trace.final_point[0, 0] == pytest.approx(2.0, abs=1e-4)

    def test_rfw_short_steps(self):
        problem = karcher_problem(scalar_ensemble())
        estimate = estimate_curvature(problem, samples=10, geometry="riemannian")
        trace = rfw_solve(problem, [[1.6]], StepRule.efw_optimal(estimate.M_phi), max_iter=200, gap_tol=1e-12)
        assert trace.final_point[0, 0] == pytest.approx(2.0, abs=1e-4)

    @pytest.mark.parametrize("solve", [efw_solve, rfw_solve])
    def test_classic_steps_approach_mean(self, solve):
        trace = solve(karcher_problem(scalar_ensemble()), [[1.6]], max_iter=200, gap_tol=0.0)
        assert trace.final_point[0, 0] == pytest.approx(2.0, abs=0.05)
        assert trace.stop_reason == "max_iter"
        assert not trace.converged


class TestLoop:
    @pytest.mark.parametrize("solve", [efw_solve, rfw_solve])
    def test_single_matrix_stops_immediately(self, spd, solve):
        A = spd(3)
        ens = WeightedEnsemble(matrices=[A])
        problem = karcher_problem(ens)
        trace = solve(problem, problem.interval.lower, gap_tol=1e-8)
        assert trace.iterations == 0
        assert trace.records[0].fw_gap <= 1e-8
        assert trace.converged
        assert trace.stop_reason == "gap_tol"

    def test_infeasible_start(self, ensemble):
        ens = ensemble(3, 4)
        problem = karcher_problem(ens)
        with pytest.raises(InfeasiblePointError) as excinfo:
            rfw_solve(problem, 2.0 * problem.interval.upper)
        assert excinfo.value.report is not None
        assert not excinfo.value.report.feasible

    def test_non_finite_cost(self):
        interval = make_interval([[1.0]], [[2.0]])
        problem = ObjectiveProblem(cost=lambda X: float("nan"), eucl_grad=lambda X: np.ones((1, 1)),
                                   interval=interval)
        with pytest.raises(NonFiniteError):
            efw_solve(problem, [[1.5]], max_iter=5)

    def test_negative_max_iter(self, ensemble):
        problem = karcher_problem(ensemble(2, 3))
        with pytest.raises(RangeError):
            efw_solve(problem, problem.interval.lower, max_iter=-1)

    @pytest.mark.parametrize("solve", [efw_solve, rfw_solve])
    def test_iterates_stay_feasible(self, ensemble, solve):
        ens = ensemble(3, 4)
        problem = karcher_problem(ens)
        trace = solve(problem, problem.interval.lower, max_iter=25, gap_tol=0.0, keep_iterates=True)
        assert len(trace.iterates) == 26
        for X in trace.iterates + [trace.final_point]:
            assert feasibility_check(X, problem.interval).feasible
        assert trace.counts.cost_calls == 0
        assert trace.counts.report_cost_calls == 26
        assert trace.counts.grad_calls == 26
        assert trace.counts.oracle_calls == 26

    def test_step_sizes_recorded(self, ensemble):
        problem = karcher_problem(ensemble(2, 3))
        trace = rfw_solve(problem, problem.interval.lower, max_iter=5, gap_tol=0.0)
        assert [r.step_size for r in trace.records] == [2.0 / (k + 2) for k in range(5)] + [0.0]

    def test_h0_from_reference(self, commuting_ensemble):
        ens = commuting_ensemble(2, 3)
        problem = karcher_problem(ens)
        f_star = karcher_cost(commuting_mean(ens), ens)
        trace = rfw_solve(problem, problem.interval.lower, max_iter=3, gap_tol=0.0, reference_cost=f_star)
        assert trace.h0 == pytest.approx(trace.records[0].cost - f_star)

    def test_adaptive_linear_counts_cost_in_loop(self, commuting_ensemble):
        ens = commuting_ensemble(2, 3)
        problem = karcher_problem(ens)
        f_star = karcher_cost(commuting_mean(ens), ens)
        rule = StepRule.adaptive_linear(mu=2.0, r=0.01, M=100.0, f_star=f_star)
        trace = rfw_solve(problem, problem.interval.lower, rule, max_iter=4, gap_tol=0.0)
        assert trace.counts.cost_calls == trace.iterations + 1
        assert trace.counts.report_cost_calls == 0

    def test_deterministic_traces(self, ensemble):
        ens = ensemble(3, 4)
        problem = karcher_problem(ens)
        first = rfw_solve(problem, problem.interval.lower, max_iter=10, record_timings=False)
        second = rfw_solve(problem, problem.interval.lower, max_iter=10, record_timings=False)
        assert first.to_csv() == second.to_csv()
        assert first.fingerprint() == second.fingerprint()

    def test_trace_csv_round_trip(self, ensemble):
        problem = karcher_problem(ensemble(2, 3))
        trace = efw_solve(problem, problem.interval.lower, max_iter=8)
        assert ConvergenceTrace.records_from_csv(trace.to_csv()) == trace.records


class TestRates:
    """Rate bounds on commuting data, where the oracle is exact, and on generated ensembles"""

    def test_rfw_sublinear_rate(self, commuting_ensemble):
        for _ in range(3):
            ens = commuting_ensemble(4, 5)
            problem = karcher_problem(ens)
            f_star = karcher_cost(commuting_mean(ens), ens)
            trace = rfw_solve(problem, problem.interval.lower, max_iter=100, gap_tol=0.0,
                              keep_iterates=True, record_timings=False)
            pairs = list(zip(trace.iterates, trace.oracle_points))
            M_hat = 1.5 * estimate_curvature(problem, samples=20, seed=1, pairs=pairs).M_phi
            a = trace.costs - f_star
            s = np.array([r.step_size for r in trace.records])
            for k in range(1, len(a)):
                assert a[k] <= 2.0 * M_hat / (k + 2) + 1e-10
            for k in range(len(a) - 1):
                assert a[k + 1] <= (1.0 - s[k]) * a[k] + s[k] ** 2 * M_hat / 2.0 + 1e-7

    @pytest.mark.parametrize("seed", range(10))
    def test_rfw_sublinear_rate_on_generated_ensembles(self, seed):
        ens = gen_ensemble(10, 5, seed=seed)
        problem = karcher_problem(ens)
        _, f_star = reference_mean(ens)
        trace = rfw_solve(problem, problem.interval.lower, max_iter=500, gap_tol=0.0,
                          keep_iterates=True, record_timings=False)
        pairs = list(zip(trace.iterates, trace.oracle_points))
        M_hat = 1.5 * estimate_curvature(problem, samples=20, seed=seed, pairs=pairs).M_phi
        a = trace.costs - f_star
        for k in range(1, len(a)):
            assert a[k] <= 2.0 * M_hat / (k + 2) + 1e-10

        k = np.arange(5, 201)
        assert np.all(a[k] > 0)
        slope = np.polyfit(np.log(k), np.log(a[k]), 1)[0]
        assert slope <= -0.9

    def test_efw_min_gap_bound(self, commuting_ensemble):
        ens = commuting_ensemble(3, 4)
        problem = karcher_problem(ens)
        f_star = karcher_cost(commuting_mean(ens), ens)
        x0 = problem.interval.lower
        warmup = efw_solve(problem, x0, max_iter=50, gap_tol=0.0, keep_iterates=True)
        pairs = list(zip(warmup.iterates, warmup.oracle_points))
        M_hat = 1.5 * estimate_curvature(problem, samples=20, seed=2, geometry="euclidean", pairs=pairs).M_phi

        trace = efw_solve(problem, x0, StepRule.efw_optimal(M_hat), max_iter=50, gap_tol=0.0,
                          reference_cost=f_star)
        min_gaps = trace.min_gap_sequence()
        bound_scale = max(2.0 * trace.h0, M_hat)
        for K in (10, min(50, len(min_gaps) - 1)):
            assert min_gaps[K] <= bound_scale / np.sqrt(K + 1) + 1e-10

    def test_adaptive_linear_contraction(self, commuting_ensemble):
        ens = commuting_ensemble(3, 4)
        problem = karcher_problem(ens)
        X_star = commuting_mean(ens)
        f_star = karcher_cost(X_star, ens)
        r = 0.5 * interior_radius(X_star, problem.interval)
        assert r > 0
        mu = 2.0
        M_hat = 1.5 * estimate_curvature(problem, samples=20, seed=3).M_phi
        rule = StepRule.adaptive_linear(mu=mu, r=r, M=M_hat, f_star=f_star)
        trace = rfw_solve(problem, problem.interval.lower, rule, max_iter=40, gap_tol=0.0)
        delta = trace.costs - f_star
        rate = 1.0 - r ** 2 * mu / (4.0 * M_hat)
        for k in range(len(delta) - 1):
            if delta[k] <= 1e-10:
                break
            assert delta[k + 1] <= rate * delta[k] + 1e-12


class TestCurvature:
    def test_linear_objective_has_no_curvature(self, rng, interval):
        iv = interval(3)
        S = symmetrize(rng.standard_normal((3, 3)))
        estimate = estimate_curvature(linear_problem(S, iv), samples=20, geometry="euclidean")
        assert estimate.M_phi <= 1e-9
        assert estimate.is_lower_bound

    def test_deterministic(self, ensemble):
        problem = karcher_problem(ensemble(2, 3))
        first = estimate_curvature(problem, samples=15, seed=4)
        second = estimate_curvature(problem, samples=15, seed=4)
        assert first.M_phi == second.M_phi
        assert first.diameter == second.diameter

    def test_lipschitz_bound(self, ensemble):
        problem = karcher_problem(ensemble(2, 3))
        estimate = estimate_curvature(problem, samples=10, method=CurvatureMethod.LIPSCHITZ_BOUND, lipschitz=3.0)
        assert estimate.M_phi == pytest.approx(3.0 * estimate.diameter ** 2)
        assert not estimate.is_lower_bound

    def test_sampled_below_lipschitz_bound(self, interval):
        iv = interval(2)
        problem = ObjectiveProblem(cost=lambda X: 0.5 * float(np.sum(X * X)), eucl_grad=lambda X: X, interval=iv)
        sampled = estimate_curvature(problem, samples=20, seed=5, geometry="euclidean")
        bound = estimate_curvature(problem, samples=20, seed=5, geometry="euclidean",
                                   method="lipschitz_bound", lipschitz=1.0)
        assert sampled.M_phi <= bound.M_phi * (1 + 1e-9)

    def test_needs_samples(self, ensemble):
        with pytest.raises(RangeError):
            estimate_curvature(karcher_problem(ensemble(2, 3)), samples=5)

    def test_lipschitz_mode_needs_constant(self, ensemble):
        with pytest.raises(RangeError):
            estimate_curvature(karcher_problem(ensemble(2, 3)), samples=10, method="lipschitz_bound")


class TestGradientCheck:
    @pytest.mark.parametrize("dim", [2, 5])
    def test_karcher_gradient(self, ensemble, spd, dim):
        problem = karcher_problem(ensemble(dim, 4, random_weights=True))
        for _ in range(3):
            assert check_gradient(problem, spd(dim)) <= 1e-5

    def test_detects_wrong_gradient(self, ensemble, spd):
        ens = ensemble(3, 4)
        correct = karcher_problem(ens)
        wrong = ObjectiveProblem(cost=correct.cost, eucl_grad=lambda X: 0.5 * correct.eucl_grad(X),
                                 interval=feasible_interval(ens))
        assert check_gradient(wrong, spd(3)) > 0.5

    def test_deterministic_with_explicit_step(self, ensemble, spd):
        problem = karcher_problem(ensemble(3, 4))
        X = spd(3)
        assert check_gradient(problem, X, h=1e-4) == check_gradient(problem, X, h=1e-4)
        assert check_gradient(problem, X, h=1e-4) <= 1e-4


def test_counting_problem_tallies(ensemble):
    problem = karcher_problem(ensemble(2, 3))
    counting = CountingProblem(problem)
    X = problem.interval.lower
    counting.cost(X)
    counting.report_cost(X)
    counting.report_cost(X)
    counting.grad(X)
    assert counting.counts.cost_calls == 1
    assert counting.counts.report_cost_calls == 2
    assert counting.counts.grad_calls == 1


def test_estimate_f_star_is_lower_bound(commuting_ensemble):
    ens = commuting_ensemble(2, 3)
    problem = karcher_problem(ens)
    f_star = karcher_cost(commuting_mean(ens), ens)
    assert estimate_f_star(problem, problem.interval.lower, max_iter=20) <= f_star + 1e-10

"""Closed-form linear oracles over operator intervals, checked against brute force"""

import numpy as np
import pytest

from services.benchmark_service import random_spd
from services.linear_oracles import (
    brute_force_oracle,
    euclid_oracle,
    feasibility_check,
    haar_orthogonal,
    interior_radius,
    make_interval,
    random_feasible_point,
    riem_objective,
    riem_oracle,
)
from services.manifold import congruence, geodesic, log_frechet_derivative, symmetrize
from utils.errors import DimensionError, IntervalError, RangeError


def riem_gradient(S, X):
    def gradient(Z):
        return congruence(X, log_frechet_derivative(congruence(X, Z), S))
    return gradient


def commuting_instance(dim, rng):
    Q = haar_orthogonal(dim, rng)

    def diag(values):
        return symmetrize((Q * values) @ Q.T)

    lower = np.exp(rng.uniform(0.0, np.log(10.0), dim))
    upper = lower + rng.uniform(0.1, 3.0, dim)
    s = rng.standard_normal(dim)
    x = np.exp(rng.uniform(-1.0, 1.0, dim))
    interval = make_interval(diag(lower), diag(upper))
    return diag(s), diag(x), interval, diag(np.where(s >= 0, upper, lower))


class TestMakeInterval:
    def test_upper_below_lower(self):
        with pytest.raises(IntervalError):
            make_interval(np.diag([2.0, 2.0]), np.diag([1.0, 3.0]))

    def test_lower_not_positive_definite(self):
        with pytest.raises(IntervalError):
            make_interval(np.diag([1.0, 0.0]), np.diag([2.0, 2.0]))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            make_interval(np.eye(2), np.eye(3))


class TestEuclidOracle:
    def test_positive_definite_gives_upper(self, spd, interval):
        iv = interval(4)
        Z = euclid_oracle(spd(4), iv).Z
        np.testing.assert_allclose(Z, iv.upper, atol=1e-9 * iv.scale)

    def test_negative_definite_gives_lower(self, spd, interval):
        iv = interval(4)
        Z = euclid_oracle(-spd(4), iv).Z
        np.testing.assert_allclose(Z, iv.lower, atol=1e-9 * iv.scale)

    def test_scalar(self):
        solution = euclid_oracle([[2.0]], make_interval([[1.0]], [[5.0]]))
        assert solution.Z[0, 0] == pytest.approx(5.0)
        assert solution.objective_value == pytest.approx(10.0)

    def test_diagonal_example(self):
        solution = euclid_oracle(np.diag([1.0, -1.0]), make_interval(np.eye(2), np.diag([3.0, 4.0])))
        np.testing.assert_allclose(solution.Z, np.diag([3.0, 1.0]), atol=1e-12)
        assert solution.objective_value == pytest.approx(2.0)

    def test_degenerate_interval(self, rng, spd):
        L = spd(3)
        solution = euclid_oracle(symmetrize(rng.standard_normal((3, 3))), make_interval(L, L))
        np.testing.assert_array_equal(solution.Z, L)
        assert solution.diagnostics["degenerate"] is True

    def test_commuting_sign_pattern(self, rng):
        S, _, iv, expected = commuting_instance(4, rng)
        np.testing.assert_allclose(euclid_oracle(S, iv).Z, expected, atol=1e-9 * iv.scale)

    @pytest.mark.parametrize("dim", [1, 2, 3])
    def test_not_beaten_by_brute_force(self, rng, interval, dim):
        for trial in range(200):
            iv = interval(dim)
            S = symmetrize(rng.standard_normal((dim, dim)))
            solution = euclid_oracle(S, iv)
            assert feasibility_check(solution.Z, iv).feasible
            search = brute_force_oracle(lambda Z: float(np.sum(S * Z)), iv, seed=trial, starts=4, steps=80,
                                        gradient=lambda Z: S)
            assert solution.objective_value >= search.objective_value - 1e-6 * (1 + abs(solution.objective_value))


class TestRiemOracle:
    def test_positive_definite_gives_upper(self, spd, interval):
        iv = interval(3)
        Z = riem_oracle(spd(3), spd(3), iv).Z
        np.testing.assert_allclose(Z, iv.upper, rtol=1e-8, atol=1e-8 * iv.scale)

    def test_negative_definite_gives_lower(self, spd, interval):
        iv = interval(3)
        Z = riem_oracle(-spd(3), spd(3), iv).Z
        np.testing.assert_allclose(Z, iv.lower, rtol=1e-8, atol=1e-8 * iv.scale)

    def test_scalar(self):
        solution = riem_oracle([[1.0]], [[2.0]], make_interval([[1.0]], [[3.0]]))
        assert solution.Z[0, 0] == pytest.approx(3.0)
        assert solution.objective_value == pytest.approx(np.log(12.0))

    def test_diagonal_example(self):
        solution = riem_oracle(np.diag([1.0, -1.0]), np.eye(2), make_interval(np.eye(2), np.diag([3.0, 4.0])))
        np.testing.assert_allclose(solution.Z, np.diag([3.0, 1.0]), atol=1e-12)
        assert solution.objective_value == pytest.approx(np.log(3.0))

    def test_degenerate_interval(self, spd):
        L = spd(2)
        solution = riem_oracle(np.eye(2), spd(2), make_interval(L, L))
        np.testing.assert_array_equal(solution.Z, L)
        assert solution.diagnostics["candidate"] == "degenerate"

    def test_commuting_sign_pattern(self, rng):
        S, X, iv, expected = commuting_instance(4, rng)
        solution = riem_oracle(S, X, iv, safeguard=False)
        np.testing.assert_allclose(solution.Z, expected, rtol=1e-8, atol=1e-8 * iv.scale)

    def test_objective_reported_consistently(self, rng, spd, interval):
        iv = interval(3)
        S, X = symmetrize(rng.standard_normal((3, 3))), spd(3)
        solution = riem_oracle(S, X, iv, refine_iters=3)
        assert solution.objective_value == pytest.approx(riem_objective(S, X, solution.Z), rel=1e-8, abs=1e-10)

    @pytest.mark.parametrize("dim", [1, 2, 3])
    def test_commuting_not_beaten_by_brute_force(self, rng, dim):
        for trial in range(3):
            S, X, iv, _ = commuting_instance(dim, rng)
            solution = riem_oracle(S, X, iv)
            assert feasibility_check(solution.Z, iv).feasible
            search = brute_force_oracle(lambda Z: riem_objective(S, X, Z), iv, seed=trial, starts=4, steps=80,
                                        gradient=riem_gradient(S, X))
            assert solution.objective_value >= search.objective_value - 1e-6 * (1 + abs(solution.objective_value))

    @pytest.mark.parametrize("dim", [1, 2, 3])
    def test_general_not_beaten_by_brute_force(self, rng, spd, interval, dim):
        for trial in range(200):
            iv = interval(dim)
            S, X = symmetrize(rng.standard_normal((dim, dim))), spd(dim)
            solution = riem_oracle(S, X, iv)
            assert feasibility_check(solution.Z, iv).feasible
            search = brute_force_oracle(lambda Z: riem_objective(S, X, Z), iv, seed=trial, starts=3, steps=60,
                                        gradient=riem_gradient(S, X))
            assert solution.objective_value >= search.objective_value - 1e-6 * (1 + abs(solution.objective_value))

    def test_closed_form_is_not_optimal_for_non_commuting_bounds(self):
        # X = I, L = I, U = [[3, 1], [1, 3]], S = diag(1, -0.01): the upper bound beats the closed form
        S = np.diag([1.0, -0.01])
        iv = make_interval(np.eye(2), np.array([[3.0, 1.0], [1.0, 3.0]]))
        closed = riem_oracle(S, np.eye(2), iv, safeguard=False)
        at_upper = riem_objective(S, np.eye(2), iv.upper)
        assert at_upper > closed.objective_value + 1e-3

        guarded = riem_oracle(S, np.eye(2), iv)
        assert guarded.objective_value >= at_upper - 1e-12
        assert feasibility_check(guarded.Z, iv).feasible

    def test_safeguard_never_worse(self, rng, spd, interval):
        for _ in range(10):
            iv = interval(3)
            S, X = symmetrize(rng.standard_normal((3, 3))), spd(3)
            closed = riem_oracle(S, X, iv, safeguard=False)
            guarded = riem_oracle(S, X, iv, refine_iters=5)
            assert guarded.objective_value >= closed.objective_value - 1e-10 * (1 + abs(closed.objective_value))
            assert feasibility_check(closed.Z, iv).feasible
            assert feasibility_check(guarded.Z, iv).feasible

    def test_congruence_reduces_to_identity_base(self, rng, spd, interval):
        iv = interval(3)
        S, X = symmetrize(rng.standard_normal((3, 3))), spd(3)
        direct = riem_oracle(S, X, iv, safeguard=False)
        moved = make_interval(congruence(X, iv.lower), congruence(X, iv.upper))
        reduced = riem_oracle(S, np.eye(3), moved, safeguard=False)
        X_inv = np.linalg.inv(X)
        np.testing.assert_allclose(direct.Z, congruence(X_inv, reduced.Z), rtol=1e-7, atol=1e-8 * iv.scale)

    def test_negative_refine_iters(self, spd, interval):
        with pytest.raises(RangeError):
            riem_oracle(np.eye(2), spd(2), interval(2), refine_iters=-1)

    def test_negative_random_starts(self, spd, interval):
        with pytest.raises(RangeError):
            riem_oracle(np.eye(2), spd(2), interval(2), random_starts=-1)

    def test_rounding_level_gains_keep_the_exact_answer(self):
        # S = diag(1, -1), L = I, U = diag(3, 4): polished random starts only tie the closed form
        solution = riem_oracle(np.diag([1.0, -1.0]), np.eye(2), make_interval(np.eye(2), np.diag([3.0, 4.0])))
        assert solution.diagnostics["candidate"] == "closed_form"
        assert solution.diagnostics["refine_steps"] == 0

    def test_polishing_is_deterministic(self, rng, spd, interval):
        iv = interval(3)
        S, X = symmetrize(rng.standard_normal((3, 3))), spd(3)
        first, second = riem_oracle(S, X, iv), riem_oracle(S, X, iv)
        np.testing.assert_array_equal(first.Z, second.Z)
        assert first.diagnostics["candidate"] == second.diagnostics["candidate"]


class TestFeasibility:
    def test_lower_bound_is_feasible(self, interval):
        iv = interval(3)
        report = feasibility_check(iv.lower, iv)
        assert report.feasible
        assert report.lower_margin == pytest.approx(0.0, abs=1e-9 * iv.scale)

    def test_outside(self, interval):
        iv = interval(3)
        assert not feasibility_check(2.0 * iv.upper, iv).feasible

    def test_geodesic_midpoint(self, interval):
        iv = interval(4)
        assert feasibility_check(geodesic(iv.lower, iv.upper, 0.5), iv).feasible

    def test_random_points(self, rng, interval):
        iv = interval(3)
        for index in range(20):
            assert feasibility_check(random_feasible_point(iv, rng, extreme=bool(index % 2)), iv).feasible

    def test_dimension_mismatch(self, interval):
        with pytest.raises(DimensionError):
            feasibility_check(np.eye(2), interval(3))


class TestInteriorRadius:
    def test_scaled_identity(self):
        iv = make_interval(np.eye(2), 4.0 * np.eye(2))
        assert interior_radius(2.0 * np.eye(2), iv) == pytest.approx(np.log(2.0))

    def test_boundary(self):
        iv = make_interval(np.eye(2), 4.0 * np.eye(2))
        assert interior_radius(np.eye(2), iv) == pytest.approx(0.0, abs=1e-12)

    def test_outside_is_zero(self):
        iv = make_interval(np.eye(2), 4.0 * np.eye(2))
        assert interior_radius(8.0 * np.eye(2), iv) == 0.0


class TestBruteForce:
    def test_dimension_guard(self):
        iv = make_interval(np.eye(5), 2.0 * np.eye(5))
        with pytest.raises(DimensionError):
            brute_force_oracle(lambda Z: 0.0, iv)

    def test_budget_guard(self, interval):
        with pytest.raises(RangeError):
            brute_force_oracle(lambda Z: 0.0, interval(2), budget=999)

    def test_linear_objective_matches_euclid_oracle(self, rng, interval):
        iv = interval(2)
        S = symmetrize(rng.standard_normal((2, 2)))
        search = brute_force_oracle(lambda Z: float(np.sum(S * Z)), iv, starts=4, steps=200)
        exact = euclid_oracle(S, iv).objective_value
        assert search.objective_value == pytest.approx(exact, rel=1e-5, abs=1e-8)

    def test_constant_objective_is_feasible(self, interval):
        iv = interval(3)
        search = brute_force_oracle(lambda Z: 1.0, iv, starts=2, steps=5, gradient=lambda Z: np.zeros((3, 3)))
        assert search.objective_value == 1.0
        assert feasibility_check(search.Z, iv).feasible

    def test_scalar_bounded_search(self):
        iv = make_interval([[1.0]], [[3.0]])
        search = brute_force_oracle(lambda Z: -(Z[0, 0] - 2.0) ** 2, iv)
        assert search.Z[0, 0] == pytest.approx(2.0, abs=1e-6)

    def test_deterministic(self, interval):
        iv = interval(2)
        S = random_spd(2, np.random.default_rng(3), 10.0) - 3.0 * np.eye(2)
        first = brute_force_oracle(lambda Z: float(np.sum(S * Z)), iv, seed=7, starts=2, steps=20)
        second = brute_force_oracle(lambda Z: float(np.sum(S * Z)), iv, seed=7, starts=2, steps=20)
        np.testing.assert_array_equal(first.Z, second.Z)
        assert first.objective_value == second.objective_value

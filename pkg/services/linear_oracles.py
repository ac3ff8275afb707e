"""
Linear Oracle Service - closed-form maximizers over operator intervals L <= Z <= U
Euclidean oracle max tr(SZ), Riemannian oracle max tr(S log(XZX)),
and a brute-force search used to verify both
"""

from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.optimize import minimize_scalar

from models.interval import FeasibilityReport, OperatorInterval, OracleSolution, check_interval_bounds
from services.manifold import (
    _same_dim,
    _square,
    congruence,
    eig_sym,
    log_frechet_derivative,
    logm_spd,
    symmetrize,
)
from utils.errors import DimensionError, RangeError
from utils.logger import logger

FEASIBILITY_RTOL = 1e-9
DEGENERATE_RTOL = 1e-12
BRUTE_FORCE_MAX_DIM = 4
BRUTE_FORCE_MIN_BUDGET = 1000
RIEM_POLISH_STEPS = 300
RIEM_RANDOM_STARTS = 2
ASCENT_MIN_STEP = 1e-10
# relative objective gain a later candidate needs to replace the current best
CANDIDATE_MIN_GAIN = 1e-13


def make_interval(lower, upper) -> OperatorInterval:
    """Build an OperatorInterval, raising IntervalError / DimensionError on bad bounds"""
    lo, up = _square(lower, "lower"), _square(upper, "upper")
    check_interval_bounds(lo, up)
    return OperatorInterval(lower=symmetrize(lo), upper=symmetrize(up))


def feasibility_check(Z, interval: OperatorInterval) -> FeasibilityReport:
    """L <= Z <= U up to 1e-9 ||U|| in eigenvalue terms"""
    Z = _square(Z)
    if Z.shape != interval.lower.shape:
        raise DimensionError(f"point has shape {Z.shape}, interval has {interval.lower.shape}")
    tol = FEASIBILITY_RTOL * interval.scale
    lower_margin = float(np.linalg.eigvalsh(symmetrize(Z - interval.lower))[0])
    upper_margin = float(np.linalg.eigvalsh(symmetrize(interval.upper - Z))[0])
    return FeasibilityReport(
        feasible=lower_margin >= -tol and upper_margin >= -tol,
        lower_margin=lower_margin,
        upper_margin=upper_margin,
        tolerance=tol,
    )


def _is_degenerate(lower: np.ndarray, upper: np.ndarray) -> bool:
    scale = float(np.linalg.norm(upper, 2))
    return float(np.linalg.norm(upper - lower, 2)) <= DEGENERATE_RTOL * max(scale, np.finfo(float).tiny)


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Square root of a PSD matrix, rounding-negative eigenvalues clipped to zero"""
    decomposition = eig_sym(M)
    return decomposition.apply(np.sqrt(np.clip(decomposition.eigenvalues, 0.0, None)))


def _nonnegative_projector(M: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Q [Lambda >= 0] Q^T with the spectrum; zero eigenvalues count as nonnegative"""
    decomposition = eig_sym(M)
    mask = (decomposition.eigenvalues >= 0.0).astype(float)
    return decomposition.apply(mask), decomposition.eigenvalues


def _euclid_vertex(S: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if _is_degenerate(lower, upper):
        return symmetrize(lower), np.zeros(lower.shape[0])
    P = _psd_sqrt(upper - lower)
    projector, spectrum = _nonnegative_projector(congruence(P, S))
    return symmetrize(lower + congruence(P, projector)), spectrum


def euclid_oracle(S, interval: OperatorInterval) -> OracleSolution:
    """
    argmax tr(SZ) over L <= Z <= U.

    With P = (U - L)^{1/2} and P S P = Q Lambda Q^T, the maximizer is
    Z = L + P Q [Lambda >= 0] Q^T P.
    """
    S = symmetrize(_square(S, "S"))
    _same_dim(S, interval.lower)
    Z, spectrum = _euclid_vertex(S, interval.lower, interval.upper)
    return OracleSolution(
        Z=Z,
        objective_value=float(np.sum(S * Z)),
        diagnostics={"Lambda": spectrum.tolist(), "degenerate": _is_degenerate(interval.lower, interval.upper)},
    )


def riem_objective(S, X, Z) -> float:
    """tr(S log(XZX))"""
    return float(np.sum(symmetrize(S) * logm_spd(congruence(symmetrize(X), symmetrize(Z)))))


def _diagonal_log_objective(D: np.ndarray, W: np.ndarray) -> float:
    """tr(diag(D) log W)"""
    return float(np.dot(D, np.diag(logm_spd(W))))


def _reduced_feasible(W: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> bool:
    tol = FEASIBILITY_RTOL * float(np.linalg.norm(upper, 2))
    return (
        float(np.linalg.eigvalsh(symmetrize(W - lower))[0]) >= -tol
        and float(np.linalg.eigvalsh(symmetrize(upper - W))[0]) >= -tol
    )


def riem_oracle(S, X, interval: OperatorInterval, refine_iters: int = RIEM_POLISH_STEPS,
                safeguard: bool = True, random_starts: int = RIEM_RANDOM_STARTS) -> OracleSolution:
    """
    argmax tr(S log(XZX)) over L <= Z <= U.

    Closed form: L'' = Q^T XLX Q, U'' = Q^T XUX Q for S = Q D Q^T,
    W = (U''-L'')^{1/2} [D >= 0] (U''-L'')^{1/2} + L'', Z = X^{-1} Q W Q^T X^{-1}.
    The closed form is exact when L'', U'' are diagonal (commuting data).
    Otherwise `safeguard` also scores the reduced endpoints, the linearized
    vertex, the current point, the midpoint and `random_starts` seeded
    interior points, polishes every one of them with up to `refine_iters`
    projected ascent steps and returns the best. safeguard=False gives the
    bare closed form.
    """
    S = symmetrize(_square(S, "S"))
    X = symmetrize(_square(X, "X"))
    _same_dim(S, X, interval.lower)
    if refine_iters < 0:
        raise RangeError(f"refine_iters must be nonnegative, got {refine_iters}")
    if random_starts < 0:
        raise RangeError(f"random_starts must be nonnegative, got {random_starts}")

    decomposition = eig_sym(S)
    D, Q = decomposition.eigenvalues, decomposition.eigenvectors

    if _is_degenerate(interval.lower, interval.upper):
        Z = symmetrize(interval.lower)
        return OracleSolution(
            Z=Z,
            objective_value=riem_objective(S, X, Z),
            diagnostics={"D": D.tolist(), "candidate": "degenerate", "refine_steps": 0},
        )

    lower_r = symmetrize(Q.T @ congruence(X, interval.lower) @ Q)
    upper_r = symmetrize(Q.T @ congruence(X, interval.upper) @ Q)
    chart = _IntervalChart(lower_r, upper_r - lower_r)
    closed = chart.to_point(np.diag((D >= 0.0).astype(float)))

    candidates: List[Tuple[str, np.ndarray]] = [("closed_form", closed)]
    if safeguard:
        candidates.append(("upper", upper_r))
        candidates.append(("lower", lower_r))
        linearized, _ = _euclid_vertex(np.diag(D), lower_r, upper_r)
        candidates.append(("linearized", linearized))
        identity = np.eye(D.shape[0])
        if _reduced_feasible(identity, lower_r, upper_r):
            candidates.append(("current", identity))
        candidates.append(("midpoint", chart.to_point(0.5 * identity)))
        rng = np.random.default_rng(0)
        for index in range(random_starts):
            Q_start = haar_orthogonal(D.shape[0], rng)
            candidates.append((f"random_{index}", chart.to_point((Q_start * rng.random(D.shape[0])) @ Q_start.T)))

    def objective(W: np.ndarray) -> float:
        return _diagonal_log_objective(D, W)

    def gradient(W: np.ndarray) -> np.ndarray:
        return log_frechet_derivative(W, np.diag(D))

    best_label, best_W, best_value, refine_steps = None, None, -np.inf, 0
    polished_from: List[np.ndarray] = []

    def improves(value: float) -> bool:
        return best_label is None or value > best_value + CANDIDATE_MIN_GAIN * (1.0 + abs(best_value))

    for label, W in candidates:
        value = objective(W)
        if improves(value):
            best_label, best_W, best_value, refine_steps = label, W, value, 0
        # coinciding starts (e.g. closed form = upper when D >= 0) are polished once
        if any(np.allclose(W, seen, rtol=1e-12, atol=1e-12 * chart.scale) for seen in polished_from):
            continue
        polished_from.append(W)
        if safeguard and refine_iters:
            polished, polished_value, accepted = _projected_ascent(objective, gradient, chart, W, refine_iters)
            if improves(polished_value):
                best_label, best_W, best_value, refine_steps = label, polished, polished_value, accepted

    if best_label != "closed_form" or refine_steps:
        logger.debug(
            "Riemannian oracle safeguard improved the closed form",
            candidate=best_label,
            refine_steps=refine_steps,
            objective=best_value,
        )

    Y = symmetrize(Q @ best_W @ Q.T)
    factor = scipy.linalg.cho_factor(X)
    Z = symmetrize(scipy.linalg.cho_solve(factor, scipy.linalg.cho_solve(factor, Y).T))
    return OracleSolution(
        Z=Z,
        objective_value=best_value,
        diagnostics={"D": D.tolist(), "candidate": best_label, "refine_steps": refine_steps},
    )


def haar_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix: QR of a Gaussian with sign fix"""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def random_feasible_point(interval: OperatorInterval, rng: np.random.Generator,
                          extreme: bool = False) -> np.ndarray:
    """
    Z = L + P R P with P = (U - L)^{1/2}. R is a random contraction
    (eigenvalues uniform in [0, 1]) or, when `extreme`, a random projector.
    """
    d = interval.dim
    Q = haar_orthogonal(d, rng)
    if extreme:
        values = (rng.random(d) < 0.5).astype(float)
    else:
        values = rng.random(d)
    R = (Q * values) @ Q.T
    return symmetrize(interval.lower + congruence(_psd_sqrt(interval.width), symmetrize(R)))


def interior_radius(X, interval: OperatorInterval) -> float:
    """Radius of the largest geodesic ball around X inside the interval (0 if X is on the boundary)"""
    X = symmetrize(_square(X))
    _same_dim(X, interval.lower)
    upper_eigs = scipy.linalg.eigh(interval.upper, X, eigvals_only=True)
    lower_eigs = scipy.linalg.eigh(interval.lower, X, eigvals_only=True)
    if upper_eigs[0] <= 0.0 or lower_eigs[-1] <= 0.0:
        return 0.0
    return max(0.0, min(float(np.log(upper_eigs[0])), -float(np.log(lower_eigs[-1]))))


class _IntervalChart:
    """
    Coordinates Z = L + P R P with P = (U - L)^{1/2}; the interval is 0 <= R <= I,
    where Frobenius projection is spectral clipping to [0, 1]
    """

    def __init__(self, lower: np.ndarray, width: np.ndarray):
        self.lower = lower
        self.scale = max(float(np.linalg.norm(lower + width, 2)), 1.0)
        decomposition = eig_sym(width)
        values = np.clip(decomposition.eigenvalues, 0.0, None)
        cutoff = DEGENERATE_RTOL * max(float(values[0]), np.finfo(float).tiny)
        self.P = decomposition.apply(np.sqrt(values))
        inv_root = np.zeros_like(values)
        inv_root[values > cutoff] = 1.0 / np.sqrt(values[values > cutoff])
        self.P_pinv = decomposition.apply(inv_root)

    def to_reduced(self, Z: np.ndarray) -> np.ndarray:
        return congruence(self.P_pinv, symmetrize(Z - self.lower))

    def to_point(self, R: np.ndarray) -> np.ndarray:
        return symmetrize(self.lower + congruence(self.P, R))

    def pull_back(self, G: np.ndarray) -> np.ndarray:
        """Gradient in reduced coordinates of a gradient G at Z"""
        return congruence(self.P, G)

    @staticmethod
    def clip(R: np.ndarray) -> np.ndarray:
        decomposition = eig_sym(R)
        return decomposition.apply(np.clip(decomposition.eigenvalues, 0.0, 1.0))


def _finite_difference_gradient(objective: Callable[[np.ndarray], float], Z: np.ndarray, h: float) -> np.ndarray:
    d = Z.shape[0]
    G = np.zeros((d, d))
    for i in range(d):
        for j in range(i, d):
            E = np.zeros((d, d))
            E[i, j] = E[j, i] = 1.0 if i == j else 0.5
            G[i, j] = G[j, i] = (objective(Z + h * E) - objective(Z - h * E)) / (2 * h)
    return G


def _projected_ascent(objective, gradient, chart: _IntervalChart, start: np.ndarray,
                      steps: int, h: float = 1e-6) -> Tuple[np.ndarray, float, int]:
    """
    Projected gradient ascent on 0 <= R <= I; the step grows on success and
    halves on failure. Returns (Z, objective(Z), accepted steps).
    """
    R = chart.clip(chart.to_reduced(start))
    Z = chart.to_point(R)
    value = objective(Z)
    step, accepted = 1.0, 0
    direction = None
    for _ in range(steps):
        if direction is None:
            G = symmetrize(gradient(Z)) if gradient is not None else _finite_difference_gradient(objective, Z, h)
            G_r = chart.pull_back(G)
            norm = float(np.linalg.norm(G_r))
            if norm == 0.0:
                break
            direction = G_r / norm
        candidate_R = chart.clip(R + step * direction)
        candidate = chart.to_point(candidate_R)
        candidate_value = objective(candidate)
        if candidate_value > value:
            R, Z, value = candidate_R, candidate, candidate_value
            step *= 1.5
            accepted += 1
            direction = None
        else:
            step *= 0.5
            if step < ASCENT_MIN_STEP:
                break
    return Z, value, accepted


def brute_force_oracle(objective: Callable[[np.ndarray], float], interval: OperatorInterval,
                       budget: int = BRUTE_FORCE_MIN_BUDGET, seed: int = 0, starts: int = 20,
                       steps: int = 200,
                       gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> OracleSolution:
    """
    Best of projected-gradient ascent from `starts` random feasible points
    and `budget` random feasible samples. Deterministic for a given seed;
    ties keep the earliest candidate.
    """
    d = interval.dim
    if d > BRUTE_FORCE_MAX_DIM:
        raise DimensionError(f"brute-force oracle is limited to dim <= {BRUTE_FORCE_MAX_DIM}, got {d}")
    if budget < BRUTE_FORCE_MIN_BUDGET:
        raise RangeError(f"brute-force budget must be >= {BRUTE_FORCE_MIN_BUDGET}, got {budget}")

    rng = np.random.default_rng(seed)
    best_Z, best_value, best_source = None, -np.inf, None

    def consider(Z: np.ndarray, value: float, source: str):
        nonlocal best_Z, best_value, best_source
        if value > best_value:
            best_Z, best_value, best_source = Z, value, source

    if _is_degenerate(interval.lower, interval.upper):
        Z = symmetrize(interval.lower)
        return OracleSolution(Z=Z, objective_value=float(objective(Z)), diagnostics={"source": "degenerate"})

    if d == 1:
        lo, up = float(interval.lower[0, 0]), float(interval.upper[0, 0])

        def scalar(z: float) -> float:
            return float(objective(np.array([[z]])))

        consider(interval.lower.copy(), scalar(lo), "lower")
        consider(interval.upper.copy(), scalar(up), "upper")
        result = minimize_scalar(lambda z: -scalar(z), bounds=(lo, up), method="bounded",
                                 options={"xatol": 1e-12 * max(up, 1.0)})
        z = float(np.clip(result.x, lo, up))
        consider(np.array([[z]]), scalar(z), "bounded_search")
    else:
        chart = _IntervalChart(interval.lower, interval.width)
        width = float(np.linalg.norm(interval.width, 2))
        h = 1e-6 * min(width, float(np.linalg.eigvalsh(interval.lower)[0]))
        for index in range(starts):
            start = random_feasible_point(interval, rng, extreme=False)
            Z, value, _ = _projected_ascent(objective, gradient, chart, start, steps, h)
            consider(Z, value, f"ascent_{index}")

    for index in range(budget):
        Z = random_feasible_point(interval, rng, extreme=bool(index % 2))
        consider(Z, float(objective(Z)), "sample")

    return OracleSolution(
        Z=best_Z,
        objective_value=float(best_value),
        diagnostics={"source": best_source, "budget": budget, "starts": starts if d > 1 else 0},
    )

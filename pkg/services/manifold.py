"""
Manifold Service - affine-invariant geometry of symmetric positive definite matrices
Matrix functions, metric, geodesics, distance, exp/log maps and gradient conversion
"""

from enum import Enum
from typing import Tuple, Union

import numpy as np
import scipy.linalg

from models.matrices import EigDecomposition, MatrixPayload
from utils.errors import AsymmetryError, DimensionError, NotPositiveDefiniteError, RangeError

SYM_RTOL = 1e-12
PD_RTOL = 1e-10


class MatrixFunction(str, Enum):
    """Scalar functions lifted to symmetric matrices through the spectrum"""
    EXP = "exp"
    LOG = "log"
    SQRT = "sqrt"
    INV_SQRT = "inv_sqrt"
    POWER = "power"


def _square(M, name: str = "matrix") -> np.ndarray:
    arr = np.atleast_2d(np.asarray(M, dtype=float))
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    return arr


def _same_dim(*matrices: np.ndarray) -> None:
    shapes = {m.shape for m in matrices}
    if len(shapes) != 1:
        raise DimensionError(f"dimension mismatch: {sorted(shapes)}")


def symmetrize(M) -> np.ndarray:
    """(M + M^T) / 2"""
    arr = _square(M)
    return (arr + arr.T) / 2


def is_symmetric(M, rtol: float = SYM_RTOL) -> bool:
    arr = _square(M)
    return float(np.max(np.abs(arr - arr.T))) <= rtol * (1.0 + float(np.max(np.abs(arr))))


def eig_sym(M) -> EigDecomposition:
    """Symmetric eigendecomposition, eigenvalues descending"""
    values, vectors = scipy.linalg.eigh(symmetrize(M))
    return EigDecomposition(eigenvalues=values[::-1], eigenvectors=vectors[:, ::-1])


def _read_only(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


def as_sym(M, rtol: float = SYM_RTOL) -> np.ndarray:
    """Validate the SymMatrix invariant; returns a read-only symmetrized copy"""
    arr = _square(M)
    if not is_symmetric(arr, rtol):
        asym = float(np.max(np.abs(arr - arr.T)))
        raise AsymmetryError(f"matrix is not symmetric (max |M - M^T| = {asym:.3e})")
    return _read_only((arr + arr.T) / 2)


def as_spd(M, rtol: float = PD_RTOL) -> np.ndarray:
    """Validate the SpdMatrix invariants; returns a read-only symmetrized copy"""
    sym = as_sym(M)
    eigs = np.linalg.eigvalsh(sym)
    if eigs[0] <= rtol * max(eigs[-1], 0.0) or eigs[-1] <= 0:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (smallest eigenvalue {eigs[0]:.3e})",
            eigenvalue=float(eigs[0]),
        )
    return sym


def _spectral_values(values: np.ndarray, f: MatrixFunction, power: float) -> np.ndarray:
    if f == MatrixFunction.EXP:
        return np.exp(values)
    smallest, largest = float(values[-1]), float(values[0])
    if smallest <= PD_RTOL * max(largest, 0.0):
        raise NotPositiveDefiniteError(
            f"matrix {f.value} requires a positive definite input; smallest eigenvalue {smallest:.6e} "
            f"is at or below {PD_RTOL:g} x largest",
            eigenvalue=smallest,
        )
    if f == MatrixFunction.LOG:
        return np.log(values)
    if f == MatrixFunction.SQRT:
        return np.sqrt(values)
    if f == MatrixFunction.INV_SQRT:
        return 1.0 / np.sqrt(values)
    return values ** power


def matrix_fn(X, f: Union[MatrixFunction, str], power: float = None) -> np.ndarray:
    """
    Q f(Lambda) Q^T through the symmetric eigendecomposition.

    `power` is the exponent t for f = "power".
    """
    f = MatrixFunction(f)
    if f == MatrixFunction.POWER and power is None:
        raise RangeError("matrix power requires an exponent")
    decomposition = eig_sym(X)
    return decomposition.apply(_spectral_values(decomposition.eigenvalues, f, power))


def expm_sym(A) -> np.ndarray:
    return matrix_fn(A, MatrixFunction.EXP)


def logm_spd(X) -> np.ndarray:
    return matrix_fn(X, MatrixFunction.LOG)


def powm_spd(X, t: float) -> np.ndarray:
    return matrix_fn(X, MatrixFunction.POWER, power=t)


def sqrt_pair(X) -> Tuple[np.ndarray, np.ndarray]:
    """(X^{1/2}, X^{-1/2}) from a single eigendecomposition"""
    decomposition = eig_sym(X)
    values = decomposition.eigenvalues
    _spectral_values(values, MatrixFunction.SQRT, None)
    root = np.sqrt(values)
    return decomposition.apply(root), decomposition.apply(1.0 / root)


def congruence(C: np.ndarray, M: np.ndarray) -> np.ndarray:
    """C M C for symmetric C, symmetrized"""
    out = C @ M @ C
    return (out + out.T) / 2


def log_frechet_derivative(W, E) -> np.ndarray:
    """
    Directional derivative of the matrix logarithm at SPD W along symmetric E,
    via divided differences of log on the spectrum of W.
    """
    decomposition = eig_sym(W)
    w = decomposition.eigenvalues
    _spectral_values(w, MatrixFunction.LOG, None)
    q = decomposition.eigenvectors
    log_w = np.log(w)
    diff = w[:, None] - w[None, :]
    close = np.abs(diff) <= 1e-12 * float(w[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        divided = np.where(close, 2.0 / (w[:, None] + w[None, :]), (log_w[:, None] - log_w[None, :]) / diff)
    inner_e = q.T @ symmetrize(E) @ q
    out = q @ (divided * inner_e) @ q.T
    return (out + out.T) / 2


def inner(base, A, B) -> float:
    """Affine-invariant metric <A, B>_X = tr(X^{-1} A X^{-1} B)"""
    X, A, B = _square(base, "base"), _square(A), _square(B)
    _same_dim(X, A, B)
    try:
        factor = scipy.linalg.cho_factor(symmetrize(X))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"metric base point is not positive definite: {exc}") from exc
    xa = scipy.linalg.cho_solve(factor, A)
    xb = scipy.linalg.cho_solve(factor, B)
    return float(np.sum(xa * xb.T))


def riem_norm(base, A) -> float:
    return float(np.sqrt(max(inner(base, A, A), 0.0)))


def geodesic(X, Y, t: float) -> np.ndarray:
    """X #_t Y = X^{1/2} (X^{-1/2} Y X^{-1/2})^t X^{1/2}, t in [0, 1]"""
    if not (0.0 <= t <= 1.0):
        raise RangeError(f"geodesic parameter must lie in [0, 1], got {t}")
    X, Y = _square(X), _square(Y)
    _same_dim(X, Y)
    if t == 0.0:
        return symmetrize(X)
    if t == 1.0:
        return symmetrize(Y)
    root, inv_root = sqrt_pair(X)
    return congruence(root, powm_spd(congruence(inv_root, Y), t))


weighted_geometric_mean = geodesic


def _relative_eigenvalues(X, Y) -> np.ndarray:
    """Eigenvalues of X^{-1} Y (equivalently X^{-1/2} Y X^{-1/2})"""
    X, Y = _square(X), _square(Y)
    _same_dim(X, Y)
    try:
        values = scipy.linalg.eigh(symmetrize(Y), symmetrize(X), eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"distance requires positive definite arguments: {exc}") from exc
    if values[0] <= 0.0:
        raise NotPositiveDefiniteError(
            f"distance requires positive definite arguments; eigenvalue {values[0]:.6e}",
            eigenvalue=float(values[0]),
        )
    return values


def distance(X, Y) -> float:
    """||log(X^{-1/2} Y X^{-1/2})||_F"""
    return float(np.sqrt(np.sum(np.log(_relative_eigenvalues(X, Y)) ** 2)))


def exp_map(X, A) -> np.ndarray:
    X, A = _square(X), _square(A)
    _same_dim(X, A)
    root, inv_root = sqrt_pair(X)
    return congruence(root, expm_sym(congruence(inv_root, symmetrize(A))))


def log_map(X, Y) -> np.ndarray:
    X, Y = _square(X), _square(Y)
    _same_dim(X, Y)
    root, inv_root = sqrt_pair(X)
    return congruence(root, logm_spd(congruence(inv_root, Y)))


def riem_grad(X, eucl_grad) -> np.ndarray:
    """X sym(G) X"""
    X, G = _square(X), _square(eucl_grad)
    _same_dim(X, G)
    return congruence(symmetrize(X), symmetrize(G))


def directional_pairing(X, eucl_grad, Y) -> float:
    """<X^{1/2} sym(G) X^{1/2}, log(X^{-1/2} Y X^{-1/2})>_F"""
    X, G, Y = _square(X), _square(eucl_grad), _square(Y)
    _same_dim(X, G, Y)
    root, inv_root = sqrt_pair(X)
    return float(np.sum(congruence(root, symmetrize(G)) * logm_spd(congruence(inv_root, Y))))


def to_payload(M) -> MatrixPayload:
    return MatrixPayload.from_array(_square(M))


def from_payload(payload: MatrixPayload) -> np.ndarray:
    return payload.to_array()

"""
Ensemble Models - weighted SPD ensembles, solver configuration and mean results
"""

import hashlib
import os
from enum import Enum
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.matrices import ArrayField, MatrixPayload
from models.solver import ConvergenceTrace, StepRule

WEIGHT_SUM_ATOL = 1e-12
SYM_RTOL = 1e-12
PD_RTOL = 1e-10


def _env_float(name: str, default: Optional[float]) -> Optional[float]:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    return float(raw)


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    return int(raw)


class Method(str, Enum):
    """Karcher-mean solvers"""
    RFW = "rfw"
    EFW = "efw"
    RSD = "rsd"
    RICHARDSON = "richardson"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            for member in cls:
                if member.value == value.strip().lower():
                    return member
        return None


class InitChoice(str, Enum):
    """Starting point: harmonic mean H, arithmetic mean A or (H + A) / 2"""
    HARMONIC = "harmonic"
    ARITHMETIC = "arithmetic"
    MIDPOINT = "midpoint"

    @classmethod
    def _missing_(cls, value):
        aliases = {"h": cls.HARMONIC, "a": cls.ARITHMETIC, "mid": cls.MIDPOINT}
        if isinstance(value, str):
            key = value.strip().lower()
            if key in aliases:
                return aliases[key]
            for member in cls:
                if member.value == key:
                    return member
        return None


class WeightedEnsemble(BaseModel):
    """
    Matrices A_1..A_n (stacked n x d x d) with simplex weights.
    Weights default to uniform.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    matrices: ArrayField
    weights: Optional[ArrayField] = None

    @model_validator(mode="before")
    @classmethod
    def default_weights(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("weights") is None and data.get("matrices") is not None:
            n = len(data["matrices"])
            data = {**data, "weights": np.full(n, 1.0 / n) if n else np.zeros(0)}
        return data

    @field_validator("matrices")
    @classmethod
    def stack_shape(cls, value: np.ndarray) -> np.ndarray:
        if value.ndim == 1:
            value = value.reshape(-1, 1, 1)
        if value.ndim != 3 or value.shape[1] != value.shape[2]:
            raise ValueError(f"matrices must stack into shape (n, d, d), got {value.shape}")
        if value.shape[0] < 1:
            raise ValueError("ensemble needs at least one matrix")
        return value

    @model_validator(mode="after")
    def check_invariants(self):
        n = self.matrices.shape[0]
        if self.weights.shape != (n,):
            raise ValueError(f"weights must have length {n}, got shape {self.weights.shape}")
        if np.any(self.weights < 0):
            raise ValueError(f"weights must be nonnegative (index {int(np.argmin(self.weights))})")
        if abs(float(np.sum(self.weights)) - 1.0) > WEIGHT_SUM_ATOL:
            raise ValueError(f"weights must sum to 1, got {float(np.sum(self.weights))!r}")
        for index, A in enumerate(self.matrices):
            asym = float(np.max(np.abs(A - A.T)))
            if asym > SYM_RTOL * (1.0 + float(np.max(np.abs(A)))):
                raise ValueError(f"matrix {index} is not symmetric (max |A - A^T| = {asym:.3e})")
            eigs = np.linalg.eigvalsh((A + A.T) / 2)
            if eigs[-1] <= 0 or eigs[0] <= PD_RTOL * eigs[-1]:
                raise ValueError(f"matrix {index} is not positive definite (smallest eigenvalue {eigs[0]:.3e})")
        return self

    @property
    def count(self) -> int:
        return int(self.matrices.shape[0])

    @property
    def dim(self) -> int:
        return int(self.matrices.shape[1])

    def permuted(self, order) -> "WeightedEnsemble":
        order = np.asarray(order, dtype=int)
        return WeightedEnsemble(matrices=self.matrices[order], weights=self.weights[order])

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.matrices).tobytes())
        digest.update(np.ascontiguousarray(self.weights).tobytes())
        return digest.hexdigest()


class EnsemblePayload(BaseModel):
    """Ensemble file / request body: {dim, weights, matrices}"""
    dim: int = Field(..., ge=1)
    weights: Optional[List[float]] = None
    matrices: List[List[List[float]]] = Field(..., min_length=1)

    @model_validator(mode="after")
    def check_shapes(self):
        for index, matrix in enumerate(self.matrices):
            if len(matrix) != self.dim or any(len(row) != self.dim for row in matrix):
                raise ValueError(f"matrix {index} must be {self.dim}x{self.dim}")
        if self.weights is not None and len(self.weights) != len(self.matrices):
            raise ValueError(f"expected {len(self.matrices)} weights, got {len(self.weights)}")
        return self

    def to_ensemble(self) -> WeightedEnsemble:
        return WeightedEnsemble(matrices=self.matrices, weights=self.weights)

    @classmethod
    def from_ensemble(cls, ensemble: WeightedEnsemble) -> "EnsemblePayload":
        return cls(
            dim=ensemble.dim,
            weights=ensemble.weights.tolist(),
            matrices=ensemble.matrices.tolist(),
        )


class SolverConfig(BaseModel):
    """Per-solve configuration; defaults come from SPDFW_* environment variables"""
    model_config = ConfigDict(frozen=True)

    x0: InitChoice = InitChoice.HARMONIC
    max_iter: int = Field(default_factory=lambda: _env_int("SPDFW_MAX_ITER", 200), ge=0)
    gap_tol: float = Field(default_factory=lambda: _env_float("SPDFW_GAP_TOL", 1e-8), ge=0)
    step_rule: StepRule = Field(default_factory=StepRule.classic)
    richardson_alpha: float = Field(default_factory=lambda: _env_float("SPDFW_RICHARDSON_ALPHA", 0.1), gt=0)
    # opt-in: recompute alpha from the spectra of X^{-1/2} A_i X^{-1/2} every iteration
    richardson_adaptive: bool = False
    rsd_initial_step: float = Field(1.0, gt=0)
    rsd_shrink: float = Field(0.5, gt=0, lt=1)
    rsd_sufficient_decrease: float = Field(1e-4, gt=0, lt=1)
    rsd_max_halvings: int = Field(40, ge=1)
    oracle_refine_iters: int = Field(default_factory=lambda: _env_int("SPDFW_ORACLE_REFINE_ITERS", 50), ge=0)
    workers: int = Field(1, ge=1)
    keep_iterates: bool = False
    record_timings: bool = True
    reference_cost: Optional[float] = None


class MeanResult(BaseModel):
    """Computed mean with its convergence trace"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    mean: ArrayField
    trace: ConvergenceTrace
    method: Method
    reference_cost: Optional[float] = None

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method.value,
            "mean": MatrixPayload.from_array(self.mean).model_dump(),
            "reference_cost": self.reference_cost,
            "final_cost": self.trace.final_cost,
            "iterations": self.trace.iterations,
            "converged": self.trace.converged,
            "stop_reason": self.trace.stop_reason,
            "counts": self.trace.counts.model_dump(),
        }

"""
Operator Interval Models - the constraint set {Z : L <= Z <= U} and oracle results
"""

from typing import Any, Dict

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from models.matrices import ArrayField
from utils.errors import DimensionError, IntervalError

# U - L may dip this far below zero (relative to ||U||) from rounding
INTERVAL_PSD_RTOL = 1e-10
PD_RTOL = 1e-10


def check_interval_bounds(lower: np.ndarray, upper: np.ndarray) -> None:
    """Raise DimensionError / IntervalError unless L is PD and U - L is PSD"""
    lo, up = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    if lo.ndim != 2 or lo.shape[0] != lo.shape[1] or lo.shape != up.shape:
        raise DimensionError(f"interval bounds must be square and equal-sized, got {lo.shape} and {up.shape}")
    lo_eigs = np.linalg.eigvalsh((lo + lo.T) / 2)
    if lo_eigs[0] <= PD_RTOL * max(lo_eigs[-1], 0.0):
        raise IntervalError(f"lower bound is not positive definite (smallest eigenvalue {lo_eigs[0]:.3e})")
    gap = up - lo
    gap_eigs = np.linalg.eigvalsh((gap + gap.T) / 2)
    scale = float(np.linalg.norm(up, 2))
    if gap_eigs[0] < -INTERVAL_PSD_RTOL * scale:
        raise IntervalError(f"upper - lower is not positive semidefinite (smallest eigenvalue {gap_eigs[0]:.3e})")


class OperatorInterval(BaseModel):
    """
    Operator interval L <= Z <= U in the Loewner order, L positive definite.

    Direct construction reports violations as a pydantic ValidationError;
    services.linear_oracles.make_interval raises the typed errors instead.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    lower: ArrayField
    upper: ArrayField

    @model_validator(mode="after")
    def check_invariants(self):
        check_interval_bounds(self.lower, self.upper)
        return self

    @property
    def dim(self) -> int:
        return int(self.lower.shape[0])

    @property
    def scale(self) -> float:
        """Spectral norm of U"""
        return float(np.linalg.norm(self.upper, 2))

    @property
    def width(self) -> np.ndarray:
        gap = self.upper - self.lower
        return (gap + gap.T) / 2


class FeasibilityReport(BaseModel):
    """Outcome of checking L <= Z <= U, with both eigenvalue margins"""
    feasible: bool
    lower_margin: float = Field(..., description="min eig(Z - L)")
    upper_margin: float = Field(..., description="min eig(U - Z)")
    tolerance: float

    @property
    def margin(self) -> float:
        return min(self.lower_margin, self.upper_margin)


class OracleSolution(BaseModel):
    """Maximizer returned by a linear oracle"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    Z: ArrayField
    objective_value: float
    diagnostics: Dict[str, Any] = Field(default_factory=dict)

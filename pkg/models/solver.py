"""
Solver Models - objective problems, step rules, curvature estimates and traces
"""

import csv
import hashlib
import io
import json
from enum import Enum
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from models.interval import OperatorInterval
from models.matrices import ArrayField, MatrixPayload


class Geometry(str, Enum):
    """Which Frank-Wolfe geometry: straight lines or geodesics"""
    EUCLIDEAN = "euclidean"
    RIEMANNIAN = "riemannian"


class StepVariant(str, Enum):
    """Step-size schedule"""
    CLASSIC = "classic"                  # 2 / (k + 2)
    ADAPTIVE_LINEAR = "adaptive_linear"  # r sqrt(mu Delta_k) / (sqrt(2) M)
    EFW_OPTIMAL = "efw_optimal"          # min(gap / M, 1)


class StepRule(BaseModel):
    """Step-size rule with the parameters its variant needs"""
    model_config = ConfigDict(frozen=True)

    variant: StepVariant = StepVariant.CLASSIC
    mu: Optional[float] = Field(None, gt=0)
    r: Optional[float] = Field(None, gt=0)
    M: Optional[float] = Field(None, gt=0)
    f_star: Optional[float] = None

    @model_validator(mode="after")
    def check_parameters(self):
        if self.variant == StepVariant.ADAPTIVE_LINEAR:
            missing = [name for name in ("mu", "r", "M", "f_star") if getattr(self, name) is None]
            if missing:
                raise ValueError(f"adaptive_linear step rule requires {', '.join(missing)}")
        elif self.variant == StepVariant.EFW_OPTIMAL and self.M is None:
            raise ValueError("efw_optimal step rule requires M")
        return self

    @classmethod
    def classic(cls) -> "StepRule":
        return cls(variant=StepVariant.CLASSIC)

    @classmethod
    def adaptive_linear(cls, mu: float, r: float, M: float, f_star: float) -> "StepRule":
        return cls(variant=StepVariant.ADAPTIVE_LINEAR, mu=mu, r=r, M=M, f_star=f_star)

    @classmethod
    def efw_optimal(cls, M: float) -> "StepRule":
        return cls(variant=StepVariant.EFW_OPTIMAL, M=M)


class CurvatureMethod(str, Enum):
    SAMPLED = "sampled"
    LIPSCHITZ_BOUND = "lipschitz_bound"


class CurvatureEstimate(BaseModel):
    """
    Curvature constant estimate. Sampled values are lower bounds on the
    supremum; lipschitz_bound values are L * diam^2.
    """
    M_phi: float = Field(..., ge=0)
    method: CurvatureMethod
    L_lipschitz: Optional[float] = Field(None, ge=0)
    diameter: float = Field(..., ge=0)
    geometry: Geometry = Geometry.RIEMANNIAN
    samples: int = 0
    is_lower_bound: bool = True

    @model_validator(mode="after")
    def check_bound(self):
        if self.method == CurvatureMethod.LIPSCHITZ_BOUND:
            if self.L_lipschitz is None:
                raise ValueError("lipschitz_bound estimate requires L_lipschitz")
            expected = self.L_lipschitz * self.diameter ** 2
            if not np.isclose(self.M_phi, expected, rtol=1e-12, atol=0.0):
                raise ValueError("lipschitz_bound estimate must equal L * diameter^2")
        return self


class ObjectiveProblem(BaseModel):
    """
    min phi(X) over L <= X <= U: cost and Euclidean-gradient callbacks plus
    the constraint set. Callbacks must be pure.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    cost: Callable[[np.ndarray], float]
    eucl_grad: Callable[[np.ndarray], np.ndarray]
    interval: OperatorInterval
    name: str = "objective"


class CallCounts(BaseModel):
    """Instrumented call tallies; report_cost_calls are outside the solver loop"""
    cost_calls: int = 0
    grad_calls: int = 0
    oracle_calls: int = 0
    report_cost_calls: int = 0


TRACE_COLUMNS = ["k", "cost", "fw_gap", "step_size", "oracle_time_s", "iter_time_s"]


class IterationRecord(BaseModel):
    """One solver iteration"""
    k: int = Field(..., ge=0)
    cost: float
    fw_gap: float
    step_size: float
    oracle_time_s: float = 0.0
    iter_time_s: float = 0.0


class ConvergenceTrace(BaseModel):
    """
    Per-iteration history of a solve. `iterates` and `oracle_points` are
    kept only on request and never serialized.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    method: str
    records: List[IterationRecord] = Field(default_factory=list)
    h0: Optional[float] = None
    final_point: Optional[ArrayField] = None
    converged: bool = False
    stop_reason: str = ""
    counts: CallCounts = Field(default_factory=CallCounts)
    iterates: List[Any] = Field(default_factory=list, exclude=True)
    oracle_points: List[Any] = Field(default_factory=list, exclude=True)

    def append(self, record: IterationRecord) -> None:
        if self.records and record.k <= self.records[-1].k:
            raise ValueError(f"iteration index must increase: {record.k} after {self.records[-1].k}")
        if not np.isfinite(record.cost):
            raise ValueError(f"non-finite cost at iteration {record.k}")
        self.records.append(record)

    @property
    def iterations(self) -> int:
        """Number of updates performed"""
        return max(len(self.records) - 1, 0)

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records])

    @property
    def gaps(self) -> np.ndarray:
        return np.array([r.fw_gap for r in self.records])

    @property
    def final_cost(self) -> float:
        return self.records[-1].cost if self.records else float("nan")

    def min_gap_sequence(self) -> np.ndarray:
        """Running minimum of the FW-gap, G~_K"""
        return np.minimum.accumulate(self.gaps) if self.records else np.array([])

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in self.records:
            writer.writerow([r.k] + [repr(float(getattr(r, col))) for col in TRACE_COLUMNS[1:]])
        return buffer.getvalue()

    @staticmethod
    def records_from_csv(text: str) -> List[IterationRecord]:
        reader = csv.DictReader(io.StringIO(text))
        return [
            IterationRecord(k=int(row["k"]), **{col: float(row[col]) for col in TRACE_COLUMNS[1:]})
            for row in reader
        ]

    def to_json_dict(self) -> Dict[str, Any]:
        data = self.model_dump(exclude={"final_point", "iterates", "oracle_points"})
        if self.final_point is not None:
            data["final_point"] = MatrixPayload.from_array(self.final_point).model_dump()
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    def fingerprint(self) -> str:
        """Digest of everything except wall-clock timings"""
        digest = hashlib.sha256()
        for r in self.records:
            digest.update(np.array([r.k, r.cost, r.fw_gap, r.step_size], dtype=float).tobytes())
        if self.final_point is not None:
            digest.update(np.ascontiguousarray(self.final_point).tobytes())
        return digest.hexdigest()

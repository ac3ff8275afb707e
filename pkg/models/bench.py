"""
Benchmark Models - configuration, per-method summaries and reports
"""

import os
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, field_validator

from models.ensemble import InitChoice, Method, _env_float, _env_int


class WeightScheme(str, Enum):
    UNIFORM = "uniform"
    RANDOM_SIMPLEX = "random-simplex"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str) and value.strip().lower() in ("random_simplex", "dirichlet", "random"):
            return cls.RANDOM_SIMPLEX
        return None


class BenchConfig(BaseModel):
    """
    Benchmark run: N x N matrices, M of them, K iterations per method
    """
    dim: int = Field(40, ge=1)
    count: int = Field(10, ge=1)
    max_iter: int = Field(default_factory=lambda: _env_int("SPDFW_MAX_ITER", 200), ge=1)
    methods: List[Method] = Field(default_factory=lambda: list(Method))
    init: InitChoice = InitChoice.HARMONIC
    seed: int = Field(default_factory=lambda: _env_int("SPDFW_SEED", 0), ge=0)
    condition_number: float = Field(10.0, ge=1.0)
    weights: WeightScheme = WeightScheme.UNIFORM
    output_dir: str = Field(default_factory=lambda: os.getenv("SPDFW_OUTPUT_DIR", "bench_output"))
    gap_tol: float = Field(default_factory=lambda: _env_float("SPDFW_GAP_TOL", 1e-8), ge=0)
    oracle_refine_iters: int = Field(default_factory=lambda: _env_int("SPDFW_ORACLE_REFINE_ITERS", 50), ge=0)
    record_timings: bool = True

    @field_validator("init")
    @classmethod
    def check_init(cls, value: InitChoice) -> InitChoice:
        if value not in (InitChoice.HARMONIC, InitChoice.MIDPOINT):
            raise ValueError("benchmark init must be H or mid")
        return value

    @field_validator("methods")
    @classmethod
    def check_methods(cls, value: List[Method]) -> List[Method]:
        if len(set(value)) != len(value):
            raise ValueError("methods must not repeat")
        return value


REPORT_COLUMNS = [
    "method",
    "final_cost",
    "relative_gap",
    "iterations",
    "grad_calls",
    "cost_calls",
    "report_cost_calls",
    "oracle_calls",
    "wall_time_s",
    "converged",
    "error",
]


class MethodSummary(BaseModel):
    """One row of the benchmark table"""
    method: Method
    final_cost: Optional[float] = None
    relative_gap: Optional[float] = None
    iterations: int = 0
    grad_calls: int = 0
    cost_calls: int = 0
    report_cost_calls: int = 0
    oracle_calls: int = 0
    wall_time_s: float = 0.0
    converged: bool = False
    error: Optional[str] = None
    means_margin: Optional[float] = Field(None, description="min eigenvalue margin of H <= X <= A")


class BenchReport(BaseModel):
    config: BenchConfig
    reference_cost: float
    methods: List[MethodSummary] = Field(default_factory=list)

    def summary(self, method: Method) -> MethodSummary:
        for row in self.methods:
            if row.method == method:
                return row
        raise KeyError(method)


class OracleCheckSummary(BaseModel):
    """Outcome of the oracle-vs-brute-force suite"""
    dim: int
    trials: int
    seed: int
    euclid_failures: int = 0
    riem_failures: int = 0
    infeasible: int = 0
    safeguard_regressions: int = 0
    max_euclid_shortfall: float = 0.0
    max_riem_shortfall: float = 0.0
    safeguard_improvements: int = 0

    @property
    def passed(self) -> bool:
        return self.euclid_failures == 0 and self.riem_failures == 0 and self.infeasible == 0 \
            and self.safeguard_regressions == 0


class SweepEntry(BaseModel):
    dim: int
    count: int
    init: InitChoice
    method: Method
    iterations: int
    iterations_to_gap: Optional[int] = None
    final_gap: float
    # smallest fw_gap / (1 + |cost|) along the trace
    min_relative_gap: float
    converged: bool
    fingerprint: str


class SweepReport(BaseModel):
    gap_tol: float = 1e-6
    entries: List[SweepEntry] = Field(default_factory=list)
    # (dim, count, method) -> whether H and mid produced different traces
    init_sensitivity: Dict[str, bool] = Field(default_factory=dict)

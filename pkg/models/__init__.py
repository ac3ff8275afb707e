# Models package
from models.bench import BenchConfig, BenchReport, MethodSummary, OracleCheckSummary, SweepReport, WeightScheme
from models.ensemble import EnsemblePayload, InitChoice, MeanResult, Method, SolverConfig, WeightedEnsemble
from models.interval import FeasibilityReport, OperatorInterval, OracleSolution
from models.matrices import EigDecomposition, MatrixPayload
from models.solver import CallCounts, ConvergenceTrace, IterationRecord, ObjectiveProblem, StepRule

"""
Error types raised by the manifold, oracle and solver services
"""

from typing import Optional


class SpdFrankWolfeError(Exception):
    """Base class for all library errors"""


class DimensionError(SpdFrankWolfeError, ValueError):
    """Non-square input or mismatched matrix dimensions"""


class DomainError(SpdFrankWolfeError, ValueError):
    """Matrix function evaluated outside its domain"""

    def __init__(self, message: str, eigenvalue: Optional[float] = None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class NotPositiveDefiniteError(DomainError):
    """Smallest eigenvalue at or below the positive-definiteness tolerance"""


class AsymmetryError(SpdFrankWolfeError, ValueError):
    """Matrix fails the symmetry tolerance"""


class RangeError(SpdFrankWolfeError, ValueError):
    """Scalar parameter outside its admissible range"""


class IntervalError(SpdFrankWolfeError, ValueError):
    """Operator interval with L not PD or U - L not PSD"""


class InfeasiblePointError(SpdFrankWolfeError, ValueError):
    """Point outside the operator interval"""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class NonFiniteError(SpdFrankWolfeError, ArithmeticError):
    """Cost or gradient evaluated to inf/nan"""


class InconsistencyError(SpdFrankWolfeError, RuntimeError):
    """Negative FW-gap or infeasible oracle answer: an oracle or gradient bug"""


class SolverFailure(SpdFrankWolfeError, RuntimeError):
    """Solver could not make progress (e.g. step halving exhausted)"""


class ConfigError(SpdFrankWolfeError, ValueError):
    """Invalid run configuration or malformed input file"""

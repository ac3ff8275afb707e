"""
Matrix Models - wire format and array plumbing shared by all services
"""

from typing import Annotated, List

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, PlainSerializer, model_validator


def _frozen_array(value) -> np.ndarray:
    """Copy into a read-only float64 array"""
    if value is None:
        return None
    arr = np.array(value, dtype=float)
    arr.setflags(write=False)
    return arr


# numpy array field: validated into a read-only copy, serialized as nested lists
ArrayField = Annotated[
    np.ndarray,
    BeforeValidator(_frozen_array),
    PlainSerializer(lambda a: np.asarray(a).tolist(), return_type=list),
]


class MatrixPayload(BaseModel):
    """
    Dense matrix in JSON: explicit dimension plus row-major entries
    """
    dim: int = Field(..., ge=1)
    entries: List[List[float]]

    @model_validator(mode="after")
    def check_shape(self):
        if len(self.entries) != self.dim or any(len(row) != self.dim for row in self.entries):
            raise ValueError(f"entries must be a {self.dim}x{self.dim} row-major array")
        return self

    def to_array(self) -> np.ndarray:
        return _frozen_array(self.entries)

    @classmethod
    def from_array(cls, matrix) -> "MatrixPayload":
        arr = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(dim=arr.shape[0], entries=arr.tolist())


class EigDecomposition(BaseModel):
    """Symmetric eigendecomposition with eigenvalues in descending order"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    eigenvalues: ArrayField
    eigenvectors: ArrayField

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.shape[0])

    def reconstruct(self) -> np.ndarray:
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.T

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Q diag(values) Q^T, symmetrized"""
        q = self.eigenvectors
        out = (q * values) @ q.T
        return (out + out.T) / 2

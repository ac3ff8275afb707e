"""Shared fixtures: seeded generators, random SPD matrices, intervals and ensembles"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

os.environ.setdefault("LOG_TO_FILE", "false")
os.environ.setdefault("LOG_LEVEL", "WARNING")

sys.path.insert(0, str(Path(__file__).parent))

from models.ensemble import WeightedEnsemble  # noqa: E402
from services.benchmark_service import random_interval, random_spd  # noqa: E402
from services.linear_oracles import haar_orthogonal  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def spd(rng):
    """Factory for random SPD matrices with bounded condition number"""
    def make(dim: int, condition_number: float = 10.0) -> np.ndarray:
        return random_spd(dim, rng, condition_number)
    return make


@pytest.fixture
def interval(rng):
    """Factory for random operator intervals L <= Z <= U"""
    def make(dim: int):
        return random_interval(dim, rng)
    return make


@pytest.fixture
def ensemble(rng):
    """Factory for random ensembles, uniform or Dirichlet weights"""
    def make(dim: int, count: int, random_weights: bool = False) -> WeightedEnsemble:
        matrices = np.array([random_spd(dim, rng, 10.0) for _ in range(count)])
        weights = rng.dirichlet(np.ones(count)) if random_weights else None
        if weights is not None:
            weights = weights / np.sum(weights)
        return WeightedEnsemble(matrices=matrices, weights=weights)
    return make


@pytest.fixture
def commuting_ensemble(rng):
    """Factory for simultaneously diagonalizable ensembles"""
    def make(dim: int, count: int) -> WeightedEnsemble:
        Q = haar_orthogonal(dim, rng)
        matrices = []
        for _ in range(count):
            values = np.exp(rng.uniform(0.0, np.log(10.0), dim))
            A = (Q * values) @ Q.T
            matrices.append((A + A.T) / 2)
        return WeightedEnsemble(matrices=np.array(matrices))
    return make

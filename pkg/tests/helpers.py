"""
Shared fixtures for the test suite.
"""

from pathlib import Path
from typing import Tuple

import numpy as np

from reml.model import ModelSpec, Parameterization, ThetaVector
from reml.simulate import oneway_spec, random_instance

EXAMPLES = Path(__file__).parent / 'examples'


def example_path(name: str) -> str:
    return str(EXAMPLES / name)


def read_example(name: str) -> str:
    return (EXAMPLES / name).read_text()


def instance(seed: int, structure: str = 'iid', n: int = 12, p: int = 2, groups: int = 3,
             parameterization: Parameterization = Parameterization.ratio) -> Tuple[ModelSpec, ThetaVector]:
    """
    A seeded random model with its response drawn at the returned ``θ``.
    """
    rng = np.random.default_rng(seed)
    return random_instance(rng, n, p, structure, parameterization=parameterization, groups=groups)


def equal_mean_squares_response() -> np.ndarray:
    """
    Five groups of four observations whose between-group and within-group
    mean squares are both 4/3: within-group deviations (1, −1, 1, −1) and
    group means √(2/15)·(−2, −1, 0, 1, 2).
    """
    c = np.sqrt(2.0 / 15.0)
    means = c * np.arange(-2, 3)
    return np.concatenate([m + np.array([1.0, -1.0, 1.0, -1.0]) for m in means])


def equal_mean_squares_spec() -> ModelSpec:
    return oneway_spec(equal_mean_squares_response(), 5, 4)

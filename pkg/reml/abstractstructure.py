from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import List, NewType, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import IndexOutOfRange, InadmissibleParameter, NotPositiveDefinite, ZeroPivot
from .linalg import DenseMatrix, ldlt_factor, logdet, solve

ParameterName = NewType('ParameterName', str)
"""A human readable parameter label, e.g. ``gamma[herd]`` or ``phi``."""

BOUNDARY_EPS = 1e-8
"""Smallest value a variance-role parameter takes; keeps ``G`` and ``R`` invertible."""


class ParameterRole(Enum):
    variance = 'variance'
    """A variance or variance ratio; clamped to stay above the boundary epsilon."""
    correlation = 'correlation'
    """A correlation-type parameter kept inside an open interval."""


@dataclass(frozen=True)
class ParameterBounds:
    lower: float
    upper: float

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def clamp(self, value: float) -> float:
        return float(min(max(value, self.lower), self.upper))


class VarianceStructure(ABC):
    """
    A ``VarianceStructure`` is a symmetric matrix-valued function of a short
    parameter vector, together with its first and second derivatives. It
    provides either ``G(γ)`` (random effects, order ``b``) or ``R(φ)``
    (residuals, order ``n``) of a linear mixed model.
    """

    kind: str = 'abstract'

    def __init__(self, dimension: int, names: Sequence[str],
                 bounds: Sequence[ParameterBounds], roles: Sequence[ParameterRole]):
        if not (len(names) == len(bounds) == len(roles)):
            raise ValueError('names, bounds and roles must have equal length')
        self.dimension = dimension
        self.param_names: List[ParameterName] = [ParameterName(s) for s in names]
        self.bounds: List[ParameterBounds] = list(bounds)
        self.roles: List[ParameterRole] = list(roles)

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    @property
    @abstractmethod
    def is_linear(self) -> bool:
        """
        True if the value depends affinely on the parameters, so that all
        second derivatives vanish.
        """
        ...

    @abstractmethod
    def value(self, params: np.ndarray) -> DenseMatrix:
        ...

    @abstractmethod
    def first_derivative(self, params: np.ndarray, k: int) -> DenseMatrix:
        ...

    @abstractmethod
    def second_derivative(self, params: np.ndarray, k: int, l: int) -> DenseMatrix:
        ...

    @abstractmethod
    def default_start(self) -> np.ndarray:
        """
        Starting values for the estimation loops, inside the admissible region.
        """
        ...

    def inverse(self, params: np.ndarray) -> sp.csc_matrix:
        """
        Inverse of :meth:`value`. Subclasses with structured inverses override this.
        """
        f = self._factor(params)
        return sp.csc_matrix(solve(f, np.eye(self.dimension)))

    def logdet(self, params: np.ndarray) -> float:
        return logdet(self._factor(params))

    def _factor(self, params: np.ndarray):
        try:
            f = ldlt_factor(self.value(params))
        except ZeroPivot as e:
            raise NotPositiveDefinite(f'{self.kind} structure is singular at {params}: {e}')
        if not f.positive_definite:
            raise NotPositiveDefinite(f'{self.kind} structure is not positive definite at {params}')
        return f

    def check(self, params: np.ndarray):
        """
        :raises InadmissibleParameter: if ``params`` leaves the admissible region
        """
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise InadmissibleParameter(f'{self.kind} structure takes {self.n_params} '
                                        f'parameters, got shape {params.shape}')
        for name, bound, value in zip(self.param_names, self.bounds, params):
            if not np.isfinite(value) or not bound.contains(value):
                raise InadmissibleParameter(f'{name}={value} outside [{bound.lower}, {bound.upper}]')

    def _index(self, k: int) -> int:
        if not 0 <= k < self.n_params:
            raise IndexOutOfRange(f'{self.kind} structure has {self.n_params} parameters, '
                                  f'no index {k}')
        return k

    def __repr__(self):
        return f'{type(self).__name__}(dimension={self.dimension}, params={self.param_names})'

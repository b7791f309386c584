"""
User-supplied structures: ``M(θ) = M₀ + Σₖ θₖ Mₖ`` with the derivative
matrices ``Mₖ`` given explicitly, typically read from Matrix Market files.
"""
from typing import Optional, Sequence

import numpy as np

from .abstractstructure import BOUNDARY_EPS, ParameterBounds, ParameterRole, VarianceStructure
from .linalg import DenseMatrix
from .matrixio import read_sparse_symmetric


class ExplicitStructure(VarianceStructure):

    kind = 'explicit'

    def __init__(self, derivatives: Sequence[DenseMatrix], base: Optional[DenseMatrix] = None,
                 names: Optional[Sequence[str]] = None,
                 bounds: Optional[Sequence[ParameterBounds]] = None,
                 roles: Optional[Sequence[ParameterRole]] = None,
                 start: Optional[Sequence[float]] = None):
        derivatives = [np.asarray(m, dtype=float) for m in derivatives]
        if not derivatives and base is None:
            raise ValueError('an explicit structure needs a base matrix or at least one derivative')
        dimension = (derivatives[0] if derivatives else np.asarray(base)).shape[0]
        for m in derivatives + ([np.asarray(base)] if base is not None else []):
            if m.shape != (dimension, dimension):
                raise ValueError(f'explicit matrices must all be {dimension}x{dimension}, got {m.shape}')
            if not np.array_equal(m, m.T):
                raise ValueError('explicit matrices must be exactly symmetric')
        r = len(derivatives)
        super().__init__(
            dimension=dimension,
            names=names if names is not None else [f'theta[{k}]' for k in range(r)],
            bounds=bounds if bounds is not None else [ParameterBounds(BOUNDARY_EPS, np.inf)] * r,
            roles=roles if roles is not None else [ParameterRole.variance] * r
        )
        self.base = np.zeros((dimension, dimension)) if base is None else np.asarray(base, dtype=float)
        self.derivatives = derivatives
        self._start = np.ones(r) if start is None else np.asarray(start, dtype=float)

    @classmethod
    def from_files(cls, derivative_paths: Sequence[str], base_path: Optional[str] = None,
                   **kwargs) -> 'ExplicitStructure':
        derivatives = [read_sparse_symmetric(p).to_dense() for p in derivative_paths]
        base = read_sparse_symmetric(base_path).to_dense() if base_path else None
        return cls(derivatives, base, **kwargs)

    @property
    def is_linear(self) -> bool:
        return True

    def value(self, params):
        params = np.asarray(params, dtype=float)
        out = self.base.copy()
        for theta, m in zip(params, self.derivatives):
            out += theta * m
        return out

    def first_derivative(self, params, k):
        return self.derivatives[self._index(k)]

    def second_derivative(self, params, k, l):
        self._index(k)
        self._index(l)
        return np.zeros((self.dimension, self.dimension))

    def default_start(self):
        return self._start.copy()

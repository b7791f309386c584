"""
Independent, identically distributed structures: block-diagonal random
effects ``G = diag(γ₁I_{b₁}, …, γ_rI_{b_r})`` and the identity residual ``R = I``.
"""
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .abstractstructure import ParameterBounds, ParameterRole, VarianceStructure
from .exceptions import NotPositiveDefinite
from .linalg import DenseMatrix


class IidBlocksStructure(VarianceStructure):
    """
    One variance parameter per block of random effects. Depending on how the
    model is parameterized the parameters are variance ratios ``σᵢ²/σ²`` or
    the absolute components ``σᵢ²``; the structure itself does not care.
    """

    kind = 'iid'

    def __init__(self, block_sizes: Sequence[int], names: Optional[Sequence[str]] = None,
                 lower: float = 0.0, upper: float = np.inf):
        block_sizes = [int(s) for s in block_sizes]
        if any(s < 1 for s in block_sizes):
            raise ValueError(f'block sizes must be positive: {block_sizes}')
        if names is None:
            names = [f'gamma[{i}]' for i in range(len(block_sizes))]
        super().__init__(
            dimension=sum(block_sizes),
            names=names,
            bounds=[ParameterBounds(lower, upper)] * len(block_sizes),
            roles=[ParameterRole.variance] * len(block_sizes)
        )
        self.block_sizes = block_sizes
        self.block_of = np.repeat(np.arange(len(block_sizes)), block_sizes)
        """Block index of every random effect."""

    @property
    def is_linear(self) -> bool:
        return True

    def _diagonal(self, params: np.ndarray) -> np.ndarray:
        return np.asarray(params, dtype=float)[self.block_of]

    def value(self, params):
        return np.diag(self._diagonal(params))

    def first_derivative(self, params, k):
        k = self._index(k)
        return np.diag((self.block_of == k).astype(float))

    def second_derivative(self, params, k, l):
        self._index(k)
        self._index(l)
        return np.zeros((self.dimension, self.dimension))

    def inverse(self, params):
        diagonal = self._diagonal(params)
        if np.any(diagonal <= 0):
            raise NotPositiveDefinite(f'G is singular: some variance parameter is not positive {params}')
        return sp.diags(1.0 / diagonal, format='csc')

    def logdet(self, params):
        params = np.asarray(params, dtype=float)
        if np.any(params <= 0):
            raise NotPositiveDefinite(f'G is singular: some variance parameter is not positive {params}')
        return float(np.sum(np.asarray(self.block_sizes) * np.log(params)))

    def default_start(self):
        r = len(self.block_sizes)
        return np.full(r, 1.0 / r)


class IdentityResidual(VarianceStructure):
    """
    ``R = I_n``; no parameters.
    """

    kind = 'identity'

    def __init__(self, n: int):
        super().__init__(dimension=n, names=[], bounds=[], roles=[])

    @property
    def is_linear(self) -> bool:
        return True

    def value(self, params) -> DenseMatrix:
        return np.eye(self.dimension)

    def first_derivative(self, params, k):
        self._index(k)

    def second_derivative(self, params, k, l):
        self._index(k)

    def inverse(self, params):
        return sp.identity(self.dimension, format='csc')

    def logdet(self, params):
        return 0.0

    def default_start(self):
        return np.zeros(0)

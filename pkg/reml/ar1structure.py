"""
First-order autoregressive residual correlation, ``R(φ)ᵢⱼ = φ^{|i−j|}``.

This is the smallest structure with non-vanishing second derivatives, so it
is what separates the observed, Fisher and average information matrices.
"""

import numpy as np
import scipy.sparse as sp

from .abstractstructure import ParameterBounds, ParameterRole, VarianceStructure
from .exceptions import NotPositiveDefinite

PHI_LIMIT = 0.99


class AR1Residual(VarianceStructure):

    kind = 'ar1'

    def __init__(self, n: int, name: str = 'phi', lower: float = -PHI_LIMIT, upper: float = PHI_LIMIT):
        if not -1.0 < lower < upper < 1.0:
            raise ValueError(f'AR(1) bounds must lie strictly inside (-1, 1), got [{lower}, {upper}]')
        super().__init__(dimension=n, names=[name], bounds=[ParameterBounds(lower, upper)],
                         roles=[ParameterRole.correlation])
        idx = np.arange(n)
        self._lag = np.abs(idx[:, None] - idx[None, :])

    @property
    def is_linear(self) -> bool:
        return False

    def value(self, params):
        phi = float(params[0])
        return np.power(phi, self._lag)

    def first_derivative(self, params, k):
        self._index(k)
        phi = float(params[0])
        lag = self._lag
        return lag * np.power(phi, np.maximum(lag - 1, 0))

    def second_derivative(self, params, k, l):
        self._index(k)
        self._index(l)
        phi = float(params[0])
        lag = self._lag
        return lag * (lag - 1) * np.power(phi, np.maximum(lag - 2, 0))

    def inverse(self, params):
        """
        The inverse is tridiagonal:
        ``(1−φ²)⁻¹ · tridiag(−φ; 1, 1+φ², …, 1+φ², 1; −φ)``.
        """
        phi = float(params[0])
        n = self.dimension
        if abs(phi) >= 1.0:
            raise NotPositiveDefinite(f'AR(1) correlation {phi} is not inside (-1, 1)')
        if n == 1:
            return sp.identity(1, format='csc')
        main = np.full(n, 1.0 + phi * phi)
        main[0] = main[-1] = 1.0
        off = np.full(n - 1, -phi)
        return sp.diags([off, main, off], [-1, 0, 1], format='csc') / (1.0 - phi * phi)

    def logdet(self, params):
        phi = float(params[0])
        if abs(phi) >= 1.0:
            raise NotPositiveDefinite(f'AR(1) correlation {phi} is not inside (-1, 1)')
        return (self.dimension - 1) * float(np.log1p(-phi * phi))

    def default_start(self):
        return np.zeros(1)

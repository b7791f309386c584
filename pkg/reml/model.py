"""
The linear mixed model ``y = Xτ + Zu + e`` with ``u ~ N(0, σ²G(γ))`` and
``e ~ N(0, σ²R(φ))``, its variance parameters ``θ = (σ²; γ; φ)`` and the
variance ``V(θ) = σ²(R + ZGZᵀ) = σ²H(κ)`` with its parameter derivatives.

Two parameterizations are supported:

* ``ratio`` (default): ``G`` holds variance ratios, ``V = σ²(R(φ) + ZG(γ)Zᵀ)``.
* ``component``: ``G`` holds absolute variance components,
  ``V = σ²R(φ) + ZG(γ)Zᵀ``. With an identity residual and iid blocks this is
  ``V = σ²I + Σσᵢ²ZᵢZᵢᵀ``, which is linear in θ.

Quantities on the *H-scale* (``H = V/σ²``, the ``G`` and ``R`` that enter the
mixed model equations) are what the MME module consumes.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .abstractstructure import BOUNDARY_EPS, ParameterBounds, ParameterRole, VarianceStructure
from .exceptions import DimensionMismatch, IndexOutOfRange, InadmissibleParameter, RankDeficient, ZeroPivot
from .linalg import DenseMatrix, ldlt_factor, solve

logger = logging.getLogger(__name__)


class Parameterization(Enum):
    ratio = 'ratio'
    component = 'component'


@dataclass(frozen=True)
class ModelSpec:
    y: np.ndarray
    X: DenseMatrix
    Z: sp.csc_matrix
    g_structure: VarianceStructure
    r_structure: VarianceStructure
    parameterization: Parameterization = Parameterization.ratio
    fixed_names: Optional[List[str]] = None
    random_names: Optional[List[str]] = None
    response_name: str = 'y'

    def __post_init__(self):
        n, p = self.X.shape
        if self.y.shape != (n,):
            raise DimensionMismatch(f'y has shape {self.y.shape}, X has {n} rows')
        if self.Z.shape[0] != n:
            raise DimensionMismatch(f'Z has {self.Z.shape[0]} rows, X has {n}')
        if self.g_structure.dimension != self.Z.shape[1]:
            raise DimensionMismatch(f'G has order {self.g_structure.dimension}, '
                                    f'Z has {self.Z.shape[1]} columns')
        if self.r_structure.dimension != n:
            raise DimensionMismatch(f'R has order {self.r_structure.dimension}, expected {n}')
        if not n > p >= 1:
            raise DimensionMismatch(f'need n > p >= 1, got n={n}, p={p}')
        try:
            ldlt_factor(self.X.T @ self.X, equilibrate=True)
        except ZeroPivot as e:
            names = self.fixed_names or [f'x{k}' for k in range(p)]
            raise RankDeficient(f'X is rank deficient at column {names[e.index]}',
                                columns=[names[e.index]])

    @classmethod
    def build(cls, y, X, Z=None, g_structure: Optional[VarianceStructure] = None,
              r_structure: Optional[VarianceStructure] = None, **kwargs) -> 'ModelSpec':
        """
        Convenience constructor accepting dense or sparse ``Z`` and defaulting
        to no random effects and an identity residual.
        """
        from .iidstructure import IdentityResidual, IidBlocksStructure
        y = np.asarray(y, dtype=float).ravel()
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = y.shape[0]
        Z = sp.csc_matrix((n, 0)) if Z is None else sp.csc_matrix(Z, dtype=float)
        if g_structure is None:
            g_structure = IidBlocksStructure([Z.shape[1]]) if Z.shape[1] else _EmptyStructure()
        if r_structure is None:
            r_structure = IdentityResidual(n)
        return cls(y=y, X=X, Z=Z, g_structure=g_structure, r_structure=r_structure, **kwargs)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def b(self) -> int:
        return self.Z.shape[1]

    @property
    def n_gamma(self) -> int:
        return self.g_structure.n_params

    @property
    def n_phi(self) -> int:
        return self.r_structure.n_params

    @property
    def n_params(self) -> int:
        return 1 + self.n_gamma + self.n_phi

    @property
    def param_names(self) -> List[str]:
        return ['sigma2'] + list(self.g_structure.param_names) + list(self.r_structure.param_names)

    @property
    def param_roles(self) -> List[ParameterRole]:
        return [ParameterRole.variance] + self.g_structure.roles + self.r_structure.roles

    @property
    def is_linear(self) -> bool:
        """
        True when every second derivative of ``V`` vanishes.
        """
        return (self.g_structure.is_linear and self.n_phi == 0
                and (self.parameterization is Parameterization.component or self.n_gamma == 0))

    @cached_property
    def Z_dense(self) -> DenseMatrix:
        return self.Z.toarray()

    @cached_property
    def W(self) -> sp.csc_matrix:
        """``W = [X, Z]``."""
        return sp.csc_matrix(sp.hstack([sp.csc_matrix(self.X), self.Z]))

    def with_response(self, y: np.ndarray) -> 'ModelSpec':
        from dataclasses import replace
        return replace(self, y=np.asarray(y, dtype=float))


class _EmptyStructure(VarianceStructure):
    """``G`` for a model without random effects."""

    kind = 'none'

    def __init__(self):
        super().__init__(dimension=0, names=[], bounds=[], roles=[])

    @property
    def is_linear(self):
        return True

    def value(self, params):
        return np.zeros((0, 0))

    def first_derivative(self, params, k):
        self._index(k)

    def second_derivative(self, params, k, l):
        self._index(k)

    def inverse(self, params):
        return sp.csc_matrix((0, 0))

    def logdet(self, params):
        return 0.0

    def default_start(self):
        return np.zeros(0)


@dataclass(frozen=True)
class ThetaVector:
    """
    ``θ = (σ²; κ)`` with ``κ = (γ; φ)``; ``n_gamma`` records the partition.
    """
    sigma2: float
    kappa: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_gamma: int = 0

    @classmethod
    def from_array(cls, spec: ModelSpec, values: Sequence[float]) -> 'ThetaVector':
        values = np.asarray(values, dtype=float).ravel()
        if values.shape[0] != spec.n_params:
            raise InadmissibleParameter(f'model has {spec.n_params} parameters '
                                        f'{spec.param_names}, got {values.shape[0]} values')
        return cls(float(values[0]), values[1:].copy(), spec.n_gamma)

    @classmethod
    def of(cls, spec: ModelSpec, sigma2: float, gamma=(), phi=()) -> 'ThetaVector':
        return cls.from_array(spec, np.concatenate([[sigma2], np.asarray(gamma, float), np.asarray(phi, float)]))

    @property
    def gamma(self) -> np.ndarray:
        return self.kappa[:self.n_gamma]

    @property
    def phi(self) -> np.ndarray:
        return self.kappa[self.n_gamma:]

    def as_array(self) -> np.ndarray:
        return np.concatenate([[self.sigma2], self.kappa])

    def __len__(self):
        return 1 + self.kappa.shape[0]


def check_admissible(spec: ModelSpec, theta: ThetaVector):
    """
    :raises InadmissibleParameter: if ``theta`` is outside the admissible region
    """
    if len(theta) != spec.n_params or theta.n_gamma != spec.n_gamma:
        raise InadmissibleParameter(f'theta has {len(theta)} entries, model expects '
                                    f'{spec.n_params} {spec.param_names}')
    if not (np.isfinite(theta.sigma2) and theta.sigma2 > 0):
        raise InadmissibleParameter(f'sigma2={theta.sigma2} must be positive')
    spec.g_structure.check(theta.gamma)
    spec.r_structure.check(theta.phi)


def effective_bounds(spec: ModelSpec, eps: float = BOUNDARY_EPS) -> List[Tuple[float, float]]:
    """
    ``(lower, upper)`` per entry of ``θ``; variance-role parameters (σ² included)
    are kept at least ``eps`` away from zero.
    """
    bounds = [ParameterBounds(0.0, np.inf)] + spec.g_structure.bounds + spec.r_structure.bounds
    out = []
    for role, b in zip(spec.param_roles, bounds):
        lower, upper = b.lower, b.upper
        if role is ParameterRole.variance:
            lower = max(lower, eps)
        out.append((lower, upper))
    return out


def _g_scale(spec: ModelSpec, theta: ThetaVector) -> float:
    """Factor turning ``G(γ)`` into its H-scale counterpart."""
    if spec.parameterization is Parameterization.component:
        return 1.0 / theta.sigma2
    return 1.0


def g_h_value(spec: ModelSpec, theta: ThetaVector) -> DenseMatrix:
    return _g_scale(spec, theta) * spec.g_structure.value(theta.gamma)


def g_h_inverse(spec: ModelSpec, theta: ThetaVector) -> sp.csc_matrix:
    return sp.csc_matrix(spec.g_structure.inverse(theta.gamma) / _g_scale(spec, theta))


def g_h_logdet(spec: ModelSpec, theta: ThetaVector) -> float:
    if spec.b == 0:
        return 0.0
    return spec.g_structure.logdet(theta.gamma) + spec.b * np.log(_g_scale(spec, theta))


def r_value(spec: ModelSpec, theta: ThetaVector) -> DenseMatrix:
    return spec.r_structure.value(theta.phi)


def r_inverse(spec: ModelSpec, theta: ThetaVector) -> sp.csc_matrix:
    return sp.csc_matrix(spec.r_structure.inverse(theta.phi))


def r_logdet(spec: ModelSpec, theta: ThetaVector) -> float:
    return spec.r_structure.logdet(theta.phi)


def h_value(spec: ModelSpec, theta: ThetaVector) -> DenseMatrix:
    """``H(κ) = R + ZGZᵀ`` on the H-scale."""
    h = r_value(spec, theta)
    if spec.b:
        Zd = spec.Z_dense
        h = h + Zd @ g_h_value(spec, theta) @ Zd.T
    return h


def variance_value(spec: ModelSpec, theta: ThetaVector) -> DenseMatrix:
    """
    ``V = σ²(R + ZGZᵀ)``.
    """
    check_admissible(spec, theta)
    return theta.sigma2 * h_value(spec, theta)


def _classify(spec: ModelSpec, i: int):
    if not 0 <= i < spec.n_params:
        raise IndexOutOfRange(f'model has {spec.n_params} parameters {spec.param_names}, no index {i}')
    if i == 0:
        return 'sigma2', 0
    if i <= spec.n_gamma:
        return 'gamma', i - 1
    return 'phi', i - 1 - spec.n_gamma


def _zgz(spec: ModelSpec, g: DenseMatrix) -> DenseMatrix:
    Zd = spec.Z_dense
    return Zd @ g @ Zd.T


def variance_first_derivative(spec: ModelSpec, theta: ThetaVector, i: int) -> DenseMatrix:
    """
    ``V̇ᵢ = ∂V/∂θᵢ``.
    """
    kind, k = _classify(spec, i)
    component = spec.parameterization is Parameterization.component
    if kind == 'sigma2':
        return r_value(spec, theta) if component else h_value(spec, theta)
    if kind == 'gamma':
        scale = 1.0 if component else theta.sigma2
        return scale * _zgz(spec, spec.g_structure.first_derivative(theta.gamma, k))
    return theta.sigma2 * spec.r_structure.first_derivative(theta.phi, k)


def variance_second_derivative(spec: ModelSpec, theta: ThetaVector, i: int, j: int) -> DenseMatrix:
    """
    ``V̈ᵢⱼ = ∂²V/∂θᵢ∂θⱼ``; the pair is sorted first so both orders share one
    construction.
    """
    i, j = min(i, j), max(i, j)
    kind_i, k = _classify(spec, i)
    kind_j, l = _classify(spec, j)
    n = spec.n
    component = spec.parameterization is Parameterization.component
    if kind_i == 'sigma2':
        if kind_j == 'sigma2':
            return np.zeros((n, n))
        if kind_j == 'gamma':
            if component:
                return np.zeros((n, n))
            return _zgz(spec, spec.g_structure.first_derivative(theta.gamma, l))
        return spec.r_structure.first_derivative(theta.phi, l)
    if kind_i == 'gamma' and kind_j == 'gamma':
        scale = 1.0 if component else theta.sigma2
        return scale * _zgz(spec, spec.g_structure.second_derivative(theta.gamma, k, l))
    if kind_i == 'gamma':
        return np.zeros((n, n))
    return theta.sigma2 * spec.r_structure.second_derivative(theta.phi, k, l)


def derivative_matvec(spec: ModelSpec, theta: ThetaVector, i: int, v: np.ndarray) -> np.ndarray:
    """
    ``V̇ᵢ v`` for a vector or a block of vectors, without forming ``ZGZᵀ``.
    """
    kind, k = _classify(spec, i)
    component = spec.parameterization is Parameterization.component
    if kind == 'phi':
        return theta.sigma2 * (spec.r_structure.first_derivative(theta.phi, k) @ v)
    if kind == 'sigma2':
        rv = r_value(spec, theta) @ v
        if component or spec.b == 0:
            return rv
        return rv + spec.Z @ (g_h_value(spec, theta) @ (spec.Z.T @ v))
    scale = 1.0 if component else theta.sigma2
    return scale * (spec.Z @ (spec.g_structure.first_derivative(theta.gamma, k) @ (spec.Z.T @ v)))


@dataclass(frozen=True)
class StandardBlocks:
    """
    H-scale blocks; ``H_inv`` comes from the Woodbury identity.
    """
    G: DenseMatrix
    G_inv: DenseMatrix
    R: DenseMatrix
    R_inv: DenseMatrix
    H: DenseMatrix
    H_inv: DenseMatrix


def standard_blocks(spec: ModelSpec, theta: ThetaVector) -> StandardBlocks:
    """
    ``G``, ``G⁻¹``, ``R``, ``R⁻¹``, ``H`` and
    ``H⁻¹ = R⁻¹ − R⁻¹Z(G⁻¹ + ZᵀR⁻¹Z)⁻¹ZᵀR⁻¹``.
    """
    check_admissible(spec, theta)
    R = r_value(spec, theta)
    R_inv = r_inverse(spec, theta).toarray()
    G = g_h_value(spec, theta)
    if spec.b == 0:
        return StandardBlocks(G=G, G_inv=np.zeros((0, 0)), R=R, R_inv=R_inv, H=R.copy(), H_inv=R_inv.copy())
    G_inv = g_h_inverse(spec, theta).toarray()
    Zd = spec.Z_dense
    RiZ = R_inv @ Zd
    inner = ldlt_factor(G_inv + Zd.T @ RiZ, equilibrate=True)
    H_inv = R_inv - RiZ @ solve(inner, RiZ.T)
    H = R + Zd @ G @ Zd.T
    return StandardBlocks(G=G, G_inv=G_inv, R=R, R_inv=R_inv, H=H, H_inv=(H_inv + H_inv.T) / 2)

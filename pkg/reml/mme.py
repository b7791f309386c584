"""
Henderson's mixed model equations on the H-scale,

    C [τ̂; ũ] = WᵀR⁻¹y,   C = WᵀR⁻¹W + blockdiag(0, G⁻¹),   W = [X, Z],

where ``R`` and ``G`` are the σ²-free matrices of :mod:`reml.model`. The
factorization of ``C`` is computed once per system and reused for every
solve, the log-determinant, ``C⁻¹`` blocks and ``P·v`` products.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .exceptions import DimensionMismatch
from .linalg import DenseMatrix, SparseSymmetric, SymmetricFactorization, ldlt_factor, logdet, solve
from .matrixio import write_sparse_symmetric
from .model import ModelSpec, ThetaVector, check_admissible, g_h_inverse, g_h_logdet, r_inverse, r_logdet

logger = logging.getLogger(__name__)

SPARSE_MIN_ORDER = 50
"""Systems of at least this order are factorized with the sparse LDLᵀ."""


@dataclass(frozen=True)
class MMESystem:
    spec: ModelSpec
    theta: ThetaVector
    C: SparseSymmetric
    rhs: np.ndarray
    R_inv: sp.csc_matrix
    sparse_min_order: int = SPARSE_MIN_ORDER
    workers: int = 1

    @property
    def order(self) -> int:
        return self.C.order

    @cached_property
    def factorization(self) -> SymmetricFactorization:
        if self.order >= self.sparse_min_order:
            f = ldlt_factor(self.C, equilibrate=True)
        else:
            f = ldlt_factor(self.C.to_dense(), equilibrate=True)
        logger.debug('factorized C of order %d (nnz %d, %s)', self.order, self.C.nnz,
                     'sparse' if f.is_sparse else 'dense')
        return f

    @cached_property
    def logdet_c(self) -> float:
        return logdet(self.factorization)

    @cached_property
    def logdet_r(self) -> float:
        return r_logdet(self.spec, self.theta)

    @cached_property
    def logdet_g(self) -> float:
        return g_h_logdet(self.spec, self.theta)

    def solve(self, b) -> np.ndarray:
        return solve(self.factorization, b, workers=self.workers)


@dataclass(frozen=True)
class MMESolution:
    """
    ``Py`` is the H-scale vector ``R⁻¹e``; the V-scale ``Py`` is ``Py/σ²``.
    """
    tau_hat: np.ndarray
    u_tilde: np.ndarray
    e: np.ndarray
    Py: np.ndarray
    logdet_c: float
    factorization: SymmetricFactorization


@dataclass(frozen=True)
class CInverseBlocks:
    xx: DenseMatrix
    xz: DenseMatrix
    zx: DenseMatrix
    zz: DenseMatrix

    def assemble(self) -> DenseMatrix:
        return np.block([[self.xx, self.xz], [self.zx, self.zz]])


def assemble(spec: ModelSpec, theta: ThetaVector, sparse_min_order: int = SPARSE_MIN_ORDER,
             workers: int = 1) -> MMESystem:
    """
    :raises InadmissibleParameter: if ``theta`` is not admissible
    :raises NotPositiveDefinite: if ``G`` or ``R`` cannot be inverted
    """
    check_admissible(spec, theta)
    R_inv = r_inverse(spec, theta)
    W = spec.W
    WtRi = sp.csc_matrix(W.T @ R_inv)
    C = WtRi @ W
    if spec.b:
        C = C + sp.block_diag([sp.csc_matrix((spec.p, spec.p)), g_h_inverse(spec, theta)], format='csc')
    rhs = np.asarray(WtRi @ spec.y).ravel()
    system = MMESystem(spec=spec, theta=theta, C=SparseSymmetric.from_matrix(C), rhs=rhs,
                       R_inv=R_inv, sparse_min_order=sparse_min_order, workers=workers)
    logger.debug('assembled MME of order %d for theta=%s', system.order, theta.as_array())
    return system


def solve_mme(system: MMESystem) -> MMESolution:
    """
    :raises ZeroPivot: if ``C`` is singular
    """
    spec = system.spec
    beta = system.solve(system.rhs)
    e = spec.y - np.asarray(spec.W @ beta).ravel()
    return MMESolution(
        tau_hat=beta[:spec.p],
        u_tilde=beta[spec.p:],
        e=e,
        Py=np.asarray(system.R_inv @ e).ravel(),
        logdet_c=system.logdet_c,
        factorization=system.factorization
    )


def c_inverse(system: MMESystem) -> DenseMatrix:
    Ci = system.solve(np.eye(system.order))
    return (Ci + Ci.T) / 2


def c_inverse_blocks(system: MMESystem) -> CInverseBlocks:
    """
    ``C⁻¹`` split at the fixed/random boundary; ``C^XX = (XᵀH⁻¹X)⁻¹``.
    """
    Ci = c_inverse(system)
    p = system.spec.p
    return CInverseBlocks(xx=Ci[:p, :p], xz=Ci[:p, p:], zx=Ci[p:, :p], zz=Ci[p:, p:])


def prediction_variance(system: MMESystem, sigma2: Optional[float] = None) -> DenseMatrix:
    """
    ``var(τ̂ − τ, ũ − u) = σ²C⁻¹``; ``sigma2`` defaults to the system's σ².
    """
    sigma2 = system.theta.sigma2 if sigma2 is None else sigma2
    return sigma2 * c_inverse(system)


def projected_matvec(system: MMESystem, v) -> np.ndarray:
    """
    H-scale ``P_H v = R⁻¹(v − W C⁻¹WᵀR⁻¹v)`` for a vector or a block of vectors.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[0] != system.spec.n:
        raise DimensionMismatch(f'vector has {v.shape[0]} rows, model has {system.spec.n}')
    W = system.spec.W
    Riv = system.R_inv @ v
    B = system.solve(np.asarray(W.T @ Riv))
    return np.asarray(system.R_inv @ (v - W @ B))


def dump_mme(system: MMESystem, path: str):
    """Write ``C`` in Matrix Market format."""
    names = system.spec.param_names
    comment = f'mixed model coefficient matrix at {dict(zip(names, system.theta.as_array()))}'
    write_sparse_symmetric(path, system.C, comment=comment)
    logger.info('wrote C of order %d to %s', system.order, path)

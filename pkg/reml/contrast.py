"""
Error contrasts ``L = [L₁, L₂]`` with ``L₁ᵀX = I_p`` and ``L₂ᵀX = 0``, and the
projectors built from them.

Everything here is dense and cubic in ``n``: these routines exist to check
the factorized likelihood and information paths, never to replace them.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .exceptions import NotPositiveDefinite, NumericalError, RankDeficient, ZeroPivot
from .linalg import DenseMatrix, _gram_factor, ldlt_factor, orthonormal_complement, projector, solve

logger = logging.getLogger(__name__)

PROJECTOR_AGREEMENT = 1e-9


@dataclass(frozen=True)
class ErrorContrast:
    L1: DenseMatrix
    L2: DenseMatrix

    @property
    def n(self) -> int:
        return self.L1.shape[0]

    @property
    def p(self) -> int:
        return self.L1.shape[1]


def build_contrast(X: DenseMatrix) -> ErrorContrast:
    """
    ``Lᵀ = [X, K₂]⁻¹`` with ``K₂`` an orthonormal basis of the complement of
    ``span(X)``. ``L₂`` then coincides with ``K₂``.

    :raises RankDeficient: if ``X`` is rank deficient or has no complement
    """
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    K2 = orthonormal_complement(X)
    try:
        lu = sla.lu_factor(np.hstack([X, K2]), check_finite=True)
    except (ValueError, sla.LinAlgError) as e:
        raise RankDeficient(f'[X, K2] is singular: {e}')
    if np.any(np.diag(lu[0]) == 0.0):
        raise RankDeficient('[X, K2] is singular')
    Lt = sla.lu_solve(lu, np.eye(X.shape[0]))
    L = Lt.T
    return ErrorContrast(L1=L[:, :p], L2=L[:, p:])


def residual_projector_via_L2(L2: DenseMatrix) -> DenseMatrix:
    """
    ``L₂(L₂ᵀL₂)⁻¹L₂ᵀ``, which equals ``I − P_X`` for every full-rank ``L₂``
    annihilating ``X``.
    """
    L2 = np.asarray(L2, dtype=float)
    f = _gram_factor(L2)
    M = L2 @ solve(f, L2.T)
    return (M + M.T) / 2


def projection_contrast(X: DenseMatrix) -> DenseMatrix:
    """
    The singular transform ``S = I − P_X``. It annihilates ``X`` and is
    idempotent, but has no inverse; the likelihood is never evaluated with it.
    """
    X = np.asarray(X, dtype=float)
    return np.eye(X.shape[0]) - projector(X)


def _spd_factor(a: DenseMatrix, what: str):
    try:
        f = ldlt_factor(a, equilibrate=True)
    except ZeroPivot as e:
        raise NotPositiveDefinite(f'{what} is singular: {e}')
    if not f.positive_definite:
        raise NotPositiveDefinite(f'{what} is not positive definite')
    return f


def weighted_residual_projector(V: DenseMatrix, X: DenseMatrix) -> DenseMatrix:
    """
    ``P = V⁻¹ − V⁻¹X(XᵀV⁻¹X)⁻¹XᵀV⁻¹``, formed densely.
    """
    fv = _spd_factor(V, 'V')
    ViX = solve(fv, X)
    fx = _spd_factor(X.T @ ViX, 'XᵀV⁻¹X')
    P = solve(fv, np.eye(V.shape[0])) - ViX @ solve(fx, ViX.T)
    return (P + P.T) / 2


def weighted_projector(V: DenseMatrix, X: DenseMatrix, L2: DenseMatrix) -> DenseMatrix:
    """
    ``L₂(L₂ᵀVL₂)⁻¹L₂ᵀ``, checked against the ``V⁻¹``-based form of ``P``.

    :raises NotPositiveDefinite: if ``V`` (or ``L₂ᵀVL₂``) is not positive definite
    :raises NumericalError: if the two forms disagree beyond roundoff
    """
    V = np.asarray(V, dtype=float)
    X = np.asarray(X, dtype=float)
    L2 = np.asarray(L2, dtype=float)
    f = _spd_factor(L2.T @ V @ L2, 'L₂ᵀVL₂')
    left = L2 @ solve(f, L2.T)
    left = (left + left.T) / 2
    right = weighted_residual_projector(V, X)
    gap = float(np.max(np.abs(left - right)))
    if gap > PROJECTOR_AGREEMENT * (1.0 + float(np.max(np.abs(right)))):
        raise NumericalError(f'contrast and inverse forms of P differ by {gap:.3e}')
    logger.debug('weighted projector forms agree to %.3e', gap)
    return left


def fixed_effect_covariance(V: DenseMatrix, contrast: ErrorContrast) -> DenseMatrix:
    """
    ``(XᵀV⁻¹X)⁻¹`` written through the contrast only:
    ``L₁ᵀVL₁ − L₁ᵀVL₂(L₂ᵀVL₂)⁻¹L₂ᵀVL₁``.
    """
    L1, L2 = contrast.L1, contrast.L2
    VL2 = V @ L2
    f = _spd_factor(L2.T @ VL2, 'L₂ᵀVL₂')
    M = L1.T @ V @ L1 - L1.T @ VL2 @ solve(f, VL2.T @ L1)
    return (M + M.T) / 2

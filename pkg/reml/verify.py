"""
Identity checks on a loaded model instance.

Every check compares two independently computed quantities that must agree
and records the largest discrepancy, scaled by ``1 + ‖reference‖_max``.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from .contrast import (ErrorContrast, _spd_factor, build_contrast, fixed_effect_covariance,
                       residual_projector_via_L2, weighted_residual_projector)
from .finitediff import finite_difference_gradient, finite_difference_jacobian, relative_error, relative_step
from .infomat import DenseDerivatives, evaluate_fast, score_fast
from .likelihood import DENSE_CAP, check_dense_cap, loglik_via_C, loglik_via_V, loglik_via_contrast
from .linalg import logdet, orthonormal_complement, projector, solve
from .mme import MMESystem, assemble, c_inverse, c_inverse_blocks, solve_mme
from .model import (ModelSpec, ThetaVector, effective_bounds, g_h_logdet, r_logdet, standard_blocks,
                    variance_first_derivative, variance_second_derivative, variance_value)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Check:
    name: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.tolerance)


def _scaled(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(b))))


def _scalar(a: float, b: float) -> float:
    return abs(a - b) / (1.0 + abs(b))


def _mixed_contrast(contrast: ErrorContrast, seed: int = 0) -> ErrorContrast:
    """Another valid ``L₂``: ``K₂B`` for a well conditioned random ``B``."""
    m = contrast.L2.shape[1]
    rng = np.random.default_rng(seed)
    B = np.eye(m) + np.triu(rng.uniform(-0.5, 0.5, (m, m)), 1)
    return ErrorContrast(L1=contrast.L1, L2=2.5 * contrast.L2 @ B)


def _likelihood_checks(spec: ModelSpec, theta: ThetaVector, contrast: ErrorContrast) -> List[Check]:
    lb = loglik_via_V(spec, theta).value
    return [
        Check('loglik_contrast_vs_dense', _scalar(loglik_via_contrast(spec, theta, contrast).value, lb), 1e-8),
        Check('loglik_factorized_vs_dense', _scalar(loglik_via_C(spec, theta).value, lb), 1e-8),
        Check('loglik_contrast_invariance',
              _scalar(loglik_via_contrast(spec, theta, _mixed_contrast(contrast)).value, lb), 1e-8),
    ]


def _mme_checks(spec: ModelSpec, theta: ThetaVector, system: MMESystem) -> List[Check]:
    solution = solve_mme(system)
    blocks = standard_blocks(spec, theta)
    X = spec.X
    HiX = blocks.H_inv @ X
    xhx = X.T @ HiX
    fxhx = _spd_factor(xhx, 'XᵀH⁻¹X')
    P_H = blocks.H_inv - HiX @ solve(fxhx, HiX.T)
    Wd = spec.W.toarray()
    Ri = system.R_inv.toarray()
    Ci = c_inverse(system)
    P_mme = Ri - Ri @ Wd @ Ci @ Wd.T @ Ri
    fh = _spd_factor(blocks.H, 'H')
    logdet_h = logdet(fh)
    logdet_xhx = logdet(fxhx)
    V = variance_value(spec, theta)
    fv = _spd_factor(V, 'V')
    ViX = solve(fv, X)
    checks = [
        Check('py_equals_rinv_e', _scaled(solution.Py, P_H @ spec.y), 1e-9),
        Check('projector_via_mme', _scaled(P_mme, P_H), 1e-8),
        Check('logdet_c_identity', _scalar(solution.logdet_c + r_logdet(spec, theta) + g_h_logdet(spec, theta),
                                           logdet_h + logdet_xhx), 1e-8),
        Check('logdet_scale_identity',
              _scalar(logdet(fv) + logdet(_spd_factor(X.T @ ViX, 'XᵀV⁻¹X')),
                      (spec.n - spec.p) * np.log(theta.sigma2) + logdet_h + logdet_xhx), 1e-8),
        Check('woodbury_inverse', _scaled(blocks.H_inv, solve(fh, np.eye(spec.n))), 1e-10),
        Check('c_inverse_fixed_block', _scaled(c_inverse_blocks(system).xx, solve(fxhx, np.eye(spec.p))), 1e-8),
        Check('c_inverse_blocks', _scaled(c_inverse_blocks(system).assemble(),
                                          np.linalg.inv(system.C.to_dense())), 1e-8),
        Check('logdet_c_dense', _scalar(solution.logdet_c, float(np.linalg.slogdet(system.C.to_dense())[1])), 1e-8),
    ]
    if spec.b:
        inner = _spd_factor(blocks.G_inv + spec.Z_dense.T @ Ri @ spec.Z_dense, 'G⁻¹+ZᵀR⁻¹Z')
        checks.append(Check('logdet_schur_identity',
                            _scalar(r_logdet(spec, theta) + logdet(inner),
                                    logdet_h - g_h_logdet(spec, theta)), 1e-8))
    return checks


def _contrast_checks(spec: ModelSpec, theta: ThetaVector, contrast: ErrorContrast) -> List[Check]:
    X = spec.X
    n, p = X.shape
    K2 = orthonormal_complement(X)
    residual = np.eye(n) - projector(X)
    V = variance_value(spec, theta)
    L2 = contrast.L2
    left = L2 @ solve(_spd_factor(L2.T @ V @ L2, 'L₂ᵀVL₂'), L2.T)
    P = weighted_residual_projector(V, X)
    ViX = solve(_spd_factor(V, 'V'), X)
    gls = solve(_spd_factor(X.T @ ViX, 'XᵀV⁻¹X'), np.eye(p))
    return [
        Check('contrast_fixed_part', _scaled(contrast.L1.T @ X, np.eye(p)), 1e-10),
        Check('contrast_annihilates_x', _scaled(L2.T @ X, np.zeros((n - p, p))), 1e-10),
        Check('complement_orthonormal', _scaled(K2.T @ K2, np.eye(n - p)), 1e-10),
        Check('complement_projector', _scaled(K2 @ K2.T, residual), 1e-10),
        Check('residual_projector_via_contrast', _scaled(residual_projector_via_L2(L2), residual), 1e-10),
        Check('weighted_projector_forms', _scaled(left, P), 1e-9),
        Check('weighted_projector_annihilates_x', _scaled(P @ X, np.zeros((n, p))), 1e-9),
        Check('weighted_projector_pvp', _scaled(P @ V @ P, P), 1e-9),
        Check('gls_covariance_via_contrast', _scaled(fixed_effect_covariance(V, contrast), gls), 1e-8),
    ]


def _contrast_information(spec: ModelSpec, theta: ThetaVector,
                          contrast: ErrorContrast) -> Tuple[np.ndarray, np.ndarray]:
    """
    ``I_E`` and ``I_Z`` built from ``V̇``, ``V̈`` and the contrast form
    ``P = L₂(L₂ᵀVL₂)⁻¹L₂ᵀ`` with ``ξ = Py``, sharing nothing with the oracle
    bundle but the variance derivatives.
    """
    V = variance_value(spec, theta)
    L2 = contrast.L2
    P = L2 @ solve(_spd_factor(L2.T @ V @ L2, 'L₂ᵀVL₂'), L2.T)
    P = (P + P.T) / 2
    xi = P @ spec.y
    r = spec.n_params
    PV = [P @ variance_first_derivative(spec, theta, i) for i in range(r)]
    fisher = np.empty((r, r))
    splitting = np.empty((r, r))
    for i in range(r):
        for j in range(i, r):
            second = variance_second_derivative(spec, theta, i, j)
            fisher[i, j] = fisher[j, i] = 0.5 * float(np.sum(PV[i] * PV[j].T))
            splitting[i, j] = splitting[j, i] = 0.25 * (float(np.sum(P * second)) - float(xi @ second @ xi))
    return fisher, splitting


def _information_checks(spec: ModelSpec, theta: ThetaVector, contrast: ErrorContrast) -> List[Check]:
    dense = DenseDerivatives(spec, theta)
    bundle = dense.bundle()
    fast = evaluate_fast(spec, theta)
    values = theta.as_array()
    bounds = effective_bounds(spec)

    def loglik(x):
        return loglik_via_C(spec, ThetaVector.from_array(spec, x)).value

    def fast_score(x):
        return score_fast(spec, ThetaVector.from_array(spec, x))

    gradient = finite_difference_gradient(loglik, values, relative_step(1e-5), bounds)
    hessian = finite_difference_jacobian(fast_score, values, relative_step(1e-5), bounds)
    observed = -(hessian + hessian.T) / 2
    fisher, splitting = _contrast_information(spec, theta, contrast)
    checks = [
        Check('score_vs_finite_difference', relative_error(bundle.score, gradient), 1e-5),
        Check('observed_vs_finite_difference', relative_error(bundle.observed, observed), 1e-5),
        Check('information_splitting', relative_error(observed, 2 * fast.average - fisher + 2 * splitting), 1e-5),
        Check('splitting_via_contrast', _scaled(bundle.splitting, splitting), 1e-8),
        Check('fisher_via_contrast', _scaled(bundle.fisher, fisher), 1e-8),
        Check('average_information_fast_vs_dense', _scaled(fast.average, bundle.average), 1e-8),
        Check('score_fast_vs_dense', _scaled(fast.score, bundle.score), 1e-8),
    ]
    if spec.is_linear:
        checks.append(Check('splitting_vanishes_linear', float(np.max(np.abs(splitting))), 1e-10))
    return checks


def verify(spec: ModelSpec, theta: ThetaVector, dense_cap: int = DENSE_CAP,
           progress: Optional[Callable[[Check], None]] = None) -> List[Check]:
    """
    Run every identity check at ``theta``.

    :raises OracleCapExceeded: if ``n`` is above the dense cap
    """
    check_dense_cap(spec.n, dense_cap)
    contrast = build_contrast(spec.X)
    system = assemble(spec, theta)
    checks = (_likelihood_checks(spec, theta, contrast) + _mme_checks(spec, theta, system)
              + _contrast_checks(spec, theta, contrast) + _information_checks(spec, theta, contrast))
    for check in checks:
        logger.info('%-36s residual %.3e (tolerance %.0e) %s', check.name, check.residual, check.tolerance,
                    'ok' if check.passed else 'FAILED')
        if progress:
            progress(check)
    return checks

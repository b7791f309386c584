"""
Score vector and information matrices of the restricted log-likelihood.

With ``P = V⁻¹ − V⁻¹X(XᵀV⁻¹X)⁻¹XᵀV⁻¹`` (V-scale), ``ξ = Py`` and
``ηᵢ = V̇ᵢξ``:

* score        ``sᵢ = −½{tr(PV̇ᵢ) − ξᵀV̇ᵢξ}``
* observed     ``I_O = ½{tr(PV̈ᵢⱼ) − tr(PV̇ᵢPV̇ⱼ) + 2ηᵢᵀPηⱼ − ξᵀV̈ᵢⱼξ}``
* Fisher       ``I = ½tr(PV̇ᵢPV̇ⱼ)``
* average      ``I_A = ½ηᵢᵀPηⱼ``
* splitting    ``I_Z = ¼{tr(PV̈ᵢⱼ) − ξᵀV̈ᵢⱼξ}``, so that ``(I_O + I)/2 = I_A + I_Z``.

:class:`DenseDerivatives` forms ``P`` explicitly and is the reference.
The ``*_fast`` functions work from the mixed model equations and one
factorization of ``C``.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np

from .contrast import weighted_residual_projector
from .likelihood import DENSE_CAP, LikelihoodValue, check_dense_cap, loglik_from_mme
from .mme import MMESolution, MMESystem, assemble, solve_mme
from .model import (ModelSpec, Parameterization, ThetaVector, derivative_matvec, g_h_value,
                    variance_first_derivative, variance_second_derivative, variance_value)

logger = logging.getLogger(__name__)


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return (m + m.T) / 2


@dataclass(frozen=True)
class DerivativeBundle:
    score: np.ndarray
    observed: np.ndarray
    fisher: np.ndarray
    average: np.ndarray
    splitting: np.ndarray


class DenseDerivatives:
    """
    Dense reference evaluation at a fixed ``θ``. Everything that does not
    depend on ``y`` is computed once, so many responses can be evaluated
    against the same instance.
    """

    def __init__(self, spec: ModelSpec, theta: ThetaVector, dense_cap: int = DENSE_CAP):
        check_dense_cap(spec.n, dense_cap)
        self.spec = spec
        self.theta = theta
        self.V = variance_value(spec, theta)
        self.P = weighted_residual_projector(self.V, spec.X)
        r = spec.n_params
        self.first: List[np.ndarray] = [variance_first_derivative(spec, theta, i) for i in range(r)]
        self.PV: List[np.ndarray] = [self.P @ d for d in self.first]

    @property
    def n_params(self) -> int:
        return len(self.first)

    @cached_property
    def second(self) -> Dict[Tuple[int, int], np.ndarray]:
        """Nonzero ``V̈ᵢⱼ`` keyed by ``i ≤ j``."""
        out = {}
        if self.spec.is_linear:
            return out
        for i in range(self.n_params):
            for j in range(i, self.n_params):
                m = variance_second_derivative(self.spec, self.theta, i, j)
                if np.any(m):
                    out[(i, j)] = m
        return out

    @cached_property
    def trace_pv(self) -> np.ndarray:
        return np.array([np.trace(m) for m in self.PV])

    @cached_property
    def trace_pvpv(self) -> np.ndarray:
        r = self.n_params
        out = np.empty((r, r))
        for i in range(r):
            for j in range(i, r):
                out[i, j] = out[j, i] = float(np.sum(self.PV[i] * self.PV[j].T))
        return out

    @cached_property
    def trace_pvdd(self) -> np.ndarray:
        r = self.n_params
        out = np.zeros((r, r))
        for (i, j), m in self.second.items():
            out[i, j] = out[j, i] = float(np.sum(self.P * m))
        return out

    def _xi(self, y: Optional[np.ndarray]) -> np.ndarray:
        return self.P @ (self.spec.y if y is None else np.asarray(y, dtype=float))

    def _quadratic_second(self, xi: np.ndarray) -> np.ndarray:
        r = self.n_params
        out = np.zeros((r, r))
        for (i, j), m in self.second.items():
            out[i, j] = out[j, i] = float(xi @ m @ xi)
        return out

    def _eta_p_eta(self, xi: np.ndarray) -> np.ndarray:
        eta = np.column_stack([d @ xi for d in self.first])
        return _symmetrize(eta.T @ self.P @ eta)

    def score(self, y=None) -> np.ndarray:
        xi = self._xi(y)
        quadratic = np.array([xi @ d @ xi for d in self.first])
        return -0.5 * (self.trace_pv - quadratic)

    def fisher(self) -> np.ndarray:
        return 0.5 * self.trace_pvpv

    def average(self, y=None) -> np.ndarray:
        return 0.5 * self._eta_p_eta(self._xi(y))

    def observed(self, y=None) -> np.ndarray:
        xi = self._xi(y)
        return 0.5 * (self.trace_pvdd - self.trace_pvpv + 2 * self._eta_p_eta(xi) - self._quadratic_second(xi))

    def splitting(self, y=None) -> np.ndarray:
        return 0.25 * (self.trace_pvdd - self._quadratic_second(self._xi(y)))

    def bundle(self, y=None) -> DerivativeBundle:
        xi = self._xi(y)
        epe = self._eta_p_eta(xi)
        qs = self._quadratic_second(xi)
        quadratic = np.array([xi @ d @ xi for d in self.first])
        return DerivativeBundle(
            score=-0.5 * (self.trace_pv - quadratic),
            observed=0.5 * (self.trace_pvdd - self.trace_pvpv + 2 * epe - qs),
            fisher=0.5 * self.trace_pvpv,
            average=0.5 * epe,
            splitting=0.25 * (self.trace_pvdd - qs)
        )


def score(spec: ModelSpec, theta: ThetaVector, **kwargs) -> np.ndarray:
    return DenseDerivatives(spec, theta, **kwargs).score()


def observed_information(spec: ModelSpec, theta: ThetaVector, **kwargs) -> np.ndarray:
    return DenseDerivatives(spec, theta, **kwargs).observed()


def fisher_information(spec: ModelSpec, theta: ThetaVector, **kwargs) -> np.ndarray:
    return DenseDerivatives(spec, theta, **kwargs).fisher()


def average_information_dense(spec: ModelSpec, theta: ThetaVector, **kwargs) -> np.ndarray:
    return DenseDerivatives(spec, theta, **kwargs).average()


def splitting_residual(spec: ModelSpec, theta: ThetaVector, **kwargs) -> np.ndarray:
    return DenseDerivatives(spec, theta, **kwargs).splitting()


def derivative_bundle(spec: ModelSpec, theta: ThetaVector, **kwargs) -> DerivativeBundle:
    return DenseDerivatives(spec, theta, **kwargs).bundle()


@dataclass(frozen=True)
class FastEvaluation:
    """
    Likelihood, score and average information from one MME factorization.
    """
    system: MMESystem
    solution: MMESolution
    loglik: LikelihoodValue
    score: np.ndarray
    average: Optional[np.ndarray]


def _trace_rinv_vdot(system: MMESystem, i: int, ZtRiZ: np.ndarray) -> float:
    """``tr(R⁻¹V̇ᵢ)`` without forming ``ZGZᵀ``."""
    spec, theta = system.spec, system.theta
    component = spec.parameterization is Parameterization.component
    if i == 0:
        if component or spec.b == 0:
            return float(spec.n)
        return float(spec.n + np.sum(g_h_value(spec, theta) * ZtRiZ))
    if i <= spec.n_gamma:
        scale = 1.0 if component else theta.sigma2
        return scale * float(np.sum(spec.g_structure.first_derivative(theta.gamma, i - 1) * ZtRiZ))
    k = i - 1 - spec.n_gamma
    Rd = spec.r_structure.first_derivative(theta.phi, k)
    return theta.sigma2 * float(np.sum(system.R_inv.multiply(Rd)))


def _score_from_mme(system: MMESystem, solution: MMESolution) -> np.ndarray:
    """
    ``tr(P_H V̇ᵢ) = tr(R⁻¹V̇ᵢ) − tr(C⁻¹WᵀR⁻¹V̇ᵢR⁻¹W)``, with every ``C⁻¹``
    product solved against the cached factorization.
    """
    spec, sigma2 = system.spec, system.theta.sigma2
    T = (system.R_inv @ spec.W).toarray()
    ZtRiZ = T[:, spec.p:].T @ spec.Z_dense if spec.b else np.zeros((0, 0))
    xi = solution.Py / sigma2
    out = np.empty(spec.n_params)
    for i in range(spec.n_params):
        M = T.T @ derivative_matvec(spec, system.theta, i, T)
        trace_h = _trace_rinv_vdot(system, i, ZtRiZ) - float(np.trace(system.solve(M)))
        quadratic = float(xi @ derivative_matvec(spec, system.theta, i, xi))
        out[i] = -0.5 * (trace_h / sigma2 - quadratic)
    return out


def _average_from_mme(system: MMESystem, solution: MMESolution) -> np.ndarray:
    """
    ``ξ = R⁻¹e/σ²``; ``Y = [V̇₁ξ, …, V̇_rξ]``; ``CB = WᵀR⁻¹Y``;
    ``Ξ = R⁻¹(Y − WB)``; ``I_A = YᵀΞ/(2σ²)``.
    """
    spec, theta = system.spec, system.theta
    xi = solution.Py / theta.sigma2
    Y = np.column_stack([derivative_matvec(spec, theta, i, xi) for i in range(spec.n_params)])
    B = system.solve(np.asarray(spec.W.T @ (system.R_inv @ Y)))
    Xi = system.R_inv @ (Y - spec.W @ B)
    return _symmetrize(Y.T @ Xi) / (2 * theta.sigma2)


def evaluate_fast(spec: ModelSpec, theta: ThetaVector, with_average: bool = True, **kwargs) -> FastEvaluation:
    """
    Keyword arguments are passed on to :func:`reml.mme.assemble`.
    """
    system = assemble(spec, theta, **kwargs)
    solution = solve_mme(system)
    return FastEvaluation(
        system=system,
        solution=solution,
        loglik=loglik_from_mme(system, solution),
        score=_score_from_mme(system, solution),
        average=_average_from_mme(system, solution) if with_average else None
    )


def score_fast(spec: ModelSpec, theta: ThetaVector, **kwargs) -> np.ndarray:
    return evaluate_fast(spec, theta, with_average=False, **kwargs).score


def average_information_fast(spec: ModelSpec, theta: ThetaVector, **kwargs) -> np.ndarray:
    """
    :raises ZeroPivot: if ``C`` is singular
    """
    system = assemble(spec, theta, **kwargs)
    return _average_from_mme(system, solve_mme(system))

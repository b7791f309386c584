"""
The restricted log-likelihood ``ℓ_R(θ)`` by three equivalent routes:

* ``contrast``: through an error contrast ``L₂`` (dense oracle),
* ``dense``: through ``V``, ``XᵀV⁻¹X`` and ``P`` (dense oracle),
* ``factorized``: through the mixed model equations (production).

All routes include the constant terms, so they agree absolutely.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional

import numpy as np

from .contrast import ErrorContrast, _spd_factor, build_contrast
from .exceptions import InputError, OracleCapExceeded
from .linalg import DENSE_FALLBACK_ORDER, _gram_factor, logdet, projector, solve
from .mme import MMESolution, MMESystem, assemble, solve_mme
from .model import ModelSpec, ThetaVector, variance_value

logger = logging.getLogger(__name__)

DENSE_CAP = DENSE_FALLBACK_ORDER
LOG_2PI = float(np.log(2.0 * np.pi))


class Route(Enum):
    contrast = 'contrast'
    dense = 'dense'
    factorized = 'factorized'
    ml = 'ml'


@dataclass(frozen=True)
class LikelihoodValue:
    value: float
    route: Route
    components: Dict[str, float] = field(default_factory=dict)
    """Named terms inside the braces of ``−½{…}``."""


def check_dense_cap(n: int, cap: int = DENSE_CAP):
    """
    :raises OracleCapExceeded: if a dense ``n×n`` route was requested above the cap
    """
    if n > cap:
        raise OracleCapExceeded(f'n={n} exceeds the dense route cap of {cap}')


def _value(route: Route, components: Dict[str, float]) -> LikelihoodValue:
    return LikelihoodValue(value=-0.5 * sum(components.values()), route=route, components=components)


def loglik_via_contrast(spec: ModelSpec, theta: ThetaVector, contrast: Optional[ErrorContrast] = None,
                        dense_cap: int = DENSE_CAP) -> LikelihoodValue:
    """
    ``−½{(n−p)log 2π + log|L₂ᵀVL₂| − log|L₂ᵀL₂| + log|XᵀX| + yᵀL₂(L₂ᵀVL₂)⁻¹L₂ᵀy}``.

    The ``log|L₂ᵀL₂|`` and ``log|XᵀX|`` terms are the Jacobian of the
    transform; with them the value does not depend on which ``L₂`` is used.
    """
    check_dense_cap(spec.n, dense_cap)
    contrast = contrast if contrast is not None else build_contrast(spec.X)
    L2 = contrast.L2
    V = variance_value(spec, theta)
    f = _spd_factor(L2.T @ V @ L2, 'L₂ᵀVL₂')
    w = L2.T @ spec.y
    components = {
        'constant': (spec.n - spec.p) * LOG_2PI,
        'logdet_contrast': logdet(f) - logdet(_gram_factor(L2)),
        'logdet_xtx': logdet(_gram_factor(spec.X)),
        'quadratic': float(w @ solve(f, w)),
    }
    return _value(Route.contrast, components)


def loglik_via_V(spec: ModelSpec, theta: ThetaVector, dense_cap: int = DENSE_CAP) -> LikelihoodValue:
    """
    ``−½{(n−p)log 2π + log|V| + log|XᵀV⁻¹X| + yᵀPy}``.
    """
    check_dense_cap(spec.n, dense_cap)
    V = variance_value(spec, theta)
    fv = _spd_factor(V, 'V')
    ViX = solve(fv, spec.X)
    fx = _spd_factor(spec.X.T @ ViX, 'XᵀV⁻¹X')
    Viy = solve(fv, spec.y)
    Xt_Viy = spec.X.T @ Viy
    components = {
        'constant': (spec.n - spec.p) * LOG_2PI,
        'logdet_v': logdet(fv),
        'logdet_xvx': logdet(fx),
        'quadratic': float(spec.y @ Viy - Xt_Viy @ solve(fx, Xt_Viy)),
    }
    return _value(Route.dense, components)


def loglik_from_mme(system: MMESystem, solution: MMESolution) -> LikelihoodValue:
    spec, sigma2 = system.spec, system.theta.sigma2
    components = {
        'constant': (spec.n - spec.p) * (LOG_2PI + float(np.log(sigma2))),
        'logdet_r': system.logdet_r,
        'logdet_g': system.logdet_g,
        'logdet_c': solution.logdet_c,
        'quadratic': float(spec.y @ solution.Py) / sigma2,
    }
    return _value(Route.factorized, components)


def loglik_via_C(spec: ModelSpec, theta: ThetaVector, **kwargs) -> LikelihoodValue:
    """
    ``−½{(n−p)log(2πσ²) + log|R| + log|G| + log|C| + yᵀR⁻¹e/σ²}`` with ``R``,
    ``G`` and ``C`` on the H-scale and ``log|C|`` read off the LDLᵀ pivots.
    Keyword arguments are passed on to :func:`reml.mme.assemble`.
    """
    system = assemble(spec, theta, **kwargs)
    return loglik_from_mme(system, solve_mme(system))


def gls_estimate(spec: ModelSpec, theta: ThetaVector) -> np.ndarray:
    """``τ̂ = (XᵀV⁻¹X)⁻¹XᵀV⁻¹y``."""
    fv = _spd_factor(variance_value(spec, theta), 'V')
    ViX = solve(fv, spec.X)
    return solve(_spd_factor(spec.X.T @ ViX, 'XᵀV⁻¹X'), ViX.T @ spec.y)


def loglik_ml(spec: ModelSpec, theta: ThetaVector, tau: Optional[np.ndarray] = None,
              dense_cap: int = DENSE_CAP) -> LikelihoodValue:
    """
    Full log-likelihood ``−½{n log 2π + log|V| + (y−Xτ)ᵀV⁻¹(y−Xτ)}``. Without
    ``tau`` it is profiled at the GLS estimate.
    """
    check_dense_cap(spec.n, dense_cap)
    if tau is None:
        tau = gls_estimate(spec, theta)
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (spec.p,):
        raise InputError(f'tau must have {spec.p} entries, got {tau.shape}')
    fv = _spd_factor(variance_value(spec, theta), 'V')
    r = spec.y - spec.X @ tau
    components = {
        'constant': spec.n * LOG_2PI,
        'logdet_v': logdet(fv),
        'quadratic': float(r @ solve(fv, r)),
    }
    return _value(Route.ml, components)


@dataclass(frozen=True)
class BiasResult:
    n: int
    p: int
    sigma2_true: float
    replicates: int
    ml_mean: float
    reml_mean: float
    ml_se: float
    reml_se: float


MIN_BIAS_REPLICATES = 1000


def reml_vs_ml_bias(n: int, p: int, sigma2_true: float, replicates: int, seed: int = 0,
                    workers: int = 1) -> BiasResult:
    """
    Monte-Carlo means of the closed-form ML and REML estimates of σ² in a
    fixed-effects-only model: ``yᵀ(I−P_X)y/n`` and ``yᵀ(I−P_X)y/(n−p)``.

    ``X`` is an intercept plus ``p−1`` standard normal columns drawn once from
    ``seed``; replicate ``k`` draws its response from ``default_rng([seed, k])``.
    """
    if replicates < MIN_BIAS_REPLICATES:
        raise InputError(f'the bias comparison needs at least {MIN_BIAS_REPLICATES} replicates, got {replicates}')
    if not n > p >= 1:
        raise InputError(f'need n > p >= 1, got n={n}, p={p}')
    if not sigma2_true > 0:
        raise InputError(f'sigma2_true must be positive, got {sigma2_true}')
    design_rng = np.random.default_rng(seed)
    X = np.hstack([np.ones((n, 1)), design_rng.standard_normal((n, p - 1))])
    M = np.eye(n) - projector(X)
    sd = float(np.sqrt(sigma2_true))

    def rss(k: int) -> float:
        e = sd * np.random.default_rng([seed, k]).standard_normal(n)
        return float(e @ M @ e)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sums = np.fromiter(pool.map(rss, range(replicates)), dtype=float, count=replicates)
    else:
        sums = np.fromiter((rss(k) for k in range(replicates)), dtype=float, count=replicates)
    ml, reml = sums / n, sums / (n - p)
    root = np.sqrt(replicates)
    result = BiasResult(n=n, p=p, sigma2_true=sigma2_true, replicates=replicates,
                             ml_mean=float(ml.mean()), reml_mean=float(reml.mean()),
                             ml_se=float(ml.std(ddof=1) / root), reml_se=float(reml.std(ddof=1) / root))
    logger.info('bias comparison n=%d p=%d: ML mean %.4f, REML mean %.4f', n, p, result.ml_mean, result.reml_mean)
    return result

"""
Iterative REML estimation: Newton-Raphson (observed information), Fisher
scoring (expected information) and average information. All three share one
loop; they differ only in the matrix ``A`` of the update ``A δ = s``.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .abstractstructure import BOUNDARY_EPS
from .exceptions import (BoundaryStall, InputError, MaxIterations, NumericalError, SingularInformation,
                         ZeroPivot)
from .infomat import DenseDerivatives, evaluate_fast
from .likelihood import DENSE_CAP, loglik_via_C
from .linalg import ldlt_factor, projector, solve
from .mme import SPARSE_MIN_ORDER, c_inverse
from .model import ModelSpec, Parameterization, ThetaVector, effective_bounds

logger = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-12
"""Accepted steps may lower ℓ_R by at most this much."""
MAX_SHIFT_DOUBLINGS = 200


class Algorithm(Enum):
    newton = 'newton'
    fisher = 'fisher'
    ai = 'ai'


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    theta: List[float]
    loglik: float
    score_norm: float
    step_scale: float
    halvings: int = 0
    levenberg_shift: float = 0.0
    fixed: List[str] = field(default_factory=list)


@dataclass
class FitOptions:
    algorithm: Algorithm = Algorithm.ai
    max_iter: int = 100
    gtol: float = 1e-6
    ltol: float = 1e-8
    max_halvings: int = 20
    boundary_eps: float = BOUNDARY_EPS
    stall_iterations: int = 3
    """Iterations a parameter may sit on its bound, pushed outward, before it is fixed."""
    start: Optional[Sequence[float]] = None
    """Initial θ; :func:`default_start` when absent."""
    sparse_min_order: int = SPARSE_MIN_ORDER
    workers: int = 1
    dense_cap: int = DENSE_CAP
    trace: Optional[Callable[[IterationRecord], None]] = None

    def __post_init__(self):
        if isinstance(self.algorithm, str):
            try:
                self.algorithm = Algorithm(self.algorithm)
            except ValueError:
                raise InputError(f'unknown algorithm {self.algorithm!r}, expected one of '
                                 f'{[a.value for a in Algorithm]}')
        if self.max_iter < 1:
            raise InputError(f'max_iter must be at least 1, got {self.max_iter}')
        if not (self.gtol > 0 and self.ltol > 0 and self.boundary_eps > 0):
            raise InputError('tolerances must be positive')
        if self.max_halvings < 0:
            raise InputError(f'max_halvings must not be negative, got {self.max_halvings}')


@dataclass
class FitReport:
    algorithm: str
    parameter_names: List[str]
    theta_hat: np.ndarray
    loglik: float
    loglik_components: Dict[str, float]
    score: np.ndarray
    information: np.ndarray
    standard_errors: List[Optional[float]]
    iterations: List[IterationRecord]
    converged: bool
    reason: str
    fixed_parameters: List[str] = field(default_factory=list)
    fixed_names: List[str] = field(default_factory=list)
    random_names: List[str] = field(default_factory=list)
    tau_hat: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tau_se: np.ndarray = field(default_factory=lambda: np.zeros(0))
    u_tilde: np.ndarray = field(default_factory=lambda: np.zeros(0))
    u_se: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_iterations(self) -> int:
        return len(self.iterations)

    def theta(self, spec: ModelSpec) -> ThetaVector:
        return ThetaVector.from_array(spec, self.theta_hat)


def _clamp(values: np.ndarray, bounds: List[Tuple[float, float]]) -> np.ndarray:
    return np.array([min(max(v, lo), hi) for v, (lo, hi) in zip(values, bounds)])


def default_start(spec: ModelSpec, eps: float = BOUNDARY_EPS) -> np.ndarray:
    """
    σ² from the OLS residual variance, ``γ`` from each structure's default
    and ``φ = 0``. In the component parameterization the residual variance
    is split evenly between σ² and the random components.
    """
    e = spec.y - projector(spec.X) @ spec.y
    s = float(e @ e) / (spec.n - spec.p)
    if not s > 0:
        s = 1.0
    gamma = spec.g_structure.default_start()
    sigma2 = s
    if spec.parameterization is Parameterization.component and spec.n_gamma:
        sigma2 = s / 2
        gamma = gamma * s / 2
    start = np.concatenate([[sigma2], gamma, spec.r_structure.default_start()])
    return _clamp(start, effective_bounds(spec, eps))


@dataclass
class _Evaluation:
    loglik: float
    components: Dict[str, float]
    score: np.ndarray
    information: np.ndarray


def _evaluate(spec: ModelSpec, theta: ThetaVector, options: FitOptions) -> _Evaluation:
    if options.algorithm is Algorithm.ai:
        ev = evaluate_fast(spec, theta, sparse_min_order=options.sparse_min_order, workers=options.workers)
        return _Evaluation(ev.loglik.value, ev.loglik.components, ev.score, ev.average)
    value = loglik_via_C(spec, theta, sparse_min_order=options.sparse_min_order, workers=options.workers)
    dense = DenseDerivatives(spec, theta, dense_cap=options.dense_cap)
    if options.algorithm is Algorithm.newton:
        info = dense.observed()
    else:
        info = dense.fisher()
    return _Evaluation(value.value, value.components, dense.score(), info)


def _shifted_solve(A: np.ndarray, s: np.ndarray, levenberg: bool) -> Tuple[np.ndarray, float]:
    """
    Solve ``A δ = s``. With ``levenberg`` an indefinite ``A`` is shifted by
    ``λI``, ``λ`` starting at ``1e-6·‖A‖_max`` and doubling until the shifted
    matrix is positive definite.
    """
    try:
        f = ldlt_factor(A)
        if f.positive_definite or not levenberg:
            return solve(f, s), 0.0
    except ZeroPivot as e:
        if not levenberg:
            raise SingularInformation(f'information matrix is singular: {e}')
    scale = float(np.max(np.abs(A)))
    if scale == 0.0:
        raise SingularInformation('information matrix is identically zero')
    shift = 1e-6 * scale
    eye = np.eye(A.shape[0])
    for _ in range(MAX_SHIFT_DOUBLINGS):
        try:
            f = ldlt_factor(A + shift * eye)
            if f.positive_definite:
                logger.warning('observed information not positive definite, shifted by %.3e', shift)
                return solve(f, s), shift
        except ZeroPivot:
            pass
        shift *= 2
    raise SingularInformation('no Levenberg shift made the observed information positive definite')


def _try_loglik(spec: ModelSpec, values: np.ndarray, options: FitOptions) -> float:
    try:
        return loglik_via_C(spec, ThetaVector.from_array(spec, values),
                            sparse_min_order=options.sparse_min_order, workers=options.workers).value
    except NumericalError as e:
        logger.debug('trial point %s rejected: %s', values, e)
        return -np.inf


def _finish(spec: ModelSpec, options: FitOptions, values: np.ndarray, ev: _Evaluation,
            iterations: List[IterationRecord], converged: bool, reason: str, fixed: List[int]) -> FitReport:
    names = spec.param_names
    theta = ThetaVector.from_array(spec, values)
    fast = evaluate_fast(spec, theta, sparse_min_order=options.sparse_min_order, workers=options.workers)
    free = [i for i in range(spec.n_params) if i not in fixed]
    errors: List[Optional[float]] = [None] * spec.n_params
    try:
        if free:
            f = ldlt_factor(fast.average[np.ix_(free, free)])
            if f.positive_definite:
                inverse = solve(f, np.eye(len(free)))
                for k, i in enumerate(free):
                    errors[i] = float(np.sqrt(inverse[k, k]))
            else:
                logger.warning('average information is not positive definite at the estimate; no standard errors')
    except ZeroPivot:
        logger.warning('average information is singular at the estimate; no standard errors')
    pev = theta.sigma2 * c_inverse(fast.system)
    se = np.sqrt(np.clip(np.diag(pev), 0.0, None))
    p = spec.p
    return FitReport(
        algorithm=options.algorithm.value,
        parameter_names=names,
        theta_hat=values.copy(),
        loglik=ev.loglik,
        loglik_components=dict(ev.components),
        score=ev.score.copy(),
        information=ev.information.copy(),
        standard_errors=errors,
        iterations=list(iterations),
        converged=converged,
        reason=reason,
        fixed_parameters=[names[i] for i in fixed],
        fixed_names=list(spec.fixed_names or [f'x{k}' for k in range(p)]),
        random_names=list(spec.random_names or [f'u{k}' for k in range(spec.b)]),
        tau_hat=fast.solution.tau_hat.copy(),
        tau_se=se[:p],
        u_tilde=fast.solution.u_tilde.copy(),
        u_se=se[p:]
    )


def fit(spec: ModelSpec, options: Optional[FitOptions] = None) -> FitReport:
    """
    Maximize ℓ_R from ``options.start`` (or :func:`default_start`).

    Convergence needs ``‖s_free‖_∞ ≤ gtol·(1+|ℓ|)`` and, after the first
    iteration, ``|Δℓ| ≤ ltol``. Steps are halved until ℓ does not decrease,
    and parameters are clamped into their admissible region after every step.

    :raises SingularInformation: if the update matrix cannot be solved
    :raises MaxIterations: if the loop runs out of iterations or step halvings
    :raises BoundaryStall: if every parameter ends up fixed on a bound
    """
    options = options or FitOptions()
    bounds = effective_bounds(spec, options.boundary_eps)
    if options.start is not None:
        start = np.asarray(options.start, dtype=float)
        ThetaVector.from_array(spec, start)
        values = _clamp(start, bounds)
    else:
        values = default_start(spec, options.boundary_eps)
    names = spec.param_names
    r = spec.n_params
    fixed: List[int] = []
    stalled = np.zeros(r, dtype=int)
    iterations: List[IterationRecord] = []
    previous: Optional[float] = None
    logger.info('fitting %d parameters %s with %s from %s', r, names, options.algorithm.value, values)

    for it in range(options.max_iter):
        ev = _evaluate(spec, ThetaVector.from_array(spec, values), options)
        free = [i for i in range(r) if i not in fixed]
        norm = float(np.max(np.abs(ev.score[free]))) if free else 0.0
        gradient_ok = norm <= options.gtol * (1.0 + abs(ev.loglik))
        change_ok = previous is None or abs(ev.loglik - previous) <= options.ltol
        if gradient_ok and change_ok:
            record = IterationRecord(it, values.tolist(), ev.loglik, norm, 0.0, fixed=[names[i] for i in fixed])
            iterations.append(record)
            if options.trace:
                options.trace(record)
            logger.info('converged after %d iterations: loglik %.10g', it, ev.loglik)
            return _finish(spec, options, values, ev, iterations, True, 'converged', fixed)

        for i in free:
            lower, upper = bounds[i]
            outward = (values[i] <= lower and ev.score[i] < 0) or (values[i] >= upper and ev.score[i] > 0)
            stalled[i] = stalled[i] + 1 if outward else 0
            if stalled[i] >= options.stall_iterations:
                fixed.append(i)
                logger.warning('%s fixed at its bound %.3g after %d iterations', names[i], values[i], stalled[i])
        free = [i for i in range(r) if i not in fixed]
        if not free:
            report = _finish(spec, options, values, ev, iterations, False, 'boundary_stall', fixed)
            raise BoundaryStall('every parameter is fixed on a bound', report=report)

        A = ev.information[np.ix_(free, free)]
        delta_free, shift = _shifted_solve(A, ev.score[free], options.algorithm is Algorithm.newton)
        delta = np.zeros(r)
        delta[free] = delta_free

        scale, halvings = 1.0, 0
        while True:
            candidate = _clamp(values + scale * delta, bounds)
            if _try_loglik(spec, candidate, options) >= ev.loglik - MONOTONE_SLACK:
                break
            if halvings == options.max_halvings:
                record = IterationRecord(it, values.tolist(), ev.loglik, norm, 0.0, halvings, shift,
                                         [names[i] for i in fixed])
                iterations.append(record)
                if options.trace:
                    options.trace(record)
                report = _finish(spec, options, values, ev, iterations, False, 'step_halving_exhausted', fixed)
                raise MaxIterations(f'no step increased the likelihood after {halvings} halvings', report=report)
            scale /= 2
            halvings += 1

        record = IterationRecord(it, values.tolist(), ev.loglik, norm, scale, halvings, shift,
                                 [names[i] for i in fixed])
        iterations.append(record)
        if options.trace:
            options.trace(record)
        logger.info('iteration %d: loglik %.10g, |score| %.3e, step %.3g', it, ev.loglik, norm, scale)
        previous = ev.loglik
        values = candidate

    ev = _evaluate(spec, ThetaVector.from_array(spec, values), options)
    report = _finish(spec, options, values, ev, iterations, False, 'max_iterations', fixed)
    raise MaxIterations(f'no convergence within {options.max_iter} iterations', report=report)


def _with_algorithm(options: Optional[FitOptions], algorithm: Algorithm) -> FitOptions:
    return replace(options or FitOptions(), algorithm=algorithm)


def fit_newton(spec: ModelSpec, options: Optional[FitOptions] = None) -> FitReport:
    return fit(spec, _with_algorithm(options, Algorithm.newton))


def fit_fisher(spec: ModelSpec, options: Optional[FitOptions] = None) -> FitReport:
    return fit(spec, _with_algorithm(options, Algorithm.fisher))


def fit_ai(spec: ModelSpec, options: Optional[FitOptions] = None) -> FitReport:
    return fit(spec, _with_algorithm(options, Algorithm.ai))

"""
Synthetic responses and fixtures.

Replicate ``k`` of a plan seeded with ``s`` always draws from
``numpy.random.default_rng([s, k])``, so replicates are reproducible one by
one and can be evaluated in any order or in parallel.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .ar1structure import AR1Residual
from .contrast import _spd_factor
from .exceptions import InputError
from .iidstructure import IdentityResidual, IidBlocksStructure
from .model import ModelSpec, Parameterization, ThetaVector, variance_value

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimulationPlan:
    spec: ModelSpec
    """Design and structures; the response stored in it is ignored."""
    theta: ThetaVector
    tau: np.ndarray = field(default_factory=lambda: np.zeros(0))
    replicates: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.replicates < 1:
            raise InputError(f'replicate count must be at least 1, got {self.replicates}')
        if self.tau.shape[0] not in (0, self.spec.p):
            raise InputError(f'tau must have {self.spec.p} entries, got {self.tau.shape[0]}')

    @cached_property
    def mean(self) -> np.ndarray:
        if self.tau.shape[0] == 0:
            return np.zeros(self.spec.n)
        return self.spec.X @ self.tau

    @cached_property
    def root(self) -> np.ndarray:
        """
        ``A = L·D^½`` from the LDLᵀ factorization of ``V``, so ``AAᵀ = V``.
        """
        f = _spd_factor(variance_value(self.spec, self.theta), 'V')
        return f.L * np.sqrt(f.d)


def draw_response(plan: SimulationPlan, replicate: int) -> np.ndarray:
    """
    ``y = Xτ + A z`` with ``z`` standard normal from the replicate's substream.

    :raises NotPositiveDefinite: if ``V`` at the plan's ``θ`` is not positive definite
    """
    z = np.random.default_rng([plan.seed, replicate]).standard_normal(plan.spec.n)
    return plan.mean + plan.root @ z


def draw_responses(plan: SimulationPlan, workers: int = 1) -> np.ndarray:
    """All replicates, one per column."""
    plan.root  # factorize before worker threads share the plan
    indices = range(plan.replicates)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            columns = list(pool.map(lambda k: draw_response(plan, k), indices))
    else:
        columns = [draw_response(plan, k) for k in indices]
    return np.column_stack(columns)


def monte_carlo_mean(plan: SimulationPlan, statistic: Callable[[np.ndarray], np.ndarray],
                     workers: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean and standard error of ``statistic(y)`` over the plan's replicates.
    """
    Y = draw_responses(plan, workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = np.stack(list(pool.map(statistic, Y.T)))
    else:
        values = np.stack([np.asarray(statistic(y), dtype=float) for y in Y.T])
    mean = values.mean(axis=0)
    se = values.std(axis=0, ddof=1) / np.sqrt(values.shape[0]) if values.shape[0] > 1 else np.zeros_like(mean)
    return mean, se


@dataclass(frozen=True)
class AnovaTargets:
    """
    REML estimates of the balanced one-way model from its ANOVA table.
    """
    msa: float
    mse: float
    sigma_e2: float
    sigma_u2: float
    k: int

    @property
    def interior(self) -> bool:
        return (self.msa - self.mse) / self.k > 0

    def theta(self, parameterization: Parameterization = Parameterization.ratio) -> np.ndarray:
        if parameterization is Parameterization.component:
            return np.array([self.sigma_e2, self.sigma_u2])
        return np.array([self.sigma_e2, self.sigma_u2 / self.sigma_e2])


def oneway_anova_targets(y, m: int, k: int) -> AnovaTargets:
    """
    ``σ̂_e² = MSE`` and ``σ̂_u² = max(0, (MSA − MSE)/k)`` for ``m`` groups of
    ``k`` consecutive observations.
    """
    _check_oneway(m, k)
    groups = np.asarray(y, dtype=float).reshape(m, k)
    means = groups.mean(axis=1)
    grand = groups.mean()
    msa = k * float(np.sum((means - grand) ** 2)) / (m - 1)
    mse = float(np.sum((groups - means[:, None]) ** 2)) / (m * (k - 1))
    return AnovaTargets(msa=msa, mse=mse, sigma_e2=mse, sigma_u2=max(0.0, (msa - mse) / k), k=k)


def _check_oneway(m: int, k: int):
    if m < 2:
        raise InputError(f'a one-way model needs at least 2 groups, got {m}')
    if k < 2:
        raise InputError(f'a one-way model needs at least 2 observations per group, got {k}')


def oneway_spec(y, m: int, k: int, parameterization: Parameterization = Parameterization.ratio) -> ModelSpec:
    """
    Intercept-only fixed part and one iid group effect; observation ``i``
    belongs to group ``i // k``.
    """
    _check_oneway(m, k)
    n = m * k
    rows = np.arange(n)
    Z = sp.csc_matrix((np.ones(n), (rows, rows // k)), shape=(n, m))
    return ModelSpec(
        y=np.asarray(y, dtype=float),
        X=np.ones((n, 1)),
        Z=Z,
        g_structure=IidBlocksStructure([m], names=['gamma[group]']),
        r_structure=IdentityResidual(n),
        parameterization=parameterization,
        fixed_names=['(intercept)'],
        random_names=[f'group[g{j + 1}]' for j in range(m)],
        response_name='y'
    )


@dataclass(frozen=True)
class OnewayFixture:
    spec: ModelSpec
    theta_true: ThetaVector
    targets: AnovaTargets


def balanced_oneway_fixture(m: int, k: int, sigma_u2: float, sigma_e2: float, seed: int = 0,
                            parameterization: Parameterization = Parameterization.ratio,
                            mean: float = 0.0) -> OnewayFixture:
    """
    Draw a balanced one-way dataset and its ANOVA-based REML targets.
    """
    _check_oneway(m, k)
    if not (sigma_e2 > 0 and sigma_u2 >= 0):
        raise InputError(f'need sigma_e2 > 0 and sigma_u2 >= 0, got {sigma_e2}, {sigma_u2}')
    template = oneway_spec(np.zeros(m * k), m, k, parameterization)
    if parameterization is Parameterization.component:
        theta = ThetaVector.of(template, sigma_e2, [sigma_u2])
    else:
        theta = ThetaVector.of(template, sigma_e2, [sigma_u2 / sigma_e2])
    plan = SimulationPlan(spec=template, theta=theta, tau=np.array([mean]), seed=seed)
    y = draw_response(plan, 0)
    targets = oneway_anova_targets(y, m, k)
    logger.info('one-way fixture m=%d k=%d: MSA %.4f, MSE %.4f', m, k, targets.msa, targets.mse)
    return OnewayFixture(spec=template.with_response(y), theta_true=theta, targets=targets)


STRUCTURES = ('iid', 'ar1', 'ar1+iid', 'none')


def random_instance(rng: np.random.Generator, n: int, p: int, structure: str = 'iid',
                    parameterization: Parameterization = Parameterization.ratio,
                    groups: Optional[int] = None) -> Tuple[ModelSpec, ThetaVector]:
    """
    A random model for property checks: intercept plus ``p−1`` normal
    covariates, group indicators for the random part, and a response drawn
    at a random admissible ``θ``.
    """
    if structure not in STRUCTURES:
        raise InputError(f'unknown structure {structure!r}, expected one of {STRUCTURES}')
    X = np.hstack([np.ones((n, 1)), rng.standard_normal((n, p - 1))])
    random_part = structure in ('iid', 'ar1+iid')
    m = groups or max(2, n // 4)
    if random_part:
        Z = sp.csc_matrix((np.ones(n), (np.arange(n), rng.integers(0, m, size=n))), shape=(n, m))
        g = IidBlocksStructure([m], names=['gamma[g]'])
    else:
        Z = sp.csc_matrix((n, 0))
        g = None
    r = AR1Residual(n) if structure.startswith('ar1') else IdentityResidual(n)
    spec = ModelSpec.build(np.zeros(n), X, Z, g, r, parameterization=parameterization)
    values = [rng.uniform(0.5, 2.0)]
    if random_part:
        values.append(rng.uniform(0.2, 1.5))
    if structure.startswith('ar1'):
        values.append(rng.uniform(-0.6, 0.6))
    theta = ThetaVector.from_array(spec, values)
    plan = SimulationPlan(spec=spec, theta=theta, tau=rng.standard_normal(p), seed=int(rng.integers(2 ** 31)))
    return spec.with_response(draw_response(plan, 0)), theta


@dataclass(frozen=True)
class SimulatedDataset:
    frame: pd.DataFrame
    model_config: str
    parameter_names: List[str]
    theta: np.ndarray
    tau: np.ndarray
    seed: int


def simulate_dataset(m: int, k: int, sigma_u2: float, sigma_e2: float, seed: int = 0,
                     phi: Optional[float] = None, mean: float = 0.0,
                     parameterization: Parameterization = Parameterization.ratio) -> SimulatedDataset:
    """
    A balanced one-way dataset in file form: a ``y, group, t`` table, the
    matching model configuration and the true parameter values. With ``phi``
    the residuals follow an AR(1) process along ``t``.
    """
    _check_oneway(m, k)
    template = oneway_spec(np.zeros(m * k), m, k, parameterization)
    gamma = sigma_u2 if parameterization is Parameterization.component else sigma_u2 / sigma_e2
    values = [sigma_e2, gamma]
    if phi is not None:
        template = replace(template, r_structure=AR1Residual(template.n))
        values.append(phi)
    theta = ThetaVector.from_array(template, values)
    plan = SimulationPlan(spec=template, theta=theta, tau=np.array([mean]), seed=seed)
    y = draw_response(plan, 0)
    frame = pd.DataFrame({
        'y': y,
        'group': [f'g{i // k + 1}' for i in range(template.n)],
        't': np.arange(1, template.n + 1),
    })
    lines = ['# simulated balanced one-way data', 'response = y', 'fixed =', 'random = group']
    lines += ['residual = ar1', 'residual.order = t'] if phi is not None else ['residual = identity']
    lines.append(f'parameterization = {parameterization.value}')
    return SimulatedDataset(frame=frame, model_config='\n'.join(lines) + '\n',
                            parameter_names=['sigma2', 'gamma[group]'] + (['phi'] if phi is not None else []),
                            theta=theta.as_array(), tau=np.array([mean]), seed=seed)


def write_dataset(directory: str, dataset: SimulatedDataset):
    """
    Write ``data.csv``, ``model.cfg`` and ``truth.json`` into ``directory``.
    """
    from .report import TruthDoc, write_json

    os.makedirs(directory, exist_ok=True)
    dataset.frame.to_csv(os.path.join(directory, 'data.csv'), index=False, float_format='%.17g')
    with open(os.path.join(directory, 'model.cfg'), 'w') as f:
        f.write(dataset.model_config)
    truth = TruthDoc(parameter_names=dataset.parameter_names, theta=dataset.theta.tolist(),
                     tau=dataset.tau.tolist(), seed=dataset.seed)
    write_json(os.path.join(directory, 'truth.json'), truth)
    logger.info('wrote simulated dataset with %d rows to %s', len(dataset.frame), directory)

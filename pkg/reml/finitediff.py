"""
Centred finite differences, used to check analytic derivatives. Next to a
bound the difference turns one-sided, toward the interior, so that ``func`` is
only evaluated at admissible points.
"""

import logging
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

Step = Union[float, Callable[[float], float]]
Bounds = Optional[Sequence[Tuple[float, float]]]


def _step(h: Step, x: float) -> float:
    return h(x) if callable(h) else h


def relative_step(scale: float = 1e-5) -> Callable[[float], float]:
    """Step ``scale·(1+|x|)``."""
    return lambda x: scale * (1.0 + abs(x))


def central_difference(func: Callable[[np.ndarray], np.ndarray], x0, j: int, h: Step = 1e-6,
                       bounds: Bounds = None):
    """
    ``(f(x+hⱼ) − f(x−hⱼ)) / 2h`` along coordinate ``j``; ``func`` may return a
    scalar, a vector or a matrix.

    With ``bounds``, a step that would leave ``[lower, upper]`` is replaced
    by the second order one-sided difference into the interior,
    ``±(−3f(x) + 4f(x±h) − f(x±2h)) / 2h``, taken with a tenth of the centred
    step. The step shrinks further if the interval is narrower than ``2h`` on
    both sides.
    """
    x0 = np.asarray(x0, dtype=float)
    eps = _step(h, x0[j])
    lower, upper = bounds[j] if bounds is not None else (-np.inf, np.inf)

    def at(offset: float):
        x = x0.copy()
        x[j] = x0[j] + offset
        return np.asarray(func(x), dtype=float)

    room_below, room_above = x0[j] - lower, upper - x0[j]
    if room_below >= eps and room_above >= eps:
        return (at(eps) - at(-eps)) / (2 * eps)
    direction = 1.0 if room_above >= room_below else -1.0
    eps = min(eps / 10, max(room_below, room_above) / 2)
    logger.debug('one-sided difference along %d at %.6g (direction %+d, step %.3g)', j, x0[j], direction, eps)
    return direction * (-3 * at(0.0) + 4 * at(direction * eps) - at(2 * direction * eps)) / (2 * eps)


def finite_difference_gradient(func: Callable[[np.ndarray], float], x0, h: Step = 1e-6,
                               bounds: Bounds = None) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    logger.debug('finite difference gradient at %s', x0)
    return np.array([float(central_difference(func, x0, j, h, bounds)) for j in range(x0.shape[0])])


def finite_difference_jacobian(func: Callable[[np.ndarray], np.ndarray], x0, h: Step = 1e-6,
                               bounds: Bounds = None) -> np.ndarray:
    """
    Column ``j`` holds the difference of ``func`` along coordinate ``j``.
    """
    x0 = np.asarray(x0, dtype=float)
    columns = [np.atleast_1d(central_difference(func, x0, j, h, bounds)) for j in range(x0.shape[0])]
    return np.column_stack(columns)


def second_difference(func: Callable[[np.ndarray], np.ndarray], x0, i: int, j: int, h: float = 1e-4):
    """
    Centred approximation of ``∂²f/∂xᵢ∂xⱼ``; ``func`` may be matrix valued.
    """
    x0 = np.asarray(x0, dtype=float)

    def at(di: float, dj: float):
        x = x0.copy()
        x[i] += di
        x[j] += dj
        return np.asarray(func(x), dtype=float)

    if i == j:
        return (at(h, 0.0) - 2 * np.asarray(func(x0), dtype=float) + at(-h, 0.0)) / (h * h)
    return (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4 * h * h)


def relative_error(analytic, approximate) -> float:
    """``‖a − b‖_∞ / (1 + ‖a‖_∞)``."""
    analytic = np.asarray(analytic, dtype=float)
    approximate = np.asarray(approximate, dtype=float)
    return float(np.max(np.abs(analytic - approximate)) / (1.0 + np.max(np.abs(analytic))))

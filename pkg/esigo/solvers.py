"""
Explicit Runge-Kutta Integrators

The Runge-Kutta-Fehlberg 4(5) pair with step-size control and the classical
fixed-step RK4. Both integrate an autonomous vector field y' = F(y) and stop
early when a monitor callback reports a reason.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

VectorField = Callable[[np.ndarray], np.ndarray]
Monitor = Callable[[float, np.ndarray], Optional[str]]

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0

PARAMETERIZATIONS = ("variance", "log-variance", "std", "half-log-variance")


@dataclass(frozen=True)
class SolverSettings:
    """Integrator choice and tolerances"""
    method: str = "rkf45"
    rtol: float = 1e-8
    atol: float = 1e-10
    h0: float = 1e-3
    h_min: float = 1e-12
    h_max: float = float("inf")
    fixed_step: float = 1e-2
    max_steps: int = 1_000_000
    parameterization: str = "log-variance"
    n_points: int = 2**12
    point_seed: int = 0

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "SolverSettings":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"Unknown solver settings: {sorted(unknown)}")
        settings = cls(**data)
        settings.validate()
        return settings

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigurationError(f"Unknown solver method: {self.method}")
        if self.rtol <= 0 or self.atol <= 0 or self.h0 <= 0 or self.fixed_step <= 0:
            raise ConfigurationError("solver tolerances and step sizes must be positive")
        if self.n_points < 2:
            raise ConfigurationError("n_points must be at least 2")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ConfigurationError(f"Unknown variance parameterization: {self.parameterization}")

    @property
    def adaptive(self) -> bool:
        return METHODS[self.method].adaptive


class ExplicitRungeKutta(ABC):
    """Base class for one-step explicit integrators"""

    adaptive = False

    @abstractmethod
    def step(self, F: VectorField, y: np.ndarray, h: float) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """Return the new state and, for embedded pairs, the error estimate"""


class RK4(ExplicitRungeKutta):
    """Classical fourth order Runge-Kutta"""

    def step(self, F, y, h):
        k1 = F(y)
        k2 = F(y + 0.5 * h * k1)
        k3 = F(y + 0.5 * h * k2)
        k4 = F(y + h * k3)
        return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), None


class RKF45(ExplicitRungeKutta):
    """
    Runge-Kutta-Fehlberg 4(5) pair. Six stages; the 5th order solution is
    propagated and its difference to the 4th order one is the local error.
    """

    adaptive = True

    def step(self, F, y, h):
        k1 = h * F(y)
        k2 = h * F(y + 1.0 / 4.0 * k1)
        k3 = h * F(y + 3.0 / 32.0 * k1 + 9.0 / 32.0 * k2)
        k4 = h * F(y + 1932.0 / 2197.0 * k1 - 7200.0 / 2197.0 * k2 + 7296.0 / 2197.0 * k3)
        k5 = h * F(y + 439.0 / 216.0 * k1 - 8.0 * k2 + 3680.0 / 513.0 * k3 - 845.0 / 4104.0 * k4)
        k6 = h * F(y - 8.0 / 27.0 * k1 + 2.0 * k2 - 3544.0 / 2565.0 * k3
                   + 1859.0 / 4104.0 * k4 - 11.0 / 40.0 * k5)

        step4 = 25.0 / 216.0 * k1 + 1408.0 / 2565.0 * k3 + 2197.0 / 4104.0 * k4 - 1.0 / 5.0 * k5
        step5 = (16.0 / 135.0 * k1 + 6656.0 / 12825.0 * k3 + 28561.0 / 56430.0 * k4
                 - 9.0 / 50.0 * k5 + 2.0 / 55.0 * k6)
        return y + step5, step5 - step4


METHODS: Dict[str, ExplicitRungeKutta] = {"rkf45": RKF45(), "rk4": RK4()}


@dataclass
class OdeResult:
    """Recorded states of one integration run"""
    times: List[float] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    reason: str = "horizon"
    n_steps: int = 0
    n_rejected: int = 0
    n_forced: int = 0

    def record(self, t: float, y: np.ndarray) -> None:
        if not self.times or t > self.times[-1]:
            self.times.append(t)
            self.states.append(y.copy())


def _error_norm(err: np.ndarray, y: np.ndarray, y_new: np.ndarray, settings: SolverSettings) -> float:
    scale = settings.atol + settings.rtol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def integrate_ode(F: VectorField, y0: np.ndarray, t_end: float, output_times: Sequence[float],
                  settings: SolverSettings, monitor: Optional[Monitor] = None) -> OdeResult:
    """
    Integrate y' = F(y) from t = 0 to t_end, recording exactly at output_times.

    Steps are shortened to land on every output time. A DomainError raised by
    F rejects the step (adaptive) or ends the run with reason "domain-error"
    (fixed step). The monitor runs after every accepted step.
    """
    method = METHODS[settings.method]
    outputs = sorted(t for t in set(float(t) for t in output_times) if 0.0 < t <= t_end)
    result = OdeResult()

    t = 0.0
    y = np.asarray(y0, dtype=float).copy()
    result.record(t, y)
    h = settings.h0 if method.adaptive else settings.fixed_step
    next_output = 0
    warned_forced = False

    while t < t_end:
        if result.n_steps >= settings.max_steps:
            result.reason = "max-steps"
            break

        target = outputs[next_output] if next_output < len(outputs) else t_end
        h_try = min(h, settings.h_max, target - t)
        lands = h_try >= target - t

        try:
            y_new, err = method.step(F, y, h_try)
            if not np.all(np.isfinite(y_new)):
                raise DomainError("non-finite state")
        except DomainError as e:
            if method.adaptive and h_try > settings.h_min:
                result.n_rejected += 1
                h = h_try * 0.25
                logger.debug(f"step rejected at t={t:.6g} ({e}); retrying with h={h:.3g}")
                continue
            logger.info(f"integration stopped at t={t:.6g}: {e}")
            result.reason = "domain-error"
            break

        # t + h_try may round onto the target
        lands = lands or t + h_try >= target

        if method.adaptive:
            err_norm = _error_norm(err, y, y_new, settings)
            factor = MAX_FACTOR if err_norm == 0.0 else min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * err_norm ** -0.2))
            if err_norm > 1.0:
                if h_try > settings.h_min:
                    result.n_rejected += 1
                    h = max(h_try * factor, settings.h_min)
                    continue
                result.n_forced += 1
                if not warned_forced:
                    logger.warning(f"accepting steps at the minimum step size from t={t:.6g}")
                    warned_forced = True
            h = max(h_try * factor, settings.h_min) if not lands else max(h, h_try * factor, settings.h_min)

        t = target if lands else t + h_try
        y = y_new
        result.n_steps += 1

        if lands and next_output < len(outputs):
            result.record(t, y)
            next_output += 1

        if monitor is not None:
            reason = monitor(t, y)
            if reason:
                result.record(t, y)
                result.reason = reason
                break
    else:
        result.reason = "horizon"

    return result

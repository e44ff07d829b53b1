"""
Preference Weight Functions

A weight function w: [0, 1] -> R turns the quantile of a candidate solution
under the current search distribution into a preference. This module holds
the named analytic weights, the Bernstein-smoothed weight of a finite rank
weight vector, the grid validator for assumption B1 and the linear-function
divergence rate alpha of assumption B2.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import BPoly
from scipy.special import ndtr

from .errors import ConfigurationError, DomainError, NumericalError

logger = logging.getLogger(__name__)


class WeightKind(Enum):
    """How the weight function is represented"""
    NAMED_ANALYTIC = "named-analytic"
    FINITE_WEIGHTS = "finite-weights"


# name -> default parameters
NAMED_FORMS: Dict[str, Dict[str, float]] = {
    "truncation-linear": {},
    "power": {"k": 2.0},
    "shifted-sigmoid": {"steepness": 10.0, "shift": 0.25},
    "affine": {"intercept": 1.0, "slope": -1.0},
    "constant": {"value": 1.0},
}

ALIASES = {
    "sigmoid": "shifted-sigmoid",
    "quantile-power": "power",
    "linear": "affine",
    "finite": "finite",
}


@dataclass(frozen=True)
class WeightSpec:
    """A preference weight function with regularity metadata"""
    kind: WeightKind
    name: str
    params: Dict[str, float] = field(default_factory=dict)
    finite_weights: Optional[Tuple[float, ...]] = None
    lam: Optional[int] = None
    declared_lipschitz: Optional[float] = None  # None means "unknown"

    def __call__(self, q: Any) -> Any:
        return eval_weights(self, q)

    @property
    def scale(self) -> float:
        return float(self.params.get("scale", 1.0))

    @property
    def offset(self) -> float:
        return float(self.params.get("offset", 0.0))

    def affine(self, scale: float, offset: float) -> "WeightSpec":
        """Return the weight q -> scale * w(q) + offset"""
        if self.kind is WeightKind.FINITE_WEIGHTS:
            weights = [scale * wi + offset for wi in self.finite_weights]
            return bernstein_from_finite(weights, self.lam)

        params = dict(self.params)
        params["scale"] = scale * self.scale
        params["offset"] = scale * self.offset + offset
        lipschitz = None
        if self.declared_lipschitz is not None:
            lipschitz = abs(scale) * self.declared_lipschitz
        return WeightSpec(self.kind, self.name, params, declared_lipschitz=lipschitz)

    def describe(self) -> Dict[str, Any]:
        if self.kind is WeightKind.FINITE_WEIGHTS:
            return {"kind": "finite", "weights": list(self.finite_weights), "lambda": self.lam}
        return {"kind": self.name, **self.params}


def named_weight(name: str, **params: float) -> WeightSpec:
    """Build one of the shipped analytic weights"""
    name = ALIASES.get(name, name)
    if name not in NAMED_FORMS:
        raise ConfigurationError(f"Unknown weight kind: {name}")

    merged = dict(NAMED_FORMS[name])
    for key, value in params.items():
        if key not in merged and key not in ("scale", "offset"):
            raise ConfigurationError(f"Unknown parameter '{key}' for weight '{name}'")
        merged[key] = float(value)

    if name == "power" and merged["k"] < 2.0:
        raise ConfigurationError("power weight requires k >= 2")
    if name == "shifted-sigmoid" and merged["steepness"] <= 0.0:
        raise ConfigurationError("sigmoid steepness must be positive")

    base_lipschitz = {
        "truncation-linear": 2.0,
        "power": merged.get("k", 0.0),
        "shifted-sigmoid": merged.get("steepness", 0.0) / 4.0,
        "affine": abs(merged.get("slope", 0.0)),
        "constant": 0.0,
    }[name]
    lipschitz = abs(merged.get("scale", 1.0)) * base_lipschitz

    return WeightSpec(WeightKind.NAMED_ANALYTIC, name, merged, declared_lipschitz=lipschitz)


def truncation_linear() -> WeightSpec:
    return named_weight("truncation-linear")


def bernstein_from_finite(weights: Sequence[float], lam: int) -> WeightSpec:
    """
    Smooth a finite rank weight vector into the polynomial

        p -> sum_i w_i * C(lam-1, i-1) * p^(i-1) * (1-p)^(lam-i)

    which is the expected preference of a point of quantile p among lam
    independent samples. Monotone inputs give monotone outputs.
    """
    weights = [float(wi) for wi in weights]
    if lam < 1:
        raise ConfigurationError(f"lambda must be a positive integer, got {lam}")
    if len(weights) != lam:
        raise ConfigurationError(
            f"finite weight vector has length {len(weights)} but lambda is {lam}"
        )
    if not all(np.isfinite(weights)):
        raise ConfigurationError("finite weights must be finite reals")

    diffs = np.abs(np.diff(weights)) if lam > 1 else np.zeros(1)
    lipschitz = float(lam * diffs.max())

    return WeightSpec(
        kind=WeightKind.FINITE_WEIGHTS,
        name="finite",
        finite_weights=tuple(weights),
        lam=lam,
        declared_lipschitz=lipschitz,
    )


def _check_unit_interval(q: np.ndarray) -> None:
    if np.any(np.isnan(q)) or np.any(q < 0.0) or np.any(q > 1.0):
        raise DomainError("weight functions are defined on [0, 1] only")


def eval_weights(w: WeightSpec, q: Any) -> Any:
    """Evaluate w at a scalar or an array of quantiles"""
    q_arr = np.asarray(q, dtype=float)
    _check_unit_interval(q_arr)

    if w.kind is WeightKind.FINITE_WEIGHTS:
        # sum_i w_i b_{i, lam-1}(q) in Bernstein form on [0, 1]
        poly = BPoly(np.asarray(w.finite_weights, dtype=float)[:, None], [0.0, 1.0])
        values = poly(q_arr.ravel()).reshape(q_arr.shape)
    else:
        p = w.params
        if w.name == "truncation-linear":
            base = np.maximum(0.0, 1.0 - 2.0 * q_arr)
        elif w.name == "power":
            base = np.power(1.0 - q_arr, p["k"])
        elif w.name == "shifted-sigmoid":
            base = 1.0 / (1.0 + np.exp(p["steepness"] * (q_arr - p["shift"])))
        elif w.name == "affine":
            base = p["intercept"] + p["slope"] * q_arr
        elif w.name == "constant":
            base = np.full_like(q_arr, p["value"])
        else:
            raise ConfigurationError(f"Unknown weight kind: {w.name}")
        values = w.scale * base + w.offset

    if np.ndim(q) == 0:
        return float(values)
    return values


def eval_weight(w: WeightSpec, q: float) -> float:
    return float(eval_weights(w, float(q)))


def rank_weights(w: WeightSpec, n: int) -> np.ndarray:
    """Preference of the i-th ranked point in a population of n: w((i - 1/2) / n)"""
    return eval_weights(w, (np.arange(1, n + 1) - 0.5) / n)


@dataclass
class B1Report:
    """Grid checks for assumption B1 (necessary conditions only)"""
    grid_size: int
    monotone: bool
    gap: float
    lipschitz_estimate: float
    declared_lipschitz: Optional[float]
    failures: List[str] = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return "pass" if not self.failures else "fail"

    @property
    def passed(self) -> bool:
        return not self.failures


def check_b1(w: WeightSpec, grid_size: int = 1001) -> B1Report:
    """
    Check monotonicity and w(0) > w(1) on a uniform grid. The Lipschitz
    estimate is the largest adjacent slope and is advisory only.
    """
    if grid_size < 2:
        raise ConfigurationError("grid_size must be at least 2")

    grid = np.linspace(0.0, 1.0, grid_size)
    values = eval_weights(w, grid)
    diffs = np.diff(values)
    tolerance = 1e-12 * max(1.0, float(np.max(np.abs(values))))

    failures = []
    monotone = bool(np.all(diffs <= tolerance))
    if not monotone:
        worst = int(np.argmax(diffs))
        failures.append(
            f"not non-increasing: w({grid[worst + 1]:.6g}) exceeds w({grid[worst]:.6g})"
        )

    gap = float(values[0] - values[-1])
    if not gap > tolerance:
        failures.append(f"w(0) - w(1) = {gap:.6g} is not positive")

    slope = float(np.max(np.abs(diffs)) * (grid_size - 1))

    return B1Report(
        grid_size=grid_size,
        monotone=monotone,
        gap=gap,
        lipschitz_estimate=slope,
        declared_lipschitz=w.declared_lipschitz,
        failures=failures,
    )


@dataclass(frozen=True)
class QuadratureSettings:
    """Composite Gauss-Legendre settings for the alpha integral"""
    abs_tol: float = 1e-12
    z_max: float = 8.0
    order: int = 20
    initial_panels: int = 16
    max_panels: int = 4096

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "QuadratureSettings":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"Unknown quadrature settings: {sorted(unknown)}")
        settings = cls(**data)
        if settings.abs_tol <= 0 or settings.initial_panels < 1 or settings.order < 1:
            raise ConfigurationError("quadrature settings must be positive")
        return settings


def _composite_gauss_legendre(integrand, a: float, b: float, panels: int, order: int) -> float:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    z = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    wz = (half[:, None] * weights[None, :]).ravel()
    return float(np.dot(wz, integrand(z)))


def _alpha_integrand(w: WeightSpec):
    norm = 1.0 / np.sqrt(2.0 * np.pi)

    def integrand(z: np.ndarray) -> np.ndarray:
        return eval_weights(w, ndtr(z)) * (z * z - 1.0) * norm * np.exp(-0.5 * z * z)

    return integrand


def alpha_b2(w: WeightSpec, d: int, quadrature: Optional[QuadratureSettings] = None) -> float:
    """
    alpha = integral of w(Phi(z)) * (z^2/d - 1/d) over the standard normal.

    Panels are doubled until two successive estimates agree within the
    requested absolute tolerance. Panel edges are symmetric around 0 so the
    kink of the truncation weight sits on a boundary.
    """
    if d < 1:
        raise DomainError(f"dimension must be positive, got {d}")
    quadrature = quadrature or QuadratureSettings()
    integrand = _alpha_integrand(w)

    panels = quadrature.initial_panels + (quadrature.initial_panels % 2)
    previous = _composite_gauss_legendre(
        integrand, -quadrature.z_max, quadrature.z_max, panels, quadrature.order
    )
    while True:
        panels *= 2
        if panels > quadrature.max_panels:
            raise NumericalError(
                f"alpha quadrature did not reach {quadrature.abs_tol:g} "
                f"within {quadrature.max_panels} panels"
            )
        current = _composite_gauss_legendre(
            integrand, -quadrature.z_max, quadrature.z_max, panels, quadrature.order
        )
        if abs(current - previous) <= quadrature.abs_tol:
            logger.debug(f"alpha quadrature converged with {panels} panels")
            return current / d
        previous = current


def alpha_b2_monte_carlo(w: WeightSpec, d: int, n_samples: int = 10**7,
                         seed: int = 0, chunk: int = 10**6) -> Tuple[float, float]:
    """Plain Monte-Carlo estimate of alpha with its standard error"""
    if d < 1:
        raise DomainError(f"dimension must be positive, got {d}")
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    remaining = n_samples
    while remaining > 0:
        size = min(chunk, remaining)
        z = rng.standard_normal(size)
        values = eval_weights(w, ndtr(z)) * (z * z - 1.0) / d
        total += float(values.sum())
        total_sq += float(np.dot(values, values))
        remaining -= size

    mean = total / n_samples
    variance = max(total_sq / n_samples - mean * mean, 0.0)
    return mean, float(np.sqrt(variance / n_samples))


@dataclass
class B2Report:
    alpha: float
    dim: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.alpha > self.tolerance

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"


def check_b2(w: WeightSpec, d: int, quadrature: Optional[QuadratureSettings] = None) -> B2Report:
    """alpha > 0; values within the quadrature tolerance count as zero"""
    quadrature = quadrature or QuadratureSettings()
    alpha = alpha_b2(w, d, quadrature)
    return B2Report(alpha=alpha, dim=d, tolerance=10.0 * quadrature.abs_tol / d)


def parse_weight(descriptor: Any) -> WeightSpec:
    """
    Build a WeightSpec from a config descriptor such as
    {kind: truncation-linear}, {kind: power, k: 2} or
    {kind: finite, weights: [1, 0.5, 0]}.
    """
    if isinstance(descriptor, WeightSpec):
        return descriptor
    if isinstance(descriptor, str):
        descriptor = {"kind": descriptor}
    if not isinstance(descriptor, dict) or "kind" not in descriptor:
        raise ConfigurationError(f"weight descriptor needs a 'kind': {descriptor!r}")

    params = dict(descriptor)
    kind = str(params.pop("kind"))
    if ALIASES.get(kind, kind) == "finite":
        if "weights" not in params:
            raise ConfigurationError("finite weight descriptor needs 'weights'")
        weights = list(params.pop("weights"))
        lam = int(params.pop("lambda", len(weights)))
        weight = bernstein_from_finite(weights, lam)
        if params.get("scale") is not None or params.get("offset") is not None:
            weight = weight.affine(float(params.get("scale", 1.0)), float(params.get("offset", 0.0)))
        return weight

    try:
        return named_weight(kind, **{key: float(value) for key, value in params.items()})
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigurationError):
            raise
        raise ConfigurationError(f"invalid weight parameters for '{kind}': {e}") from e

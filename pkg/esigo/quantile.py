"""
Quantile Oracles

The preference of a point x under theta is w(P_theta[y: f(y) <= f(x)]).
For linear objectives and isotropic quadratics that probability has a closed
form (normal CDF and noncentral chi-square CDF respectively); for anything
else it is estimated by counting over a fixed low-discrepancy sample set.
Neither route ever looks at the outer transform g.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy.special import gammainc, ndtr
from scipy.stats import poisson

from .errors import CapabilityError, ConfigurationError, DomainError, NumericalError
from .objectives import Objective
from .sampling import sobol_normal_points

logger = logging.getLogger(__name__)

POISSON_TAIL = 1e-14
MAX_SERIES_TERMS = 200_000
SERIES_SWITCH_TERMS = 2_000
_TERM_BLOCK = 256


def ncx2_cdf_sankaran(x: np.ndarray, dof: int, noncentrality: float) -> np.ndarray:
    """Sankaran's normal approximation of the noncentral chi-square CDF"""
    k, lam = float(dof), float(noncentrality)
    h = 1.0 - (2.0 / 3.0) * (k + lam) * (k + 3.0 * lam) / (k + 2.0 * lam) ** 2
    p = (k + 2.0 * lam) / (k + lam) ** 2
    m = (h - 1.0) * (1.0 - 3.0 * h)
    centre = 1.0 + h * p * (h - 1.0 - 0.5 * (2.0 - h) * m * p)
    scale = h * np.sqrt(2.0 * p) * (1.0 + 0.5 * m * p)
    return ndtr((np.power(np.asarray(x, dtype=float) / (k + lam), h) - centre) / scale)


def ncx2_cdf(x, dof: int, noncentrality: float, max_terms: int = MAX_SERIES_TERMS,
             asymptotic: bool = True):
    """
    Noncentral chi-square CDF by the Poisson mixture

        sum_k Pois(k; nc/2) * P[chi2_{dof+2k} <= x]

    summed over the Poisson terms that carry all but POISSON_TAIL of the mass.
    The window is centred on the Poisson mode; once it is wider than
    SERIES_SWITCH_TERMS the Sankaran approximation takes over, whose error
    is far below the series tail at those noncentralities. Pass
    asymptotic=False to force the series. Accepts scalar or array x.
    """
    x_arr = np.asarray(x, dtype=float)
    if dof < 1:
        raise DomainError(f"degrees of freedom must be positive, got {dof}")
    if not np.isfinite(noncentrality) or noncentrality < 0.0:
        raise DomainError(f"noncentrality must be finite and non-negative, got {noncentrality}")
    if not np.all(np.isfinite(x_arr)) or np.any(x_arr < 0.0):
        raise DomainError("ncx2_cdf requires finite non-negative x")

    half_x = 0.5 * x_arr.ravel()
    mu = 0.5 * noncentrality

    if mu == 0.0:
        values = gammainc(0.5 * dof, half_x)
    else:
        k_lo = int(poisson.ppf(0.5 * POISSON_TAIL, mu))
        k_lo = max(0, k_lo - 1)
        k_hi = int(poisson.isf(0.5 * POISSON_TAIL, mu)) + 1
        n_terms = k_hi - k_lo + 1
        if asymptotic and n_terms > SERIES_SWITCH_TERMS:
            logger.debug(f"ncx2 window of {n_terms} terms, using the Sankaran approximation")
            values = ncx2_cdf_sankaran(half_x * 2.0, dof, noncentrality)
        elif n_terms > max_terms:
            raise NumericalError(
                f"ncx2 series needs {n_terms} terms (noncentrality {noncentrality:.3g}), "
                f"budget is {max_terms}"
            )
        else:
            logger.debug(f"ncx2 series over k in [{k_lo}, {k_hi}]")
            values = np.zeros_like(half_x)
            for start in range(k_lo, k_hi + 1, _TERM_BLOCK):
                k = np.arange(start, min(start + _TERM_BLOCK, k_hi + 1))
                weights = poisson.pmf(k, mu)
                cdfs = gammainc(0.5 * dof + k[:, None], half_x[None, :])
                values += weights @ cdfs

    values = np.clip(values, 0.0, 1.0).reshape(x_arr.shape)
    if values.ndim == 0:
        return float(values)
    return values


def ncx2_cdf_monte_carlo(x: float, dof: int, noncentrality: float,
                         n_draws: int = 10**6, seed: int = 0) -> Tuple[float, float]:
    """Brute-force estimate of P[|Z + delta|^2 <= x] with its standard error"""
    rng = np.random.default_rng(seed)
    shift = np.zeros(dof)
    shift[0] = np.sqrt(noncentrality)
    Z = rng.standard_normal((n_draws, dof)) + shift
    hits = np.einsum("ij,ij->i", Z, Z) <= x
    p = float(hits.mean())
    return p, float(np.sqrt(max(p * (1.0 - p), 0.0) / n_draws))


class QuantileKind(Enum):
    EXACT_LINEAR = "exact-linear"
    EXACT_ISOTROPIC_QUADRATIC = "exact-isotropic-quadratic"
    EMPIRICAL = "empirical"


@dataclass(frozen=True, eq=False)
class QuantileModel:
    """How quantiles of one objective are computed"""
    kind: QuantileKind
    reference: Objective
    sample_set: Optional[np.ndarray] = None  # standard normal base points

    @property
    def is_exact(self) -> bool:
        return self.kind is not QuantileKind.EMPIRICAL


def quantile_model_for(obj: Objective, kind: str = "exact", n_samples: int = 2**14,
                       seed: int = 0) -> QuantileModel:
    """
    Pick the quantile model for an objective. kind="exact" selects the
    closed form matching the objective shape; kind="empirical" builds a
    Sobol sample set of n_samples points.
    """
    if kind == "empirical":
        return QuantileModel(QuantileKind.EMPIRICAL, obj, sobol_normal_points(n_samples, obj.dim, seed))
    if kind != "exact":
        raise ConfigurationError(f"Unknown quantile kind: {kind}")
    if obj.is_linear:
        return QuantileModel(QuantileKind.EXACT_LINEAR, obj)
    curvature = obj.isotropic_curvature
    if curvature is not None and curvature > 0.0:
        return QuantileModel(QuantileKind.EXACT_ISOTROPIC_QUADRATIC, obj)
    raise CapabilityError(f"no exact quantile for objective '{obj.name}'")


def _points(model: QuantileModel, x) -> Tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.reference.dim:
        raise DomainError(f"expected points of dimension {model.reference.dim}, got {X.shape}")
    return X, single


def exact_quantile(model: QuantileModel, theta, x):
    """Closed-form P_theta[y: f(y) <= f(x)] for one point or rows of points"""
    X, single = _points(model, x)
    m, v = theta.m, theta.v
    if v <= 0.0:
        raise DomainError("exact quantiles need v > 0")

    if model.kind is QuantileKind.EXACT_LINEAR:
        if not model.reference.is_linear:
            raise CapabilityError("exact-linear quantile needs a linear objective")
        a = model.reference.inner.a
        q = ndtr((X @ a - m @ a) / (np.sqrt(v) * np.linalg.norm(a)))
    elif model.kind is QuantileKind.EXACT_ISOTROPIC_QUADRATIC:
        if model.reference.isotropic_curvature is None:
            raise CapabilityError("exact-isotropic-quadratic quantile needs A proportional to I")
        xstar = model.reference.inner.xstar
        Y = X - xstar
        radius = np.einsum("ij,ij->i", Y, Y) / v
        offset = m - xstar
        q = ncx2_cdf(radius, model.reference.dim, float(offset @ offset) / v)
    else:
        raise CapabilityError("exact_quantile called on an empirical model")

    q = np.asarray(q, dtype=float)
    return float(q[0]) if single else q


def empirical_quantile(model: QuantileModel, theta, x):
    """Fraction of transported sample points y_k = m + sqrt(v) u_k with f(y_k) <= f(x)"""
    if model.sample_set is None or len(model.sample_set) == 0:
        raise ConfigurationError("empirical quantile model has an empty sample set")
    X, single = _points(model, x)

    Y = theta.m + np.sqrt(theta.v) * model.sample_set
    sample_f = np.sort(model.reference.eval_batch(Y))
    counts = np.searchsorted(sample_f, model.reference.eval_batch(X), side="right")
    q = counts / len(sample_f)
    return float(q[0]) if single else q


def quantile(model: QuantileModel, theta, x):
    if model.is_exact:
        return exact_quantile(model, theta, x)
    return empirical_quantile(model, theta, x)

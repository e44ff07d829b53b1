"""
ES-IGO: the isotropic evolution-strategy flow.

Rank-based search distributions N(m, v I) driven by the information-geometric
natural gradient, as an ODE (module flow) and as the discrete stochastic
algorithm it limits (module discrete), with the weight, objective and
quantile machinery both need.
"""

__version__ = "0.1.0"

from .errors import (
    CapabilityError, ConfigurationError, DomainError, EsigoError, NumericalError, StepRejected,
)
from .weights import (
    WeightKind, WeightSpec, alpha_b2, bernstein_from_finite, check_b1, check_b2, eval_weight,
    eval_weights, named_weight, parse_weight, rank_weights, truncation_linear,
)
from .objectives import Objective, Transform, eval_f, grad_h, hessian_h, make_builtin, parse_objective
from .quantile import QuantileModel, empirical_quantile, exact_quantile, ncx2_cdf, quantile_model_for
from .flow import (
    RhsEstimate, StopCriteria, ThetaIso, Trajectory, TrajectoryStatus, drift, integrate, lyapunov,
    rhs, rhs_exact, rhs_rank,
)
from .discrete import RunConfig, expected_weight, run, step
from .solvers import SolverSettings

__all__ = [
    "__version__",
    "CapabilityError", "ConfigurationError", "DomainError", "EsigoError", "NumericalError", "StepRejected",
    "WeightKind", "WeightSpec", "alpha_b2", "bernstein_from_finite", "check_b1", "check_b2", "eval_weight",
    "eval_weights", "named_weight", "parse_weight", "rank_weights", "truncation_linear",
    "Objective", "Transform", "eval_f", "grad_h", "hessian_h", "make_builtin", "parse_objective",
    "QuantileModel", "empirical_quantile", "exact_quantile", "ncx2_cdf", "quantile_model_for",
    "RhsEstimate", "StopCriteria", "ThetaIso", "Trajectory", "TrajectoryStatus", "drift", "integrate",
    "lyapunov", "rhs", "rhs_exact", "rhs_rank",
    "RunConfig", "expected_weight", "run", "step",
    "SolverSettings",
]

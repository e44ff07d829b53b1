"""
ES-IGO Flow

Right-hand side of the isotropic ES-IGO ordinary differential equation

    dm/dt = sqrt(v) * E[W(m + sqrt(v) z) z]
    dv/dt =      v  * E[W(m + sqrt(v) z) (|z|^2/d - 1)]

estimated on one fixed standard normal point set, the Lyapunov function
V(theta) = |m - x*|^2 + d v with its drift, and the integrator that turns
the vector field into trajectories.
"""

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .errors import CapabilityError, ConfigurationError, DomainError
from .objectives import Objective
from .quantile import QuantileModel, exact_quantile, quantile_model_for
from .sampling import sobol_normal_points
from .solvers import SolverSettings, integrate_ode
from .weights import WeightSpec, eval_weights

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ThetaIso:
    """Search distribution N(m, v I_d); v > 0"""
    m: np.ndarray
    v: float

    def __post_init__(self):
        m = np.array(self.m, dtype=float).reshape(-1)
        m.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "v", float(self.v))
        if not np.all(np.isfinite(m)) or not np.isfinite(self.v):
            raise DomainError("theta has non-finite entries")
        if self.v <= 0.0:
            raise DomainError(f"variance must be positive, got {self.v}")

    @classmethod
    def on_boundary(cls, m: Sequence[float]) -> "ThetaIso":
        """A point (m, 0) of the closure of the domain, for evaluating the RHS formula there"""
        theta = object.__new__(cls)
        m = np.array(m, dtype=float).reshape(-1)
        m.setflags(write=False)
        object.__setattr__(theta, "m", m)
        object.__setattr__(theta, "v", 0.0)
        return theta

    @property
    def dim(self) -> int:
        return len(self.m)

    @property
    def in_domain(self) -> bool:
        return self.v > 0.0

    def __repr__(self) -> str:
        return f"ThetaIso(m={self.m.tolist()}, v={self.v!r})"


class VarianceCoordinate(Enum):
    """Coordinates for the variance component; all give the same v-trajectories"""
    VARIANCE = "variance"
    LOG_VARIANCE = "log-variance"
    STD = "std"
    HALF_LOG_VARIANCE = "half-log-variance"

    def to_coord(self, v: float) -> float:
        if self is VarianceCoordinate.VARIANCE:
            return v
        if self is VarianceCoordinate.LOG_VARIANCE:
            return float(np.log(v))
        if self is VarianceCoordinate.STD:
            return float(np.sqrt(v))
        return 0.5 * float(np.log(v))

    def to_variance(self, s: float) -> float:
        if self is VarianceCoordinate.VARIANCE:
            return s
        if self is VarianceCoordinate.LOG_VARIANCE:
            return float(np.exp(s))
        if self is VarianceCoordinate.STD:
            if s <= 0.0:
                raise DomainError("standard deviation left the domain")
            return s * s
        return float(np.exp(2.0 * s))

    def rate(self, v: float, gv: float) -> float:
        """ds/dt given dv/dt = gv"""
        if self is VarianceCoordinate.VARIANCE:
            return gv
        if self is VarianceCoordinate.LOG_VARIANCE:
            return gv / v
        if self is VarianceCoordinate.STD:
            return gv / (2.0 * np.sqrt(v))
        return gv / (2.0 * v)


class RhsMode(Enum):
    RANK = "rank"
    EXACT = "exact"


@dataclass
class RhsEstimate:
    """Estimated natural gradient (g^m, g^v) with standard errors"""
    gm: np.ndarray
    gv: float
    se_gm: float
    se_gv: float
    n_points: int
    se_gm_coords: Optional[np.ndarray] = None


@dataclass
class DriftEstimate:
    """grad V(theta)^T g(theta) with its standard error"""
    value: float
    se: float

    @property
    def certified_negative(self) -> bool:
        return self.value + 3.0 * self.se < 0.0


def _check_points(theta: ThetaIso, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != theta.dim:
        raise DomainError(f"point set must have shape (N, {theta.dim}), got {points.shape}")
    if len(points) < 2:
        raise DomainError("point set needs at least two points")
    return points


def _check_theta(theta: ThetaIso, obj: Objective) -> None:
    if theta.dim != obj.dim:
        raise DomainError(f"theta has dimension {theta.dim}, objective {obj.dim}")
    if theta.v < 0.0 or not np.isfinite(theta.v) or not np.all(np.isfinite(theta.m)):
        raise DomainError(f"invalid theta {theta!r}")


def rank_preferences(theta: ThetaIso, obj: Objective, w: WeightSpec, points: np.ndarray) -> np.ndarray:
    """u_j = w((R_j - 1/2) / N) with R_j = #{k: f(x_k) <= f(x_j)}"""
    X = theta.m + np.sqrt(theta.v) * points
    f = obj.eval_batch(X)
    ranks = np.searchsorted(np.sort(f), f, side="right")
    return eval_weights(w, (ranks - 0.5) / len(points))


def _terms(theta: ThetaIso, u: np.ndarray, points: np.ndarray):
    d = theta.dim
    terms_m = np.sqrt(theta.v) * u[:, None] * points
    terms_v = theta.v * u * (np.einsum("ij,ij->i", points, points) / d - 1.0)
    return terms_m, terms_v


def _estimate(theta: ThetaIso, u: np.ndarray, points: np.ndarray, uncertainty: str) -> RhsEstimate:
    terms_m, terms_v = _terms(theta, u, points)
    n = len(points)
    if uncertainty == "sample":
        se_coords = terms_m.std(axis=0, ddof=1) / np.sqrt(n)
        se_gm = float(np.linalg.norm(se_coords))
        se_gv = float(terms_v.std(ddof=1) / np.sqrt(n))
    elif uncertainty == "none":
        se_coords = np.zeros(theta.dim)
        se_gm = se_gv = 0.0
    else:
        raise ConfigurationError(f"Unknown uncertainty policy: {uncertainty}")
    return RhsEstimate(terms_m.mean(axis=0), float(terms_v.mean()), se_gm, se_gv, n, se_coords)


def rhs_rank(theta: ThetaIso, obj: Objective, w: WeightSpec, points: np.ndarray,
             uncertainty: str = "sample") -> RhsEstimate:
    """Rank-based estimate: quantiles replaced by ranks within the point set"""
    _check_theta(theta, obj)
    points = _check_points(theta, points)
    return _estimate(theta, rank_preferences(theta, obj, w, points), points, uncertainty)


def exact_preferences(theta: ThetaIso, w: WeightSpec, qm: QuantileModel, points: np.ndarray) -> np.ndarray:
    if theta.v == 0.0:
        # every term carries a factor sqrt(v) or v
        return np.full(len(points), eval_weights(w, 1.0))
    X = theta.m + np.sqrt(theta.v) * points
    return eval_weights(w, exact_quantile(qm, theta, X))


def rhs_exact(theta: ThetaIso, obj: Objective, w: WeightSpec, qm: QuantileModel, points: np.ndarray,
              uncertainty: str = "none") -> RhsEstimate:
    """Exact-quantile estimate; the only error left is the cubature error of the point set"""
    _check_theta(theta, obj)
    if not qm.is_exact:
        raise CapabilityError("rhs_exact needs an exact quantile model")
    points = _check_points(theta, points)
    return _estimate(theta, exact_preferences(theta, w, qm, points), points, uncertainty)


def rhs(theta: ThetaIso, obj: Objective, w: WeightSpec, mode: str, points: np.ndarray,
        qm: Optional[QuantileModel] = None, uncertainty: Optional[str] = None) -> RhsEstimate:
    mode = RhsMode(mode)
    if mode is RhsMode.RANK:
        return rhs_rank(theta, obj, w, points, uncertainty or "sample")
    qm = qm or quantile_model_for(obj, "exact")
    return rhs_exact(theta, obj, w, qm, points, uncertainty or "none")


def lyapunov(theta: ThetaIso, xstar: np.ndarray) -> float:
    """V(theta) = |m - x*|^2 + d v"""
    xstar = np.asarray(xstar, dtype=float)
    if xstar.shape != theta.m.shape:
        raise DomainError(f"x* has shape {xstar.shape}, m has {theta.m.shape}")
    offset = theta.m - xstar
    return float(offset @ offset + theta.dim * theta.v)


def drift(theta: ThetaIso, obj: Objective, w: WeightSpec, mode: str, points: np.ndarray,
          xstar: np.ndarray, qm: Optional[QuantileModel] = None,
          uncertainty: str = "sample") -> DriftEstimate:
    """grad V^T g = 2 (m - x*)^T g^m + d g^v, averaged point by point"""
    _check_theta(theta, obj)
    points = _check_points(theta, points)
    xstar = np.asarray(xstar, dtype=float)
    if xstar.shape != theta.m.shape:
        raise DomainError(f"x* has shape {xstar.shape}, m has {theta.m.shape}")

    if RhsMode(mode) is RhsMode.RANK:
        u = rank_preferences(theta, obj, w, points)
    else:
        qm = qm or quantile_model_for(obj, "exact")
        u = exact_preferences(theta, w, qm, points)

    terms_m, terms_v = _terms(theta, u, points)
    contributions = 2.0 * terms_m @ (theta.m - xstar) + theta.dim * terms_v
    se = 0.0
    if uncertainty == "sample":
        se = float(contributions.std(ddof=1) / np.sqrt(len(points)))
    return DriftEstimate(float(contributions.mean()), se)


class TrajectoryStatus(Enum):
    CONVERGED = "converged"
    DIVERGED = "diverged"
    BUDGET_EXHAUSTED = "budget-exhausted"
    DOMAIN_ERROR = "domain-error"


@dataclass
class TrajectoryRecord:
    t: float
    theta: ThetaIso
    lyapunov: float
    gv_over_v: float


@dataclass
class Trajectory:
    """Time-indexed (t, theta, V, g^v / v) records of one run"""
    records: List[TrajectoryRecord] = field(default_factory=list)
    status: TrajectoryStatus = TrajectoryStatus.BUDGET_EXHAUSTED
    meta: Dict[str, Any] = field(default_factory=dict)

    def append(self, record: TrajectoryRecord) -> None:
        if self.records and record.t <= self.records[-1].t:
            raise DomainError("trajectory times must be strictly increasing")
        if not record.theta.in_domain:
            raise DomainError("trajectory records need v > 0")
        self.records.append(record)

    @property
    def final(self) -> TrajectoryRecord:
        return self.records[-1]

    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    def means(self) -> np.ndarray:
        return np.array([r.theta.m for r in self.records])

    def variances(self) -> np.ndarray:
        return np.array([r.theta.v for r in self.records])

    def lyapunov_values(self) -> np.ndarray:
        return np.array([r.lyapunov for r in self.records])

    def gv_over_v(self) -> np.ndarray:
        return np.array([r.gv_over_v for r in self.records])

    def log_variance_slope(self, t_max: Optional[float] = None) -> float:
        """Least-squares slope of ln v against t"""
        t = self.times()
        keep = t <= t_max if t_max is not None else np.ones_like(t, dtype=bool)
        if keep.sum() < 2:
            raise DomainError("need at least two records to fit a slope")
        return float(np.polyfit(t[keep], np.log(self.variances()[keep]), 1)[0])

    def identical_to(self, other: "Trajectory") -> bool:
        """Bitwise equality of times, means and variances"""
        return (
            len(self.records) == len(other.records)
            and np.array_equal(self.times(), other.times())
            and np.array_equal(self.means(), other.means())
            and np.array_equal(self.variances(), other.variances())
        )

    def max_relative_variance_deviation(self, other: "Trajectory") -> float:
        """max |v - v_other| / v_other over the record times both trajectories share"""
        common, mine, theirs = np.intersect1d(self.times(), other.times(), return_indices=True)
        if len(common) == 0:
            raise DomainError("trajectories share no record times")
        v1, v2 = self.variances()[mine], other.variances()[theirs]
        return float(np.max(np.abs(v1 - v2) / v2))

    def lyapunov_strictly_decreasing(self, threshold: float = 0.0) -> bool:
        """V strictly decreases between records while it stays above threshold"""
        values = self.lyapunov_values()
        if np.any(np.isnan(values)):
            return False
        for previous, current in zip(values[:-1], values[1:]):
            if previous < threshold:
                break
            if not current < previous:
                return False
        return True

    def write_csv(self, path: Path) -> Path:
        """t, m_1..m_d, v, V, gv_over_v per record plus a trailing status comment"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        dim = self.records[0].theta.dim if self.records else 0
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["t"] + [f"m_{i + 1}" for i in range(dim)] + ["v", "V", "gv_over_v"])
            for r in self.records:
                writer.writerow([repr(float(r.t))] + [repr(float(mi)) for mi in r.theta.m]
                                + [repr(r.theta.v), repr(float(r.lyapunov)), repr(float(r.gv_over_v))])
            handle.write(f"# status: {self.status.value}\n")
        return path


@dataclass(frozen=True)
class StopCriteria:
    """Finite-run proxies for the asymptotic statements"""
    horizon: float = 100.0
    n_outputs: int = 101
    output_times: Optional[Sequence[float]] = None
    eps_v_rel: float = 1e-10
    v_ceiling_rel: float = 1e12
    xstar: Optional[Sequence[float]] = None

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "StopCriteria":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"Unknown stop criteria: {sorted(unknown)}")
        stop = cls(**data)
        if stop.horizon <= 0:
            raise ConfigurationError("horizon must be positive")
        if stop.output_times is None and stop.n_outputs < 2:
            raise ConfigurationError("n_outputs must be at least 2")
        return stop

    def grid(self) -> np.ndarray:
        if self.output_times is not None:
            times = np.asarray(sorted(self.output_times), dtype=float)
            times = times[(times > 0.0) & (times < self.horizon)]
            return np.append(times, self.horizon)
        return np.linspace(0.0, self.horizon, self.n_outputs)[1:]


def integrate(theta0: ThetaIso, obj: Objective, w: WeightSpec, mode: str = "rank",
              solver: Optional[SolverSettings] = None, stop: Optional[StopCriteria] = None,
              points: Optional[np.ndarray] = None, qm: Optional[QuantileModel] = None) -> Trajectory:
    """
    Integrate the ES-IGO ODE from theta0 with one fixed point set.

    The state is (m, s) where s is the variance in the configured coordinate
    (log-variance by default). Status is converged once V drops below
    eps_v_rel * V(theta0), diverged once v exceeds v_ceiling_rel * v0,
    domain-error when the state leaves the domain, budget-exhausted otherwise.
    """
    solver = solver or SolverSettings()
    stop = stop or StopCriteria()
    solver.validate()
    _check_theta(theta0, obj)
    if not theta0.in_domain:
        raise DomainError("integration needs v0 > 0")

    mode = RhsMode(mode)
    coords = VarianceCoordinate(solver.parameterization)
    d = obj.dim
    if points is None:
        points = sobol_normal_points(solver.n_points, d, solver.point_seed)
    if mode is RhsMode.EXACT and qm is None:
        qm = quantile_model_for(obj, "exact")
    if mode is RhsMode.EXACT and not qm.is_exact:
        raise CapabilityError("exact mode needs an exact quantile model")
    points = _check_points(theta0, points)

    xstar = stop.xstar if stop.xstar is not None else obj.optimum
    xstar = None if xstar is None else np.asarray(xstar, dtype=float)
    v0 = theta0.v
    V0 = lyapunov(theta0, xstar) if xstar is not None else None
    eps_v = stop.eps_v_rel * V0 if V0 is not None else None
    v_ceiling = stop.v_ceiling_rel * v0

    # inputs were validated above
    def evaluate(theta: ThetaIso) -> RhsEstimate:
        if mode is RhsMode.RANK:
            u = rank_preferences(theta, obj, w, points)
        else:
            u = exact_preferences(theta, w, qm, points)
        return _estimate(theta, u, points, "none")

    def theta_of(y: np.ndarray) -> ThetaIso:
        return ThetaIso(y[:d], coords.to_variance(float(y[d])))

    def vector_field(y: np.ndarray) -> np.ndarray:
        theta = theta_of(y)
        estimate = evaluate(theta)
        return np.append(estimate.gm, coords.rate(theta.v, estimate.gv))

    def monitor(t: float, y: np.ndarray) -> Optional[str]:
        try:
            theta = theta_of(y)
        except DomainError:
            return "domain-error"
        if eps_v is not None and lyapunov(theta, xstar) < eps_v:
            return "converged"
        if theta.v > v_ceiling:
            return "diverged"
        return None

    y0 = np.append(theta0.m, coords.to_coord(v0))
    result = integrate_ode(vector_field, y0, stop.horizon, stop.grid(), solver, monitor)

    status = {
        "converged": TrajectoryStatus.CONVERGED,
        "diverged": TrajectoryStatus.DIVERGED,
        "domain-error": TrajectoryStatus.DOMAIN_ERROR,
    }.get(result.reason, TrajectoryStatus.BUDGET_EXHAUSTED)

    trajectory = Trajectory(status=status, meta={
        "mode": mode.value,
        "method": solver.method,
        "parameterization": coords.value,
        "n_points": len(points),
        "steps": result.n_steps,
        "rejected": result.n_rejected,
        "forced": result.n_forced,
    })
    for t, y in zip(result.times, result.states):
        try:
            theta = theta_of(y)
        except DomainError:
            break
        estimate = evaluate(theta)
        V = lyapunov(theta, xstar) if xstar is not None else float("nan")
        trajectory.append(TrajectoryRecord(t, theta, V, estimate.gv / theta.v))

    logger.info(
        f"integration finished: status={status.value} t={trajectory.final.t:.6g} "
        f"steps={result.n_steps} rejected={result.n_rejected}"
    )
    return trajectory


def sample_thetas(xstar: Sequence[float], radius: float, v_range: Sequence[float],
                  count: int, seed: int = 0) -> List[ThetaIso]:
    """m uniform in a box of the given radius around x*, v log-uniform in v_range"""
    rng = np.random.default_rng(seed)
    xstar = np.asarray(xstar, dtype=float)
    lo, hi = np.log(v_range[0]), np.log(v_range[1])
    thetas = []
    for _ in range(count):
        m = xstar + rng.uniform(-radius, radius, size=len(xstar))
        thetas.append(ThetaIso(m, float(np.exp(rng.uniform(lo, hi)))))
    return thetas

"""
Discrete Rank-Based Algorithm

The stochastic isotropic ES-IGO iteration

    m' = m + eta * sum_i (u_i / n) (x_i - m)
    v' = v + eta * sum_i (u_i / n) (|x_i - m|^2 / d - v)

with u_i = w((R_i - 1/2) / n) and R_i = #{j: f(x_j) <= f(x_i)}, and its
expected-update counterpart: for a finite rank weight vector of length lam
the expected step is the flow with the Bernstein-smoothed weight.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, StepRejected
from .flow import RhsEstimate, ThetaIso, Trajectory, TrajectoryRecord, TrajectoryStatus, lyapunov
from .objectives import Objective
from .sampling import GaussianStream
from .weights import WeightKind, WeightSpec, bernstein_from_finite, eval_weights, rank_weights

logger = logging.getLogger(__name__)

MAX_RETRIES = 10


def preferences(f: np.ndarray, w: WeightSpec) -> np.ndarray:
    """
    Rank preferences of one population. A finite weight vector whose length
    equals the population size is indexed by rank directly.
    """
    n = len(f)
    ranks = np.searchsorted(np.sort(f), f, side="right")
    if w.kind is WeightKind.FINITE_WEIGHTS and w.lam == n:
        return np.asarray(w.finite_weights)[ranks - 1]
    return eval_weights(w, (ranks - 0.5) / n)


def step_from_samples(theta: ThetaIso, obj: Objective, w: WeightSpec, x: np.ndarray,
                      eta: float) -> ThetaIso:
    """One update from an explicit population x of shape (n, d)"""
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    if n < 2:
        raise DomainError("population size must be at least 2")
    if d != theta.dim:
        raise DomainError(f"samples have dimension {d}, theta {theta.dim}")

    u = preferences(obj.eval_batch(x), w) / n
    offsets = x - theta.m
    m_new = theta.m + eta * (u @ offsets)
    v_new = theta.v + eta * float(u @ (np.einsum("ij,ij->i", offsets, offsets) / d - theta.v))
    if not v_new > 0.0:
        raise StepRejected(f"update produced v' = {v_new:.6g}", v_new)
    return ThetaIso(m_new, v_new)


def step(theta: ThetaIso, obj: Objective, w: WeightSpec, n: int, rng: GaussianStream,
         eta: float, iteration: Optional[int] = None, attempt: int = 0) -> ThetaIso:
    """
    Sample n points from N(m, v I) and update. The samples come from the
    (iteration, attempt) substream of rng, or its next draw when no
    iteration is given.
    """
    if n < 2:
        raise DomainError("population size must be at least 2")
    z = rng.draw((n, theta.dim), iteration, attempt)
    return step_from_samples(theta, obj, w, theta.m + np.sqrt(theta.v) * z, eta)


def expected_weight(finite_weights: Sequence[float], lam: int) -> WeightSpec:
    return bernstein_from_finite(finite_weights, lam)


def smoothed_weight(w: WeightSpec, n: int) -> WeightSpec:
    """The weight whose flow the discrete algorithm with population n tracks"""
    if w.kind is WeightKind.FINITE_WEIGHTS and w.lam == n:
        return w
    return bernstein_from_finite(rank_weights(w, n), n)


@dataclass
class RunConfig:
    """One discrete run"""
    theta0: ThetaIso
    eta: float
    n: int
    iterations: int
    seed: int
    weight: WeightSpec
    objective: Objective
    record_every: int = 1
    max_retries: int = MAX_RETRIES
    eps_v_rel: Optional[float] = None
    v_ceiling_rel: float = 1e12
    xstar: Optional[Sequence[float]] = None

    def validate(self) -> None:
        # eta = 0 is admitted as the constant-path degenerate case
        if not self.eta >= 0.0:
            raise ConfigurationError(f"eta must be non-negative, got {self.eta}")
        if self.n < 2:
            raise ConfigurationError(f"population size must be at least 2, got {self.n}")
        if self.iterations < 1:
            raise ConfigurationError("iterations must be at least 1")
        if self.record_every < 1:
            raise ConfigurationError("record_every must be at least 1")
        if self.theta0.dim != self.objective.dim:
            raise ConfigurationError("theta0 and objective dimensions differ")


@dataclass
class StepEvent:
    iteration: int
    attempt: int
    proposed_v: float
    t: float

    def to_dict(self) -> Dict[str, Any]:
        return {"event": "step-rejected", "iteration": self.iteration, "attempt": self.attempt,
                "proposed_v": self.proposed_v, "t": self.t}


@dataclass
class RunResult:
    trajectory: Trajectory
    events: List[StepEvent] = field(default_factory=list)


def _record(trajectory: Trajectory, t: float, theta: ThetaIso, xstar: Optional[np.ndarray]) -> None:
    V = lyapunov(theta, xstar) if xstar is not None else float("nan")
    trajectory.append(TrajectoryRecord(t, theta, V, float("nan")))


def run_with_events(config: RunConfig) -> RunResult:
    """Iterate step and keep the rejected-step events alongside the trajectory"""
    config.validate()
    obj, w = config.objective, config.weight
    xstar = config.xstar if config.xstar is not None else obj.optimum
    xstar = None if xstar is None else np.asarray(xstar, dtype=float)

    trajectory = Trajectory(meta={"eta": config.eta, "n": config.n, "seed": config.seed})
    events: List[StepEvent] = []
    theta = config.theta0
    _record(trajectory, 0.0, theta, xstar)

    if config.eta == 0.0:
        # every update is zero; records at t = k * eta would collide at t = 0
        return RunResult(trajectory, events)

    V0 = trajectory.final.lyapunov
    v_ceiling = config.v_ceiling_rel * config.theta0.v
    rng = GaussianStream(config.seed)

    for k in range(1, config.iterations + 1):
        for attempt in range(config.max_retries + 1):
            try:
                theta = step(theta, obj, w, config.n, rng, config.eta, k, attempt)
                break
            except StepRejected as e:
                event = StepEvent(k, attempt, e.proposed_v, k * config.eta)
                events.append(event)
                logger.warning(f"seed {config.seed}: step {k} rejected ({e}), attempt {attempt + 1}")
        else:
            trajectory.status = TrajectoryStatus.DOMAIN_ERROR
            logger.info(f"seed {config.seed}: retry budget exhausted at iteration {k}")
            break

        t = k * config.eta
        converged = (config.eps_v_rel is not None and xstar is not None
                     and lyapunov(theta, xstar) < config.eps_v_rel * V0)
        diverged = theta.v > v_ceiling
        if k % config.record_every == 0 or k == config.iterations or converged or diverged:
            _record(trajectory, t, theta, xstar)
        if converged:
            trajectory.status = TrajectoryStatus.CONVERGED
            break
        if diverged:
            trajectory.status = TrajectoryStatus.DIVERGED
            break

    trajectory.meta["rejected_steps"] = len(events)
    return RunResult(trajectory, events)


def run(config: RunConfig) -> Trajectory:
    """Iterate step from theta0, recording (k eta, theta_k, V) every record_every iterations"""
    return run_with_events(config).trajectory


def _batch_ranks(F: np.ndarray) -> np.ndarray:
    """R_ij = #{k: F_ik <= F_ij} for every row of F"""
    S = np.sort(F, axis=1)
    n_rows, n = F.shape
    if n_rows * n * n <= 2**24:
        return (S[:, None, :] <= F[:, :, None]).sum(axis=2)
    return np.stack([np.searchsorted(S[i], F[i], side="right") for i in range(n_rows)])


def expected_displacement(theta: ThetaIso, obj: Objective, w: WeightSpec, n: int, eta: float,
                          n_seeds: int, seed: int = 0, chunk: int = 10_000) -> RhsEstimate:
    """
    Mean of (theta' - theta) / eta over n_seeds independent steps from theta,
    with standard errors. Its expectation is the flow vector field of
    smoothed_weight(w, n).
    """
    if not eta > 0.0:
        raise DomainError("expected_displacement needs eta > 0")
    if n < 2 or n_seeds < 2:
        raise DomainError("need n >= 2 and at least two seeds")

    d = theta.dim
    rng = GaussianStream(seed)
    dm_all, dv_all = [], []
    remaining = n_seeds
    while remaining > 0:
        size = min(chunk, remaining)
        Z = rng.draw((size, n, d))
        X = theta.m + np.sqrt(theta.v) * Z
        F = obj.eval_batch(X.reshape(-1, d)).reshape(size, n)
        ranks = _batch_ranks(F)
        if w.kind is WeightKind.FINITE_WEIGHTS and w.lam == n:
            U = np.asarray(w.finite_weights)[ranks - 1]
        else:
            U = eval_weights(w, (ranks - 0.5) / n)
        U = U / n
        offsets = X - theta.m
        m_new = theta.m + eta * np.einsum("si,sij->sj", U, offsets)
        v_new = theta.v + eta * np.einsum("si,si->s", U, np.einsum("sij,sij->si", offsets, offsets) / d - theta.v)
        dm_all.append((m_new - theta.m) / eta)
        dv_all.append((v_new - theta.v) / eta)
        remaining -= size

    dm = np.concatenate(dm_all)
    dv = np.concatenate(dv_all)
    se_coords = dm.std(axis=0, ddof=1) / np.sqrt(n_seeds)
    return RhsEstimate(
        gm=dm.mean(axis=0),
        gv=float(dv.mean()),
        se_gm=float(np.linalg.norm(se_coords)),
        se_gv=float(dv.std(ddof=1) / np.sqrt(n_seeds)),
        n_points=n_seeds,
        se_gm_coords=se_coords,
    )


def write_event_log(events: Sequence[StepEvent], path: Path) -> Path:
    """One JSON object per rejected step"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        for event in events:
            handle.write(json.dumps(event.to_dict()) + "\n")
    return path

"""
Experiment Configuration

An experiment file is a YAML (or JSON) mapping with a list of experiments:

    experiments:
      - id: linear-variance-law-d1
        mode: ode-exact
        objective: {name: linear, dim: 1}
        weight: truncation-linear
        theta0: {m: 0.0, v: 1.0}
        stop: {horizon: 3.0}
        checks: {slope_rel_tol: 0.02}

Every validation error names the line of the offending experiment.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import yaml

from .errors import CapabilityError, ConfigurationError, EsigoError
from .flow import StopCriteria, ThetaIso
from .objectives import Objective, parse_objective
from .quantile import quantile_model_for
from .solvers import SolverSettings
from .weights import QuadratureSettings, WeightSpec, parse_weight

logger = logging.getLogger(__name__)


class ExperimentMode(Enum):
    ODE_RANK = "ode-rank"
    ODE_EXACT = "ode-exact"
    DISCRETE = "discrete"
    EXPECTED_UPDATE_CHECK = "expected-update-check"
    B2_REPORT = "b2-report"
    DRIFT_CHECK = "drift-check"
    SLOPE_CHECK = "slope-check"
    ORACLE_CHECK = "oracle-check"


NEEDS_OBJECTIVE = {
    ExperimentMode.ODE_RANK, ExperimentMode.ODE_EXACT, ExperimentMode.DISCRETE,
    ExperimentMode.EXPECTED_UPDATE_CHECK, ExperimentMode.DRIFT_CHECK, ExperimentMode.SLOPE_CHECK,
}
NEEDS_WEIGHT = NEEDS_OBJECTIVE | {ExperimentMode.B2_REPORT}
NEEDS_THETA0 = {ExperimentMode.ODE_RANK, ExperimentMode.ODE_EXACT, ExperimentMode.DISCRETE}

RUN_KEYS = {"eta", "n", "iterations", "record_every", "max_retries", "eps_v_rel",
            "v_ceiling_rel", "n_seeds", "n_points", "grid_step"}


@dataclass
class ExperimentSpec:
    """One named experiment of a config file"""
    id: str
    mode: ExperimentMode
    objective: Optional[Dict[str, Any]] = None
    weight: Any = None
    theta0: List[Dict[str, Any]] = field(default_factory=list)
    solver: Dict[str, Any] = field(default_factory=dict)
    stop: Dict[str, Any] = field(default_factory=dict)
    run: Dict[str, Any] = field(default_factory=dict)
    sampling: Dict[str, Any] = field(default_factory=dict)
    oracle: Dict[str, Any] = field(default_factory=dict)
    quadrature: Dict[str, Any] = field(default_factory=dict)
    checks: Dict[str, Any] = field(default_factory=dict)
    seeds: List[int] = field(default_factory=lambda: [0])
    dims: List[int] = field(default_factory=list)
    eta_ladder: List[float] = field(default_factory=list)
    compare_transforms: List[str] = field(default_factory=list)
    compare_parameterizations: List[str] = field(default_factory=list)
    outputs: str = ""
    description: str = ""
    line: Optional[int] = None
    source: Optional[str] = None

    def error(self, message: str) -> ConfigurationError:
        return ConfigurationError(f"experiment '{self.id}': {message}", self.line, self.source)

    def build_objective(self) -> Objective:
        return parse_objective(self.objective)

    def build_weight(self) -> WeightSpec:
        return parse_weight(self.weight)

    def build_solver(self) -> SolverSettings:
        return SolverSettings.from_dict(self.solver)

    def build_stop(self) -> StopCriteria:
        return StopCriteria.from_dict(self.stop)

    def build_quadrature(self) -> QuadratureSettings:
        return QuadratureSettings.from_dict(self.quadrature)

    def build_thetas(self, dim: int) -> List[ThetaIso]:
        thetas = []
        for entry in self.theta0:
            m = np.atleast_1d(np.asarray(entry.get("m", 0.0), dtype=float))
            if m.size == 1:
                m = np.full(dim, float(m[0]))
            if m.shape != (dim,):
                raise ConfigurationError(f"theta0 mean must have length {dim}, got {m.size}")
            thetas.append(ThetaIso(m, float(entry.get("v", 1.0))))
        return thetas

    def fingerprint(self) -> str:
        """Hash of the experiment definition, independent of its position in the file"""
        data = asdict(self)
        data["mode"] = self.mode.value
        for key in ("line", "source"):
            data.pop(key)
        return hashlib.sha256(json.dumps(data, sort_keys=True, default=str).encode()).hexdigest()

    def validate(self) -> None:
        """Build every component once so bad descriptors fail at load time"""
        if self.mode in NEEDS_OBJECTIVE and self.objective is None:
            raise self.error(f"mode {self.mode.value} needs an objective")
        if self.mode in NEEDS_WEIGHT and self.weight is None:
            raise self.error(f"mode {self.mode.value} needs a weight")
        if self.mode in NEEDS_THETA0 and not self.theta0:
            raise self.error(f"mode {self.mode.value} needs theta0")
        unknown = set(self.run) - RUN_KEYS
        if unknown:
            raise self.error(f"unknown run settings {sorted(unknown)}")
        if self.compare_parameterizations and self.mode is ExperimentMode.DISCRETE:
            raise self.error("compare_parameterizations applies to ode modes only")
        if self.eta_ladder and self.mode is not ExperimentMode.DISCRETE:
            raise self.error("eta_ladder applies to discrete mode only")
        if self.eta_ladder and len(self.eta_ladder) < 2:
            raise self.error("eta_ladder needs at least two step sizes")

        try:
            if self.weight is not None:
                self.build_weight()
            self.build_solver()
            self.build_stop()
            self.build_quadrature()
            if self.objective is not None:
                obj = self.build_objective()
                self.build_thetas(obj.dim)
                if self.mode is ExperimentMode.ODE_EXACT:
                    quantile_model_for(obj, "exact")
                for name in self.compare_transforms:
                    parse_objective({**self.objective, "transform": name})
        except CapabilityError as e:
            raise self.error(str(e)) from e
        except (EsigoError, ValueError, TypeError) as e:
            message = e.message if isinstance(e, ConfigurationError) else str(e)
            raise self.error(message) from e

        if self.mode is ExperimentMode.DISCRETE:
            if "n" not in self.run:
                raise self.error("discrete mode needs run.n")
            if not self.eta_ladder and ("eta" not in self.run or "iterations" not in self.run):
                raise self.error("discrete mode needs run.eta and run.iterations (or an eta_ladder)")


LIST_FIELDS = ("seeds", "dims", "eta_ladder", "compare_transforms", "compare_parameterizations")
DICT_FIELDS = ("solver", "stop", "run", "sampling", "oracle", "quadrature", "checks")


def _experiment_lines(text: str) -> List[Optional[int]]:
    """1-based line of every entry of the top-level experiments list"""
    root = yaml.compose(text)
    if not isinstance(root, yaml.MappingNode):
        return []
    for key, value in root.value:
        if key.value == "experiments" and isinstance(value, yaml.SequenceNode):
            return [item.start_mark.line + 1 for item in value.value]
    return []


def parse_experiment(entry: Any, line: Optional[int] = None, source: Optional[str] = None) -> ExperimentSpec:
    if not isinstance(entry, dict):
        raise ConfigurationError("experiment entry must be a mapping", line, source)
    if "id" not in entry:
        raise ConfigurationError("experiment entry needs an 'id'", line, source)
    if "mode" not in entry:
        raise ConfigurationError(f"experiment '{entry['id']}' needs a 'mode'", line, source)

    known = set(ExperimentSpec.__dataclass_fields__) - {"line", "source"}
    unknown = set(entry) - known
    if unknown:
        raise ConfigurationError(f"experiment '{entry['id']}': unknown keys {sorted(unknown)}", line, source)

    try:
        mode = ExperimentMode(entry["mode"])
    except ValueError:
        raise ConfigurationError(f"experiment '{entry['id']}': unknown mode {entry['mode']!r}", line, source) from None

    data = dict(entry)
    data["id"] = str(data["id"])
    data["mode"] = mode
    theta0 = data.get("theta0") or []
    data["theta0"] = [theta0] if isinstance(theta0, dict) else list(theta0)
    for key in LIST_FIELDS:
        if key in data and not isinstance(data[key], list):
            data[key] = [data[key]]
    for key in DICT_FIELDS:
        if key in data and not isinstance(data[key], dict):
            raise ConfigurationError(f"experiment '{data['id']}': '{key}' must be a mapping", line, source)
    data.setdefault("outputs", data["id"])

    spec = ExperimentSpec(**data, line=line, source=source)
    spec.validate()
    return spec


def load_config(path: Path, only: Optional[Sequence[str]] = None) -> List[ExperimentSpec]:
    """Parse and validate an experiment file, optionally keeping only some ids"""
    path = Path(path)
    source = str(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigurationError(f"cannot read config: {e}", source=source) from e

    try:
        data = yaml.safe_load(text)
        lines = _experiment_lines(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigurationError(f"invalid YAML: {getattr(e, 'problem', e)}", line, source) from e

    if not isinstance(data, dict) or not isinstance(data.get("experiments"), list):
        raise ConfigurationError("config must be a mapping with an 'experiments' list", 1, source)

    specs: List[ExperimentSpec] = []
    seen: Dict[str, Optional[int]] = {}
    for index, entry in enumerate(data["experiments"]):
        line = lines[index] if index < len(lines) else None
        spec = parse_experiment(entry, line, source)
        if spec.id in seen:
            raise ConfigurationError(
                f"duplicate experiment id '{spec.id}' (first defined on line {seen[spec.id]})", line, source
            )
        seen[spec.id] = line
        specs.append(spec)

    if only:
        missing = set(only) - set(seen)
        if missing:
            raise ConfigurationError(f"unknown experiment ids: {sorted(missing)}", source=source)
        specs = [spec for spec in specs if spec.id in set(only)]

    logger.info(f"loaded {len(specs)} experiment(s) from {path}")
    return specs

"""
Monotone Composite Objectives

An objective is f = g(h(x)) with g strictly increasing. Rank-based search
only ever compares f-values, so every algorithm in this package behaves
identically for all admissible g; the inner function h carries the
geometry (gradient, Hessian, declared optimum).
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np

from .errors import CapabilityError, ConfigurationError, DomainError

logger = logging.getLogger(__name__)

CRITICAL_POINT_TOL = 1e-12


class Transform(Enum):
    """Strictly increasing outer transforms g"""
    IDENTITY = "identity"
    EXP = "exp"
    ARCTAN = "arctan"
    CUBE = "cube"

    def apply(self, s: Any) -> Any:
        if self is Transform.IDENTITY:
            return s
        if self is Transform.EXP:
            return np.exp(s)
        if self is Transform.ARCTAN:
            return np.arctan(s)
        return s * s * s


class InnerFunction(ABC):
    """Base class for the inner functions h"""

    name = "inner"

    def __init__(self, dim: int):
        self.dim = dim

    @abstractmethod
    def value(self, X: np.ndarray) -> np.ndarray:
        """Evaluate h row-wise on an (n, d) array"""

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise CapabilityError(f"{self.name} provides no analytic gradient")

    def hessian(self, x: np.ndarray) -> np.ndarray:
        raise CapabilityError(f"{self.name} provides no analytic Hessian")

    def describe(self) -> Dict[str, Any]:
        return {"name": self.name, "dim": self.dim}


class LinearInner(InnerFunction):
    """h(x) = a^T x"""

    name = "linear"

    def __init__(self, a: np.ndarray):
        super().__init__(len(a))
        self.a = np.asarray(a, dtype=float)
        if not np.any(self.a):
            raise ConfigurationError("linear objective needs a non-zero direction a")

    def value(self, X):
        return X @ self.a

    def gradient(self, x):
        return self.a.copy()

    def hessian(self, x):
        return np.zeros((self.dim, self.dim))

    def describe(self):
        return {"name": self.name, "dim": self.dim, "a": self.a.tolist()}


class QuadraticInner(InnerFunction):
    """h(x) = (x - x*)^T A (x - x*) / 2"""

    name = "quadratic"

    def __init__(self, A: np.ndarray, xstar: np.ndarray):
        super().__init__(len(xstar))
        self.A = np.asarray(A, dtype=float)
        self.xstar = np.asarray(xstar, dtype=float)

    @property
    def isotropic_curvature(self) -> Optional[float]:
        """c when A = c * I, else None"""
        c = float(self.A[0, 0])
        if np.array_equal(self.A, c * np.eye(self.dim)):
            return c
        return None

    def value(self, X):
        Y = X - self.xstar
        return 0.5 * np.einsum("ij,jk,ik->i", Y, self.A, Y)

    def gradient(self, x):
        return self.A @ (np.asarray(x, dtype=float) - self.xstar)

    def hessian(self, x):
        return self.A.copy()

    def describe(self):
        return {"name": self.name, "dim": self.dim, "A": self.A.tolist(),
                "xstar": self.xstar.tolist()}


class RosenbrockInner(InnerFunction):
    """h(x) = sum 100 (x_{i+1} - x_i^2)^2 + (1 - x_i)^2, optimum at (1, ..., 1)"""

    name = "rosenbrock"

    def __init__(self, dim: int):
        if dim < 2:
            raise ConfigurationError("rosenbrock needs dim >= 2")
        super().__init__(dim)

    def value(self, X):
        head, tail = X[:, :-1], X[:, 1:]
        return np.sum(100.0 * (tail - head**2) ** 2 + (1.0 - head) ** 2, axis=1)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        grad = np.zeros_like(x)
        head, tail = x[:-1], x[1:]
        grad[:-1] += -400.0 * head * (tail - head**2) - 2.0 * (1.0 - head)
        grad[1:] += 200.0 * (tail - head**2)
        return grad

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        H = np.zeros((self.dim, self.dim))
        for i in range(self.dim - 1):
            H[i, i] += 1200.0 * x[i] ** 2 - 400.0 * x[i + 1] + 2.0
            H[i, i + 1] += -400.0 * x[i]
            H[i + 1, i] += -400.0 * x[i]
            H[i + 1, i + 1] += 200.0
        return H


class DoubleWellInner(InnerFunction):
    """h(x) = (x_1^2 - 1)^2 + sum_{i>1} x_i^2, minima at (+-1, 0, ..., 0)"""

    name = "double-well"

    def value(self, X):
        return (X[:, 0] ** 2 - 1.0) ** 2 + np.sum(X[:, 1:] ** 2, axis=1)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        grad = 2.0 * x
        grad[0] = 4.0 * x[0] * (x[0] ** 2 - 1.0)
        return grad

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        H = 2.0 * np.eye(self.dim)
        H[0, 0] = 12.0 * x[0] ** 2 - 4.0
        return H


@dataclass(frozen=True, eq=False)
class Objective:
    """f = g o h with optional declared optimum and Hessian there"""
    inner: InnerFunction
    transform: Transform = Transform.IDENTITY
    optimum: Optional[np.ndarray] = None
    hessian_at_optimum: Optional[np.ndarray] = None
    name: str = field(default="")

    def __post_init__(self):
        grid = np.linspace(-50.0, 50.0, 201)
        if not np.all(np.diff(self.transform.apply(grid)) > 0):
            raise ConfigurationError(f"transform {self.transform.value} is not strictly increasing")

        if self.optimum is not None:
            grad = self.inner.gradient(self.optimum)
            if np.linalg.norm(grad) > CRITICAL_POINT_TOL:
                raise ConfigurationError(
                    f"declared optimum is not critical: |grad h| = {np.linalg.norm(grad):.3g}"
                )
        if self.hessian_at_optimum is not None:
            smallest = float(np.linalg.eigvalsh(self.hessian_at_optimum).min())
            if smallest <= 0.0:
                raise ConfigurationError(f"Hessian at optimum is not positive definite ({smallest:.3g})")

    @property
    def dim(self) -> int:
        return self.inner.dim

    @property
    def is_linear(self) -> bool:
        return isinstance(self.inner, LinearInner)

    @property
    def isotropic_curvature(self) -> Optional[float]:
        if isinstance(self.inner, QuadraticInner):
            return self.inner.isotropic_curvature
        return None

    def with_transform(self, transform: Transform) -> "Objective":
        return Objective(self.inner, transform, self.optimum, self.hessian_at_optimum, self.name)

    def _check_points(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DomainError(f"expected points of dimension {self.dim}, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DomainError("objective evaluated at non-finite coordinates")
        return X

    def eval_batch(self, X: np.ndarray) -> np.ndarray:
        """f-values of the rows of X"""
        X = self._check_points(X)
        return self.transform.apply(self.inner.value(X))

    def eval_h_batch(self, X: np.ndarray) -> np.ndarray:
        return self.inner.value(self._check_points(X))

    def describe(self) -> Dict[str, Any]:
        return {**self.inner.describe(), "transform": self.transform.value}


def eval_f(obj: Objective, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DomainError(f"expected a single point, got shape {x.shape}")
    return float(obj.eval_batch(x[None, :])[0])


def grad_h(obj: Objective, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (obj.dim,):
        raise DomainError(f"expected a point of dimension {obj.dim}, got shape {x.shape}")
    return obj.inner.gradient(x)


def hessian_h(obj: Objective, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (obj.dim,):
        raise DomainError(f"expected a point of dimension {obj.dim}, got shape {x.shape}")
    return obj.inner.hessian(x)


def _vector(params: Dict[str, Any], key: str, dim: int, default: float) -> np.ndarray:
    if key not in params or params[key] is None:
        return np.full(dim, default)
    value = np.atleast_1d(np.asarray(params[key], dtype=float))
    if value.size == 1:
        return np.full(dim, float(value[0]))
    if value.shape != (dim,):
        raise ConfigurationError(f"'{key}' must have length {dim}, got {value.size}")
    return value


def _matrix(params: Dict[str, Any], dim: int) -> np.ndarray:
    if "A" not in params:
        return np.eye(dim)
    A = np.asarray(params["A"], dtype=float)
    if A.ndim == 1:
        if A.size != dim * dim:
            raise ConfigurationError(f"'A' must hold {dim * dim} entries (row-major)")
        A = A.reshape(dim, dim)
    if A.shape != (dim, dim):
        raise ConfigurationError(f"'A' must be {dim}x{dim}, got {A.shape}")
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-12):
        raise ConfigurationError("'A' must be symmetric")
    if np.linalg.eigvalsh(A).min() <= 0.0:
        raise ConfigurationError("'A' must be positive definite")
    return A


def make_builtin(name: str, dim: int, params: Optional[Dict[str, Any]] = None) -> Objective:
    """Construct one of the built-in objectives with all metadata populated"""
    params = dict(params or {})
    transform_name = params.pop("transform", "identity")
    try:
        transform = Transform(transform_name)
    except ValueError:
        raise ConfigurationError(f"Unknown transform: {transform_name}") from None
    if dim < 1:
        raise ConfigurationError(f"dimension must be positive, got {dim}")

    if name == "linear":
        inner = LinearInner(_vector(params, "a", dim, 1.0))
        return Objective(inner, transform, name=name)

    if name in ("quadratic", "sphere"):
        xstar = _vector(params, "xstar", dim, 0.0)
        A = np.eye(dim) if name == "sphere" else _matrix(params, dim)
        inner = QuadraticInner(A, xstar)
        return Objective(inner, transform, optimum=xstar, hessian_at_optimum=A.copy(), name=name)

    if name == "rosenbrock":
        inner = RosenbrockInner(dim)
        xstar = np.ones(dim)
        return Objective(inner, transform, optimum=xstar,
                         hessian_at_optimum=inner.hessian(xstar), name=name)

    if name == "double-well":
        inner = DoubleWellInner(dim)
        well = float(params.get("well", 1.0))
        if well not in (1.0, -1.0):
            raise ConfigurationError("double-well 'well' must be +1 or -1")
        xstar = np.zeros(dim)
        xstar[0] = well
        return Objective(inner, transform, optimum=xstar,
                         hessian_at_optimum=inner.hessian(xstar), name=name)

    raise ConfigurationError(f"Unknown objective: {name}")


def parse_objective(descriptor: Dict[str, Any]) -> Objective:
    """Build an objective from {name, dim, params, transform}"""
    if isinstance(descriptor, Objective):
        return descriptor
    if not isinstance(descriptor, dict) or "name" not in descriptor or "dim" not in descriptor:
        raise ConfigurationError(f"objective descriptor needs 'name' and 'dim': {descriptor!r}")
    params = dict(descriptor.get("params") or {})
    if "transform" in descriptor:
        params["transform"] = descriptor["transform"]
    try:
        return make_builtin(str(descriptor["name"]), int(descriptor["dim"]), params)
    except ValueError as e:
        if isinstance(e, ConfigurationError):
            raise
        raise ConfigurationError(f"invalid objective descriptor: {e}") from e

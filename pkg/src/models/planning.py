"""
Value types of the distributionally robust planner: polyhedral targets,
dual certificates, plan results and validation reports.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np

from .base import OTPropError, as_matrix, as_vector, frozen


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


@dataclass(frozen=True, eq=False)
class PolyhedralTarget:
    """
    Target set {x : max_j a_j^T x + b_j <= 0}.

    Rows of ``a`` are the a_j, ``b`` holds the offsets.
    """

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        try:
            a = as_matrix(self.a, "a")
            b = as_vector(self.b, "b", a.shape[0])
        except ValueError as e:
            raise OTPropError(str(e)) from e
        if np.all(a == 0.0):
            raise OTPropError("At least one target row must be nonzero")
        object.__setattr__(self, "a", frozen(a))
        object.__setattr__(self, "b", frozen(b))

    @classmethod
    def box(cls, lower: Any, upper: Any) -> "PolyhedralTarget":
        """Axis-aligned box lower <= x <= upper."""
        lower = as_vector(lower, "lower")
        upper = as_vector(upper, "upper", lower.shape[0])
        if np.any(lower > upper):
            raise OTPropError("Box bounds must satisfy lower <= upper")
        eye = np.eye(lower.shape[0])
        return cls(np.vstack([eye, -eye]), np.concatenate([-upper, lower]))

    @property
    def dim(self) -> int:
        return int(self.a.shape[1])

    @property
    def rows(self) -> int:
        return int(self.a.shape[0])

    def slack(self, X: Any) -> np.ndarray:
        """max_j a_j^T x + b_j for each row of X (a scalar for a single point)."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        values = (np.atleast_2d(X) @ self.a.T + self.b).max(axis=1)
        return float(values[0]) if single else values

    def contains(self, x: Any, tol: float = 0.0) -> bool:
        return self.slack(np.asarray(x, dtype=np.float64).ravel()) <= tol

    def to_dict(self) -> Dict[str, Any]:
        return {"a": self.a.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PolyhedralTarget":
        if "box" in data:
            return cls.box(data["box"]["lower"], data["box"]["upper"])
        if "a" not in data or "b" not in data:
            raise OTPropError("Target JSON requires 'a' and 'b' or a 'box'")
        return cls(data["a"], data["b"])


class PlanStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


@dataclass(frozen=True)
class WorstCaseCVaR:
    """Worst-case CVaR over an ambiguity set with its minimising (tau, lambda)."""
    value: float
    tau: float
    lam: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value": _finite_or_none(self.value),
            "tau": _finite_or_none(self.tau),
            "lambda": _finite_or_none(self.lam),
        }


@dataclass(frozen=True, eq=False)
class Certificate:
    """
    Dual variables (tau, lambda, s_1..s_N) of the reformulated constraint.

    For an infeasible plan, ``max_violation`` is the smallest achievable
    violation of the constraint system.
    """

    tau: float
    lam: float
    s: np.ndarray
    max_violation: float

    def satisfied(self, tol: float = 1e-6) -> bool:
        return self.max_violation <= tol

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tau": _finite_or_none(self.tau),
            "lambda": _finite_or_none(self.lam),
            "s": np.asarray(self.s).tolist(),
            "max_violation": float(self.max_violation),
        }


@dataclass(eq=False)
class PlanResult:
    """Output of the DR trajectory planner."""

    status: PlanStatus
    u_star: np.ndarray
    cost: float
    certificate: Certificate
    worst_case_cvar: float
    eps: float
    gamma: float
    mode: str = "exact"
    terminal_states: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    unimodal: bool = True

    @property
    def optimal(self) -> bool:
        return self.status == PlanStatus.OPTIMAL

    def inputs(self, m: int) -> np.ndarray:
        """u_0..u_{T-1} as a chronological (T, m) array."""
        return np.asarray(self.u_star, dtype=np.float64).reshape(-1, m)[::-1].copy()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status.value,
            "u_star": np.asarray(self.u_star).tolist(),
            "cost": float(self.cost),
            "certificate": self.certificate.to_dict(),
            "worst_case_cvar": _finite_or_none(self.worst_case_cvar),
            "eps": float(self.eps),
            "gamma": float(self.gamma),
            "mode": self.mode,
            "terminal_states": np.asarray(self.terminal_states).tolist(),
            "unimodal": self.unimodal,
        }


@dataclass(eq=False)
class ValidationReport:
    """Out-of-sample behaviour of a plan."""
    empirical_cvar: float
    fraction_in_target: float
    terminal_states: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {
            "empirical_cvar": float(self.empirical_cvar),
            "fraction_in_target": float(self.fraction_in_target),
            "terminal_states": np.asarray(self.terminal_states).tolist(),
        }

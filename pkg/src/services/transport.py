"""
Exact discrete optimal transport and the linear algebra the propagation
rules rely on (pseudo-inverse, numerical rank, cost composition).

The discrepancy solver doubles as the verification oracle for every
closed-form propagation rule, so it is exact: a transportation LP solved
with the HiGHS dual simplex, or an assignment when both marginals are
uniform on the same number of atoms.
"""

import itertools
from typing import NamedTuple, Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment, linprog

from ..models.base import CostError, OTPropError, as_matrix
from ..models.cost import MapComposedCost, PowerCost, QuadraticCost, TransportCost
from ..models.coupling import TransportPlan
from ..models.distribution import EmpiricalDistribution, PointMap
from ..config.settings import get_settings
from ..config.logging_config import get_logger, log_performance

logger = get_logger(__name__)

BRUTEFORCE_MAX_ATOMS = 8


class TransportError(OTPropError):
    """Invalid input to a transport computation."""
    pass


class NumericalFailureError(OTPropError):
    """The LP solver failed or returned a plan violating the marginals."""
    pass


class OTResult(NamedTuple):
    """Optimal value and an optimal coupling."""
    value: float
    plan: TransportPlan


# Linear algebra

def pinv(A, rtol: Optional[float] = None) -> np.ndarray:
    """
    Moore-Penrose pseudo-inverse via SVD.

    Singular values below rtol * sigma_max are treated as zero.
    """
    A = as_matrix(A, "A")
    rtol = get_settings().pinv_rtol if rtol is None else rtol
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((A.shape[1], A.shape[0]))
    s_inv = np.where(s > rtol * s[0], 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return (Vt.T * s_inv) @ U.T


def numerical_rank(A, rtol: Optional[float] = None) -> int:
    """Number of singular values above rtol * sigma_max."""
    A = as_matrix(A, "A")
    rtol = get_settings().rank_rtol if rtol is None else rtol
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def is_full_row_rank(A, rtol: Optional[float] = None) -> bool:
    A = as_matrix(A, "A")
    return numerical_rank(A, rtol) == A.shape[0]


def is_full_column_rank(A, rtol: Optional[float] = None) -> bool:
    A = as_matrix(A, "A")
    return numerical_rank(A, rtol) == A.shape[1]


def sigma_max(A) -> float:
    """Largest singular value (spectral norm)."""
    A = as_matrix(A, "A")
    return float(np.linalg.norm(A, 2))


def conformal_factor(M, atol: float = 1e-10) -> Optional[float]:
    """
    Return |alpha| if M^T M = alpha^2 I (a scaled isometry), else None.
    """
    M = as_matrix(M, "M")
    gram = M.T @ M
    alpha2 = float(np.trace(gram)) / gram.shape[0]
    if np.max(np.abs(gram - alpha2 * np.eye(gram.shape[0]))) > atol * max(1.0, alpha2):
        return None
    return float(np.sqrt(max(alpha2, 0.0)))


# Costs

def cost_eval(c: TransportCost, x, y) -> float:
    """c(x, y) for two points."""
    return c.evaluate(x, y)


def compose_linear(c: TransportCost, M) -> TransportCost:
    """
    The cost d -> c(M d).

    QuadraticCost(W) composes to QuadraticCost(M^T W M). PowerCost composes
    only with scaled isometries (scale * |alpha|^p); any other map raises.
    """
    M = as_matrix(M, "M")
    if c.dim is not None and M.shape[0] != c.dim:
        raise CostError(f"Cannot compose a cost on R^{c.dim} with a map into R^{M.shape[0]}")

    if isinstance(c, QuadraticCost):
        return QuadraticCost(M.T @ c.W @ M)

    if isinstance(c, PowerCost):
        alpha = conformal_factor(M)
        if alpha is None:
            raise CostError("A power cost composes only with scalar multiples of orthogonal maps")
        if alpha == 0.0:
            raise CostError("Composition with the zero map yields a degenerate power cost")
        return PowerCost(c.p, c.scale * alpha ** c.p, M.shape[1])

    raise CostError(f"Linear composition is not defined in closed form for {c.kind} costs")


def compose_linear_or_pairwise(c: TransportCost, M) -> TransportCost:
    """compose_linear where a closed form exists, otherwise the pairwise cost c(Mx - My)."""
    M = as_matrix(M, "M")
    try:
        return compose_linear(c, M)
    except CostError:
        return MapComposedCost(c, PointMap.linear(M))


# Optimal transport

def _check_pair(P: EmpiricalDistribution, Q: EmpiricalDistribution, c: TransportCost) -> None:
    if P.dim != Q.dim:
        raise TransportError(f"Distributions live in R^{P.dim} and R^{Q.dim}")
    if c.dim is not None and c.dim != P.dim:
        raise TransportError(f"Cost acts on R^{c.dim}, distributions live in R^{P.dim}")


def cost_matrix(P: EmpiricalDistribution, Q: EmpiricalDistribution, c: TransportCost) -> np.ndarray:
    _check_pair(P, Q, c)
    return c.pairwise(P.atoms, Q.atoms)


def _solve_transport_lp(C: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, m = C.shape
    # Row sums (n rows), then column sums except the last one (implied by total mass)
    rows = sp.kron(sp.identity(n, format="csr"), np.ones((1, m)), format="csr")
    cols = sp.kron(np.ones((1, n)), sp.identity(m, format="csr"), format="csr")[: m - 1]
    A_eq = sp.vstack([rows, cols], format="csr")
    b_eq = np.concatenate([a, b[: m - 1]])

    result = linprog(
        C.ravel(),
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs-ds",
        options={
            "primal_feasibility_tolerance": 1e-10,
            "dual_feasibility_tolerance": 1e-10,
            "presolve": True,
        },
    )
    if result.status != 0 or result.x is None:
        raise NumericalFailureError(f"Transportation LP failed: {result.message}")
    return result.x.reshape(n, m)


def ot_discrepancy(
    P: EmpiricalDistribution,
    Q: EmpiricalDistribution,
    c: TransportCost,
    method: str = "auto",
    residual_tolerance: Optional[float] = None,
) -> OTResult:
    """
    Exact OT discrepancy W_c(P, Q) and an optimal plan.

    Args:
        P, Q: Distributions on the same space
        c: Transportation cost
        method: "auto" (assignment for equal-size uniform pairs, LP otherwise),
            "lp" or "assignment"
        residual_tolerance: Largest accepted marginal residual of the plan

    Returns:
        OTResult(value, plan)
    """
    C = cost_matrix(P, Q, c)
    tol = get_settings().lp_residual_tolerance if residual_tolerance is None else residual_tolerance

    if method not in ("auto", "lp", "assignment"):
        raise TransportError(f"Unknown method {method!r}")

    uniform_square = P.size == Q.size and P.is_uniform and Q.is_uniform
    if method == "assignment" and not uniform_square:
        raise TransportError("The assignment method needs uniform marginals of equal size")

    if P.size == 1 or Q.size == 1:
        gamma = np.outer(P.weights, Q.weights)
    elif uniform_square and method in ("auto", "assignment"):
        rows, cols = linear_sum_assignment(C)
        gamma = np.zeros_like(C)
        gamma[rows, cols] = 1.0 / P.size
    else:
        with log_performance(logger, "transport_lp", n=P.size, m=Q.size):
            gamma = _solve_transport_lp(C, P.weights, Q.weights)

    plan = TransportPlan(P, Q, gamma)
    residual = plan.marginal_residual()
    if residual > tol:
        raise NumericalFailureError(
            f"Transport plan violates the marginals by {residual:.3g} (tolerance {tol:.1g})"
        )
    return OTResult(plan.total_cost(C), plan)


def ot_discrepancy_bruteforce(
    P: EmpiricalDistribution,
    Q: EmpiricalDistribution,
    c: TransportCost,
) -> float:
    """
    Minimum average cost over all N! permutation couplings.

    Valid for uniform marginals of equal size N <= 8, where the
    transportation LP has a permutation optimum.
    """
    if P.size != Q.size or not (P.is_uniform and Q.is_uniform):
        raise TransportError("Brute force needs uniform distributions with equal atom counts")
    if P.size > BRUTEFORCE_MAX_ATOMS:
        raise TransportError(f"Brute force is limited to {BRUTEFORCE_MAX_ATOMS} atoms")
    C = cost_matrix(P, Q, c)
    n = P.size
    perms = np.array(list(itertools.permutations(range(n))))
    totals = C[np.arange(n), perms].sum(axis=1)
    return float(totals.min() / n)

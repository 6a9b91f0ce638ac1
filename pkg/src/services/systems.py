"""
Uncertainty propagation through dynamical systems.

Covers the LTI cases (random initial state, additive noise, multiplicative
noise and their combination), nonlinear injective dynamics, the consensus
limit of row-stochastic averaging and the least-squares estimation error.

Sequences passed in are chronological arrays of shape (T, width). Stacked
vectors follow the newest-first convention of ``StackedOperators``.
"""

from typing import Any, Callable, NamedTuple, Optional

import numpy as np
from scipy.linalg import solve_discrete_are

from ..models.ambiguity_set import OTAmbiguitySet
from ..models.base import as_matrix, as_vector
from ..models.cost import QuadraticCost
from ..models.distribution import EmpiricalDistribution, PointMap
from ..models.system import DynamicsError, LTISystem, StackedOperators
from ..config.logging_config import get_logger, log_performance
from . import measures
from .ambiguity import MapLike, PushMode, push_linear, push_nonlinear, translate
from .transport import is_full_column_rank, pinv, sigma_max

logger = get_logger(__name__)

ProgressCallback = Callable[[int, int, float], None]

STOCHASTIC_TOL = 1e-9


def _require_unit_quadratic(S: OTAmbiguitySet, name: str) -> None:
    if not S.cost.is_unit_squared_euclidean:
        raise DynamicsError(f"{name} must use the ||.||_2^2 cost, got {S.cost!r}")


# Stacking

def stack(sys: LTISystem, T: int) -> StackedOperators:
    """A^T, [B, AB, ..., A^{T-1}B] and [D, AD, ..., A^{T-1}D]."""
    if T < 1:
        raise DynamicsError(f"Horizon must be a positive integer, got {T}")
    powers = [np.eye(sys.n)]
    for _ in range(T):
        powers.append(sys.A @ powers[-1])
    B_stack = np.hstack([powers[k] @ sys.B for k in range(T)])
    D_stack = np.hstack([powers[k] @ sys.D for k in range(T)])
    return StackedOperators(powers[T], B_stack, D_stack, T)


def stack_sequence(seq: Any) -> np.ndarray:
    """Chronological (T, width) sequence to the newest-first stacked vector."""
    arr = np.array(seq, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr[::-1].ravel()


def unstack_sequence(vec: Any, width: int) -> np.ndarray:
    """Inverse of ``stack_sequence``."""
    arr = np.asarray(vec, dtype=np.float64).reshape(-1, width)
    return arr[::-1].copy()


def stack_samples(samples: Any) -> np.ndarray:
    """(N, T, r) chronological noise trajectories to (N, rT) stacked rows."""
    arr = np.array(samples, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise DynamicsError(f"Noise samples must have shape (N, T, r), got {arr.shape}")
    return arr[:, ::-1, :].reshape(arr.shape[0], -1)


def noise_ambiguity_set(samples: Any, eps: float) -> OTAmbiguitySet:
    """B_eps^{||.||^2} around the empirical law of stacked noise trajectories."""
    rows = stack_samples(samples)
    return OTAmbiguitySet(
        EmpiricalDistribution(rows), eps, QuadraticCost.identity(rows.shape[1]), True
    )


def _stacked_input(sys: LTISystem, u: Any, T: int) -> np.ndarray:
    if u is None:
        return np.zeros(sys.m * T)
    arr = np.array(u, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, sys.m)
    if arr.shape != (T, sys.m):
        raise DynamicsError(f"u must have shape ({T}, {sys.m}), got {arr.shape}")
    return stack_sequence(arr)


# LTI propagation

def propagate_initial(sys: LTISystem, S0: OTAmbiguitySet, u: Any = None, t: int = 1) -> OTAmbiguitySet:
    """
    Law of x_t when only the initial state is uncertain.

    B_eps^{||.||^2 o (A^t)^+}(delta_{B u} * (A^t)#P_0); exact iff A^t has
    full row rank.
    """
    _require_unit_quadratic(S0, "Initial-state set")
    if S0.dim != sys.n:
        raise DynamicsError(f"Initial-state set lives in R^{S0.dim}, system in R^{sys.n}")
    ops = stack(sys, t)
    pushed = push_linear(S0, ops.A_pow)
    return translate(pushed, ops.B_stack @ _stacked_input(sys, u, t))


def propagate_additive(
    sys: LTISystem,
    x0: Any,
    u: Any,
    S_noise: OTAmbiguitySet,
    T: int,
) -> OTAmbiguitySet:
    """
    Law of x_T under additive noise with stacked-trajectory ambiguity S_noise.

    B_eps^{||.||^2 o D^+}(delta_{A^T x0 + B u} * D#P_T); exact iff the
    stacked noise operator has full row rank.
    """
    _require_unit_quadratic(S_noise, "Noise set")
    if S_noise.dim != sys.r * T:
        raise DynamicsError(f"Noise set lives in R^{S_noise.dim}, expected R^{sys.r * T}")
    ops = stack(sys, T)
    offset = ops.terminal_state(x0, _stacked_input(sys, u, T))
    return translate(push_linear(S_noise, ops.D_stack), offset)


def multiplicative_rollout(
    sys: LTISystem,
    x0: Any,
    u: Any,
    P1: EmpiricalDistribution,
    P2: EmpiricalDistribution,
    T: int,
    atom_budget: Optional[int] = None,
) -> EmpiricalDistribution:
    """Law of x_T for x_{t+1} = w1 * (A x_t) + w2 * (B u_t), w1 ~ P1, w2 ~ P2 i.i.d."""
    u_seq = unstack_sequence(_stacked_input(sys, u, T), sys.m)
    P = EmpiricalDistribution.dirac(as_vector(x0, "x0", sys.n))
    A_map = PointMap.linear(sys.A)
    for k in range(T):
        drift = measures.hadamard(P2, EmpiricalDistribution.dirac(sys.B @ u_seq[k]), atom_budget)
        P = measures.convolve(measures.hadamard(P1, measures.pushforward(P, A_map), atom_budget),
                              drift, atom_budget)
    return P


def propagate_multiplicative(
    sys: LTISystem,
    x0: Any,
    u: Any,
    S1: OTAmbiguitySet,
    S2: OTAmbiguitySet,
    T: int,
    atom_budget: Optional[int] = None,
    progress: Optional[ProgressCallback] = None,
) -> OTAmbiguitySet:
    """
    Law of x_T under multiplicative noise on the state (S1) and input (S2).

    The center grows by a factor |P1| * |P2| per step, so the atom budget
    is checked at every step.

    Args:
        sys: System (D is unused)
        x0: Initial state
        u: Chronological inputs (T, m)
        S1, S2: Ambiguity sets over R^n with the ||.||^2 cost
        T: Horizon
        atom_budget: Override of the configured budget
        progress: Called as progress(step, T, radius) after each step

    Returns:
        B_{rho_T}^{||.||^2}(P_T), always a superset
    """
    _require_unit_quadratic(S1, "State-noise set")
    _require_unit_quadratic(S2, "Input-noise set")
    for S in (S1, S2):
        if S.dim != sys.n:
            raise DynamicsError(f"Noise set lives in R^{S.dim}, system in R^{sys.n}")
    if T < 1:
        raise DynamicsError(f"Horizon must be a positive integer, got {T}")

    u_seq = unstack_sequence(_stacked_input(sys, u, T), sys.m)
    sigma = sigma_max(sys.A)
    m_p1 = measures.second_moment(S1.center)
    eps1, eps2 = S1.radius, S2.radius
    A_map = PointMap.linear(sys.A)

    P = EmpiricalDistribution.dirac(as_vector(x0, "x0", sys.n))
    rho = 0.0
    with log_performance(logger, "propagate_multiplicative", horizon=T):
        for k in range(T):
            AP = measures.pushforward(P, A_map)
            Bu = sys.B @ u_seq[k]
            rho = (
                np.sqrt(eps1 * rho) * sigma
                + np.sqrt(rho * m_p1) * sigma
                + np.sqrt(eps1 * measures.second_moment(AP))
                + np.sqrt(eps2) * np.linalg.norm(Bu)
            ) ** 2
            drift = measures.hadamard(S2.center, EmpiricalDistribution.dirac(Bu), atom_budget)
            P = measures.convolve(measures.hadamard(S1.center, AP, atom_budget), drift, atom_budget)
            if progress is not None:
                progress(k + 1, T, float(rho))
    return OTAmbiguitySet(P, float(rho), QuadraticCost.identity(sys.n), False)


def propagate_combined(
    sys: LTISystem,
    S0: OTAmbiguitySet,
    S_noise: OTAmbiguitySet,
    u: Any,
    T: int,
    atom_budget: Optional[int] = None,
) -> OTAmbiguitySet:
    """
    Law of x_T with both the initial state and the additive noise uncertain.

    Center delta_{B u} * (A^T)#P_0 * D#P_T with radius
    (sqrt(eps1)/sigma_max(A^T) + sqrt(eps2)/sigma_max(D))^2 under ||.||^2.
    The radius covers the true law when both operators are non-expansive;
    a warning is logged otherwise.
    """
    _require_unit_quadratic(S0, "Initial-state set")
    _require_unit_quadratic(S_noise, "Noise set")
    if S0.dim != sys.n or S_noise.dim != sys.r * T:
        raise DynamicsError("Set dimensions do not match the system and horizon")
    ops = stack(sys, T)
    s_a, s_d = sigma_max(ops.A_pow), sigma_max(ops.D_stack)
    if s_a == 0.0 or s_d == 0.0:
        raise DynamicsError("A^T and the stacked noise operator must be nonzero")
    if s_a > 1.0 or s_d > 1.0:
        logger.warning(
            f"propagate_combined: operator norms ({s_a:.4g}, {s_d:.4g}) exceed 1; "
            f"the combined radius may not cover the propagated law"
        )

    radius = (np.sqrt(S0.radius) / s_a + np.sqrt(S_noise.radius) / s_d) ** 2
    initial = measures.pushforward(S0.center, PointMap.linear(ops.A_pow))
    noise = measures.pushforward(S_noise.center, PointMap.linear(ops.D_stack))
    center = measures.convolve(initial, noise, atom_budget)
    center = measures.pushforward(center, PointMap.translation(ops.B_stack @ _stacked_input(sys, u, T)))
    return OTAmbiguitySet(center, float(radius), QuadraticCost.identity(sys.n), False)


def propagate_nonlinear(f: MapLike, f_inv: MapLike, S0: OTAmbiguitySet, t: int) -> OTAmbiguitySet:
    """t steps of x_{k+1} = f(x_k) for injective f with left inverse f_inv."""
    if t < 1:
        raise DynamicsError(f"Number of steps must be a positive integer, got {t}")
    S = S0
    for _ in range(t):
        S = push_nonlinear(S, f, f_inv, PushMode.INJECTIVE)
    return S


# Consensus

class ConsensusResult(NamedTuple):
    """Limit set on R, left Perron vector and the lift x -> x * 1."""
    set: OTAmbiguitySet
    weights: np.ndarray
    lift: PointMap


def _check_consensus_matrix(A: np.ndarray) -> None:
    n = A.shape[0]
    if A.shape != (n, n):
        raise DynamicsError(f"Consensus matrix must be square, got {A.shape}")
    if A.min() < -STOCHASTIC_TOL or np.max(np.abs(A.sum(axis=1) - 1.0)) > STOCHASTIC_TOL:
        raise DynamicsError("Consensus matrix must be row-stochastic")
    eigvals = np.linalg.eigvals(A)
    at_one = np.abs(eigvals - 1.0) <= STOCHASTIC_TOL
    if at_one.sum() != 1:
        raise DynamicsError("Eigenvalue 1 must be simple")
    if np.any(np.abs(eigvals[~at_one]) >= 1.0 - STOCHASTIC_TOL):
        raise DynamicsError("All other eigenvalues must lie strictly inside the unit circle")


def left_perron_vector(A: Any) -> np.ndarray:
    """Left eigenvector for eigenvalue 1, normalised to sum to one."""
    A = as_matrix(A, "A")
    n = A.shape[0]
    if np.max(np.abs(A.sum(axis=0) - 1.0)) <= STOCHASTIC_TOL:
        return np.full(n, 1.0 / n)
    _, _, Vt = np.linalg.svd(A.T - np.eye(n))
    w = Vt[-1]
    if w[np.argmax(np.abs(w))] < 0:
        w = -w
    return w / w.sum()


def consensus_limit(A: Any, S0: OTAmbiguitySet) -> ConsensusResult:
    """
    Ambiguity set of the consensus value of x_{t+1} = A x_t.

    Returns B_{eps ||w||^2}^{|.|^2}((w^T)#P_0) on R together with w and the
    lift map reconstructing the consensus state. For doubly stochastic A
    the radius is eps / n.
    """
    A = as_matrix(A, "A")
    _check_consensus_matrix(A)
    _require_unit_quadratic(S0, "Initial-state set")
    if S0.dim != A.shape[0]:
        raise DynamicsError(f"Initial-state set lives in R^{S0.dim}, A is {A.shape[0]}x{A.shape[0]}")

    w = left_perron_vector(A)
    center = measures.pushforward(S0.center, PointMap.linear(w.reshape(1, -1), name="consensus"))
    if np.max(np.abs(A.sum(axis=0) - 1.0)) <= STOCHASTIC_TOL:
        radius = S0.radius / A.shape[0]
    else:
        radius = S0.radius * float(w @ w)
    limit = OTAmbiguitySet(center, radius, QuadraticCost.identity(1), S0.exact)
    lift = PointMap.linear(np.ones((A.shape[0], 1)), name="lift")
    logger.debug(f"consensus_limit: n={A.shape[0]}, radius={radius:.6g}")
    return ConsensusResult(limit, w, lift)


def consensus_trace(A: Any, P0: EmpiricalDistribution, steps: int) -> np.ndarray:
    """Largest coordinate spread over the atoms of A^t#P_0 for t = 0..steps."""
    A = as_matrix(A, "A")
    X = P0.atoms.copy()
    spread = np.empty(steps + 1)
    for t in range(steps + 1):
        spread[t] = float(np.max(X.max(axis=1) - X.min(axis=1)))
        X = X @ A.T
    return spread


# Least squares

def ols_error_set(A: Any, S_noise: OTAmbiguitySet) -> OTAmbiguitySet:
    """
    Ambiguity set of the OLS estimation error A^+ z.

    Returns B_eps^{||.||^2 o A}((A^+)#P) with cost QuadraticForm(A^T A);
    exact since A^+ has full row rank.
    """
    A = as_matrix(A, "A")
    if not is_full_column_rank(A):
        raise DynamicsError(f"A ({A.shape[0]}x{A.shape[1]}) must have full column rank")
    _require_unit_quadratic(S_noise, "Noise set")
    if S_noise.dim != A.shape[0]:
        raise DynamicsError(f"Noise set lives in R^{S_noise.dim}, A has {A.shape[0]} rows")
    return push_linear(S_noise, pinv(A))


def ols_iid_radius(eps: float, m: int) -> float:
    """Radius m * eps of the product set for m i.i.d. noise coordinates."""
    return measures.product_iid_radius(eps, m)


# Prestabilisation

def lqr_gain(sys: LTISystem, Q: Any = None, R: Any = None) -> np.ndarray:
    """
    Infinite-horizon discrete LQR gain K with u = K x.

    Q and R default to identities.
    """
    Q = np.eye(sys.n) if Q is None else as_matrix(Q, "Q", sys.n, sys.n)
    R = np.eye(sys.m) if R is None else as_matrix(R, "R", sys.m, sys.m)
    try:
        P = solve_discrete_are(sys.A, sys.B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise DynamicsError(f"Riccati equation has no stabilising solution: {e}") from e
    return -np.linalg.solve(R + sys.B.T @ P @ sys.B, sys.B.T @ P @ sys.A)


def prestabilize(sys: LTISystem, K: Any = None) -> LTISystem:
    """The closed loop (A + B K, B, D); K defaults to the LQR gain."""
    K = lqr_gain(sys) if K is None else as_matrix(K, "K", sys.m, sys.n)
    return LTISystem(sys.A + sys.B @ K, sys.B, sys.D)

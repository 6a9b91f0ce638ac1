"""
CVaR and the distributionally robust trajectory planner.

The DR-CVaR constraint over an OT ball with quadratic cost Omega is
handled through its finite-dimensional dual: for fixed lambda the
worst-case CVaR equals lambda * eps + CVaR(l(lambda)) with per-sample
losses l_i(lambda) = max_j a_j^T x_i + b_j + alpha_j / (4 lambda gamma)
and alpha_j = a_j^T Omega^- a_j. The planner minimises ||u||^2 over the
reformulated constraint system by a one-dimensional convex search over
lambda around an inner QP in (u, tau, s).
"""

from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog, minimize, minimize_scalar

from ..models.ambiguity_set import OTAmbiguitySet
from ..models.base import OTPropError, as_vector
from ..models.cost import QuadraticCost
from ..models.distribution import PointMap
from ..models.planning import (
    Certificate,
    PlanResult,
    PlanStatus,
    PolyhedralTarget,
    ValidationReport,
    WorstCaseCVaR,
)
from ..models.system import LTISystem
from ..config.settings import Settings, get_settings
from ..config.logging_config import get_logger, log_performance
from .ambiguity import push_center_only, push_lipschitz, translate
from .systems import noise_ambiguity_set, propagate_additive, stack, stack_samples, unstack_sequence
from .transport import NumericalFailureError, is_full_row_rank, pinv

logger = get_logger(__name__)

RANGE_TOL = 1e-9
INNER_FEASIBILITY_TOL = 1e-8
INFEASIBLE_PENALTY = 1e12


class PlanningError(OTPropError):
    """Invalid planning problem (dimensions, gamma, rank)."""
    pass


class InfeasiblePlanError(PlanningError):
    """No input satisfies the DR-CVaR constraint; carries the minimal-violation result."""

    def __init__(self, message: str, result: Optional[PlanResult] = None):
        super().__init__(message)
        self.result = result


class PropagationMode(str, Enum):
    """How the noise ambiguity set is carried to the terminal state."""
    EXACT = "exact"
    LIPSCHITZ = "lipschitz"
    CENTER = "center"


# CVaR

def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not 0.0 < gamma <= 1.0:
        raise PlanningError(f"gamma must lie in (0, 1], got {gamma}")
    return gamma


def cvar_with_var(values: Any, weights: Any = None, gamma: float = 0.1) -> Tuple[float, float]:
    """
    CVaR of the worst gamma-tail and the matching VaR.

    The VaR is the minimiser tau of tau + E[max(v - tau, 0)] / gamma.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise PlanningError("CVaR of an empty sample is undefined")
    gamma = _check_gamma(gamma)
    if weights is None:
        w = np.full(v.size, 1.0 / v.size)
    else:
        w = np.asarray(weights, dtype=np.float64).ravel()
        if w.shape != v.shape or np.any(w <= 0):
            raise PlanningError("Weights must be positive and match the values")
        if abs(w.sum() - 1.0) > get_settings().weight_tolerance:
            raise PlanningError(f"Weights sum to {w.sum():.15g}")

    order = np.argsort(-v, kind="stable")
    vs, ws = v[order], w[order]
    cum = np.cumsum(ws)
    k = min(int(np.searchsorted(cum, gamma * (1.0 - 1e-15))), vs.size - 1)
    head = cum[k - 1] if k > 0 else 0.0
    cvar = (vs[:k] @ ws[:k] + (gamma - head) * vs[k]) / gamma
    return float(cvar), float(vs[k])


def cvar_empirical(values: Any, weights: Any = None, gamma: float = 0.1) -> float:
    """Exact CVaR at level 1 - gamma of a weighted sample (sorted-tail formula)."""
    return cvar_with_var(values, weights, gamma)[0]


# Worst-case CVaR over an OT ball

def _alpha(target: PolyhedralTarget, omega_inv: np.ndarray) -> np.ndarray:
    return np.einsum("ji,ik,jk->j", target.a, omega_inv, target.a)


def _outside_range(target: PolyhedralTarget, W: np.ndarray, omega_inv: np.ndarray) -> np.ndarray:
    projected = target.a @ (W @ omega_inv).T
    norms = np.maximum(1.0, np.linalg.norm(target.a, axis=1))
    return np.linalg.norm(projected - target.a, axis=1) > RANGE_TOL * norms


def _dual_value(base: np.ndarray, alpha: np.ndarray, weights: np.ndarray,
                gamma: float, eps: float, lam: float) -> Tuple[float, float]:
    losses = (base + alpha / (4.0 * lam * gamma)).max(axis=1)
    cvar, var = cvar_with_var(losses, weights, gamma)
    return lam * eps + cvar, var


def _is_unimodal(values: np.ndarray) -> bool:
    """Finite part contiguous, non-increasing then non-decreasing."""
    finite = np.isfinite(values)
    idx = np.flatnonzero(finite)
    if idx.size == 0:
        return True
    if idx[-1] - idx[0] + 1 != idx.size:
        return False
    seg = values[idx[0]: idx[-1] + 1]
    tol = 1e-9 * max(1.0, float(np.max(np.abs(seg))))
    diffs = np.diff(seg)
    rising = np.flatnonzero(diffs > tol)
    if rising.size == 0:
        return True
    return not np.any(diffs[rising[0]:] < -tol)


def _bracketed_minimum(
    fun: Callable[[float], float],
    grid: np.ndarray,
    values: np.ndarray,
) -> Tuple[float, float]:
    """Refine the best grid point of a convex function between its neighbours."""
    k = int(np.argmin(values))
    left, right = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    best_x, best_f = float(grid[k]), float(values[k])
    if right > left:
        res = minimize_scalar(fun, bounds=(left, right), method="bounded", options={"xatol": 1e-10})
        if res.fun < best_f:
            best_x, best_f = float(res.x), float(res.fun)
    return best_x, best_f


def worst_case_cvar(
    S: OTAmbiguitySet,
    target: PolyhedralTarget,
    gamma: float,
    lambda_hint: Optional[float] = None,
    settings: Optional[Settings] = None,
) -> WorstCaseCVaR:
    """
    sup over Q in S of CVaR_gamma^Q(max_j a_j^T x + b_j).

    Args:
        S: Ball with a quadratic cost (typically from propagate_additive)
        target: Target polyhedron
        gamma: Tail probability
        lambda_hint: Extra multiplier to evaluate, e.g. a planner's optimum
        settings: Source of the lambda bracket and grid size

    Returns:
        WorstCaseCVaR(value, tau, lam); value <= 0 certifies the constraint.
        lam is infinite for eps = 0 and zero when no a_j sees the cost.
    """
    if not isinstance(S.cost, QuadraticCost):
        raise PlanningError(f"Worst-case CVaR needs a quadratic cost, got {S.cost.kind}")
    if target.dim != S.dim:
        raise PlanningError(f"Target lives in R^{target.dim}, set in R^{S.dim}")
    gamma = _check_gamma(gamma)
    settings = settings or get_settings()

    weights = S.center.weights
    base = S.center.atoms @ target.a.T + target.b
    if S.radius == 0.0:
        value, tau = cvar_with_var(base.max(axis=1), weights, gamma)
        return WorstCaseCVaR(value, tau, float("inf"))

    omega_inv = pinv(S.cost.W)
    outside = _outside_range(target, S.cost.W, omega_inv)
    if np.any(outside):
        logger.warning(
            f"worst_case_cvar: target rows {np.flatnonzero(outside).tolist()} leave the range "
            f"of the cost matrix; the worst case is unbounded"
        )
        return WorstCaseCVaR(float("inf"), float("nan"), float("nan"))

    alpha = _alpha(target, omega_inv)
    if np.all(alpha <= 0.0):
        value, tau = cvar_with_var(base.max(axis=1), weights, gamma)
        return WorstCaseCVaR(value, tau, 0.0)

    def objective(log_lam: float) -> float:
        return _dual_value(base, alpha, weights, gamma, S.radius, float(np.exp(log_lam)))[0]

    lo, hi = (np.log(x) for x in settings.lambda_bracket)
    grid = np.linspace(lo, hi, max(3, settings.lambda_grid_points))
    values = np.array([objective(v) for v in grid])
    log_lam, _ = _bracketed_minimum(objective, grid, values)
    lam = float(np.exp(log_lam))
    if lambda_hint is not None and np.isfinite(lambda_hint) and lambda_hint > 0:
        if objective(np.log(lambda_hint)) < objective(log_lam):
            lam = float(lambda_hint)
    edge = 1e-6 * (hi - lo)
    log_final = np.log(lam)
    if log_final <= lo + edge or log_final >= hi - edge:
        end = "lower" if log_final <= lo + edge else "upper"
        logger.warning(
            f"worst_case_cvar: lambda = {lam:.3g} hit the {end} end of its bracket; "
            f"the returned value is only an upper bound"
        )

    value, tau = _dual_value(base, alpha, weights, gamma, S.radius, lam)
    return WorstCaseCVaR(value, tau, lam)


# Planner

@dataclass
class InnerSolution:
    """Fixed-lambda QP in z = (u, tau, s)."""
    lam: float
    cost: float
    z: Optional[np.ndarray]
    violation: float
    success: bool

    @property
    def feasible(self) -> bool:
        return np.isfinite(self.cost)


class DRTrajectoryPlanner:
    """
    Minimum-energy inputs steering the terminal state into a target under a
    DR-CVaR constraint.

    One instance owns its cached operators and is not reentrant; solve
    independent problems on independent instances.
    """

    def __init__(
        self,
        sys: LTISystem,
        x0: Any,
        samples: Any,
        target: PolyhedralTarget,
        gamma: float,
        horizon: Optional[int] = None,
        mode: str = PropagationMode.EXACT,
        settings: Optional[Settings] = None,
    ):
        self.settings = settings or get_settings()
        self.sys = sys
        self.gamma = _check_gamma(gamma)
        if self.gamma >= 1.0:
            raise PlanningError("The planner needs gamma < 1")
        self.mode = PropagationMode(mode)

        samples = np.array(samples, dtype=np.float64)
        if samples.ndim == 2 and sys.r == 1:
            samples = samples[:, :, None]
        if samples.ndim != 3 or samples.shape[0] < 1:
            raise PlanningError(f"Noise samples must have shape (N, T, r), got {samples.shape}")
        self.horizon = int(horizon) if horizon is not None else samples.shape[1]
        if samples.shape[1:] != (self.horizon, sys.r):
            raise PlanningError(
                f"Noise samples must have shape (N, {self.horizon}, {sys.r}), got {samples.shape}"
            )
        self.samples = samples
        self.N = samples.shape[0]

        self.x0 = as_vector(x0, "x0", sys.n)
        if target.dim != sys.n:
            raise PlanningError(f"Target lives in R^{target.dim}, state in R^{sys.n}")
        self.target = target

        self.ops = stack(sys, self.horizon)
        if not is_full_row_rank(self.ops.D_stack):
            raise PlanningError("The stacked noise operator must have full row rank")

        unit = self.propagated_set(1.0)
        self._radius_per_eps = unit.radius
        self._omega_inv = pinv(unit.cost.W)
        self._alpha = _alpha(target, self._omega_inv)
        self._centers = unit.center.atoms
        self._build_constraints()

    # Sets

    def propagated_set(self, eps: float, u_stacked: Any = None) -> OTAmbiguitySet:
        """Terminal-state ambiguity set under the configured propagation mode."""
        noise = noise_ambiguity_set(self.samples, eps)
        u = np.zeros(self.nu) if u_stacked is None else as_vector(u_stacked, "u", self.nu)
        if self.mode == PropagationMode.EXACT:
            return propagate_additive(self.sys, self.x0, unstack_sequence(u, self.sys.m), noise, self.horizon)
        offset = self.ops.terminal_state(self.x0, u)
        if self.mode == PropagationMode.LIPSCHITZ:
            return translate(push_lipschitz(noise, self.ops.D_stack), offset)
        return translate(push_center_only(noise, PointMap.linear(self.ops.D_stack)), offset)

    @property
    def nu(self) -> int:
        return self.sys.m * self.horizon

    # Constraint system G z <= h(lambda), z = (u, tau, s)

    def _build_constraints(self) -> None:
        N, J, nu = self.N, self.target.rows, self.nu
        g = self.gamma
        nz = nu + 1 + N
        rows: List[np.ndarray] = []

        budget = np.zeros(nz)
        budget[nu + 1:] = 1.0
        rows.append(budget[None, :])

        aB = self.target.a @ self.ops.B_stack
        for i in range(N):
            block = np.zeros((J, nz))
            block[:, :nu] = aB
            block[:, nu] = g - 1.0
            block[:, nu + 1 + i] = -g
            rows.append(block)

        tail = np.zeros((N, nz))
        tail[:, nu] = 1.0
        tail[np.arange(N), nu + 1 + np.arange(N)] = -1.0
        rows.append(tail)

        self._G = np.vstack(rows)
        self._base = self._centers @ self.target.a.T + self.target.b

    def _regulariser(self, lam: float):
        if np.isinf(lam) or not np.any(self._alpha):
            return 0.0
        return self._alpha / (4.0 * lam * self.gamma)

    def _rhs(self, eps_x: float, lam: float) -> np.ndarray:
        N = self.N
        regulariser = self._regulariser(lam)
        budget = 0.0 if eps_x == 0.0 else -lam * eps_x * N
        sample_rows = -(self._base + regulariser).ravel()
        return np.concatenate([[budget], sample_rows, np.zeros(N)])

    def _phase_one(self, h: np.ndarray) -> Tuple[np.ndarray, float]:
        """Smallest t >= 0 with G z - h <= t."""
        G = self._G
        nz = G.shape[1]
        c = np.zeros(nz + 1)
        c[-1] = 1.0
        res = linprog(
            c,
            A_ub=np.hstack([G, -np.ones((G.shape[0], 1))]),
            b_ub=h,
            bounds=[(None, None)] * nz + [(0.0, None)],
            method="highs",
        )
        if res.status != 0 or res.x is None:
            raise NumericalFailureError(f"Phase-one LP failed: {res.message}")
        return res.x[:-1], float(res.x[-1])

    def inner(self, eps: float, lam: float) -> InnerSolution:
        """Minimum of ||u||^2 over the constraint system at fixed lambda."""
        eps_x = self._radius_per_eps * eps
        h = self._rhs(eps_x, lam)
        z0, violation = self._phase_one(h)
        if violation > self.settings.certificate_tolerance:
            return InnerSolution(lam, float("inf"), z0, violation, False)

        nu, G = self.nu, self._G
        res = minimize(
            lambda z: float(z[:nu] @ z[:nu]),
            z0,
            jac=lambda z: np.concatenate([2.0 * z[:nu], np.zeros(z.size - nu)]),
            constraints=[{"type": "ineq", "fun": lambda z: h - G @ z, "jac": lambda z: -G}],
            method="SLSQP",
            options={"ftol": 1e-12, "maxiter": 500},
        )
        z = res.x
        violation = max(0.0, float(np.max(G @ z - h)))
        # exit mode 8 is a line-search stall at machine precision
        success = violation <= INNER_FEASIBILITY_TOL and (res.success or res.status == 8)
        if violation > INNER_FEASIBILITY_TOL:
            z, violation = z0, max(0.0, float(np.max(G @ z0 - h)))
        return InnerSolution(lam, float(z[:nu] @ z[:nu]), z, violation, success)

    def cost_profile(self, eps: float, lambdas: Sequence[float]) -> np.ndarray:
        """Inner optimal cost for each lambda (inf where infeasible)."""
        return np.array([self.inner(eps, float(lam)).cost for lam in lambdas])

    # Certificates

    def constraint_violation(self, u: Any, tau: float, lam: float, s: Any, eps: float) -> float:
        """Largest violation of the reformulated constraint system."""
        z = np.concatenate([as_vector(u, "u", self.nu), [tau], as_vector(s, "s", self.N)])
        h = self._rhs(self._radius_per_eps * eps, lam)
        return max(0.0, float(np.max(self._G @ z - h)))

    def certificate(self, u: Any, tau: float, lam: float, eps: float) -> Certificate:
        """Smallest s for (u, tau, lambda) and the replayed violation."""
        u = as_vector(u, "u", self.nu)
        regulariser = self._regulariser(lam)
        states = self._centers + self.ops.B_stack @ u
        rows = states @ self.target.a.T + self.target.b + regulariser
        s = np.maximum(tau, tau + (rows.max(axis=1) - tau) / self.gamma)
        return Certificate(tau, lam, s, self.constraint_violation(u, tau, lam, s, eps))

    # Solve

    def _result(self, status: PlanStatus, u: np.ndarray, cert: Certificate, eps: float,
                unimodal: bool = True) -> PlanResult:
        S_u = self.propagated_set(eps, u)
        wc = worst_case_cvar(S_u, self.target, self.gamma, lambda_hint=cert.lam, settings=self.settings)
        return PlanResult(
            status=status,
            u_star=u,
            cost=float(u @ u),
            certificate=cert,
            worst_case_cvar=wc.value,
            eps=float(eps),
            gamma=self.gamma,
            mode=self.mode.value,
            terminal_states=S_u.center.atoms.copy(),
            unimodal=unimodal,
        )

    def _infeasible(self, sol: InnerSolution, eps: float) -> PlanResult:
        nu = self.nu
        z = sol.z
        cert = Certificate(float(z[nu]), sol.lam, z[nu + 1:].copy(), sol.violation)
        logger.warning(
            f"Plan infeasible for eps={eps:g} ({self.mode.value}): minimal violation {sol.violation:.3g}"
        )
        return self._result(PlanStatus.INFEASIBLE, z[:nu].copy(), cert, eps)

    def solve(self, eps: float) -> PlanResult:
        """
        Plan for radius eps.

        Returns a PlanResult with status optimal, infeasible (with the
        minimal-violation certificate) or max_iter.
        """
        if eps < 0:
            raise PlanningError(f"eps must be nonnegative, got {eps}")
        tol = self.settings.certificate_tolerance
        u0 = np.zeros(self.nu)

        with log_performance(logger, "plan_trajectory", eps=eps, mode=self.mode.value):
            start = worst_case_cvar(self.propagated_set(eps, u0), self.target, self.gamma,
                                    settings=self.settings)
            if start.value <= 0.0:
                logger.info("Zero input already satisfies the DR-CVaR constraint")
                cert = self.certificate(u0, start.tau, start.lam, eps)
                return self._result(PlanStatus.OPTIMAL, u0, cert, eps)

            if self._radius_per_eps * eps == 0.0:
                sol = self.inner(eps, float("inf"))
                if not sol.feasible:
                    return self._infeasible(sol, eps)
                unimodal = True
            else:
                lo, hi = (np.log(x) for x in self.settings.lambda_bracket)
                grid = np.linspace(lo, hi, max(3, self.settings.lambda_grid_points))
                sols = [self.inner(eps, float(np.exp(v))) for v in grid]
                costs = np.array([s.cost for s in sols])
                if not np.any(np.isfinite(costs)):
                    ends = [sols[0], sols[-1]]
                    return self._infeasible(min(ends, key=lambda s: s.violation), eps)

                unimodal = _is_unimodal(costs)
                if not unimodal:
                    logger.warning(f"Inner cost is not unimodal in lambda on the grid (eps={eps:g})")
                if int(np.argmin(costs)) == 0:
                    logger.warning("Optimal lambda at the lower end of its bracket")

                cache = {}

                def objective(log_lam: float) -> float:
                    s = self.inner(eps, float(np.exp(log_lam)))
                    cache[log_lam] = s
                    return s.cost if s.feasible else INFEASIBLE_PENALTY * (1.0 + s.violation)

                penalised = np.where(np.isfinite(costs), costs, INFEASIBLE_PENALTY)
                best_log, _ = _bracketed_minimum(objective, grid, penalised)
                sol = cache.get(best_log) or sols[int(np.argmin(penalised))]

            nu = self.nu
            u = sol.z[:nu].copy()
            cert = self.certificate(u, float(sol.z[nu]), sol.lam, eps)
            status = PlanStatus.OPTIMAL if sol.success and cert.satisfied(tol) else PlanStatus.MAX_ITER
            if status != PlanStatus.OPTIMAL:
                logger.warning(f"Inner QP did not converge cleanly (violation {cert.max_violation:.3g})")
            return self._result(status, u, cert, eps, unimodal)

    def sweep(self, eps_values: Sequence[float]) -> List[PlanResult]:
        return [self.solve(float(eps)) for eps in eps_values]


def plan_trajectory(
    sys: LTISystem,
    x0: Any,
    samples: Any,
    target: PolyhedralTarget,
    eps: float,
    gamma: float,
    T: Optional[int] = None,
    mode: str = PropagationMode.EXACT,
) -> PlanResult:
    """One-shot DR-CVaR trajectory planning; see DRTrajectoryPlanner."""
    return DRTrajectoryPlanner(sys, x0, samples, target, gamma, T, mode).solve(eps)


def validate_plan(
    sys: LTISystem,
    u: Any,
    test_samples: Any,
    target: PolyhedralTarget,
    gamma: float,
    x0: Any = None,
    tol: float = 1e-6,
) -> ValidationReport:
    """
    Simulate held-out noise trajectories under the stacked input u.

    Returns the empirical CVaR of the target slack, the fraction of
    terminal states inside the target (slack <= tol) and the states.
    """
    rows = stack_samples(test_samples)
    T = rows.shape[1] // sys.r
    ops = stack(sys, T)
    x0 = np.zeros(sys.n) if x0 is None else as_vector(x0, "x0", sys.n)
    u = np.asarray(u, dtype=np.float64)
    u_stacked = u.ravel() if u.ndim == 1 else u[::-1].ravel()

    states = ops.terminal_state(x0, u_stacked) + rows @ ops.D_stack.T
    slack = target.slack(states)
    return ValidationReport(
        empirical_cvar=cvar_empirical(slack, None, gamma),
        fraction_in_target=float(np.mean(slack <= tol)),
        terminal_states=states,
    )

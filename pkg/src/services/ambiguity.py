"""
Propagation calculus for OT ambiguity sets.

Every rule returns a new OTAmbiguitySet. The ``exact`` flag of the result
is True only when the rule yields the exact image of its inputs and every
input was itself exact; otherwise the result is a proven superset.
"""

from enum import Enum
from typing import Any, Callable, Optional, Union

import numpy as np

from ..models.ambiguity_set import OTAmbiguitySet
from ..models.base import CostError, OTPropError, as_matrix, as_vector
from ..models.cost import MapComposedCost, PowerCost, QuadraticCost, TransportCost
from ..models.distribution import EmpiricalDistribution, PointMap, as_point_map
from ..config.logging_config import get_logger
from . import measures
from .transport import (
    compose_linear,
    compose_linear_or_pairwise,
    is_full_row_rank,
    ot_discrepancy,
    pinv,
    sigma_max,
)

logger = get_logger(__name__)

INVERSE_TOL = 1e-9
PROJECTION_TOL = 1e-10
COST_CONDITION_PAIRS = 200

MapLike = Union[PointMap, Callable[[np.ndarray], Any]]


class PropagationError(OTPropError):
    """A propagation rule's preconditions are not met."""
    pass


class PushMode(str, Enum):
    """How the supplied inverse relates to the map."""
    BIJECTIVE = "bijective"
    INJECTIVE = "injective"
    SURJECTIVE = "surjective"


class TransformKind(str, Enum):
    TRANSLATE = "translate"
    SCALE = "scale"
    ROTATE = "rotate"
    PROJECT = "project"


def _require_same_dim(S: OTAmbiguitySet, Q: EmpiricalDistribution) -> None:
    if S.dim != Q.dim:
        raise PropagationError(f"Set lives in R^{S.dim}, distribution in R^{Q.dim}")


def _cost_on(cost: TransportCost, dim: int) -> TransportCost:
    """Carry an isotropic cost over to R^dim."""
    if cost.dim is None or cost.dim == dim:
        return cost
    if isinstance(cost, PowerCost):
        return cost.with_dim(dim)
    if isinstance(cost, QuadraticCost) and cost.is_isotropic:
        return QuadraticCost(cost.W[0, 0] * np.eye(dim))
    raise PropagationError(
        f"A {cost.kind} cost on R^{cost.dim} cannot be carried over to R^{dim}"
    )


def contains(S: OTAmbiguitySet, Q: EmpiricalDistribution, tol: float = 1e-9) -> bool:
    """True when W_c(center, Q) <= radius + tol."""
    _require_same_dim(S, Q)
    value, _ = ot_discrepancy(S.center, Q, S.cost)
    return value <= S.radius + tol


def push_linear(S: OTAmbiguitySet, A: Any) -> OTAmbiguitySet:
    """
    Image of the set under x -> A x.

    Returns B_eps^{c o A^+}(A#P). The result is exact when A has full row
    rank and a proven superset otherwise.

    Raises:
        PropagationError: if the cost is not translation invariant and
            orthomonotone, or A has the wrong number of columns
    """
    if not (S.cost.translation_invariant and S.cost.orthomonotone_certified):
        raise PropagationError(
            f"Linear propagation needs a translation-invariant orthomonotone cost, got {S.cost.kind}"
        )
    A = as_matrix(A, "A")
    if A.shape[1] != S.dim:
        raise PropagationError(f"A has {A.shape[1]} columns, set lives in R^{S.dim}")

    cost = compose_linear_or_pairwise(S.cost, pinv(A))
    center = measures.pushforward(S.center, PointMap.linear(A))
    full_rank = is_full_row_rank(A)
    if not full_rank:
        logger.debug(f"push_linear: A ({A.shape[0]}x{A.shape[1]}) is row-rank deficient, result is a superset")
    return OTAmbiguitySet(center, S.radius, cost, S.exact and full_rank)


def _max_deviation(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    return float(np.max(np.abs(a - b))) / scale


def _inverse_cost(cost: TransportCost, f_inv: PointMap) -> TransportCost:
    # Affine inverses keep a closed-form cost for translation-invariant kinds
    if f_inv.is_affine and cost.translation_invariant:
        return compose_linear_or_pairwise(cost, f_inv.matrix)
    return MapComposedCost(cost, f_inv)


def _spot_check_cost_condition(
    S: OTAmbiguitySet,
    f: PointMap,
    f_inv: PointMap,
    rng: np.random.Generator,
) -> None:
    """Check c(g(x), g(y)) <= c(x, y) with g = f_inv o f on sampled atom pairs."""
    X = S.center.atoms
    n_pairs = min(COST_CONDITION_PAIRS, X.shape[0] ** 2)
    i = rng.integers(0, X.shape[0], n_pairs)
    j = rng.integers(0, X.shape[0], n_pairs)
    round_trip = f_inv(f(X))
    lhs = np.array([S.cost.evaluate(round_trip[a], round_trip[b]) for a, b in zip(i, j)])
    rhs = np.array([S.cost.evaluate(X[a], X[b]) for a, b in zip(i, j)])
    worst = float(np.max(lhs - rhs))
    if worst > INVERSE_TOL * max(1.0, float(np.max(rhs))):
        raise PropagationError(
            f"Cost condition fails on sampled atom pairs (excess {worst:.3g})"
        )


def push_nonlinear(
    S: OTAmbiguitySet,
    f: MapLike,
    f_inv: MapLike,
    mode: Union[PushMode, str],
    rng: Optional[np.random.Generator] = None,
) -> OTAmbiguitySet:
    """
    Image of the set under a nonlinear map with a supplied inverse.

    Args:
        S: Input set
        f: The map
        f_inv: Its inverse (bijective), left inverse (injective) or
            right inverse (surjective)
        mode: Which of the three cases applies
        rng: Generator for the surjective cost-condition spot check

    Returns:
        B_eps^{c o (f_inv x f_inv)}(f#P); exact only in the bijective case

    Raises:
        PropagationError: if the inverse check fails on the atoms, or the
            surjective cost condition fails on a sampled pair
    """
    mode = PushMode(mode)
    f = as_point_map(f, "f")
    f_inv = as_point_map(f_inv, "f_inv")

    X = S.center.atoms
    image = f(X)
    if mode in (PushMode.BIJECTIVE, PushMode.INJECTIVE):
        err = _max_deviation(X, f_inv(image))
        if err > INVERSE_TOL:
            raise PropagationError(f"f_inv(f(x)) != x on the atoms (error {err:.3g})")
    if mode in (PushMode.BIJECTIVE, PushMode.SURJECTIVE):
        err = _max_deviation(image, f(f_inv(image)))
        if err > INVERSE_TOL:
            raise PropagationError(f"f(f_inv(y)) != y on the image atoms (error {err:.3g})")
    if mode == PushMode.SURJECTIVE:
        _spot_check_cost_condition(S, f, f_inv, rng or np.random.default_rng(0))

    center = EmpiricalDistribution(image, S.center.weights)
    cost = _inverse_cost(S.cost, f_inv)
    return OTAmbiguitySet(center, S.radius, cost, S.exact and mode == PushMode.BIJECTIVE)


# Special transforms

def translate(S: OTAmbiguitySet, b: Any) -> OTAmbiguitySet:
    """Shift by b: same radius and cost, exact."""
    if not S.cost.translation_invariant:
        raise PropagationError("Translation needs a translation-invariant cost")
    b = as_vector(b, "b", S.dim)
    center = measures.pushforward(S.center, PointMap.translation(b))
    return OTAmbiguitySet(center, S.radius, S.cost, S.exact)


def scale(S: OTAmbiguitySet, alpha: float) -> OTAmbiguitySet:
    """Multiply by alpha: radius |alpha|^p eps for a cost homogeneous of degree p."""
    alpha = float(alpha)
    if alpha == 0.0:
        return OTAmbiguitySet(EmpiricalDistribution.dirac(np.zeros(S.dim)), 0.0, S.cost, S.exact)
    p = S.cost.homogeneity_degree
    if p is None or not S.cost.translation_invariant:
        raise PropagationError(f"Scaling needs a homogeneous translation-invariant cost, got {S.cost.kind}")
    center = measures.pushforward(S.center, PointMap.linear(alpha * np.eye(S.dim), name="scale"))
    return OTAmbiguitySet(center, abs(alpha) ** p * S.radius, S.cost, S.exact)


def rotate(S: OTAmbiguitySet, R: Any) -> OTAmbiguitySet:
    """Apply an orthogonal R; needs a cost of the form psi(||.||)."""
    R = as_matrix(R, "R", S.dim, S.dim)
    if np.max(np.abs(R.T @ R - np.eye(S.dim))) > PROJECTION_TOL:
        raise PropagationError("R is not orthogonal")
    if not (S.cost.translation_invariant and S.cost.is_isotropic):
        raise PropagationError("Rotation needs a translation-invariant isotropic cost")
    center = measures.pushforward(S.center, PointMap.linear(R, name="rotation"))
    return OTAmbiguitySet(center, S.radius, S.cost, S.exact)


def project(S: OTAmbiguitySet, Pi: Any) -> OTAmbiguitySet:
    """Orthogonal projection: superset with cost c o Pi."""
    Pi = as_matrix(Pi, "Pi", S.dim, S.dim)
    if np.max(np.abs(Pi - Pi.T)) > PROJECTION_TOL or np.max(np.abs(Pi @ Pi - Pi)) > PROJECTION_TOL:
        raise PropagationError("Pi must be symmetric and idempotent")
    if not S.cost.translation_invariant:
        raise PropagationError("Projection needs a translation-invariant cost")
    try:
        cost = compose_linear(S.cost, Pi) if isinstance(S.cost, QuadraticCost) \
            else MapComposedCost(S.cost, PointMap.linear(Pi, name="projection"))
    except CostError as e:
        raise PropagationError(str(e)) from e
    center = measures.pushforward(S.center, PointMap.linear(Pi, name="projection"))
    return OTAmbiguitySet(center, S.radius, cost, False)


def special_transform(S: OTAmbiguitySet, kind: Union[TransformKind, str], value: Any) -> OTAmbiguitySet:
    """Dispatch to translate / scale / rotate / project."""
    kind = TransformKind(kind)
    handlers = {
        TransformKind.TRANSLATE: translate,
        TransformKind.SCALE: scale,
        TransformKind.ROTATE: rotate,
        TransformKind.PROJECT: project,
    }
    return handlers[kind](S, value)


# Independent sums and products

def convolve_sets(
    S1: OTAmbiguitySet,
    S2: OTAmbiguitySet,
    atom_budget: Optional[int] = None,
) -> OTAmbiguitySet:
    """
    Ball containing the laws of x + y, x ~ Q1 in S1, y ~ Q2 in S2 independent.

    Radius (eps1^(1/p) + eps2^(1/p))^p with p the cost's triangle exponent.
    Exact only for the translation case (one side a Dirac with radius 0).
    """
    if S1.dim != S2.dim:
        raise PropagationError(f"Dimensions differ: {S1.dim} vs {S2.dim}")
    if not S1.cost.same_as(S2.cost):
        raise PropagationError("Convolution needs identical cost descriptors")
    p = S1.cost.triangle_exponent
    if p is None:
        raise PropagationError(f"Cost {S1.cost.kind} has no triangle exponent")

    center = measures.convolve(S1.center, S2.center, atom_budget=atom_budget)
    if S2.radius == 0.0:
        radius = S1.radius
    elif S1.radius == 0.0:
        radius = S2.radius
    else:
        radius = (S1.radius ** (1.0 / p) + S2.radius ** (1.0 / p)) ** p

    translation = (S2.radius == 0.0 and S2.center.is_dirac) or (S1.radius == 0.0 and S1.center.is_dirac)
    return OTAmbiguitySet(center, radius, S1.cost, S1.exact and S2.exact and translation)


def hadamard_radius(eps1: float, eps2: float, m_p: float, m_q: float) -> float:
    """(sqrt(eps1 eps2) + sqrt(eps1 M_Q) + sqrt(eps2 M_P))^2."""
    return (np.sqrt(eps1 * eps2) + np.sqrt(eps1 * m_q) + np.sqrt(eps2 * m_p)) ** 2


def hadamard_sets(
    S1: OTAmbiguitySet,
    S2: OTAmbiguitySet,
    atom_budget: Optional[int] = None,
) -> OTAmbiguitySet:
    """Ball containing the laws of x * y (element-wise) for independent members."""
    if S1.dim != S2.dim:
        raise PropagationError(f"Dimensions differ: {S1.dim} vs {S2.dim}")
    if not (S1.cost.is_unit_squared_euclidean and S2.cost.is_unit_squared_euclidean):
        raise PropagationError("Hadamard products are certified only for the unscaled ||.||^2 cost")

    center = measures.hadamard(S1.center, S2.center, atom_budget=atom_budget)
    radius = float(hadamard_radius(
        S1.radius, S2.radius,
        measures.second_moment(S1.center), measures.second_moment(S2.center),
    ))
    exact = S1.exact and S2.exact and S1.radius == 0.0 and S2.radius == 0.0
    return OTAmbiguitySet(center, radius, S1.cost, exact)


# Naive baselines

def push_center_only(S: OTAmbiguitySet, f: MapLike) -> OTAmbiguitySet:
    """
    B_eps^c(f#P): move the center and keep radius and cost.

    Generally neither a subset nor a superset of the true image.
    """
    center = measures.pushforward(S.center, f)
    return OTAmbiguitySet(center, S.radius, _cost_on(S.cost, center.dim), False)


def push_lipschitz(S: OTAmbiguitySet, A: Any) -> OTAmbiguitySet:
    """
    B_{sigma_max(A)^p eps}^c(A#P) for an isotropic cost homogeneous of degree p.
    """
    A = as_matrix(A, "A")
    p = S.cost.homogeneity_degree
    if p is None or not (S.cost.translation_invariant and S.cost.is_isotropic):
        raise PropagationError("Lipschitz propagation needs an isotropic homogeneous cost")
    center = measures.pushforward(S.center, PointMap.linear(A))
    radius = sigma_max(A) ** p * S.radius
    return OTAmbiguitySet(center, radius, _cost_on(S.cost, center.dim), False)


# Certified members

def sample_member(
    S: OTAmbiguitySet,
    rng: np.random.Generator,
    fraction: float = 1.0,
    split: bool = False,
    max_halvings: int = 50,
) -> EmpiricalDistribution:
    """
    Draw a distribution certified to lie in S.

    Center atoms are displaced in random directions. For homogeneous
    translation-invariant costs the displacement is scaled so that the
    coupling moving each atom onto its copy costs fraction * eps; ``split``
    replaces each atom by two displaced halves. For other costs a share
    theta of each atom's mass is moved instead. The exact OT discrepancy
    is then checked against fraction * eps.
    """
    if not 0.0 <= fraction <= 1.0:
        raise PropagationError(f"fraction must lie in [0, 1], got {fraction}")
    P = S.center
    budget = fraction * S.radius
    if budget == 0.0:
        return P

    X, w = P.atoms, P.weights
    p = S.cost.homogeneity_degree
    homogeneous = p is not None and S.cost.translation_invariant

    if homogeneous:
        copies = 2 if split else 1
        D = rng.standard_normal((copies, P.size, P.dim))
        unit = np.mean(
            [np.diag(S.cost.pairwise(X, X + D[k])) for k in range(copies)], axis=0
        ) @ w
        t = 1.0 if unit <= 0.0 else (budget / unit) ** (1.0 / p)

        def build(shrink: float) -> EmpiricalDistribution:
            atoms = np.vstack([X + shrink * t * D[k] for k in range(copies)])
            return EmpiricalDistribution(atoms, np.tile(w, copies) / copies)
    else:
        D = rng.standard_normal((P.size, P.dim))
        unit = float(np.diag(S.cost.pairwise(X, X + D)) @ w)
        theta = 1.0 if unit <= 0.0 else min(1.0, budget / unit)

        def build(shrink: float) -> EmpiricalDistribution:
            share = shrink * theta
            if share >= 1.0:
                return P.with_atoms(X + D)
            return EmpiricalDistribution(np.vstack([X, X + D]), np.concatenate([(1 - share) * w, share * w]))

    shrink = 1.0
    for _ in range(max_halvings):
        Q = build(shrink)
        value, _ = ot_discrepancy(P, Q, S.cost)
        if value <= budget * (1.0 + 1e-9) + 1e-12:
            return Q
        shrink *= 0.5
    raise PropagationError("Could not certify a perturbed member of the set")

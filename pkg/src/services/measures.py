"""
Elementary transforms of empirical distributions: pushforward,
convolution, Hadamard product, product measures, second moments.
"""

from typing import Callable, Optional, Sequence, Union

import numpy as np

from ..models.base import AtomBudgetExceededError, DistributionError
from ..models.distribution import EmpiricalDistribution, PointMap, as_point_map
from ..config.settings import get_settings
from ..config.logging_config import get_logger

logger = get_logger(__name__)


def _check_budget(n_atoms: int, atom_budget: Optional[int], operation: str) -> None:
    budget = atom_budget if atom_budget is not None else get_settings().atom_budget
    if n_atoms > budget:
        logger.warning(f"{operation}: {n_atoms} atoms over budget {budget}")
        raise AtomBudgetExceededError(
            f"{operation} would create {n_atoms} atoms, exceeding the budget of {budget}"
        )


def _check_same_dim(P: EmpiricalDistribution, Q: EmpiricalDistribution, operation: str) -> None:
    if P.dim != Q.dim:
        raise DistributionError(
            f"{operation} requires equal dimensions, got {P.dim} and {Q.dim}"
        )


def pushforward(
    P: EmpiricalDistribution,
    f: Union[PointMap, Callable[[np.ndarray], np.ndarray]],
) -> EmpiricalDistribution:
    """
    Pushforward f#P: atoms f(x_i), weights unchanged.

    Args:
        P: Distribution on R^n
        f: PointMap or a callable of a single point R^n -> R^m

    Returns:
        Distribution on R^m
    """
    fmap = as_point_map(f)
    if fmap.in_dim is not None and fmap.in_dim != P.dim:
        raise DistributionError(
            f"Map '{fmap.name}' has domain dimension {fmap.in_dim}, distribution has {P.dim}"
        )
    try:
        image = fmap(P.atoms)
    except DistributionError:
        raise
    except (ValueError, IndexError, TypeError) as e:
        raise DistributionError(f"Map '{fmap.name}' failed on the atoms: {e}") from e
    if image.ndim == 1:
        image = image.reshape(P.size, -1)
    return EmpiricalDistribution(image, P.weights)


def convolve(
    P: EmpiricalDistribution,
    Q: EmpiricalDistribution,
    atom_budget: Optional[int] = None,
) -> EmpiricalDistribution:
    """Law of x + y for independent x ~ P, y ~ Q (N*M atoms, i-major order)."""
    _check_same_dim(P, Q, "Convolution")
    _check_budget(P.size * Q.size, atom_budget, "Convolution")
    atoms = (P.atoms[:, None, :] + Q.atoms[None, :, :]).reshape(-1, P.dim)
    weights = np.outer(P.weights, Q.weights).ravel()
    return EmpiricalDistribution(atoms, weights)


def hadamard(
    P: EmpiricalDistribution,
    Q: EmpiricalDistribution,
    atom_budget: Optional[int] = None,
) -> EmpiricalDistribution:
    """Law of the element-wise product x * y for independent x ~ P, y ~ Q."""
    _check_same_dim(P, Q, "Hadamard product")
    _check_budget(P.size * Q.size, atom_budget, "Hadamard product")
    atoms = (P.atoms[:, None, :] * Q.atoms[None, :, :]).reshape(-1, P.dim)
    weights = np.outer(P.weights, Q.weights).ravel()
    return EmpiricalDistribution(atoms, weights)


def second_moment(P: EmpiricalDistribution) -> float:
    """M_P = sum_i w_i ||x_i||_2^2."""
    return float(P.weights @ np.einsum("ij,ij->i", P.atoms, P.atoms))


def product(
    factors: Sequence[EmpiricalDistribution],
    atom_budget: Optional[int] = None,
) -> EmpiricalDistribution:
    """
    Product measure P_1 x ... x P_k on the concatenated space.

    Atoms are all concatenations (first factor varies slowest), weights
    are products.
    """
    if not factors:
        raise DistributionError("Product of zero distributions is undefined")
    n_atoms = int(np.prod([F.size for F in factors], dtype=object))
    _check_budget(n_atoms, atom_budget, "Product measure")

    atoms = factors[0].atoms
    weights = factors[0].weights
    for F in factors[1:]:
        atoms = np.hstack([
            np.repeat(atoms, F.size, axis=0),
            np.tile(F.atoms, (atoms.shape[0], 1)),
        ])
        weights = np.outer(weights, F.weights).ravel()
    return EmpiricalDistribution(atoms, weights)


def product_iid(
    P: EmpiricalDistribution,
    t: int,
    atom_budget: Optional[int] = None,
) -> EmpiricalDistribution:
    """t-fold product P^{⊗t} on R^{rt}."""
    if t < 1:
        raise DistributionError(f"Product order must be a positive integer, got {t}")
    return product([P] * t, atom_budget=atom_budget)


def product_radius(radii: Sequence[float]) -> float:
    """
    Radius of the product ball for separable costs: if each factor lies in
    its ball of radius eps_i, the product lies in the ball of radius sum eps_i.
    """
    radii = [float(r) for r in radii]
    if any(r < 0 for r in radii):
        raise DistributionError("Radii must be nonnegative")
    return float(sum(radii))


def product_iid_radius(eps: float, t: int) -> float:
    """Radius rule for the i.i.d. product: t * eps."""
    if t < 1:
        raise DistributionError(f"Product order must be a positive integer, got {t}")
    return product_radius([eps] * t)

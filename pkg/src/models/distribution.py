"""
Finitely supported probability distributions and point maps.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

from .base import DistributionError, as_matrix, as_vector, frozen
from ..config.settings import get_settings


def _atoms_matrix(atoms: Any) -> np.ndarray:
    """Coerce atoms to an (N, n) matrix; a flat sequence means N atoms in R^1."""
    arr = np.array(atoms, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DistributionError(f"Atoms must form an (N, n) array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """
    Finitely supported probability distribution sum_i w_i delta_{x_i}.

    Atoms are the rows of an (N, n) matrix. Coincident atoms are never
    merged implicitly; use ``coalesce`` for that. Instances are immutable.
    """

    atoms: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        atoms = _atoms_matrix(self.atoms)
        if atoms.shape[0] == 0:
            raise DistributionError("A distribution needs at least one atom")
        if atoms.shape[1] == 0:
            raise DistributionError("Atoms must have positive dimension")
        if not np.all(np.isfinite(atoms)):
            raise DistributionError("Atoms contain non-finite coordinates")

        if self.weights is None:
            weights = np.full(atoms.shape[0], 1.0 / atoms.shape[0])
        else:
            weights = np.atleast_1d(np.array(self.weights, dtype=np.float64))
            if weights.ndim != 1 or weights.shape[0] != atoms.shape[0]:
                raise DistributionError(
                    f"Expected {atoms.shape[0]} weights, got shape {weights.shape}"
                )
            if not np.all(weights > 0):
                raise DistributionError("Weights must be strictly positive")
            deviation = abs(float(weights.sum()) - 1.0)
            if deviation > get_settings().weight_tolerance:
                raise DistributionError(
                    f"Weights sum to {weights.sum():.15g}, deviation {deviation:.3g} from 1"
                )

        object.__setattr__(self, "atoms", frozen(atoms))
        object.__setattr__(self, "weights", frozen(weights))

    # Constructors

    @classmethod
    def uniform(cls, atoms: Any) -> "EmpiricalDistribution":
        """Uniform distribution on the given atoms (duplicates kept)."""
        return cls(atoms)

    @classmethod
    def dirac(cls, point: Any) -> "EmpiricalDistribution":
        """Dirac distribution at a single point."""
        return cls(as_vector(point, "point").reshape(1, -1), np.ones(1))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EmpiricalDistribution":
        """Build from ``{"dim": n, "atoms": [[...]], "weights": [...]}``; weights optional."""
        if "atoms" not in data:
            raise DistributionError("Distribution JSON requires an 'atoms' field")
        atoms = _atoms_matrix(data["atoms"])
        dim = data.get("dim")
        if dim is not None:
            if atoms.shape[1] != int(dim) and atoms.size == int(dim) and atoms.shape[1] == 1:
                atoms = atoms.reshape(1, -1)
            if atoms.shape[1] != int(dim):
                raise DistributionError(
                    f"Declared dim {dim} does not match atom dimension {atoms.shape[1]}"
                )
        return cls(atoms, data.get("weights"))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dim": self.dim,
            "atoms": self.atoms.tolist(),
            "weights": self.weights.tolist(),
        }

    # Basic properties

    @property
    def dim(self) -> int:
        return int(self.atoms.shape[1])

    @property
    def size(self) -> int:
        return int(self.atoms.shape[0])

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return f"EmpiricalDistribution(size={self.size}, dim={self.dim})"

    @property
    def is_dirac(self) -> bool:
        return self.size == 1

    @property
    def is_uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.size, rtol=0.0, atol=1e-15))

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def covariance(self) -> np.ndarray:
        centered = self.atoms - self.mean()
        return (centered * self.weights[:, None]).T @ centered

    def with_atoms(self, atoms: Any) -> "EmpiricalDistribution":
        """Same weights, new atoms (one row per existing atom)."""
        atoms = _atoms_matrix(atoms)
        if atoms.shape[0] != self.size:
            raise DistributionError(
                f"Expected {self.size} atoms, got {atoms.shape[0]}"
            )
        return EmpiricalDistribution(atoms, self.weights)

    def coalesce(self, tol: float = 0.0) -> "EmpiricalDistribution":
        """
        Merge atoms lying within ``tol`` (Euclidean) of an earlier atom,
        summing their weights. The first atom of each group is kept.
        """
        if tol < 0:
            raise DistributionError("Coalescing tolerance must be nonnegative")
        tree = cKDTree(self.atoms)
        owner = np.full(self.size, -1, dtype=int)
        for i in range(self.size):
            if owner[i] >= 0:
                continue
            for j in tree.query_ball_point(self.atoms[i], r=tol):
                if owner[j] < 0:
                    owner[j] = i
        keep = np.unique(owner)
        weights = np.array([self.weights[owner == k].sum() for k in keep])
        return EmpiricalDistribution(self.atoms[keep], weights / weights.sum())

    def same_as(self, other: "EmpiricalDistribution", atol: float = 0.0) -> bool:
        """Atom-by-atom equality (order matters)."""
        return (
            self.atoms.shape == other.atoms.shape
            and np.allclose(self.atoms, other.atoms, rtol=0.0, atol=atol)
            and np.allclose(self.weights, other.weights, rtol=0.0, atol=max(atol, 1e-15))
        )


BatchFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class PointMap:
    """
    A map R^n -> R^m applied row-wise to atom matrices.

    ``func`` takes an (N, n) batch and returns an (N, m) batch. Linear and
    affine maps keep their matrix so costs can be composed in closed form.
    """

    func: BatchFunction
    in_dim: Optional[int] = None
    out_dim: Optional[int] = None
    name: str = "map"
    matrix: Optional[np.ndarray] = field(default=None, repr=False)
    offset: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def pointwise(cls, f: Callable[[np.ndarray], Any], in_dim: Optional[int] = None,
                  out_dim: Optional[int] = None, name: str = "map") -> "PointMap":
        """Wrap a function of a single point (1-D array)."""
        def batch(X: np.ndarray) -> np.ndarray:
            rows = [np.atleast_1d(np.asarray(f(x), dtype=np.float64)) for x in X]
            return np.vstack(rows)
        return cls(batch, in_dim, out_dim, name)

    @classmethod
    def linear(cls, A: Any, name: str = "linear") -> "PointMap":
        A = as_matrix(A, "A")
        return cls(lambda X: X @ A.T, A.shape[1], A.shape[0], name, matrix=frozen(A))

    @classmethod
    def affine(cls, A: Any, b: Any, name: str = "affine") -> "PointMap":
        A = as_matrix(A, "A")
        b = as_vector(b, "b", A.shape[0])
        return cls(lambda X: X @ A.T + b, A.shape[1], A.shape[0], name,
                   matrix=frozen(A), offset=frozen(b))

    @classmethod
    def translation(cls, b: Any) -> "PointMap":
        b = as_vector(b, "b")
        return cls.affine(np.eye(b.shape[0]), b, name="translation")

    @classmethod
    def identity(cls, dim: int) -> "PointMap":
        return cls.linear(np.eye(dim), name="identity")

    @property
    def is_linear(self) -> bool:
        return self.matrix is not None and self.offset is None

    @property
    def is_affine(self) -> bool:
        return self.matrix is not None

    def __call__(self, X: Union[np.ndarray, Sequence[float]]) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim <= 1
        batch = X.reshape(1, -1) if single else X
        if self.in_dim is not None and batch.shape[1] != self.in_dim:
            raise DistributionError(
                f"Map '{self.name}' expects dimension {self.in_dim}, got {batch.shape[1]}"
            )
        out = np.asarray(self.func(batch), dtype=np.float64)
        if out.ndim == 1:
            out = out.reshape(batch.shape[0], -1)
        if out.shape[0] != batch.shape[0]:
            raise DistributionError(
                f"Map '{self.name}' returned {out.shape[0]} points for {batch.shape[0]} inputs"
            )
        if self.out_dim is not None and out.shape[1] != self.out_dim:
            raise DistributionError(
                f"Map '{self.name}' should return dimension {self.out_dim}, got {out.shape[1]}"
            )
        return out[0] if single else out

    def then(self, other: "PointMap") -> "PointMap":
        """The composition other ∘ self."""
        name = f"{other.name}∘{self.name}"
        if self.is_affine and other.is_affine:
            A = other.matrix @ self.matrix
            if self.offset is None and other.offset is None:
                return PointMap.linear(A, name=name)
            b = np.zeros(A.shape[0])
            if self.offset is not None:
                b = b + other.matrix @ self.offset
            if other.offset is not None:
                b = b + other.offset
            return PointMap.affine(A, b, name=name)
        return PointMap(lambda X: other(self(X)), self.in_dim, other.out_dim, name)


def as_point_map(f: Union[PointMap, Callable[[np.ndarray], Any]], name: str = "map") -> PointMap:
    """Accept either a PointMap or a plain single-point callable."""
    if isinstance(f, PointMap):
        return f
    if callable(f):
        return PointMap.pointwise(f, name=getattr(f, "__name__", name))
    raise DistributionError(f"Expected a point map, got {type(f).__name__}")

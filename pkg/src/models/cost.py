"""
Transportation cost descriptors.

Three kinds are supported:
- QuadraticCost: c(d) = d^T W d with W symmetric PSD
- PowerCost: c(d) = scale * ||d||_2^p
- MapComposedCost: c'(x, y) = base(phi(x) - phi(y)) for a point map phi

Each kind carries the structural flags the propagation rules need
(translation invariance, orthomonotonicity, triangle exponent, homogeneity).
"""

import json
from abc import ABC, abstractmethod
from typing import Any, Dict, Optional

import numpy as np
from scipy.spatial.distance import cdist

from .base import CostError, as_matrix, frozen
from .distribution import PointMap

SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-10


class TransportCost(ABC):
    """Base class of all cost descriptors. Instances are immutable values."""

    kind: str = "abstract"

    @property
    @abstractmethod
    def dim(self) -> Optional[int]:
        """Dimension of the space the cost acts on (None = any)."""

    @abstractmethod
    def pairwise(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Cost matrix C[i, j] = c(X[i], Y[j]) for point batches X, Y."""

    @abstractmethod
    def scaled(self, k: float) -> "TransportCost":
        """The cost k * c for k > 0."""

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        """JSON descriptor."""

    @property
    def triangle_exponent(self) -> Optional[float]:
        return None

    @property
    def translation_invariant(self) -> bool:
        return False

    @property
    def orthomonotone_certified(self) -> bool:
        return False

    @property
    def positive_definite(self) -> bool:
        return False

    @property
    def homogeneity_degree(self) -> Optional[float]:
        return None

    @property
    def is_unit_squared_euclidean(self) -> bool:
        """True for the unscaled ||.||_2^2 (either kind)."""
        return False

    @property
    def is_isotropic(self) -> bool:
        """True when c(d) depends on ||d||_2 only."""
        return False

    def evaluate(self, x: Any, y: Any) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        return float(self.pairwise(x.reshape(1, -1), y.reshape(1, -1))[0, 0])

    def descriptor(self) -> str:
        """Canonical JSON text; equal descriptors mean identical costs."""
        return json.dumps(self.to_dict(), sort_keys=True)

    def same_as(self, other: "TransportCost") -> bool:
        return self.descriptor() == other.descriptor()

    def _check_batches(self, X: np.ndarray, Y: np.ndarray):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        if X.shape[1] != Y.shape[1]:
            raise CostError(f"Point dimensions differ: {X.shape[1]} vs {Y.shape[1]}")
        if self.dim is not None and X.shape[1] != self.dim:
            raise CostError(f"Cost acts on R^{self.dim}, points live in R^{X.shape[1]}")
        return X, Y

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.descriptor()})"

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> "TransportCost":
        """Parse a JSON descriptor."""
        kind = data.get("kind")
        if kind == "quadratic":
            return QuadraticCost(data["W"])
        if kind == "identity_quadratic":
            return QuadraticCost.identity(int(data["dim"]))
        if kind == "power":
            return PowerCost(float(data["p"]), float(data.get("scale", 1.0)), data.get("dim"))
        if kind == "map_composed":
            if data.get("matrix") is None:
                raise CostError("Only linear/affine pre-maps can be rebuilt from JSON")
            base = TransportCost.from_dict(data["base"])
            if data.get("offset") is not None:
                pre_map = PointMap.affine(data["matrix"], data["offset"])
            else:
                pre_map = PointMap.linear(data["matrix"])
            return MapComposedCost(base, pre_map)
        raise CostError(f"Unknown cost kind: {kind!r}")


class QuadraticCost(TransportCost):
    """c(d) = d^T W d. W is symmetrised and PSD-clamped at construction."""

    kind = "quadratic"

    def __init__(self, W: Any):
        W = as_matrix(W, "W")
        if W.shape[0] != W.shape[1]:
            raise CostError(f"W must be square, got {W.shape}")
        scale = max(1.0, float(np.max(np.abs(W))))
        if np.max(np.abs(W - W.T)) > SYMMETRY_TOL * scale:
            raise CostError("W must be symmetric")
        W = 0.5 * (W + W.T)

        eigvals, eigvecs = np.linalg.eigh(W)
        if eigvals.min() < -PSD_TOL * scale:
            raise CostError(f"W must be positive semidefinite (min eigenvalue {eigvals.min():.3g})")
        clamped = np.clip(eigvals, 0.0, None)
        if np.any(eigvals < 0):
            W = (eigvecs * clamped) @ eigvecs.T
            W = 0.5 * (W + W.T)

        self._W = frozen(W)
        # Factor L with W = L^T L so that c(x - y) = ||L x - L y||^2
        self._L = frozen(np.sqrt(clamped)[:, None] * eigvecs.T)
        self._rank_tol = PSD_TOL * scale
        self._min_eig = float(clamped.min())

    @classmethod
    def identity(cls, dim: int) -> "QuadraticCost":
        return cls(np.eye(dim))

    @property
    def W(self) -> np.ndarray:
        return self._W

    @property
    def dim(self) -> int:
        return int(self._W.shape[0])

    def evaluate(self, x: Any, y: Any) -> float:
        X, Y = self._check_batches(x, y)
        d = X[0] - Y[0]
        return max(0.0, float(d @ self._W @ d))

    def pairwise(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        X, Y = self._check_batches(X, Y)
        return cdist(X @ self._L.T, Y @ self._L.T, "sqeuclidean")

    def scaled(self, k: float) -> "QuadraticCost":
        if k <= 0:
            raise CostError("Cost scaling factor must be positive")
        return QuadraticCost(k * self._W)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "W": self._W.tolist()}

    @property
    def triangle_exponent(self) -> float:
        return 2.0

    @property
    def translation_invariant(self) -> bool:
        return True

    @property
    def orthomonotone_certified(self) -> bool:
        return True

    @property
    def positive_definite(self) -> bool:
        return self._min_eig > self._rank_tol

    @property
    def homogeneity_degree(self) -> float:
        return 2.0

    @property
    def is_unit_squared_euclidean(self) -> bool:
        return bool(np.array_equal(self._W, np.eye(self.dim)))

    @property
    def is_isotropic(self) -> bool:
        return bool(np.allclose(self._W, self._W[0, 0] * np.eye(self.dim), rtol=0.0, atol=1e-14))


class PowerCost(TransportCost):
    """c(d) = scale * ||d||_2^p; p = 0 means scale * 1[d != 0]."""

    kind = "power"

    def __init__(self, p: float, scale: float = 1.0, dim: Optional[int] = None):
        if p < 0:
            raise CostError(f"Power must be nonnegative, got {p}")
        if scale <= 0:
            raise CostError(f"Scale must be positive, got {scale}")
        self._p = float(p)
        self._scale = float(scale)
        self._dim = None if dim is None else int(dim)

    @property
    def p(self) -> float:
        return self._p

    @property
    def scale(self) -> float:
        return self._scale

    @property
    def dim(self) -> Optional[int]:
        return self._dim

    def pairwise(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        X, Y = self._check_batches(X, Y)
        dist = cdist(X, Y, "euclidean")
        if self._p == 0:
            return self._scale * (dist > 0).astype(np.float64)
        if self._p == 2:
            return self._scale * cdist(X, Y, "sqeuclidean")
        return self._scale * dist ** self._p

    def scaled(self, k: float) -> "PowerCost":
        if k <= 0:
            raise CostError("Cost scaling factor must be positive")
        return PowerCost(self._p, k * self._scale, self._dim)

    def with_dim(self, dim: Optional[int]) -> "PowerCost":
        return PowerCost(self._p, self._scale, dim)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "p": self._p, "scale": self._scale, "dim": self._dim}

    @property
    def triangle_exponent(self) -> Optional[float]:
        return self._p if self._p >= 1 else None

    @property
    def translation_invariant(self) -> bool:
        return True

    @property
    def orthomonotone_certified(self) -> bool:
        return True

    @property
    def positive_definite(self) -> bool:
        return self._p > 0

    @property
    def homogeneity_degree(self) -> Optional[float]:
        return self._p if self._p > 0 else None

    @property
    def is_unit_squared_euclidean(self) -> bool:
        return self._p == 2 and self._scale == 1.0

    @property
    def is_isotropic(self) -> bool:
        return True


class MapComposedCost(TransportCost):
    """Pairwise cost c'(x, y) = base(phi(x) - phi(y))."""

    kind = "map_composed"

    def __init__(self, base: TransportCost, pre_map: PointMap):
        if base.dim is not None and pre_map.out_dim is not None and base.dim != pre_map.out_dim:
            raise CostError(
                f"Pre-map lands in R^{pre_map.out_dim}, base cost acts on R^{base.dim}"
            )
        self._base = base
        self._pre_map = pre_map

    @property
    def base(self) -> TransportCost:
        return self._base

    @property
    def pre_map(self) -> PointMap:
        return self._pre_map

    @property
    def dim(self) -> Optional[int]:
        return self._pre_map.in_dim

    def pairwise(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        X, Y = self._check_batches(X, Y)
        return self._base.pairwise(self._pre_map(X), self._pre_map(Y))

    def scaled(self, k: float) -> "MapComposedCost":
        return MapComposedCost(self._base.scaled(k), self._pre_map)

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "kind": self.kind,
            "base": self._base.to_dict(),
            "pre_map": self._pre_map.name,
            "matrix": None,
        }
        if self._pre_map.is_affine:
            data["matrix"] = self._pre_map.matrix.tolist()
            if self._pre_map.offset is not None:
                data["offset"] = self._pre_map.offset.tolist()
        return data

    @property
    def translation_invariant(self) -> bool:
        # phi(x) - phi(y) depends on x - y only for affine phi
        return self._base.translation_invariant and self._pre_map.is_affine

    @property
    def homogeneity_degree(self) -> Optional[float]:
        if self._pre_map.is_linear:
            return self._base.homogeneity_degree
        return None


def squared_euclidean(dim: Optional[int] = None) -> TransportCost:
    """The unscaled ||.||_2^2 cost."""
    if dim is None:
        return PowerCost(2.0, 1.0)
    return QuadraticCost.identity(dim)


def cost_from_spec(data: Any) -> TransportCost:
    """Accept a descriptor dict or an existing TransportCost."""
    if isinstance(data, TransportCost):
        return data
    if isinstance(data, dict):
        return TransportCost.from_dict(data)
    raise CostError(f"Cannot interpret {type(data).__name__} as a transportation cost")


__all__ = [
    "TransportCost",
    "QuadraticCost",
    "PowerCost",
    "MapComposedCost",
    "squared_euclidean",
    "cost_from_spec",
]

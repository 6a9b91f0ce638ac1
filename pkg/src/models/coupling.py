"""
Transport plans (couplings) between two empirical distributions.
"""

from dataclasses import dataclass
from typing import Any, Dict

import numpy as np
import pandas as pd

from .base import DistributionError, frozen
from .distribution import EmpiricalDistribution


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """
    Coupling gamma between P (rows) and Q (columns).

    ``matrix[i, j]`` is the mass moved from atom i of P to atom j of Q.
    """

    source: EmpiricalDistribution
    target: EmpiricalDistribution
    matrix: np.ndarray

    def __post_init__(self):
        gamma = np.asarray(self.matrix, dtype=np.float64)
        expected = (self.source.size, self.target.size)
        if gamma.shape != expected:
            raise DistributionError(f"Plan must have shape {expected}, got {gamma.shape}")
        if gamma.min() < -1e-12:
            raise DistributionError("Plan contains negative mass")
        object.__setattr__(self, "matrix", frozen(np.clip(gamma, 0.0, None)))

    def row_residual(self) -> float:
        return float(np.max(np.abs(self.matrix.sum(axis=1) - self.source.weights)))

    def column_residual(self) -> float:
        return float(np.max(np.abs(self.matrix.sum(axis=0) - self.target.weights)))

    def marginal_residual(self) -> float:
        """Largest deviation of either marginal from the prescribed weights."""
        return max(self.row_residual(), self.column_residual())

    def total_cost(self, cost_matrix: np.ndarray) -> float:
        return float(np.sum(self.matrix * cost_matrix))

    def support(self) -> np.ndarray:
        """Index pairs (i, j) carrying positive mass."""
        return np.argwhere(self.matrix > 0)

    def to_frame(self) -> pd.DataFrame:
        """Coupling matrix with labelled rows (source atoms) and columns (target atoms)."""
        return pd.DataFrame(
            self.matrix,
            index=pd.Index([f"p{i}" for i in range(self.source.size)], name="source_atom"),
            columns=[f"q{j}" for j in range(self.target.size)],
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": self.source.size,
            "columns": self.target.size,
            "matrix": self.matrix.tolist(),
        }

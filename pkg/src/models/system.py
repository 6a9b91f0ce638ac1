"""
Discrete-time LTI systems x_{t+1} = A x_t + B u_t + D w_t and their
stacked horizon operators.
"""

from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from .base import OTPropError, as_matrix, as_vector, frozen


class DynamicsError(OTPropError):
    """Inconsistent system dimensions or violated spectral/rank preconditions."""
    pass


def _sequence(values: Any, name: str, T: int, width: int) -> np.ndarray:
    """Coerce a chronological sequence to a (T, width) array; None means zeros."""
    if values is None:
        return np.zeros((T, width))
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 1 and width == 1:
        arr = arr.reshape(-1, 1)
    if arr.shape != (T, width):
        raise DynamicsError(f"{name} must have shape ({T}, {width}), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class LTISystem:
    """
    System matrices A (n x n), B (n x m) and D (n x r).

    D defaults to the identity (noise enters every state directly).
    """

    A: np.ndarray
    B: np.ndarray
    D: Optional[np.ndarray] = None

    def __post_init__(self):
        try:
            A = as_matrix(self.A, "A")
            B = as_matrix(self.B, "B")
            D = np.eye(A.shape[0]) if self.D is None else as_matrix(self.D, "D")
        except ValueError as e:
            raise DynamicsError(str(e)) from e
        n = A.shape[0]
        if A.shape != (n, n):
            raise DynamicsError(f"A must be square, got {A.shape}")
        # A 1-D B for a scalar system arrives as a row
        if B.shape[0] != n and B.shape[1] == n and B.shape[0] == 1:
            B = B.T
        if D.shape[0] != n and D.shape[1] == n and D.shape[0] == 1:
            D = D.T
        if B.shape[0] != n:
            raise DynamicsError(f"B must have {n} rows, got {B.shape[0]}")
        if D.shape[0] != n:
            raise DynamicsError(f"D must have {n} rows, got {D.shape[0]}")
        object.__setattr__(self, "A", frozen(A))
        object.__setattr__(self, "B", frozen(B))
        object.__setattr__(self, "D", frozen(D))

    @property
    def n(self) -> int:
        return int(self.A.shape[0])

    @property
    def m(self) -> int:
        return int(self.B.shape[1])

    @property
    def r(self) -> int:
        return int(self.D.shape[1])

    def simulate(self, x0: Any, u_seq: Any = None, w_seq: Any = None,
                 horizon: Optional[int] = None) -> np.ndarray:
        """
        Roll the system forward.

        Args:
            x0: Initial state
            u_seq: Inputs u_0..u_{T-1}, shape (T, m); None means zero input
            w_seq: Noise w_0..w_{T-1}, shape (T, r); None means no noise
            horizon: T, required when both sequences are None

        Returns:
            States x_0..x_T as a (T+1, n) array
        """
        x = as_vector(x0, "x0", self.n)
        if horizon is None:
            for seq in (u_seq, w_seq):
                if seq is not None:
                    horizon = len(seq)
                    break
        if horizon is None:
            raise DynamicsError("Horizon is undetermined: pass a sequence or horizon")
        u = _sequence(u_seq, "u_seq", horizon, self.m)
        w = _sequence(w_seq, "w_seq", horizon, self.r)

        states = np.empty((horizon + 1, self.n))
        states[0] = x
        for t in range(horizon):
            states[t + 1] = self.A @ states[t] + self.B @ u[t] + self.D @ w[t]
        return states

    def to_dict(self) -> Dict[str, Any]:
        return {"A": self.A.tolist(), "B": self.B.tolist(), "D": self.D.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LTISystem":
        if "A" not in data or "B" not in data:
            raise DynamicsError("System JSON requires 'A' and 'B'")
        return cls(data["A"], data["B"], data.get("D"))


@dataclass(frozen=True, eq=False)
class StackedOperators:
    """
    Horizon-T operators with x_T = A^T x_0 + B_stack u + D_stack w.

    Column blocks are ordered newest first: B_stack = [B, AB, ..., A^{T-1}B]
    acts on u = [u_{T-1}; ...; u_0].
    """

    A_pow: np.ndarray
    B_stack: np.ndarray
    D_stack: np.ndarray
    horizon: int

    def terminal_state(self, x0: Any, u_stacked: Any = None, w_stacked: Any = None) -> np.ndarray:
        x = self.A_pow @ as_vector(x0, "x0", self.A_pow.shape[1])
        if u_stacked is not None:
            x = x + self.B_stack @ as_vector(u_stacked, "u", self.B_stack.shape[1])
        if w_stacked is not None:
            x = x + self.D_stack @ as_vector(w_stacked, "w", self.D_stack.shape[1])
        return x

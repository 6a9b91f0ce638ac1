"""
OT ambiguity sets B_eps^c(P).
"""

from dataclasses import dataclass, replace
from typing import Any, Dict

from .base import CostError, DistributionError, OTPropError
from .cost import QuadraticCost, TransportCost, cost_from_spec
from .distribution import EmpiricalDistribution


@dataclass(frozen=True, eq=False)
class OTAmbiguitySet:
    """
    All distributions within OT budget ``radius`` of ``center`` under ``cost``.

    ``exact`` is True when the set is the exact image of its inputs under
    the propagation calculus and False when it is a proven superset.
    """

    center: EmpiricalDistribution
    radius: float
    cost: TransportCost
    exact: bool = True

    def __post_init__(self):
        radius = float(self.radius)
        if not radius >= 0.0:
            raise OTPropError(f"Radius must be nonnegative, got {self.radius}")
        if self.cost.dim is not None and self.cost.dim != self.center.dim:
            raise CostError(
                f"Cost acts on R^{self.cost.dim}, center lives in R^{self.center.dim}"
            )
        object.__setattr__(self, "radius", radius)
        object.__setattr__(self, "exact", bool(self.exact))

    @property
    def dim(self) -> int:
        return self.center.dim

    def with_radius(self, radius: float) -> "OTAmbiguitySet":
        return replace(self, radius=radius)

    def as_superset(self) -> "OTAmbiguitySet":
        """Same ball, marked as an over-approximation."""
        return replace(self, exact=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "center": self.center.to_dict(),
            "radius": self.radius,
            "cost": self.cost.to_dict(),
            "exact": self.exact,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "OTAmbiguitySet":
        """
        Parse ``{"center": ..., "radius": eps, "cost": ..., "exact": bool}``.

        The cost defaults to the squared Euclidean norm on the center space.
        """
        for key in ("center", "radius"):
            if key not in data:
                raise DistributionError(f"Ambiguity set JSON requires a '{key}' field")
        center = EmpiricalDistribution.from_dict(data["center"])
        if data.get("cost") is None:
            cost = QuadraticCost.identity(center.dim)
        else:
            cost = cost_from_spec(data["cost"])
        return cls(center, float(data["radius"]), cost, bool(data.get("exact", True)))

    def __repr__(self) -> str:
        return (
            f"OTAmbiguitySet(radius={self.radius:.6g}, cost={self.cost.kind}, "
            f"center={self.center!r}, exact={self.exact})"
        )

"""Value types for otprop."""

from .base import OTPropError, DistributionError, AtomBudgetExceededError, CostError
from .distribution import EmpiricalDistribution, PointMap
from .cost import TransportCost, QuadraticCost, PowerCost, MapComposedCost
from .coupling import TransportPlan
from .ambiguity_set import OTAmbiguitySet
from .system import LTISystem, StackedOperators, DynamicsError
from .planning import (
    PolyhedralTarget,
    PlanStatus,
    PlanResult,
    Certificate,
    ValidationReport,
    WorstCaseCVaR,
)

__all__ = [
    "OTPropError",
    "DistributionError",
    "AtomBudgetExceededError",
    "CostError",
    "EmpiricalDistribution",
    "PointMap",
    "TransportCost",
    "QuadraticCost",
    "PowerCost",
    "MapComposedCost",
    "TransportPlan",
    "OTAmbiguitySet",
    "LTISystem",
    "StackedOperators",
    "DynamicsError",
    "PolyhedralTarget",
    "PlanStatus",
    "PlanResult",
    "Certificate",
    "ValidationReport",
    "WorstCaseCVaR",
]

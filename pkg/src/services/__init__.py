"""Services module for otprop."""

from .transport import TransportError, NumericalFailureError, ot_discrepancy, pinv
from .ambiguity import PropagationError, contains, push_linear, push_nonlinear
from .drcvar import (
    PlanningError,
    InfeasiblePlanError,
    DRTrajectoryPlanner,
    cvar_empirical,
    worst_case_cvar,
    plan_trajectory,
    validate_plan,
)
from .scenario_runner import ScenarioError, ScenarioRunner

__all__ = [
    "TransportError",
    "NumericalFailureError",
    "ot_discrepancy",
    "pinv",
    "PropagationError",
    "contains",
    "push_linear",
    "push_nonlinear",
    "PlanningError",
    "InfeasiblePlanError",
    "DRTrajectoryPlanner",
    "cvar_empirical",
    "worst_case_cvar",
    "plan_trajectory",
    "validate_plan",
    "ScenarioError",
    "ScenarioRunner",
]

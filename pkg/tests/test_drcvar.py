"""
Tests for CVaR, worst-case CVaR over OT balls and the DR trajectory planner.
"""

import logging

import numpy as np
import pytest

from src.models.ambiguity_set import OTAmbiguitySet
from src.models.base import OTPropError
from src.models.cost import PowerCost, QuadraticCost
from src.models.distribution import EmpiricalDistribution
from src.models.planning import PlanStatus, PolyhedralTarget
from src.models.system import LTISystem
from src.services.ambiguity import sample_member
from src.services.drcvar import (
    DRTrajectoryPlanner,
    PlanningError,
    cvar_empirical,
    cvar_with_var,
    plan_trajectory,
    validate_plan,
    worst_case_cvar,
)

SWEEP_EPS = [0.0, 0.1, 0.3]


def _planner(system, samples, target, mode="exact"):
    return DRTrajectoryPlanner(system, np.zeros(2), samples, target, gamma=0.1, mode=mode)


class TestPolyhedralTarget:
    """Tests for the target polyhedron."""

    def test_box(self, box_target):
        """Test the box is written as a x + b <= 0."""
        assert box_target.rows == 4
        assert box_target.contains([1.5, 1.5])
        assert not box_target.contains([0.0, 1.5])
        assert box_target.slack([1.5, 1.5]) == pytest.approx(-0.5)

    def test_from_dict(self):
        """Test both JSON forms."""
        box = PolyhedralTarget.from_dict({"box": {"lower": [0.0], "upper": [1.0]}})
        assert box.slack([2.0]) == pytest.approx(1.0)
        half = PolyhedralTarget.from_dict({"a": [[1.0, 0.0]], "b": [-1.0]})
        assert half.dim == 2

    def test_invalid(self):
        """Test degenerate targets are rejected."""
        with pytest.raises(OTPropError):
            PolyhedralTarget([[0.0, 0.0]], [1.0])
        with pytest.raises(OTPropError):
            PolyhedralTarget.box([1.0], [0.0])
        with pytest.raises(OTPropError):
            PolyhedralTarget.from_dict({"a": [[1.0]]})


class TestEmpiricalCVaR:
    """Tests for the sorted-tail CVaR."""

    def test_uniform_tail(self):
        """Test the top 20% of 1..10 averages to 9.5."""
        assert cvar_empirical(np.arange(1.0, 11.0), gamma=0.2) == pytest.approx(9.5)

    def test_weighted_fractional_atom(self):
        """Test a tail that splits an atom."""
        assert cvar_empirical([0.0, 1.0], [0.5, 0.5], gamma=0.75) == pytest.approx(2.0 / 3.0)

    def test_gamma_one_is_mean(self, rng):
        """Test gamma = 1 gives the weighted mean."""
        v = rng.standard_normal(7)
        assert cvar_empirical(v, gamma=1.0) == pytest.approx(v.mean())

    def test_var_is_tail_threshold(self):
        """Test the VaR is the atom where the tail ends."""
        _, var = cvar_with_var(np.arange(1.0, 11.0), gamma=0.2)
        assert var == pytest.approx(9.0)

    def test_matches_variational_form(self, rng):
        """Test CVaR = min_tau tau + E[(v - tau)_+] / gamma."""
        v = rng.standard_normal(20)
        w = rng.uniform(0.5, 1.5, 20)
        w /= w.sum()
        taus = np.linspace(-4.0, 4.0, 20001)
        variational = min(t + w @ np.maximum(v - t, 0.0) / 0.3 for t in np.concatenate([taus, v]))
        assert cvar_empirical(v, w, gamma=0.3) == pytest.approx(variational, abs=1e-9)

    def test_invalid_inputs(self):
        """Test gamma range, empty samples and bad weights."""
        with pytest.raises(PlanningError):
            cvar_empirical([1.0], gamma=0.0)
        with pytest.raises(PlanningError):
            cvar_empirical([], gamma=0.5)
        with pytest.raises(PlanningError):
            cvar_empirical([1.0, 2.0], [0.5, 0.6], gamma=0.5)


class TestWorstCaseCVaR:
    """Tests for the dual worst-case CVaR."""

    def test_single_atom_closed_form(self, rng):
        """Test a^T c + b + sqrt(alpha eps / gamma) for one atom and one row."""
        for _ in range(50):
            M = rng.standard_normal((2, 2))
            W = M @ M.T + 0.5 * np.eye(2)
            c = rng.standard_normal(2)
            a = rng.standard_normal(2)
            b = float(rng.standard_normal())
            eps = float(rng.uniform(0.05, 2.0))
            gamma = float(rng.uniform(0.05, 0.9))
            S = OTAmbiguitySet(EmpiricalDistribution.dirac(c), eps, QuadraticCost(W))
            result = worst_case_cvar(S, PolyhedralTarget([a], [b]), gamma)
            alpha = a @ np.linalg.solve(W, a)
            assert result.value == pytest.approx(a @ c + b + np.sqrt(alpha * eps / gamma), abs=1e-5)
            assert result.lam == pytest.approx(np.sqrt(alpha / (4.0 * gamma * eps)), rel=1e-3)

    def test_zero_radius_is_empirical(self, rng, box_target):
        """Test eps = 0 gives the empirical CVaR with an infinite multiplier."""
        X = rng.standard_normal((6, 2))
        S = OTAmbiguitySet(EmpiricalDistribution(X), 0.0, QuadraticCost.identity(2))
        result = worst_case_cvar(S, box_target, 0.5)
        assert result.value == pytest.approx(cvar_empirical(box_target.slack(X), gamma=0.5))
        assert result.lam == float("inf")

    def test_monotone_in_radius(self, rng, box_target):
        """Test the worst case grows with eps."""
        center = EmpiricalDistribution(rng.uniform(1.0, 2.0, (4, 2)))
        values = [
            worst_case_cvar(OTAmbiguitySet(center, eps, QuadraticCost.identity(2)), box_target, 0.2).value
            for eps in (0.0, 0.01, 0.1, 1.0)
        ]
        assert all(b >= a - 1e-9 for a, b in zip(values, values[1:]))

    def test_members_respect_dual_bound(self, rng, box_target):
        """Test the empirical CVaR of every sampled member stays below the worst case."""
        S = OTAmbiguitySet(EmpiricalDistribution(rng.uniform(0.5, 2.5, (4, 2))), 0.1, QuadraticCost.identity(2))
        bound = worst_case_cvar(S, box_target, 0.2).value
        for k in range(100):
            Q = sample_member(S, rng, fraction=float(rng.uniform(0.2, 1.0)), split=bool(k % 2))
            assert cvar_empirical(box_target.slack(Q.atoms), Q.weights, 0.2) <= bound + 1e-6

    def test_monotone_in_inverse_gamma(self, rng, box_target):
        """Test the worst case does not decrease as the tail shrinks."""
        S = OTAmbiguitySet(EmpiricalDistribution(rng.uniform(1.0, 2.0, (6, 2))), 0.05, QuadraticCost.identity(2))
        values = [worst_case_cvar(S, box_target, gamma).value for gamma in (1.0, 0.7, 0.4, 0.2, 0.1, 0.05)]
        assert all(b >= a - 1e-8 for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("eps,end", [(1e-14, "upper"), (1e14, "lower")])
    def test_warns_at_bracket_end(self, caplog, eps, end):
        """Test a multiplier outside the bracket is reported."""
        S = OTAmbiguitySet(EmpiricalDistribution.dirac([0.0]), eps, QuadraticCost.identity(1))
        with caplog.at_level(logging.WARNING, logger="otprop"):
            result = worst_case_cvar(S, PolyhedralTarget([[1.0]], [-1.0]), 0.1)
        assert f"{end} end of its bracket" in caplog.text
        assert result.value >= -1.0 + np.sqrt(eps / 0.1) - 1e-9

    def test_no_warning_inside_bracket(self, caplog, box_target):
        """Test an interior multiplier is silent."""
        S = OTAmbiguitySet(EmpiricalDistribution.dirac([1.5, 1.5]), 0.1, QuadraticCost.identity(2))
        with caplog.at_level(logging.WARNING, logger="otprop"):
            worst_case_cvar(S, box_target, 0.1)
        assert "bracket" not in caplog.text

    def test_unbounded_outside_range(self):
        """Test a target row outside range(W) makes the worst case infinite."""
        S = OTAmbiguitySet(EmpiricalDistribution.dirac([0.0, 0.0]), 0.1, QuadraticCost(np.diag([1.0, 0.0])))
        result = worst_case_cvar(S, PolyhedralTarget([[0.0, 1.0]], [-1.0]), 0.1)
        assert result.value == float("inf")

    def test_requires_quadratic_cost(self, box_target):
        """Test power costs are rejected."""
        S = OTAmbiguitySet(EmpiricalDistribution.dirac([0.0, 0.0]), 0.1, PowerCost(2.0))
        with pytest.raises(PlanningError):
            worst_case_cvar(S, box_target, 0.1)

    def test_dimension_mismatch(self, box_target):
        """Test the target must live in the set's space."""
        S = OTAmbiguitySet(EmpiricalDistribution.dirac([0.0]), 0.1, QuadraticCost.identity(1))
        with pytest.raises(PlanningError):
            worst_case_cvar(S, box_target, 0.1)


class TestPlanner:
    """Tests for the DR trajectory planner on the two-state example."""

    def test_sweep_is_optimal_and_monotone(self, planning_system, planning_samples, box_target):
        """Test optimal plans whose energy grows with eps and that certify the constraint."""
        results = _planner(planning_system, planning_samples, box_target).sweep(SWEEP_EPS)
        assert [r.status for r in results] == [PlanStatus.OPTIMAL] * 3
        costs = [r.cost for r in results]
        assert costs[0] < costs[1] < costs[2]
        for r in results:
            assert r.worst_case_cvar <= 1e-6
            assert r.certificate.satisfied()
            assert r.terminal_states.shape == (5, 2)

    def test_lambda_is_optimal(self, planning_system, planning_samples, box_target):
        """Test no multiplier on a 200-point log grid over the bracket gives a cheaper plan."""
        planner = _planner(planning_system, planning_samples, box_target)
        result = planner.solve(0.1)
        profile = planner.cost_profile(0.1, np.geomspace(1e-6, 1e6, 200))
        assert np.isfinite(profile).any()
        assert result.cost <= np.min(profile) * (1.0 + 1e-4) + 1e-9

    def test_nominal_plan_is_not_robust(self, planning_system, planning_samples, box_target):
        """Test the eps = 0 plan violates the constraint over the eps = 0.1 set."""
        planner = _planner(planning_system, planning_samples, box_target)
        nominal = planner.solve(0.0)
        S = planner.propagated_set(0.1, nominal.u_star)
        assert worst_case_cvar(S, box_target, 0.1).value > 0.0

    def test_center_only_is_infeasible(self, planning_system, planning_samples, box_target):
        """Test keeping the noise radius on the terminal state admits no plan."""
        result = _planner(planning_system, planning_samples, box_target, mode="center").solve(0.1)
        assert result.status == PlanStatus.INFEASIBLE
        assert result.certificate.max_violation > 1e-6

    def test_lipschitz_is_more_conservative(self, planning_system, planning_samples, box_target):
        """Test the Lipschitz set costs at least as much as the exact one."""
        exact = _planner(planning_system, planning_samples, box_target).solve(0.1)
        lipschitz = _planner(planning_system, planning_samples, box_target, mode="lipschitz").solve(0.1)
        assert lipschitz.status == PlanStatus.OPTIMAL
        assert lipschitz.cost >= exact.cost - 1e-6

    def test_certificate_replay(self, planning_system, planning_samples, box_target):
        """Test the certificate recomputed from u, tau and lambda has no violation."""
        planner = _planner(planning_system, planning_samples, box_target)
        result = planner.solve(0.1)
        cert = planner.certificate(result.u_star, result.certificate.tau, result.certificate.lam, 0.1)
        assert cert.max_violation <= 1e-6
        assert cert.s.shape == (5,)

    def test_zero_input_when_already_safe(self, planning_system, planning_samples):
        """Test u = 0 is returned when it already satisfies the constraint."""
        target = PolyhedralTarget.box([-10.0, -10.0], [10.0, 10.0])
        result = plan_trajectory(planning_system, np.zeros(2), planning_samples, target, eps=0.1, gamma=0.1)
        assert result.optimal
        assert result.cost == 0.0
        np.testing.assert_array_equal(result.u_star, np.zeros(20))

    def test_inputs_are_chronological(self, planning_system, planning_samples, box_target):
        """Test inputs() reverses the stacked vector into (T, m)."""
        result = _planner(planning_system, planning_samples, box_target).solve(0.0)
        u = result.inputs(2)
        assert u.shape == (10, 2)
        np.testing.assert_array_equal(u[-1], result.u_star[:2])

    def test_result_serialises(self, planning_system, planning_samples, box_target):
        """Test the result dict carries status and certificate."""
        data = _planner(planning_system, planning_samples, box_target).solve(0.0).to_dict()
        assert data["status"] == "optimal"
        assert data["certificate"]["lambda"] is None
        assert len(data["u_star"]) == 20


class TestPlannerErrors:
    """Tests for invalid planning problems."""

    def test_gamma_one(self, planning_system, planning_samples, box_target):
        """Test gamma must be below one."""
        with pytest.raises(PlanningError):
            DRTrajectoryPlanner(planning_system, np.zeros(2), planning_samples, box_target, gamma=1.0)

    def test_sample_shape(self, planning_system, box_target):
        """Test samples must be (N, T, r)."""
        with pytest.raises(PlanningError):
            DRTrajectoryPlanner(planning_system, np.zeros(2), np.zeros((5, 10, 3)), box_target, gamma=0.1)
        with pytest.raises(PlanningError):
            DRTrajectoryPlanner(planning_system, np.zeros(2), np.zeros((5, 10, 2)), box_target,
                                gamma=0.1, horizon=8)

    def test_target_dimension(self, planning_system, planning_samples):
        """Test the target must live in the state space."""
        with pytest.raises(PlanningError):
            DRTrajectoryPlanner(planning_system, np.zeros(2), planning_samples,
                                PolyhedralTarget.box([0.0], [1.0]), gamma=0.1)

    def test_noise_operator_rank(self, box_target):
        """Test a noise operator without full row rank is rejected."""
        sys = LTISystem(np.eye(2), np.eye(2), [[1.0], [0.0]])
        with pytest.raises(PlanningError):
            DRTrajectoryPlanner(sys, np.zeros(2), np.zeros((3, 1, 1)), box_target, gamma=0.1)

    def test_negative_eps(self, planning_system, planning_samples, box_target):
        """Test eps must be nonnegative."""
        with pytest.raises(PlanningError):
            _planner(planning_system, planning_samples, box_target).solve(-0.1)


class TestValidatePlan:
    """Tests for out-of-sample validation."""

    def test_report(self, planning_system, planning_samples, box_target):
        """Test held-out states, their CVaR and the in-target fraction."""
        result = _planner(planning_system, planning_samples, box_target).solve(0.1)
        test = np.random.default_rng(1).standard_normal((100, 10, 2))
        report = validate_plan(planning_system, result.u_star, test, box_target, 0.1)
        assert report.terminal_states.shape == (100, 2)
        slack = box_target.slack(report.terminal_states)
        assert report.empirical_cvar == pytest.approx(cvar_empirical(slack, gamma=0.1))
        assert report.fraction_in_target == pytest.approx(np.mean(slack <= 1e-6))

    def test_chronological_and_stacked_inputs_agree(self, planning_system, planning_samples, box_target):
        """Test both input layouts simulate the same states."""
        result = _planner(planning_system, planning_samples, box_target).solve(0.0)
        a = validate_plan(planning_system, result.u_star, planning_samples, box_target, 0.1)
        b = validate_plan(planning_system, result.inputs(2), planning_samples, box_target, 0.1)
        np.testing.assert_allclose(a.terminal_states, b.terminal_states)

    def test_training_samples_reproduce_terminal_states(self, planning_system, planning_samples, box_target):
        """Test validation on the training samples matches the planner's centers."""
        result = _planner(planning_system, planning_samples, box_target).solve(0.0)
        report = validate_plan(planning_system, result.u_star, planning_samples, box_target, 0.1)
        np.testing.assert_allclose(report.terminal_states, result.terminal_states, atol=1e-10)

    def test_zero_noise_lands_in_target(self, planning_system, box_target):
        """Test a plan built on noiseless samples keeps the noiseless state inside the target."""
        result = _planner(planning_system, np.zeros((1, 10, 2)), box_target).solve(0.0)
        assert result.optimal
        report = validate_plan(planning_system, result.u_star, np.zeros((3, 10, 2)), box_target, 0.1)
        assert report.fraction_in_target == 1.0

    def test_robust_plans_do_better_out_of_sample(self, planning_system, box_target):
        """Test eps = 0.3 plans beat eps = 0 plans on held-out noise for most seeds."""
        wins = compared = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            train = rng.standard_normal((5, 10, 2))
            test = rng.standard_normal((200, 10, 2))
            nominal, robust = _planner(planning_system, train, box_target).sweep([0.0, 0.3])
            if not (nominal.optimal and robust.optimal):
                continue
            compared += 1
            nominal_cvar = validate_plan(planning_system, nominal.u_star, test, box_target, 0.1).empirical_cvar
            robust_cvar = validate_plan(planning_system, robust.u_star, test, box_target, 0.1).empirical_cvar
            wins += robust_cvar < nominal_cvar
        assert compared >= 10
        assert 2 * wins > compared

"""
Tests for empirical distributions, point maps and measure operations.
"""

import numpy as np
import pytest

from src.models.base import AtomBudgetExceededError, DistributionError
from src.models.cost import QuadraticCost
from src.models.distribution import EmpiricalDistribution, PointMap
from src.services import measures
from src.services.transport import ot_discrepancy


class TestEmpiricalDistribution:
    """Tests for EmpiricalDistribution."""

    def test_uniform_weights_by_default(self):
        """Test weights default to uniform."""
        P = EmpiricalDistribution([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0], [6.0, 7.0]])
        assert P.size == 4
        assert P.dim == 2
        np.testing.assert_allclose(P.weights, 0.25)
        assert P.is_uniform

    def test_flat_atoms_are_one_dimensional(self):
        """Test a flat list means atoms on the real line."""
        P = EmpiricalDistribution([1.0, 2.0, 3.0])
        assert P.dim == 1
        assert P.size == 3

    def test_dirac(self):
        """Test Dirac constructor."""
        P = EmpiricalDistribution.dirac([1.0, -2.0])
        assert P.is_dirac
        np.testing.assert_array_equal(P.atoms, [[1.0, -2.0]])
        np.testing.assert_array_equal(P.weights, [1.0])

    def test_weights_must_sum_to_one(self):
        """Test weight sum validation."""
        with pytest.raises(DistributionError):
            EmpiricalDistribution([[0.0], [1.0]], [0.5, 0.6])

    def test_weights_must_be_positive(self):
        """Test zero weights are rejected."""
        with pytest.raises(DistributionError):
            EmpiricalDistribution([[0.0], [1.0]], [1.0, 0.0])

    def test_weight_count_must_match(self):
        """Test weight count validation."""
        with pytest.raises(DistributionError):
            EmpiricalDistribution([[0.0], [1.0]], [1.0])

    def test_non_finite_atoms_rejected(self):
        """Test NaN atoms are rejected."""
        with pytest.raises(DistributionError):
            EmpiricalDistribution([[0.0], [np.nan]])

    def test_atoms_are_immutable(self):
        """Test the atom matrix is read-only."""
        P = EmpiricalDistribution([[0.0], [1.0]])
        with pytest.raises(ValueError):
            P.atoms[0, 0] = 5.0

    def test_dict_round_trip(self):
        """Test JSON conversion keeps atoms and weights."""
        P = EmpiricalDistribution([[0.0, 1.0], [2.0, 3.0]], [0.25, 0.75])
        Q = EmpiricalDistribution.from_dict(P.to_dict())
        assert Q.same_as(P)

    def test_from_dict_dim_mismatch(self):
        """Test declared dimension is checked."""
        with pytest.raises(DistributionError):
            EmpiricalDistribution.from_dict({"dim": 3, "atoms": [[0.0, 1.0]]})

    def test_from_dict_requires_atoms(self):
        """Test missing atoms are rejected."""
        with pytest.raises(DistributionError):
            EmpiricalDistribution.from_dict({"dim": 1})

    def test_mean_and_covariance(self, rng):
        """Test weighted moments."""
        X = rng.standard_normal((6, 2))
        P = EmpiricalDistribution(X)
        np.testing.assert_allclose(P.mean(), X.mean(axis=0))
        np.testing.assert_allclose(P.covariance(), np.cov(X.T, bias=True))

    def test_coalesce_merges_duplicates(self):
        """Test coincident atoms are merged with summed weight."""
        P = EmpiricalDistribution([[0.0], [1.0], [0.0], [1.0 + 1e-12]])
        merged = P.coalesce(1e-9)
        assert merged.size == 2
        np.testing.assert_allclose(merged.weights, [0.5, 0.5])

    def test_coalesce_exact_only(self):
        """Test zero tolerance merges exact duplicates only."""
        P = EmpiricalDistribution([[0.0], [0.0], [1e-12]])
        assert P.coalesce().size == 2

    def test_with_atoms_keeps_weights(self):
        """Test atom replacement."""
        P = EmpiricalDistribution([[0.0], [1.0]], [0.3, 0.7])
        Q = P.with_atoms([[5.0], [6.0]])
        np.testing.assert_array_equal(Q.weights, P.weights)
        with pytest.raises(DistributionError):
            P.with_atoms([[5.0]])


class TestPointMap:
    """Tests for PointMap."""

    def test_linear_map_on_batch(self):
        """Test linear maps act row-wise."""
        A = np.array([[1.0, 2.0], [0.0, 1.0], [1.0, 1.0]])
        f = PointMap.linear(A)
        X = np.array([[1.0, 1.0], [2.0, 0.0]])
        np.testing.assert_allclose(f(X), X @ A.T)
        assert f.is_linear
        assert f.out_dim == 3

    def test_single_point(self):
        """Test a single point returns a vector."""
        f = PointMap.affine([[2.0]], [1.0])
        np.testing.assert_allclose(f([3.0]), [7.0])

    def test_affine_composition(self):
        """Test then() composes affine maps in closed form."""
        f = PointMap.affine([[1.0, 1.0], [0.0, 2.0]], [1.0, 0.0])
        g = PointMap.affine([[0.0, 1.0], [1.0, 0.0]], [0.0, -1.0])
        h = f.then(g)
        assert h.is_affine
        x = np.array([0.5, -1.5])
        np.testing.assert_allclose(h(x), g(f(x)))

    def test_linear_then_translation(self):
        """Test composing a linear map with a translation keeps the offset."""
        h = PointMap.linear(2.0 * np.eye(2)).then(PointMap.translation([1.0, 1.0]))
        np.testing.assert_allclose(h([1.0, 2.0]), [3.0, 5.0])

    def test_pointwise_wraps_callable(self):
        """Test pointwise maps."""
        f = PointMap.pointwise(lambda x: np.sinh(x), name="sinh")
        X = np.array([[0.0], [1.0]])
        np.testing.assert_allclose(f(X), np.sinh(X))

    def test_dimension_check(self):
        """Test the declared domain dimension is enforced."""
        f = PointMap.linear(np.eye(2))
        with pytest.raises(DistributionError):
            f(np.ones((3, 3)))


class TestPushforward:
    """Tests for pushforward."""

    def test_linear_pushforward(self, rng):
        """Test atoms map and weights stay."""
        P = EmpiricalDistribution(rng.standard_normal((4, 3)), [0.1, 0.2, 0.3, 0.4])
        A = rng.standard_normal((2, 3))
        Q = measures.pushforward(P, PointMap.linear(A))
        np.testing.assert_allclose(Q.atoms, P.atoms @ A.T)
        np.testing.assert_array_equal(Q.weights, P.weights)

    def test_callable_pushforward(self):
        """Test plain callables are accepted."""
        P = EmpiricalDistribution([[1.0, 2.0]])
        Q = measures.pushforward(P, lambda x: x[:1] ** 2)
        np.testing.assert_allclose(Q.atoms, [[1.0]])

    def test_domain_mismatch(self):
        """Test a map on the wrong space is rejected."""
        P = EmpiricalDistribution([[1.0, 2.0]])
        with pytest.raises(DistributionError):
            measures.pushforward(P, PointMap.linear(np.eye(3)))


class TestConvolution:
    """Tests for convolution and Hadamard products of measures."""

    def test_convolution_atoms_and_weights(self):
        """Test the law of an independent sum."""
        P = EmpiricalDistribution([[0.0], [1.0]], [0.25, 0.75])
        Q = EmpiricalDistribution([[10.0], [20.0]], [0.5, 0.5])
        R = measures.convolve(P, Q)
        np.testing.assert_allclose(R.atoms.ravel(), [10.0, 20.0, 11.0, 21.0])
        np.testing.assert_allclose(R.weights, [0.125, 0.125, 0.375, 0.375])

    def test_convolution_adds_means(self, rng):
        """Test means add under convolution."""
        P = EmpiricalDistribution(rng.standard_normal((3, 2)))
        Q = EmpiricalDistribution(rng.standard_normal((4, 2)))
        np.testing.assert_allclose(measures.convolve(P, Q).mean(), P.mean() + Q.mean())

    def test_convolution_dimension_mismatch(self):
        """Test operands must share a space."""
        with pytest.raises(DistributionError):
            measures.convolve(EmpiricalDistribution([[0.0]]), EmpiricalDistribution([[0.0, 1.0]]))

    def test_atom_budget(self):
        """Test the atom budget is enforced."""
        P = EmpiricalDistribution([[0.0], [1.0]])
        with pytest.raises(AtomBudgetExceededError):
            measures.convolve(P, P, atom_budget=3)
        with pytest.raises(AtomBudgetExceededError):
            measures.hadamard(P, P, atom_budget=3)

    def test_hadamard_atoms(self):
        """Test element-wise products."""
        P = EmpiricalDistribution([[1.0, 2.0], [3.0, 4.0]])
        Q = EmpiricalDistribution.dirac([2.0, -1.0])
        R = measures.hadamard(P, Q)
        np.testing.assert_allclose(R.atoms, [[2.0, -2.0], [6.0, -4.0]])

    def test_second_moment(self):
        """Test M_P = E||x||^2."""
        P = EmpiricalDistribution([[3.0, 4.0], [0.0, 0.0]], [0.5, 0.5])
        assert measures.second_moment(P) == pytest.approx(12.5)

    def test_convolution_contraction(self, rng):
        """Test W(P1 * Q, P2 * Q) <= W(P1, P2)."""
        cost = QuadraticCost.identity(2)
        for _ in range(200):
            P1 = EmpiricalDistribution(rng.standard_normal((3, 2)))
            P2 = EmpiricalDistribution(rng.standard_normal((3, 2)))
            Q = EmpiricalDistribution(rng.standard_normal((2, 2)))
            lhs = ot_discrepancy(measures.convolve(P1, Q), measures.convolve(P2, Q), cost).value
            rhs = ot_discrepancy(P1, P2, cost).value
            assert lhs <= rhs + 1e-10


class TestProduct:
    """Tests for product measures and their radius rules."""

    def test_product_atoms(self):
        """Test concatenated atoms with the first factor varying slowest."""
        P = EmpiricalDistribution([[0.0], [1.0]], [0.25, 0.75])
        Q = EmpiricalDistribution([[5.0, 6.0], [7.0, 8.0], [9.0, 10.0]])
        R = measures.product([P, Q])
        assert R.size == 6
        assert R.dim == 3
        np.testing.assert_allclose(R.atoms[0], [0.0, 5.0, 6.0])
        np.testing.assert_allclose(R.atoms[3], [1.0, 5.0, 6.0])
        assert R.weights.sum() == pytest.approx(1.0)

    def test_product_iid(self):
        """Test the t-fold product."""
        P = EmpiricalDistribution([[0.0], [1.0]])
        R = measures.product_iid(P, 3)
        assert R.size == 8
        assert R.dim == 3

    def test_product_requires_factors(self):
        """Test empty and invalid products."""
        with pytest.raises(DistributionError):
            measures.product([])
        with pytest.raises(DistributionError):
            measures.product_iid(EmpiricalDistribution([[0.0]]), 0)

    def test_product_radius(self):
        """Test radii add for separable costs."""
        assert measures.product_radius([0.1, 0.2, 0.3]) == pytest.approx(0.6)
        assert measures.product_iid_radius(0.25, 4) == pytest.approx(1.0)
        with pytest.raises(DistributionError):
            measures.product_radius([0.1, -0.2])

    def test_product_radius_bounds_discrepancy(self, rng):
        """Test W(P^2, Q^2) <= 2 W(P, Q) under the squared Euclidean cost."""
        for _ in range(10):
            P = EmpiricalDistribution(rng.standard_normal((2, 1)))
            Q = EmpiricalDistribution(rng.standard_normal((2, 1)))
            single = ot_discrepancy(P, Q, QuadraticCost.identity(1)).value
            double = ot_discrepancy(
                measures.product_iid(P, 2), measures.product_iid(Q, 2), QuadraticCost.identity(2)
            ).value
            assert double <= measures.product_iid_radius(single, 2) + 1e-10


def _lexsorted(P):
    order = np.lexsort(P.atoms.T[::-1])
    return P.atoms[order], P.weights[order]


class TestMeasureIdentities:
    """Tests for algebraic identities of the measure operations."""

    def test_pushforward_composition(self, rng):
        """Test pushing twice equals pushing the composition."""
        P = EmpiricalDistribution(rng.standard_normal((5, 2)), [0.1, 0.2, 0.3, 0.15, 0.25])
        f = PointMap.affine(rng.standard_normal((3, 2)), rng.standard_normal(3))
        g = PointMap.pointwise(lambda x: np.tanh(x[:2]) + x[2], in_dim=3, out_dim=2, name="g")
        twice = measures.pushforward(measures.pushforward(P, f), g)
        composed = measures.pushforward(P, f.then(g))
        assert twice.same_as(composed, atol=1e-12)

    def test_affine_composition_pushforward(self, rng):
        """Test the closed-form affine composition agrees atom by atom."""
        P = EmpiricalDistribution(rng.standard_normal((4, 3)))
        f = PointMap.linear(rng.standard_normal((3, 3)))
        g = PointMap.affine(rng.standard_normal((2, 3)), [1.0, -1.0])
        twice = measures.pushforward(measures.pushforward(P, f), g)
        assert twice.same_as(measures.pushforward(P, f.then(g)), atol=1e-12)

    def test_convolution_commutes(self, rng):
        """Test P * Q and Q * P agree up to atom order."""
        P = EmpiricalDistribution(rng.standard_normal((3, 2)), [0.2, 0.3, 0.5])
        Q = EmpiricalDistribution(rng.standard_normal((4, 2)))
        atoms_pq, weights_pq = _lexsorted(measures.convolve(P, Q))
        atoms_qp, weights_qp = _lexsorted(measures.convolve(Q, P))
        np.testing.assert_allclose(atoms_pq, atoms_qp, atol=1e-14)
        np.testing.assert_allclose(weights_pq, weights_qp, atol=1e-15)

    def test_hadamard_commutes(self, rng):
        """Test element-wise products agree up to atom order."""
        P = EmpiricalDistribution(rng.standard_normal((3, 2)), [0.2, 0.3, 0.5])
        Q = EmpiricalDistribution(rng.standard_normal((2, 2)), [0.4, 0.6])
        atoms_pq, weights_pq = _lexsorted(measures.hadamard(P, Q))
        atoms_qp, weights_qp = _lexsorted(measures.hadamard(Q, P))
        np.testing.assert_allclose(atoms_pq, atoms_qp, atol=1e-14)
        np.testing.assert_allclose(weights_pq, weights_qp, atol=1e-15)

    def test_convolution_with_zero_dirac(self, rng):
        """Test delta_0 is the identity for convolution."""
        P = EmpiricalDistribution(rng.standard_normal((4, 3)), [0.1, 0.2, 0.3, 0.4])
        assert measures.convolve(P, EmpiricalDistribution.dirac(np.zeros(3))).same_as(P)
        assert measures.convolve(EmpiricalDistribution.dirac(np.zeros(3)), P).same_as(P)

    def test_hadamard_with_ones_dirac(self, rng):
        """Test delta_1 is the identity for the Hadamard product."""
        P = EmpiricalDistribution(rng.standard_normal((4, 3)), [0.1, 0.2, 0.3, 0.4])
        assert measures.hadamard(P, EmpiricalDistribution.dirac(np.ones(3))).same_as(P)

    @pytest.mark.parametrize("alpha", [-3.0, 0.0, 0.5, 2.0])
    def test_second_moment_scaling(self, rng, alpha):
        """Test M of alpha x equals alpha^2 M."""
        P = EmpiricalDistribution(rng.standard_normal((6, 2)))
        scaled = measures.pushforward(P, PointMap.linear(alpha * np.eye(2)))
        assert measures.second_moment(scaled) == pytest.approx(alpha**2 * measures.second_moment(P), abs=1e-12)

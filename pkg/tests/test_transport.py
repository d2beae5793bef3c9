import math

import numpy as np
import pytest

from latent_align.transport import (
    ConvergenceError,
    TransportProblem,
    cost_matrix,
    sinkhorn,
)

from oracles import entropic_ot_pg


def _uniform_problem(M, eta):
    nb, na = M.shape
    return TransportProblem(
        cost=M,
        source_weights=np.full(nb, 1.0 / nb),
        target_weights=np.full(na, 1.0 / na),
        eta=eta,
    )


class TestCostMatrix:
    def test_identical_singletons(self):
        M = cost_matrix(np.array([[0.3, 0.7]]), np.array([[0.3, 0.7]]))
        np.testing.assert_allclose(M, [[0.0]])

    def test_unit_corners(self):
        M = cost_matrix(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
        np.testing.assert_allclose(M, [[2.0]])

    def test_matches_double_loop(self):
        rng = np.random.default_rng(4)
        U = rng.uniform(size=(5, 3))
        V = rng.uniform(size=(4, 3))
        M = cost_matrix(U, V)
        for p in range(5):
            for q in range(4):
                assert abs(M[p, q] - np.sum((U[p] - V[q]) ** 2)) < 1e-12

    def test_transpose_symmetry(self):
        rng = np.random.default_rng(5)
        U, V = rng.uniform(size=(3, 2)), rng.uniform(size=(6, 2))
        np.testing.assert_allclose(cost_matrix(U, V), cost_matrix(V, U).T)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimensions"):
            cost_matrix(np.ones((2, 3)), np.ones((2, 4)))


class TestSinkhorn:
    def test_forced_coupling_1x1(self):
        plan = sinkhorn(_uniform_problem(np.array([[0.0]]), eta=0.5))
        np.testing.assert_allclose(plan.gamma, [[1.0]], atol=1e-12)
        assert plan.transport_cost == 0.0

    def test_symmetric_2x2_closed_form(self):
        # analytic fixed point: diag = 1/(2(1+e^-1)), off = e^-1/(2(1+e^-1))
        plan = sinkhorn(_uniform_problem(np.array([[0.0, 1.0], [1.0, 0.0]]), eta=1.0))
        diag = 1.0 / (2.0 * (1.0 + math.exp(-1.0)))
        off = diag * math.exp(-1.0)
        assert abs(plan.gamma[0, 0] - diag) < 1e-6
        assert abs(plan.gamma[1, 1] - diag) < 1e-6
        assert abs(plan.gamma[0, 1] - off) < 1e-6
        assert abs(diag - 0.36552928931500245) < 1e-12

    def test_matches_projected_gradient_oracle(self):
        for seed in (0, 1, 2):
            rng = np.random.default_rng(seed)
            M = rng.uniform(0.0, 2.0, size=(6, 5))
            problem = _uniform_problem(M, eta=0.8)
            plan = sinkhorn(problem)
            v_ref, _ = entropic_ot_pg(M, problem.source_weights, problem.target_weights, 0.8)
            assert abs(plan.entropic_value - v_ref) < 1e-5, f"seed {seed}"

    def test_marginal_feasibility(self):
        rng = np.random.default_rng(7)
        M = rng.uniform(0.0, 2.0, size=(8, 6))
        plan = sinkhorn(_uniform_problem(M, eta=0.1))
        assert np.max(np.abs(plan.gamma.sum(axis=1) - 1.0 / 8)) < 1e-7
        assert np.max(np.abs(plan.gamma.sum(axis=0) - 1.0 / 6)) < 1e-7

    def test_identical_separated_supports_near_zero_cost(self):
        rng = np.random.default_rng(8)
        pts = np.eye(4) * 0.9 + 0.025  # well separated simplex corners
        pts /= pts.sum(axis=1, keepdims=True)
        problem = TransportProblem.from_supports(pts, pts, eta=1e-3)
        plan = sinkhorn(problem)
        assert plan.transport_cost < 1e-6

    def test_blur_increases_cost_with_eta(self):
        rng = np.random.default_rng(9)
        U = rng.dirichlet(np.ones(3), size=6)
        V = rng.dirichlet(np.ones(3), size=5)
        costs = []
        for eta in (0.05, 0.2, 1.0):
            plan = sinkhorn(TransportProblem.from_supports(U, V, eta))
            costs.append(plan.transport_cost)
        assert costs[0] <= costs[1] + 1e-12 <= costs[2] + 2e-12

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(10)
        U = rng.dirichlet(np.ones(3), size=5)
        V = rng.dirichlet(np.ones(3), size=4)
        perm = np.array([3, 0, 2, 1, 4])
        p1 = sinkhorn(TransportProblem.from_supports(U, V, 0.3))
        p2 = sinkhorn(TransportProblem.from_supports(U[perm], V, 0.3))
        np.testing.assert_allclose(p2.gamma, p1.gamma[perm], atol=1e-10)
        assert abs(p1.entropic_value - p2.entropic_value) < 1e-10

    def test_nonconvergence_reported_with_error(self):
        rng = np.random.default_rng(11)
        M = rng.uniform(0.0, 2.0, size=(6, 5))
        with pytest.raises(ConvergenceError, match="marginal error"):
            sinkhorn(_uniform_problem(M, eta=0.01), max_iters=3)

    def test_invalid_problem_rejected(self):
        with pytest.raises(ValueError, match="eta"):
            _uniform_problem(np.ones((2, 2)), eta=0.0)
        with pytest.raises(ValueError, match="nonnegative"):
            _uniform_problem(-np.ones((2, 2)), eta=0.5)
        with pytest.raises(ValueError, match="sum to 1"):
            TransportProblem(
                cost=np.ones((2, 2)),
                source_weights=np.array([0.5, 0.6]),
                target_weights=np.array([0.5, 0.5]),
                eta=1.0,
            )

    def test_entropic_value_includes_entropy_term(self):
        rng = np.random.default_rng(12)
        M = rng.uniform(0.0, 1.0, size=(4, 4))
        plan = sinkhorn(_uniform_problem(M, eta=0.5))
        g = plan.gamma
        ent = np.sum(g[g > 0] * (np.log(g[g > 0]) - 1.0))
        assert abs(plan.entropic_value - (plan.transport_cost + 0.5 * ent)) < 1e-12

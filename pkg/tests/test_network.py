import numpy as np
import pytest

from emodyn import network
from emodyn.types import EMOTIONS, ClusterParameters


def penrose_defects(M, P):
    return (
        np.max(np.abs(M @ P @ M - M)),
        np.max(np.abs(P @ M @ P - P)),
        np.max(np.abs((M @ P).T - M @ P)),
        np.max(np.abs((P @ M).T - P @ M)),
    )


class TestPseudoinverse:
    def test_identity(self):
        np.testing.assert_array_equal(network.pseudoinverse(np.eye(4)), np.eye(4))

    def test_rank_deficient_diagonal(self):
        P = network.pseudoinverse(np.diag([2.0, 0.0]))
        np.testing.assert_allclose(P, np.diag([0.5, 0.0]))

    def test_random_rectangular_penrose_conditions(self):
        rng = np.random.default_rng(3)
        M = rng.standard_normal((3, 2))
        P = network.pseudoinverse(M)
        assert max(penrose_defects(M, P)) <= 1e-9

    def test_penrose_suite_100_matrices(self):
        shapes = [(7, 7), (7, 10), (10, 7)]
        for seed in range(100):
            rng = np.random.default_rng(seed)
            M = rng.standard_normal(shapes[seed % 3])
            P = network.pseudoinverse(M)
            assert max(penrose_defects(M, P)) <= 1e-9, f"seed {seed}"

    def test_zero_matrix(self):
        np.testing.assert_array_equal(network.pseudoinverse(np.zeros((2, 3))), np.zeros((3, 2)))


def make_params(A, C):
    d_x = A.shape[0]
    return ClusterParameters(mu=np.zeros(d_x), A=A, C=C,
                             P=np.eye(d_x), Sigma=np.eye(C.shape[0]), Gamma=np.eye(d_x))


class TestTransitionMatrix:
    def test_zero_generator_square_invertible(self):
        rng = np.random.default_rng(0)
        C = rng.standard_normal((7, 7)) + 3 * np.eye(7)
        T = network.transition_matrix(make_params(np.zeros((7, 7)), C), delta=1.0)
        np.testing.assert_allclose(T, np.eye(7), atol=1e-10)

    def test_identity_c(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((7, 7))
        T = network.transition_matrix(make_params(A, np.eye(7)), delta=1.0)
        np.testing.assert_allclose(T, np.eye(7) + A, atol=1e-12)

    def test_wide_latent_matches_least_squares_oracle(self):
        # Column-by-column least squares computes C (Id + delta A) C+
        # independently of the SVD pseudoinverse path.
        rng = np.random.default_rng(2)
        d_x, d_y, delta = 10, 7, 1.5
        C = rng.standard_normal((d_y, d_x))
        A = 0.1 * rng.standard_normal((d_x, d_x))
        T = network.transition_matrix(make_params(A, C), delta=delta)
        M = C @ (np.eye(d_x) + delta * A)
        expect = np.empty((d_y, d_y))
        for j in range(d_y):
            # column j of C+ is argmin ||C x - e_j||
            x, *_ = np.linalg.lstsq(C, np.eye(d_y)[:, j], rcond=None)
            expect[:, j] = M @ x
        np.testing.assert_allclose(T, expect, atol=1e-9)

    def test_affine_in_delta(self):
        rng = np.random.default_rng(4)
        C = rng.standard_normal((7, 9))
        A = 0.2 * rng.standard_normal((9, 9))
        params = make_params(A, C)
        d1, d2 = 0.6, 1.7
        T = network.transition_matrix
        lhs = T(params, d1) + T(params, d2) - C @ np.eye(9) @ network.pseudoinverse(C)
        rhs = T(params, d1 + d2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_rejects_nonpositive_delta(self):
        params = make_params(np.zeros((7, 7)), np.eye(7))
        with pytest.raises(ValueError):
            network.transition_matrix(params, delta=0.0)


class TestBuildNetwork:
    def test_identity_only_self_loops(self):
        net = network.build_network(np.eye(7), delta=1.0)
        rows = network.edge_rows(0, net, threshold=0.05)
        assert all(r[1] == r[2] for r in rows)
        assert len(rows) == 7

    def test_threshold_only_affects_display(self):
        W = 0.1 * np.ones((7, 7))
        W[0, 1] = 0.04
        net = network.build_network(W, delta=1.0)
        kept = network.edge_rows(0, net, threshold=0.05)
        assert len(kept) == 48
        # centrality sees the full matrix
        scores = network.out_expected_influence(net)
        assert scores[1] == pytest.approx(0.1 * 5 + 0.04)

    def test_rejects_nonfinite(self):
        W = np.eye(7)
        W[0, 0] = np.nan
        with pytest.raises(ValueError):
            network.build_network(W, delta=1.0)


class TestOutExpectedInfluence:
    def test_identity_all_zero(self):
        net = network.build_network(np.eye(7), delta=1.0)
        np.testing.assert_array_equal(network.out_expected_influence(net), np.zeros(7))

    def test_two_node_arithmetic(self):
        # W = [[0.5, 0.2], [-0.1, 0.3]] embedded in the 7x7 grid:
        # outEI(node0) = W[1,0] = -0.1, outEI(node1) = W[0,1] = 0.2
        W = np.zeros((7, 7))
        W[0, 0], W[0, 1], W[1, 0], W[1, 1] = 0.5, 0.2, -0.1, 0.3
        scores = network.out_expected_influence(network.build_network(W, 1.0))
        assert scores[0] == pytest.approx(-0.1)
        assert scores[1] == pytest.approx(0.2)

    def test_linear_in_weights(self):
        rng = np.random.default_rng(5)
        W1 = rng.standard_normal((7, 7))
        W2 = rng.standard_normal((7, 7))
        a, b = 2.5, -1.25
        f = lambda W: network.out_expected_influence(network.build_network(W, 1.0))
        np.testing.assert_allclose(f(a * W1 + b * W2), a * f(W1) + b * f(W2), atol=1e-12)

    def test_sadness_driver_ranks_first(self):
        # A generator where sadness drives every other emotion.
        A = -0.02 * np.eye(7)
        sadness = EMOTIONS.index("sadness")
        for r in range(7):
            if r != sadness:
                A[r, sadness] = 0.05
        T = network.transition_matrix(make_params(A, np.eye(7)), delta=1.0)
        scores = network.out_expected_influence(network.build_network(T, 1.0))
        assert int(np.argmax(scores)) == sadness

    def test_orientation_regression(self):
        # A single planted coupling "sadness drives anger" must appear at
        # W[anger, sadness], not the transpose.
        A = np.zeros((7, 7))
        anger, sadness = EMOTIONS.index("anger"), EMOTIONS.index("sadness")
        A[anger, sadness] = 0.3
        T = network.transition_matrix(make_params(A, np.eye(7)), delta=1.0)
        W = T - np.eye(7)
        assert abs(W[anger, sadness] - 0.3) < 1e-12
        assert abs(W[sadness, anger]) < 1e-12


class TestCentralityRanking:
    def test_all_equal_canonical_order(self):
        out = network.centrality_ranking({0: np.ones(7)})
        assert [e for e, _, _ in out["rankings"][0]] == list(EMOTIONS)

    def test_descending_scores(self):
        scores = np.array([3.0, 1.0, 2.0, 0.0, -1.0, 5.0, 4.0])
        out = network.centrality_ranking({0: scores})
        ranked = [e for e, _, _ in out["rankings"][0]]
        assert ranked[:3] == ["sadness", "surprise", "anger"]

    def test_rank_delta_localized(self):
        s1 = np.array([7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0])
        s2 = s1.copy()
        s2[EMOTIONS.index("sadness")] = 8.0  # sadness jumps to first
        out = network.centrality_ranking({0: s1, 1: s2})
        deltas = out["rank_deltas"]
        moved = {e for e, d in deltas.items() if d[(0, 1)] != 0}
        # sadness moved up; everything that was above it shifted down by one
        assert "sadness" in moved
        assert "surprise" not in moved

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            network.centrality_ranking({})

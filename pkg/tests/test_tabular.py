import numpy as np
import pytest

from pareto_xurllc import tabular as tb

W = tb.preference_grid(21)


def _rand_q(rng, mdp, scale=5.0):
    return rng.uniform(-scale, scale, size=(mdp.n_states, mdp.n_actions, len(W), 2))


def test_operator_contracts_in_coupled_vs_decoupled_distance():
    rng = np.random.default_rng(0)
    for _ in range(200):
        mdp = tb.random_mdp(rng)
        Q1, Q2 = _rand_q(rng, mdp), _rand_q(rng, mdp)
        lhs = tb.coupled_distance(tb.apply_operator(mdp, Q1, W), tb.apply_operator(mdp, Q2, W), W)
        assert lhs <= mdp.gamma * tb.decoupled_distance(Q1, Q2) + 1e-12


def test_bare_filter_is_not_a_coupled_contraction():
    # The envelope over w' can swap which stored vector wins, so the filter
    # output may move further than the coupled input distance. Only the
    # decoupled (max-component) bound survives.
    w = tb.preference_grid(3)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(2000):
        A = rng.normal(size=(1, 2, 3, 2))
        B = rng.normal(size=(1, 2, 3, 2))
        din = tb.coupled_distance(A, B, w)
        dout = tb.coupled_distance(tb.optimality_filter(A, w)[:, None], tb.optimality_filter(B, w)[:, None], w)
        assert dout <= tb.decoupled_distance(A, B) + 1e-12
        worst = max(worst, dout / din)
    assert worst > 1.0


def test_iteration_converges_within_budget():
    rng = np.random.default_rng(2)
    for _ in range(20):
        mdp = tb.random_mdp(rng)
        Q, it, dist = tb.iterate(mdp, W)
        assert dist < 1e-8 and it <= 2000


def test_entropy_term_is_gamma_log_actions():
    # zero rewards, one state: the fixed point is gamma log A / (1 - gamma) per objective
    mdp = tb.TabularMoMdp(np.ones((1, 3, 1)), np.zeros((1, 3, 2)), 0.5)
    Q, _, _ = tb.iterate(mdp, W, tol=1e-13)
    np.testing.assert_allclose(Q, 0.5 * np.log(3) / 0.5, rtol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_fixed_point_matches_exhaustive_scalarised_search(seed):
    rng = np.random.default_rng(10 + seed)
    mdp = tb.random_mdp(rng, max_states=2, max_actions=2)
    mdp = tb.TabularMoMdp(*_full_2x2(rng), mdp.gamma)
    Q, _, _ = tb.iterate(mdp, W, tol=1e-12, max_iter=5000)
    for k, w in enumerate(W):
        opt = tb.scalarised_optimum(mdp, w)
        np.testing.assert_allclose(Q[:, :, k] @ w, opt, atol=1e-6)


def _full_2x2(rng):
    P = rng.random((2, 2, 2)) + 1e-3
    P /= P.sum(-1, keepdims=True)
    return P, rng.uniform(-1, 1, (2, 2, 2))


def test_filter_picks_envelope_and_breaks_ties_first():
    w = tb.preference_grid(3)
    Q = np.zeros((1, 2, 3, 2))
    Q[0, 1, 0] = [2.0, 0.0]
    G = tb.optimality_filter(Q, w)
    np.testing.assert_array_equal(G[0, 2], [2.0, 0.0])  # w = (1, 0) prefers the (a=1, w'=0) vector
    np.testing.assert_array_equal(G[0, 0], [0.0, 0.0])  # w = (0, 1): tie -> first index


def test_mdp_validation():
    with pytest.raises(ValueError, match="sum to 1"):
        tb.TabularMoMdp(np.ones((1, 1, 2)), np.zeros((1, 1, 2)), 0.5)
    with pytest.raises(ValueError, match="discount"):
        tb.TabularMoMdp(np.ones((1, 1, 1)), np.zeros((1, 1, 2)), 1.0)

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import mdp_value_iteration, naive_t_pi, random_game
from zsmg.game import (ConvergenceError, TabularGame, apply_t_pi, apply_t_star, bellman_residual,
                       bound_between_fixed_points, bound_fixed_point_distance, bound_policy_loss,
                       from_transition_lists, minimax_greedy_policy, opponent_greedy_policy,
                       policy_evaluation, policy_iteration, state_values, value_iteration)
from zsmg.matrix_lp import solve_maximin


def one_state_game(M, gamma):
    M = np.asarray(M, dtype=float)
    m, l = M.shape
    P = sp.csr_matrix(np.ones((m * l, 1)))
    return TabularGame(P, M[None], gamma)


def test_single_state_value_is_matrix_value_over_one_minus_gamma():
    M = [[1, -1], [-1, 1]]
    q, _ = value_iteration(one_state_game(M, 0.5), tol=1e-12)
    assert state_values(one_state_game(M, 0.5), q)[0] == pytest.approx(0.0, abs=1e-10)
    M = [[3, 1], [0, 2]]
    game = one_state_game(M, 0.8)
    q, _ = value_iteration(game, tol=1e-12)
    assert state_values(game, q)[0] == pytest.approx(solve_maximin(M).value / 0.2, abs=1e-9)


def test_validation():
    P = sp.csr_matrix(np.array([[0.5], [0.4]]))
    with pytest.raises(ValueError):
        TabularGame(P, np.zeros((1, 2, 1)), 0.9)
    P = sp.csr_matrix(np.ones((2, 1)))
    with pytest.raises(ValueError):
        TabularGame(P, np.zeros((1, 2, 1)), 1.5)
    with pytest.raises(ValueError):
        TabularGame(P, np.zeros((1, 2, 2)), 0.9)


def test_undiscounted_is_rejected_by_solvers():
    game = one_state_game([[1.0]], 1.0)
    with pytest.raises(ValueError):
        value_iteration(game)


def test_from_transition_lists_and_terminal_state():
    R = np.zeros((2, 1, 1))
    R[0, 0, 0] = 1.0
    game = from_transition_lists(R, {(0, 0, 0): [(1, 1.0)]}, 0.9, terminal_mask=[False, True])
    assert game.n_q_entries == 1
    q, _ = value_iteration(game, tol=1e-12)
    assert q[0, 0, 0] == pytest.approx(1.0)


def test_mdp_special_case_matches_plain_value_iteration():
    rng = np.random.default_rng(4)
    for _ in range(5):
        game = random_game(rng, n=6, m=3, l=1, gamma=0.9)
        q, _ = value_iteration(game, tol=1e-11)
        assert np.abs(q - mdp_value_iteration(game)).max() < 1e-8


def test_t_pi_matches_naive_summation():
    rng = np.random.default_rng(5)
    game = random_game(rng, n=4, m=3, l=2, gamma=0.7)
    q = rng.normal(size=game.shape)
    pi = rng.dirichlet(np.ones(3), size=4)
    assert np.abs(apply_t_pi(game, q, pi) - naive_t_pi(game, q, pi)).max() < 1e-12


def test_vi_and_pi_agree_and_fixed_point():
    rng = np.random.default_rng(6)
    for _ in range(10):
        game = random_game(rng)
        q_vi, _ = value_iteration(game, tol=1e-10)
        q_pi, pi, outer = policy_iteration(game, tol=1e-10)
        assert np.abs(q_vi - q_pi).max() < 1e-7
        assert bellman_residual(game, q_pi) < 1e-8
        q_eval = policy_evaluation(game, pi, tol=1e-12)
        assert np.abs(q_eval - q_pi).max() < 1e-7


def test_pi_trace_records_each_evaluation():
    rng = np.random.default_rng(8)
    game = random_game(rng, n=8)
    trace = []
    q, _, outer = policy_iteration(game, trace=trace)
    assert len(trace) == outer
    assert np.array_equal(trace[-1], q)


def test_iteration_cap_raises():
    rng = np.random.default_rng(9)
    game = random_game(rng, gamma=0.99)
    with pytest.raises(ConvergenceError) as info:
        value_iteration(game, tol=1e-12, max_iter=5)
    assert info.value.iterations == 5


def test_greedy_policies_are_distributions():
    rng = np.random.default_rng(10)
    game = random_game(rng)
    q = rng.normal(size=game.shape)
    for table in (minimax_greedy_policy(game, q), opponent_greedy_policy(game, q)):
        assert np.allclose(table.sum(axis=1), 1.0)
        assert table.min() >= 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 0.95))
def test_t_star_contraction(seed, gamma):
    rng = np.random.default_rng(seed)
    game = random_game(rng, n=4, m=2, l=3, gamma=gamma)
    q1, q2 = rng.normal(size=(2, *game.shape))
    d_in = np.abs(q1 - q2).max()
    d_out = np.abs(apply_t_star(game, q1) - apply_t_star(game, q2)).max()
    assert d_out <= gamma * d_in + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 0.95))
def test_t_pi_contraction(seed, gamma):
    rng = np.random.default_rng(seed)
    game = random_game(rng, n=4, m=3, l=2, gamma=gamma)
    q1, q2 = rng.normal(size=(2, *game.shape))
    pi = rng.dirichlet(np.ones(3), size=4)
    d_out = np.abs(apply_t_pi(game, q1, pi) - apply_t_pi(game, q2, pi)).max()
    assert d_out <= gamma * np.abs(q1 - q2).max() + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_error_bounds(seed):
    rng = np.random.default_rng(seed)
    game = random_game(rng, n=5, gamma=0.8)
    q_star, pi_star, _ = policy_iteration(game, tol=1e-11)
    q = q_star + rng.normal(scale=0.5, size=game.shape)
    eps = bellman_residual(game, q)
    assert np.abs(q_star - q).max() <= bound_fixed_point_distance(eps, game.discount) + 1e-9
    pi = minimax_greedy_policy(game, q)
    q_pi = policy_evaluation(game, pi, tol=1e-12)
    assert np.abs(q_star - q_pi).max() <= bound_policy_loss(eps, game.discount) + 1e-9


def test_two_operator_lemma_on_perturbed_rewards():
    rng = np.random.default_rng(11)
    g1 = random_game(rng, gamma=0.9)
    g2 = TabularGame(g1.transitions, g1.rewards + rng.uniform(-0.1, 0.1, size=g1.shape), 0.9)
    q1, _ = value_iteration(g1, tol=1e-11)
    q2, _ = value_iteration(g2, tol=1e-11)
    # residual of g2's operator at g1's fixed point bounds the gap
    eps = np.abs(apply_t_star(g2, q1) - q1).max()
    assert np.abs(q1 - q2).max() <= bound_between_fixed_points(0.0, eps, 0.9, 0.9) + 1e-9

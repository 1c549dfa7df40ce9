import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_chain
from zsmg.linapprox import stationary_distribution
from zsmg.optout import (OptOutGame, StoppingProblem, apply_continue, apply_optout, apply_stop,
                         check_pointwise_nonexpansion, composed_backup, projected_value_iteration,
                         tabular_value_iteration)


def random_optout(rng, n=5, i=2, j=2, gamma=0.9):
    chain = random_chain(rng, n=n, gamma=gamma)
    return OptOutGame(chain, rng.random((n, i, j)), rng.normal(size=(n, i, j)))


def stopping_by_enumeration(problem):
    """Best stopping set by brute force: V_S solves V = stop on S, R + gamma P V elsewhere."""
    chain = problem.chain
    n = chain.n_states
    P = chain.dense()
    best = np.full(n, -np.inf)
    for stop in itertools.product([False, True], repeat=n):
        stop = np.array(stop)
        A = np.eye(n)
        A[~stop] -= chain.discount * P[~stop]
        rhs = np.where(stop, problem.stop_reward, chain.rewards)
        best = np.maximum(best, np.linalg.solve(A, rhs))
    return best


def test_stopping_value_matches_policy_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(10):
        chain = random_chain(rng, n=5)
        problem = StoppingProblem(chain, rng.normal(size=5) * 3)
        # composed backup values continuation-then-stop, i.e. max(stop, R + gamma P V)
        v = tabular_value_iteration(problem)
        assert np.abs(v - stopping_by_enumeration(problem)).max() < 1e-9


def test_stopping_is_a_one_player_optout_game():
    rng = np.random.default_rng(1)
    chain = random_chain(rng, n=4)
    stop = rng.normal(size=4)
    problem = StoppingProblem(chain, stop)
    p = np.zeros((4, 2, 1))
    p[:, 0, 0] = 1.0
    r = np.zeros((4, 2, 1))
    r[:, 0, 0] = stop
    game = OptOutGame(chain, p, r)
    v = rng.normal(size=4)
    assert np.abs(apply_optout(game, v) - apply_stop(problem, v)).max() < 1e-12


def test_never_terminating_exits_leave_values_unchanged():
    rng = np.random.default_rng(2)
    game = OptOutGame(random_chain(rng, n=3), np.zeros((3, 2, 2)), rng.normal(size=(3, 2, 2)))
    v = rng.normal(size=3)
    assert np.abs(apply_optout(game, v) - v).max() < 1e-12


def test_validation():
    rng = np.random.default_rng(3)
    chain = random_chain(rng, n=3)
    with pytest.raises(ValueError):
        OptOutGame(chain, np.full((3, 2, 2), 1.5), np.zeros((3, 2, 2)))
    with pytest.raises(ValueError):
        OptOutGame(chain, np.zeros((2, 2, 2)), np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        StoppingProblem(chain, np.zeros(4))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 3), st.integers(1, 3))
def test_pointwise_non_expansion(seed, i, j):
    rng = np.random.default_rng(seed)
    game = random_optout(rng, n=4, i=i, j=j)
    v1, v2 = rng.normal(scale=3, size=(2, 4))
    out_gap, in_gap = check_pointwise_nonexpansion(game, v1, v2)
    assert out_gap <= in_gap + 1e-9


def test_continuation_is_gamma_contraction_in_rho_norm():
    rng = np.random.default_rng(4)
    chain = random_chain(rng, n=8, gamma=0.8)
    rho = stationary_distribution(chain)
    for _ in range(50):
        d = rng.normal(size=8)
        out = apply_continue(chain, d) - apply_continue(chain, np.zeros(8))
        assert np.sqrt(rho @ out ** 2) <= 0.8 * np.sqrt(rho @ d ** 2) + 1e-12


def test_projected_iteration_contracts_and_identity_matches_tabular():
    rng = np.random.default_rng(5)
    game = random_optout(rng, n=7, gamma=0.9)
    rho = stationary_distribution(game.chain)
    phi = np.column_stack([np.ones(7), np.arange(7) / 6, (np.arange(7) / 6) ** 2])
    w, trace = projected_value_iteration(game, phi, rho)
    ratios = [b / a for a, b in zip(trace, trace[1:]) if a > 1e-13]
    assert max(ratios) <= 0.9 + 1e-9
    target = composed_backup(game, phi @ w)
    assert np.abs(phi.T @ (rho * (target - phi @ w))).max() < 1e-8
    w_id, _ = projected_value_iteration(game, np.eye(7), rho, tol=1e-13)
    assert np.abs(w_id - tabular_value_iteration(game, tol=1e-13)).max() < 1e-8

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zsmg.flow import (HIGH, LOW, FlowEnv, FlowParams, PolyFeatures, cost, exact_model,
                       outcome_probs, sampled_model, step, threshold_report)
from zsmg.game import opponent_greedy_policy, policy_iteration

P = FlowParams()


@pytest.fixture(scope="module")
def solved():
    game = exact_model(P)
    q, pi, _ = policy_iteration(game, tol=1e-9)
    return game, q, pi, opponent_greedy_policy(game, q)


def test_defaults_and_validation():
    assert P.n_states == 101 and P.discount == 0.95
    for bad in ({"pa_low": 0.95}, {"pd_high": 1.0}, {"alpha": 0.1}, {"beta": -1}, {"discount": 1.0},
                {"holding_power": 0.5}):
        with pytest.raises(ValueError):
            FlowParams(**bad)


def test_cost_formula():
    assert cost(P, 10, HIGH, LOW) == pytest.approx(1e-4 * 100 - 0.1 * 0.9 + 1.5 * 0.1)
    assert cost(P, 0, LOW, HIGH) == pytest.approx(-0.1 * 0.2 + 1.5 * 0.8)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.5), st.floats(0.51, 1.0), st.floats(0.0, 0.4), st.floats(0.41, 0.99))
def test_outcome_probabilities_sum_to_one(pal, pah, pdl, pdh):
    params = FlowParams(pa_low=pal, pa_high=pah, pd_low=pdl, pd_high=pdh)
    for a in (LOW, HIGH):
        for o in (LOW, HIGH):
            assert sum(outcome_probs(params, a, o).values()) == pytest.approx(1.0)


def test_buffer_is_clamped():
    rng = np.random.default_rng(0)
    small = FlowParams(buffer_size=3)
    s = 0
    for _ in range(500):
        s, r, done = step(small, s, int(rng.integers(2)), int(rng.integers(2)), rng)
        assert 0 <= s <= 3 and not done


def test_simulator_matches_model_frequencies():
    rng = np.random.default_rng(1)
    game = exact_model(P)
    counts = {}
    for _ in range(20000):
        s2, _, _ = step(P, 50, HIGH, LOW, rng)
        counts[s2] = counts.get(s2, 0) + 1
    for s2, p in game.successors(50, HIGH, LOW):
        assert counts[s2] / 20000 == pytest.approx(p, abs=0.015)


def test_sampled_model_approaches_exact():
    rng = np.random.default_rng(2)
    small = FlowParams(buffer_size=10)
    exact = exact_model(small).transitions.toarray()
    approx = sampled_model(small, 20000, rng).transitions.toarray()
    assert np.abs(exact - approx).max() < 0.02


def test_optimal_policies_are_thresholds(solved):
    _, _, pi, sigma = solved
    router, server = threshold_report(pi), threshold_report(sigma)
    assert len(router["mixed_states"]) <= 1 and len(server["mixed_states"]) <= 1
    assert router["monotone"] and server["monotone"]
    # router admits at high rate while the buffer is short, then backs off
    assert router["actions"][0] == HIGH and router["actions"][-1] == LOW


def test_poly3_features():
    feats = PolyFeatures(P)
    assert feats.dim == 16
    assert feats.base(50) == pytest.approx([1, 0.5, 0.25, 0.125])
    assert np.array_equal(feats.base_table([0, 100]), [[1, 0, 0, 0], [1, 1, 1, 1]])
    assert FlowEnv(P).features().dim == 16
    with pytest.raises(ValueError):
        FlowEnv(P).features("basic")


def test_threshold_report_detects_mixing():
    table = np.array([[0, 1], [0, 1], [0.4, 0.6], [1, 0]])
    rep = threshold_report(table)
    assert rep["mixed_states"] == [2] and rep["switches"] == 1 and rep["monotone"]
    rep = threshold_report(np.array([[0, 1], [1, 0], [0, 1]]))
    assert not rep["monotone"]

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import exhaustive_corpus, random_game
from zsmg.game import minimax_greedy_policy, policy_evaluation, policy_iteration
from zsmg.linapprox import IndicatorFeatures
from zsmg.lspi import (GameSample, LstdAccumulator, SampleCorpus, accumulate, accumulate_corpus,
                       lspi, lstdq_solve, policy_from_weights)


def setup(seed, n=4, m=2, l=2, denom=4, gamma=0.8):
    rng = np.random.default_rng(seed)
    game = random_game(rng, n=n, m=m, l=l, gamma=gamma, denom=denom)
    return rng, game, exhaustive_corpus(game, denom), IndicatorFeatures(n, m, l)


def test_rank_one_updates_sum_to_the_aggregated_system():
    rng, game, corpus, feats = setup(0)
    w = rng.normal(size=feats.dim)
    acc = LstdAccumulator.zeros(feats.dim)
    for sample in corpus:
        acc = accumulate(acc, sample, w, feats, game.discount)
    agg = accumulate_corpus(corpus, w, feats, game.discount)
    assert np.abs(acc.A_hat - agg.A_hat).max() < 1e-10
    assert np.abs(acc.b_hat - agg.b_hat).max() < 1e-10
    w_pol = lstdq_solve(corpus, w, feats, game.discount, ridge=0.0, opponent="policy")
    assert np.abs(acc.solve(0.0) - w_pol).max() < 1e-9


def test_shards_add_up():
    rng, game, corpus, feats = setup(1)
    w = rng.normal(size=feats.dim)
    half = len(corpus) // 2
    parts = accumulate_corpus(corpus.subset(slice(0, half)), w, feats, game.discount) + \
        accumulate_corpus(corpus.subset(slice(half, None)), w, feats, game.discount)
    full = accumulate_corpus(corpus, w, feats, game.discount)
    assert np.abs(parts.A_hat - full.A_hat).max() < 1e-10


def test_terminal_samples_have_no_successor_term():
    feats = IndicatorFeatures(2, 1, 1)
    acc = accumulate(LstdAccumulator.zeros(2), GameSample(0, 0, 0, 1.0, 1, True), np.ones(2), feats, 0.9)
    assert np.array_equal(acc.A_hat, np.diag([1.0, 0.0]))
    assert np.array_equal(acc.b_hat, [1.0, 0.0])


def test_lstdq_with_tabular_basis_is_exact_policy_evaluation():
    rng, game, corpus, feats = setup(2, n=5, m=3, l=2)
    q_any = rng.normal(size=game.shape)
    pi = minimax_greedy_policy(game, q_any)
    w = lstdq_solve(corpus, feats.weights_from_q(q_any), feats, game.discount, ridge=0.0)
    q_pi = policy_evaluation(game, pi, tol=1e-13)
    assert np.abs(feats.q_from_weights(w) - q_pi).max() < 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_lspi_tracks_policy_iteration(seed):
    _, game, corpus, feats = setup(10 + seed, n=6, m=3, l=3, denom=6, gamma=0.9)
    trace, history = [], []
    policy_iteration(game, tol=1e-10, eval_tol=1e-13, trace=trace)
    lspi(corpus, feats, game.discount, max_iter=len(trace), tol=1e-10, ridge=0.0, history=history)
    for q_exact, w in zip(trace, history):
        assert np.abs(feats.q_from_weights(w) - q_exact).max() < 1e-7


def test_singular_system_needs_ridge():
    _, game, corpus, feats = setup(3)
    partial = corpus.subset(corpus.states != 0)
    with pytest.raises(np.linalg.LinAlgError, match="ridge"):
        lstdq_solve(partial, np.zeros(feats.dim), feats, game.discount, ridge=0.0)
    w = lstdq_solve(partial, np.zeros(feats.dim), feats, game.discount, ridge=1e-6)
    assert np.all(np.isfinite(w))


def test_empty_corpus():
    feats = IndicatorFeatures(2, 2, 2)
    empty = SampleCorpus.from_samples([], "x")
    assert len(empty) == 0
    assert np.array_equal(lstdq_solve(empty, np.zeros(8), feats, 0.9, ridge=1.0), np.zeros(8))
    with pytest.raises(np.linalg.LinAlgError):
        lstdq_solve(empty, np.zeros(8), feats, 0.9)
    with pytest.raises(ValueError):
        lspi(empty, feats, 0.9)


def test_lspi_is_deterministic_and_reports_meta():
    _, game, corpus, feats = setup(4)
    w1, d1 = lspi(corpus, feats, game.discount)
    w2, d2 = lspi(corpus, feats, game.discount)
    assert np.array_equal(w1.w, w2.w) and d1 == d2
    assert w1.meta["iterations"] == len(d1)
    assert w1.k == feats.dim and w1.env == "random"


def test_policy_from_weights_is_minimax_of_q_matrix():
    feats = IndicatorFeatures(1, 2, 2)
    q = np.array([[[1.0, -1.0], [-1.0, 1.0]]])
    strategy, value, response = policy_from_weights(feats.weights_from_q(q), feats, 0)
    assert strategy == pytest.approx([0.5, 0.5])
    assert value == pytest.approx(0.0, abs=1e-12)
    assert response == 0


def test_corpus_columns_and_helpers():
    samples = [(0, 1, 0, 0.5, 1, False), (1, 0, 1, -1.0, 0, True)]
    c = SampleCorpus.from_samples(samples, "toy", {"seed": 3})
    assert c[1] == GameSample(1, 0, 1, -1.0, 0, True)
    assert [tuple(s) for s in c] == samples
    both = SampleCorpus.concatenate([c, c], "toy")
    assert len(both) == 4
    with pytest.raises(ValueError):
        SampleCorpus.concatenate([c], "other")
    with pytest.raises(ValueError):
        SampleCorpus([0], [0], [0], [np.inf], [0], [False], "toy")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_sample_order_does_not_matter(seed):
    rng, game, corpus, feats = setup(seed % 1000, n=3)
    w = rng.normal(size=feats.dim)
    perm = rng.permutation(len(corpus))
    a = lstdq_solve(corpus, w, feats, game.discount, ridge=0.0)
    b = lstdq_solve(corpus.subset(perm), w, feats, game.discount, ridge=0.0)
    assert np.abs(a - b).max() < 1e-8 * max(1.0, np.abs(a).max())


def test_unsettled_refinement_falls_back_to_policy_responses():
    rng, game, corpus, feats = setup(6)
    w = rng.normal(size=feats.dim)
    literal = lstdq_solve(corpus, w, feats, game.discount, ridge=0.0, opponent="policy")
    capped = lstdq_solve(corpus, w, feats, game.discount, ridge=0.0, max_refine=0)
    assert np.array_equal(literal, capped)
    weights, _ = lspi(corpus, feats, game.discount, max_refine=0)
    assert weights.meta["refine_fallbacks"] >= 0
    with pytest.raises(ValueError):
        lstdq_solve(corpus, w, feats, game.discount, opponent="greedy")

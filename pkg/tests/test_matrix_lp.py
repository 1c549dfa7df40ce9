import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linprog

from helpers import enumerate_maximin, grid_maximin_3
from zsmg.matrix_lp import maximin_value, opponent_best_response, solve_maximin

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
shapes = st.tuples(st.integers(1, 6), st.integers(1, 6))
matrices = shapes.flatmap(lambda s: arrays(np.float64, s, elements=finite))


def scipy_value(M):
    m, l = M.shape
    c = np.zeros(m + 1)
    c[-1] = -1.0
    A = np.hstack([-M.T, np.ones((l, 1))])
    res = linprog(c, A_ub=A, b_ub=np.zeros(l), A_eq=[[1.0] * m + [0.0]], b_eq=[1.0],
                  bounds=[(0, None)] * m + [(None, None)])
    return -res.fun


def test_matching_pennies():
    sol = solve_maximin([[1, -1], [-1, 1]])
    assert sol.value == pytest.approx(0.0, abs=1e-12)
    assert sol.strategy == pytest.approx([0.5, 0.5])


def test_rock_paper_scissors():
    sol = solve_maximin([[0, -1, 1], [1, 0, -1], [-1, 1, 0]])
    assert sol.value == pytest.approx(0.0, abs=1e-12)
    assert sol.strategy == pytest.approx([1 / 3] * 3)


def test_dominated_row_gets_no_weight():
    sol = solve_maximin([[3, 2], [1, 0]])
    assert sol.value == pytest.approx(2.0)
    assert sol.strategy == pytest.approx([1.0, 0.0])


def test_single_row_and_column():
    assert solve_maximin([[4, -2, 7]]).value == -2
    sol = solve_maximin([[1], [5], [3]])
    assert sol.value == 5
    assert sol.strategy.tolist() == [0, 1, 0]


def test_constant_matrix_gives_uniform_play():
    sol = solve_maximin(np.zeros((5, 5)))
    assert sol.value == 0
    assert sol.strategy == pytest.approx([0.2] * 5)


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        solve_maximin([[np.nan, 1], [0, 1]])


def test_matches_vertex_enumeration_and_scipy():
    rng = np.random.default_rng(7)
    for _ in range(200):
        m, l = rng.integers(1, 7, size=2)
        M = rng.normal(size=(m, l))
        v = solve_maximin(M).value
        assert v == pytest.approx(enumerate_maximin(M), abs=1e-9)
        assert v == pytest.approx(scipy_value(M), abs=1e-8)


def test_grid_oracle_on_three_rows():
    rng = np.random.default_rng(3)
    for _ in range(20):
        M = rng.uniform(-1, 1, size=(3, 4))
        # the grid misses the optimum by at most step * range
        assert abs(solve_maximin(M).value - grid_maximin_3(M, 1e-3)) <= 2e-3 * 2


def test_deterministic():
    M = np.random.default_rng(1).normal(size=(5, 5))
    a, b = solve_maximin(M), solve_maximin(M)
    assert a.value == b.value and np.array_equal(a.strategy, b.strategy)


@settings(max_examples=300, deadline=None)
@given(matrices)
def test_strategy_is_distribution_and_guarantees_value(M):
    sol = solve_maximin(M)
    assert sol.strategy.min() >= 0
    assert sol.strategy.sum() == pytest.approx(1.0, abs=1e-12)
    scale = 1 + np.abs(M).max()
    assert (sol.strategy @ M).min() >= sol.value - 1e-9 * scale


@settings(max_examples=300, deadline=None)
@given(matrices)
def test_duality(M):
    scale = 1 + np.abs(M).max()
    assert maximin_value(M) == pytest.approx(-maximin_value(-M.T), abs=1e-9 * scale)


@settings(max_examples=300, deadline=None)
@given(matrices, st.data())
def test_non_expansion(M, data):
    N = data.draw(arrays(np.float64, M.shape, elements=finite))
    assert abs(maximin_value(M) - maximin_value(N)) <= np.abs(M - N).max() + 1e-9


@settings(max_examples=200, deadline=None)
@given(matrices, st.floats(-5, 5), st.floats(0.1, 5))
def test_affine_equivariance(M, shift, scale):
    assert maximin_value(scale * M + shift) == pytest.approx(scale * maximin_value(M) + shift,
                                                             abs=1e-8 * (1 + scale * np.abs(M).max() + abs(shift)))


def test_opponent_best_response_picks_lowest_index_on_ties():
    M = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    assert opponent_best_response(M, np.array([0.5, 0.5])) == 2
    assert opponent_best_response(np.zeros((2, 3)), np.array([0.5, 0.5])) == 0

"""Exact maximin solution of small dense matrix games.

The agent picks a row distribution and the opponent a column; entries are the
agent's payoff.  The solver is a dense primal simplex with Bland's rule run on
the classic positive-shift formulation::

    maximize  sum(y)   s.t.  (M + K) y <= 1,  y >= 0

The agent's optimal strategy is read off the dual prices of the row
constraints, so a single tableau yields both players' strategies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-11
ACTIVE_TOL = 1e-7
MAX_REINVERSIONS = 5


class LPError(RuntimeError):
    """Raised when the simplex breaks down or returns an inconsistent answer."""


@dataclass(frozen=True)
class MaximinSolution:
    value: float
    strategy: np.ndarray
    tight_columns: frozenset
    opponent_strategy: np.ndarray | None = None
    pivots: int = 0


def _as_payoff(m) -> np.ndarray:
    m = np.array(m, dtype=float)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"payoff matrix must be 2-D and non-empty, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("payoff matrix has non-finite entries")
    return m


def _tight(m: np.ndarray, strategy: np.ndarray, value: float) -> frozenset:
    col = strategy @ m
    return frozenset(int(o) for o in np.flatnonzero(col - value <= ACTIVE_TOL))


def solve_maximin(m) -> MaximinSolution:
    """Maximin value and strategy of the row player for payoff matrix ``m``.

    Identical input always gives identical output (Bland's rule fixes the
    pivot sequence).  Raises :class:`LPError` rather than return a strategy
    that violates any column constraint by more than ``ACTIVE_TOL``.
    """
    m = _as_payoff(m)
    n_rows, n_cols = m.shape

    if n_rows == 1:
        strategy = np.ones(1)
        value = float(m[0].min())
        return MaximinSolution(value, strategy, _tight(m, strategy, value),
                               _point_mass(n_cols, int(np.argmin(m[0]))))
    if m.max() == m.min():
        # every strategy is optimal; uniform play is the neutral choice
        value = float(m[0, 0])
        return MaximinSolution(value, np.full(n_rows, 1.0 / n_rows), frozenset(range(n_cols)),
                               np.full(n_cols, 1.0 / n_cols))
    if n_cols == 1:
        best = int(np.argmax(m[:, 0]))
        strategy = _point_mass(n_rows, best)
        value = float(m[best, 0])
        return MaximinSolution(value, strategy, frozenset({0}), np.ones(1))

    shift = 1.0 + float(np.abs(m).max())
    pos = m + shift

    # rows: constraints; columns: y (n_cols), slacks (n_rows), rhs
    tab = np.zeros((n_rows, n_cols + n_rows + 1))
    tab[:, :n_cols] = pos
    tab[:, n_cols:n_cols + n_rows] = np.eye(n_rows)
    tab[:, -1] = 1.0
    obj = np.zeros(n_cols + n_rows + 1)
    obj[:n_cols] = 1.0
    basis = list(range(n_cols, n_cols + n_rows))

    full = np.hstack([pos, np.eye(n_rows)])
    cost = np.zeros(n_cols + n_rows)
    cost[:n_cols] = 1.0
    max_pivots = 50 * (n_rows + n_cols) + 100
    pivots = 0
    for _ in range(MAX_REINVERSIONS):
        pivots = _pivot_until_optimal(tab, obj, basis, pivots, max_pivots, pos)
        # rebuild the tableau from the original data; degenerate pivots on
        # tiny elements can leave large rounding errors in the updated rows
        try:
            B = full[:, basis]
            x_b = np.linalg.solve(B, np.ones(n_rows))
            duals = np.linalg.solve(B.T, cost[basis])
        except np.linalg.LinAlgError as exc:
            raise LPError(f"singular basis after {pivots} pivots") from exc
        tab[:, -1] = np.maximum(x_b, 0.0)
        obj[:-1] = cost - duals @ full
        obj[-1] = -float(duals.sum())
        if not (obj[:-1] > PIVOT_TOL).any():
            break
        tab[:, :-1] = np.linalg.solve(B, full)
    else:
        raise LPError("reduced costs stay positive after repeated reinversion")

    total = float(duals.sum())
    if not total > 0.0:
        raise LPError(f"non-positive objective {total!r} on positive game")

    prices = np.maximum(duals, 0.0)
    y = np.zeros(n_cols)
    for i, var in enumerate(basis):
        if var < n_cols:
            y[var] = tab[i, -1]

    p_sum = prices.sum()
    if not p_sum > 0.0:
        raise LPError("dual prices vanished; cannot recover the row strategy")
    strategy = prices / p_sum
    opp = y / y.sum() if y.sum() > 0 else None
    value = 1.0 / total - shift

    cols = strategy @ m
    worst = float(cols.min())
    scale = max(1.0, shift)
    if worst < value - ACTIVE_TOL * scale or abs(worst - value) > ACTIVE_TOL * scale:
        cond = np.linalg.cond(tab[:, n_cols:n_cols + n_rows])
        raise LPError(
            f"inconsistent maximin solution: dual value {value:.12g} vs guaranteed "
            f"{worst:.12g} (basis condition {cond:.3e})"
        )
    value = worst
    return MaximinSolution(value, strategy, _tight(m, strategy, value), opp, pivots)


def _pivot_until_optimal(tab, obj, basis, pivots, max_pivots, pos) -> int:
    """Primal simplex with Bland's rule, in place; returns the running pivot count."""
    n_rows = tab.shape[0]
    n_vars = tab.shape[1] - 1
    while True:
        entering = -1
        for j in range(n_vars):
            if obj[j] > PIVOT_TOL:
                entering = j
                break
        if entering < 0:
            return pivots
        column = tab[:, entering]
        leave = -1
        best_ratio = np.inf
        for i in range(n_rows):
            if column[i] > PIVOT_TOL:
                ratio = tab[i, -1] / column[i]
                if ratio < best_ratio - 1e-15 or (
                    abs(ratio - best_ratio) <= 1e-15 and basis[i] < basis[leave]
                ):
                    best_ratio = ratio
                    leave = i
        if leave < 0:
            raise LPError(
                f"unbounded direction at column {entering}; shifted matrix min "
                f"entry {pos.min():.3e} should be positive"
            )
        piv = tab[leave, entering]
        tab[leave] /= piv
        for i in range(n_rows):
            if i != leave and tab[i, entering] != 0.0:
                tab[i] -= tab[i, entering] * tab[leave]
        obj -= obj[entering] * tab[leave]
        basis[leave] = entering
        pivots += 1
        if pivots > max_pivots:
            raise LPError(f"simplex exceeded {max_pivots} pivots (cycling?)")


def _point_mass(n: int, idx: int) -> np.ndarray:
    v = np.zeros(n)
    v[idx] = 1.0
    return v


def maximin_value(m) -> float:
    return solve_maximin(m).value


def opponent_best_response(m, strategy, tie_tol: float = 1e-10) -> int:
    """Column minimising the row player's expected payoff; lowest index wins ties."""
    m = _as_payoff(m)
    strategy = np.asarray(strategy, dtype=float)
    if strategy.shape != (m.shape[0],):
        raise ValueError(f"strategy has shape {strategy.shape}, expected ({m.shape[0]},)")
    cols = strategy @ m
    lo = cols.min()
    return int(np.flatnonzero(cols <= lo + tie_tol * max(1.0, abs(lo)))[0])

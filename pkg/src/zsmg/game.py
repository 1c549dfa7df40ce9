"""Finite two-player zero-sum Markov games and their exact DP solvers.

Q-tables are dense ``(n_states, n_agent_actions, n_opp_actions)`` arrays,
value tables ``(n_states,)`` arrays and policy tables ``(n_states,
n_agent_actions)`` arrays of row strategies.  The agent maximises.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .matrix_lp import LPError, solve_maximin

PROB_TOL = 1e-12


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class TabularGame:
    """Explicit zero-sum Markov game.

    ``transitions`` is a CSR matrix with one row per ``(s, a, o)`` triple in
    C order and one column per successor state.  Terminal states carry no
    outgoing entries and have zero future value.
    """

    transitions: sp.csr_matrix
    rewards: np.ndarray
    discount: float
    terminal_mask: np.ndarray = field(default=None)
    name: str = "game"

    def __post_init__(self):
        rewards = np.asarray(self.rewards, dtype=float)
        if rewards.ndim != 3:
            raise ValueError(f"rewards must be (n, |A|, |O|), got {rewards.shape}")
        n, m, l = rewards.shape
        if not np.all(np.isfinite(rewards)):
            raise ValueError("rewards contain non-finite entries")
        object.__setattr__(self, "rewards", rewards)

        P = sp.csr_matrix(self.transitions, dtype=float)
        if P.shape != (n * m * l, n):
            raise ValueError(f"transitions must be ({n * m * l}, {n}), got {P.shape}")
        P.sum_duplicates()
        P.eliminate_zeros()
        object.__setattr__(self, "transitions", P)

        term = (np.zeros(n, dtype=bool) if self.terminal_mask is None
                else np.asarray(self.terminal_mask, dtype=bool).copy())
        if term.shape != (n,):
            raise ValueError("terminal_mask length must equal n_states")
        object.__setattr__(self, "terminal_mask", term)

        if not 0.0 < self.discount <= 1.0:
            raise ValueError(f"discount must be in (0, 1], got {self.discount}")
        if P.nnz and P.data.min() < 0.0:
            raise ValueError("negative transition probability")
        sums = np.asarray(P.sum(axis=1)).ravel().reshape(n, m * l)
        live = ~term
        bad = np.abs(sums[live] - 1.0) > PROB_TOL
        if bad.any():
            s = np.flatnonzero(live)[np.nonzero(bad)[0][0]]
            raise ValueError(f"transition rows of state {s} do not sum to 1")
        if np.any(sums[term] != 0.0):
            raise ValueError("terminal states must have no outgoing transitions")

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_agent_actions(self) -> int:
        return self.rewards.shape[1]

    @property
    def n_opp_actions(self) -> int:
        return self.rewards.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.rewards.shape

    @property
    def n_q_entries(self) -> int:
        """Number of Q-values over non-terminal states."""
        return int((~self.terminal_mask).sum()) * self.n_agent_actions * self.n_opp_actions

    def successors(self, s: int, a: int, o: int) -> list[tuple[int, float]]:
        row = (s * self.n_agent_actions + a) * self.n_opp_actions + o
        lo, hi = self.transitions.indptr[row], self.transitions.indptr[row + 1]
        return list(zip(self.transitions.indices[lo:hi].tolist(),
                        self.transitions.data[lo:hi].tolist()))

    def backup(self, values: np.ndarray) -> np.ndarray:
        """R + discount * E[V(s')] for every (s, a, o)."""
        values = np.where(self.terminal_mask, 0.0, values)
        ev = self.transitions @ values
        return self.rewards + self.discount * ev.reshape(self.shape)


def from_transition_lists(rewards, transitions: dict, discount: float,
                          terminal_mask=None, name: str = "game") -> TabularGame:
    """Build a game from ``{(s, a, o): [(s', p), ...]}``."""
    rewards = np.asarray(rewards, dtype=float)
    n, m, l = rewards.shape
    rows, cols, vals = [], [], []
    for (s, a, o), succ in transitions.items():
        r = (s * m + a) * l + o
        for s2, p in succ:
            rows.append(r)
            cols.append(s2)
            vals.append(p)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n * m * l, n))
    return TabularGame(P, rewards, discount, terminal_mask, name)


def _check_q(game: TabularGame, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != game.shape:
        raise ValueError(f"Q-table shape {q.shape} does not match game {game.shape}")
    return q


def _require_discounted(game: TabularGame):
    if not game.discount < 1.0:
        raise ValueError("exact solvers require discount < 1")


def state_values(game: TabularGame, q: np.ndarray, states=None) -> np.ndarray:
    """Minimax value of each state's matrix game under ``q`` (0 on terminal states)."""
    q = _check_q(game, q)
    v = np.zeros(game.n_states)
    todo = range(game.n_states) if states is None else states
    for s in todo:
        if game.terminal_mask[s]:
            continue
        try:
            v[s] = solve_maximin(q[s]).value
        except LPError as exc:
            raise LPError(f"state {s}: {exc}") from exc
    return v


def _successor_states(game: TabularGame) -> np.ndarray:
    reached = np.unique(game.transitions.indices)
    return reached[~game.terminal_mask[reached]]


def apply_t_star(game: TabularGame, q: np.ndarray) -> np.ndarray:
    """Minimax Bellman backup; one LP per reachable non-terminal state."""
    _require_discounted(game)
    q = _check_q(game, q)
    return game.backup(state_values(game, q, _successor_states(game)))


def policy_values(game: TabularGame, q: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """min_o sum_a pi(s, a) Q(s, a, o) per state."""
    pi = np.asarray(pi, dtype=float)
    if pi.shape != game.shape[:2]:
        raise ValueError(f"policy shape {pi.shape} does not match game {game.shape[:2]}")
    v = np.einsum("sa,sao->so", pi, q).min(axis=1)
    v[game.terminal_mask] = 0.0
    return v


def apply_t_pi(game: TabularGame, q: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Fixed-policy backup; the opponent minimises over pure actions."""
    q = _check_q(game, q)
    return game.backup(policy_values(game, q, pi))


def bellman_residual(game: TabularGame, q: np.ndarray) -> float:
    return float(np.abs(apply_t_star(game, q) - q).max())


def value_iteration(game: TabularGame, tol: float = 1e-8, max_iter: int = 100_000,
                    q0=None, residuals: list | None = None):
    """Iterate the minimax backup until the sup-norm change drops below ``tol``.

    Returns ``(q, iterations)``.  When ``residuals`` is a list it receives the
    sup-norm change of every sweep.
    """
    _require_discounted(game)
    q = np.zeros(game.shape) if q0 is None else _check_q(game, q0).copy()
    res = np.inf
    for it in range(1, max_iter + 1):
        q_new = apply_t_star(game, q)
        res = float(np.abs(q_new - q).max())
        if residuals is not None:
            residuals.append(res)
        q = q_new
        if res < tol:
            return q, it
    raise ConvergenceError("value iteration did not converge", res, max_iter)


def policy_evaluation(game: TabularGame, pi: np.ndarray, tol: float = 1e-9,
                      max_iter: int = 100_000, q0=None) -> np.ndarray:
    """Q of policy ``pi`` against a best-responding opponent, by iterated backups."""
    _require_discounted(game)
    q = np.zeros(game.shape) if q0 is None else _check_q(game, q0).copy()
    res = np.inf
    for _ in range(max_iter):
        q_new = apply_t_pi(game, q, pi)
        res = float(np.abs(q_new - q).max())
        q = q_new
        if res < tol:
            return q
    raise ConvergenceError("policy evaluation did not converge", res, max_iter)


def minimax_greedy_policy(game: TabularGame, q: np.ndarray) -> np.ndarray:
    q = _check_q(game, q)
    pi = np.empty(game.shape[:2])
    for s in range(game.n_states):
        try:
            pi[s] = solve_maximin(q[s]).strategy
        except LPError as exc:
            raise LPError(f"state {s}: {exc}") from exc
    return pi


def opponent_greedy_policy(game: TabularGame, q: np.ndarray) -> np.ndarray:
    """Minimax strategy of the minimising player: maximin of ``-Q(s)^T``."""
    q = _check_q(game, q)
    return np.stack([solve_maximin(-q[s].T).strategy for s in range(game.n_states)])


def policy_iteration(game: TabularGame, tol: float = 1e-8, max_outer: int = 200,
                     initial_policy=None, eval_tol: float = 1e-10,
                     trace: list | None = None):
    """Minimax policy iteration.

    Starts from the greedy policy of the all-zero Q-table unless
    ``initial_policy`` is given.  Stops once consecutive policy Q-functions
    differ by less than ``tol`` in sup norm; the policies themselves may
    still flip between equivalent optima.  Returns ``(q, policy, outer)``
    where ``policy`` is the minimax policy with respect to the final ``q``.
    ``trace`` (a list) collects each evaluated Q-table.
    """
    _require_discounted(game)
    pi = (minimax_greedy_policy(game, np.zeros(game.shape)) if initial_policy is None
          else np.asarray(initial_policy, dtype=float))
    q_prev = None
    q = None
    for outer in range(1, max_outer + 1):
        q = policy_evaluation(game, pi, tol=eval_tol, q0=q)
        if trace is not None:
            trace.append(q.copy())
        pi = minimax_greedy_policy(game, q)
        if q_prev is not None:
            delta = float(np.abs(q - q_prev).max())
            if delta < tol:
                return q, pi, outer
        q_prev = q
    delta = float(np.abs(q - q_prev).max()) if q_prev is not None else np.inf
    raise ConvergenceError("policy iteration did not converge", delta, max_outer)


def bound_fixed_point_distance(residual: float, rate: float) -> float:
    """Distance to the fixed point of a contraction, from a residual."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"contraction rate must be in [0, 1), got {rate}")
    if residual < 0:
        raise ValueError("residual must be nonnegative")
    return residual / (1.0 - rate)


def bound_between_fixed_points(residual_1: float, residual_2: float,
                               rate_1: float, rate_2: float) -> float:
    """Distance between the fixed points of two contractions sharing a test point."""
    return bound_fixed_point_distance(residual_1 + residual_2, max(rate_1, rate_2))


def bound_policy_loss(residual: float, discount: float) -> float:
    """Loss bound ||Q* - Q_pi|| for the minimax policy of a Q with this residual."""
    return 2.0 * bound_fixed_point_distance(residual, discount)

"""Optimal stopping and the two-player opt-out game on an uncontrolled chain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game import ConvergenceError
from .linapprox import MarkovChain, project_weighted, weighted_norm
from .matrix_lp import LPError, solve_maximin


@dataclass(frozen=True, eq=False)
class StoppingProblem:
    chain: MarkovChain
    stop_reward: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.stop_reward, dtype=float)
        if r.shape != (self.chain.n_states,) or not np.all(np.isfinite(r)):
            raise ValueError("stop_reward must be a finite vector over the chain's states")
        object.__setattr__(self, "stop_reward", r)


@dataclass(frozen=True, eq=False)
class OptOutGame:
    """Each joint exit action (a, o) ends the game w.p. terminate_prob[s, a, o]
    paying exit_reward[s, a, o] to the agent."""

    chain: MarkovChain
    terminate_prob: np.ndarray
    exit_reward: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.terminate_prob, dtype=float)
        r = np.asarray(self.exit_reward, dtype=float)
        if p.ndim != 3 or p.shape[0] != self.chain.n_states or r.shape != p.shape:
            raise ValueError("terminate_prob and exit_reward must both be (n_states, i, j)")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("terminate_prob must lie in [0, 1]")
        if not np.all(np.isfinite(r)):
            raise ValueError("exit_reward must be finite")
        object.__setattr__(self, "terminate_prob", p)
        object.__setattr__(self, "exit_reward", r)

    @property
    def n_agent_exits(self) -> int:
        return self.terminate_prob.shape[1]

    @property
    def n_opp_exits(self) -> int:
        return self.terminate_prob.shape[2]


def apply_continue(chain: MarkovChain, v) -> np.ndarray:
    return chain.rewards + chain.discount * (chain.transitions @ np.asarray(v, dtype=float))


def apply_stop(problem: StoppingProblem, v) -> np.ndarray:
    return np.maximum(np.asarray(v, dtype=float), problem.stop_reward)


def optout_matrices(game: OptOutGame, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    p = game.terminate_prob
    return p * game.exit_reward + (1.0 - p) * v[:, None, None]


def apply_optout(game: OptOutGame, v) -> np.ndarray:
    """Per-state value of the exit matrix game P_h R_h + (1 - P_h) V(s)."""
    mats = optout_matrices(game, v)
    out = np.empty(len(mats))
    for s, mat in enumerate(mats):
        try:
            out[s] = solve_maximin(mat).value
        except LPError as exc:
            raise LPError(f"state {s}: {exc}") from exc
    return out


def _exit_operator(problem):
    if isinstance(problem, OptOutGame):
        return lambda v: apply_optout(problem, v)
    if isinstance(problem, StoppingProblem):
        return lambda v: apply_stop(problem, v)
    raise TypeError(f"expected StoppingProblem or OptOutGame, got {type(problem).__name__}")


def composed_backup(problem, v) -> np.ndarray:
    """Continuation backup followed by the exit operator."""
    return _exit_operator(problem)(apply_continue(problem.chain, v))


def tabular_value_iteration(problem, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    v = np.zeros(problem.chain.n_states)
    for _ in range(max_iter):
        nxt = composed_backup(problem, v)
        if np.abs(nxt - v).max() < tol:
            return nxt
        v = nxt
    raise ConvergenceError("composed value iteration did not converge", float(np.abs(nxt - v).max()), max_iter)


def projected_value_iteration(problem, phi, rho, tol: float = 1e-10, max_iter: int = 100_000,
                              w0=None):
    """Iterate w <- Proj_rho(exit(continue(phi w))).

    Returns ``(w, trace)`` where ``trace`` holds ||phi (w_t+1 - w_t)||_rho per
    step; its successive ratios stay below the discount when rho is the
    chain's stationary distribution.
    """
    phi = np.asarray(phi, dtype=float)
    rho = np.asarray(rho, dtype=float)
    w = np.zeros(phi.shape[1]) if w0 is None else np.asarray(w0, dtype=float).copy()
    trace = []
    for _ in range(max_iter):
        target = composed_backup(problem, phi @ w)
        w_new = project_weighted(phi, rho, target)
        step = weighted_norm(phi @ (w_new - w), rho)
        trace.append(step)
        w = w_new
        if step < tol:
            return w, trace
    raise ConvergenceError("projected value iteration did not converge; is rho stationary?",
                           trace[-1], max_iter)


def check_pointwise_nonexpansion(game, v1, v2) -> tuple[float, float]:
    """(max_s |T v1 - T v2|, max_s |v1 - v2|) for the exit operator; asserts the first <= the second."""
    op = _exit_operator(game)
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    out_gaps = np.abs(op(v1) - op(v2))
    in_gaps = np.abs(v1 - v2)
    slack = 1e-9 * max(1.0, float(np.abs(v1).max()), float(np.abs(v2).max()))
    # each state's output depends on that state's input only
    bad = np.flatnonzero(out_gaps > in_gaps + slack)
    if bad.size:
        s = int(bad[0])
        raise AssertionError(f"exit operator expanded the gap at state {s}: "
                             f"{out_gaps[s]:.6g} > {in_gaps[s]:.6g}")
    return float(out_gaps.max()), float(in_gaps.max())

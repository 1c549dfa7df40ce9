"""Router/server flow control on a finite buffer.

The router (agent) picks a low or high arrival probability and the server
(opponent) a low or high departure probability.  Per-step cost is
``c(s) + alpha * PA[a] + beta * PD[o]``; the router minimises it, so the
game reward handed to the maximising agent is ``-cost``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .game import TabularGame
from .linapprox import BlockFeatureMap

LOW, HIGH = 0, 1


@dataclass(frozen=True)
class FlowParams:
    buffer_size: int = 100
    pa_low: float = 0.2
    pa_high: float = 0.9
    pd_low: float = 0.1
    pd_high: float = 0.8
    holding_coeff: float = 1e-4
    holding_power: float = 2.0
    alpha: float = -0.1
    beta: float = 1.5
    discount: float = 0.95

    def __post_init__(self):
        if self.buffer_size < 1:
            raise ValueError("buffer_size must be positive")
        if not 0.0 < self.pa_low < self.pa_high <= 1.0:
            raise ValueError("need 0 < pa_low < pa_high <= 1")
        if not 0.0 <= self.pd_low < self.pd_high < 1.0:
            raise ValueError("need 0 <= pd_low < pd_high < 1")
        if self.holding_coeff < 0 or self.holding_power < 1:
            raise ValueError("holding cost must be nonnegative, non-decreasing and convex")
        if self.alpha > 0 or self.beta < 0:
            raise ValueError("need alpha <= 0 and beta >= 0")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must be in (0, 1)")

    @property
    def arrival(self) -> tuple[float, float]:
        return self.pa_low, self.pa_high

    @property
    def departure(self) -> tuple[float, float]:
        return self.pd_low, self.pd_high

    @property
    def n_states(self) -> int:
        return self.buffer_size + 1

    @property
    def name(self) -> str:
        return f"flow{self.buffer_size}"

    def holding_cost(self, s) -> np.ndarray:
        return self.holding_coeff * np.asarray(s, dtype=float) ** self.holding_power

    def to_dict(self) -> dict:
        return asdict(self)


def cost(params: FlowParams, s, a: int, o: int):
    return params.holding_cost(s) + params.alpha * params.arrival[a] + params.beta * params.departure[o]


def step(params: FlowParams, s: int, a: int, o: int, rng: np.random.Generator):
    """Independent arrival and departure draws; the buffer is clamped to [0, B]."""
    arrive = rng.random() < params.arrival[a]
    depart = rng.random() < params.departure[o]
    s2 = min(max(s + int(arrive) - int(depart), 0), params.buffer_size)
    return s2, -float(cost(params, s, a, o)), False


def outcome_probs(params: FlowParams, a: int, o: int) -> dict[int, float]:
    pa, pd = params.arrival[a], params.departure[o]
    return {1: pa * (1 - pd), 0: pa * pd + (1 - pa) * (1 - pd), -1: (1 - pa) * pd}


def exact_model(params: FlowParams) -> TabularGame:
    n = params.n_states
    rows, cols, vals = [], [], []
    rewards = np.empty((n, 2, 2))
    for s in range(n):
        for a in (LOW, HIGH):
            for o in (LOW, HIGH):
                row = (s * 2 + a) * 2 + o
                rewards[s, a, o] = -cost(params, s, a, o)
                for delta, p in outcome_probs(params, a, o).items():
                    if p > 0:
                        rows.append(row)
                        cols.append(min(max(s + delta, 0), params.buffer_size))
                        vals.append(p)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n * 4, n))
    return TabularGame(P, rewards, params.discount, None, params.name)


def sampled_model(params: FlowParams, samples_per_q: int, rng: np.random.Generator) -> TabularGame:
    """Empirical model from ``samples_per_q`` simulated next states per (s, a, o)."""
    n = params.n_states
    rows, cols, vals = [], [], []
    rewards = np.empty((n, 2, 2))
    for s in range(n):
        for a in (LOW, HIGH):
            for o in (LOW, HIGH):
                row = (s * 2 + a) * 2 + o
                rewards[s, a, o] = -cost(params, s, a, o)
                arrive = rng.random(samples_per_q) < params.arrival[a]
                depart = rng.random(samples_per_q) < params.departure[o]
                nxt = np.clip(s + arrive.astype(int) - depart.astype(int), 0, params.buffer_size)
                succ, counts = np.unique(nxt, return_counts=True)
                rows.extend([row] * len(succ))
                cols.extend(succ.tolist())
                vals.extend((counts / samples_per_q).tolist())
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n * 4, n))
    # renormalise away floating drift from count/total
    sums = np.asarray(P.sum(axis=1)).ravel()
    P = sp.diags(1.0 / sums) @ P
    return TabularGame(sp.csr_matrix(P), rewards, params.discount, None, params.name + "-sampled")


class PolyFeatures(BlockFeatureMap):
    """(1, x, x^2, x^3) with x = s / B, one block per (router, server) action pair."""

    def __init__(self, params: FlowParams):
        super().__init__(4, 2, 2, "poly3")
        self.params = params
        if self.dim != 16:
            raise AssertionError("flow features must have 16 entries")

    def base(self, state) -> np.ndarray:
        x = float(state) / self.params.buffer_size
        return np.array([1.0, x, x * x, x * x * x])

    def base_table(self, states) -> np.ndarray:
        x = np.asarray(states, dtype=float) / self.params.buffer_size
        return np.stack([np.ones_like(x), x, x ** 2, x ** 3], axis=1)

    def layout_table(self, states):
        n = len(states)
        return np.broadcast_to(self._identity, (n, 2, 2)), np.ones(n)


class FlowEnv:
    n_agent_actions = 2
    n_opp_actions = 2

    def __init__(self, params: FlowParams):
        self.params = params

    @property
    def name(self) -> str:
        return self.params.name

    @property
    def discount(self) -> float:
        return self.params.discount

    @property
    def n_states(self) -> int:
        return self.params.n_states

    def reset(self, rng):
        return int(rng.integers(self.params.n_states))

    def step(self, state, a, o, rng):
        return step(self.params, state, a, o, rng)

    def features(self, kind: str = "poly3") -> PolyFeatures:
        if kind != "poly3":
            raise ValueError(f"flow control has no {kind!r} features")
        return PolyFeatures(self.params)

    def exact_model(self) -> TabularGame:
        return exact_model(self.params)


def threshold_report(strategies: np.ndarray, tol: float = 1e-6) -> dict:
    """Summarise a per-state two-action strategy table.

    Returns the states where the strategy is mixed, the deterministic action
    per state (-1 where mixed) and whether the deterministic choices change
    at most once along the buffer (monotone threshold).
    """
    p_high = np.asarray(strategies, dtype=float)[:, HIGH]
    mixed = np.flatnonzero((p_high > tol) & (p_high < 1 - tol))
    det = np.where(p_high >= 1 - tol, HIGH, np.where(p_high <= tol, LOW, -1))
    seq = det[det >= 0]
    switches = int(np.count_nonzero(np.diff(seq))) if len(seq) > 1 else 0
    return {"mixed_states": mixed.tolist(), "actions": det, "switches": switches,
            "monotone": switches <= 1}

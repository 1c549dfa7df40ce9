"""Least-squares policy iteration for zero-sum Markov games.

Q(s, a, o) is approximated by phi(s, a, o)^T w.  For a policy defined by a
weight vector, LSTDQ builds

    A = sum phi(s,a,o) (phi(s,a,o) - gamma * sum_a' pi(s',a') phi(s',a',o'))^T
    b = sum phi(s,a,o) r

where pi(s') is the maximin strategy of the matrix game phi(s',.,.)^T w and
o' is the opponent's pure best response to it.  The corpus is aggregated by
distinct (s, a, o) and distinct s' so that each next state costs one LP per
iteration regardless of how often it occurs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .linapprox import BlockFeatureMap, FeatureMap, WeightVector
from .matrix_lp import LPError, opponent_best_response, solve_maximin

log = logging.getLogger(__name__)

OPPONENT_MODES = ("evaluated", "policy")


class GameSample(NamedTuple):
    state: int
    agent_action: int
    opp_action: int
    reward: float
    next_state: int
    terminal: bool


@dataclass
class SampleCorpus:
    """Column-stored batch of experience from one environment."""

    states: np.ndarray
    agent_actions: np.ndarray
    opp_actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    env: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64).reshape(-1)
        self.agent_actions = np.asarray(self.agent_actions, dtype=np.int64).reshape(-1)
        self.opp_actions = np.asarray(self.opp_actions, dtype=np.int64).reshape(-1)
        self.rewards = np.asarray(self.rewards, dtype=float).reshape(-1)
        self.next_states = np.asarray(self.next_states, dtype=np.int64).reshape(-1)
        self.terminals = np.asarray(self.terminals, dtype=bool).reshape(-1)
        n = len(self.states)
        for arr in (self.agent_actions, self.opp_actions, self.rewards, self.next_states, self.terminals):
            if len(arr) != n:
                raise ValueError("corpus columns have different lengths")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("corpus contains non-finite rewards")

    @classmethod
    def from_samples(cls, samples, env: str, meta: dict | None = None) -> "SampleCorpus":
        samples = list(samples)
        cols = list(zip(*samples)) if samples else [()] * 6
        return cls(*[np.array(c) for c in cols], env=env, meta=dict(meta or {}))

    @classmethod
    def concatenate(cls, corpora, env: str, meta: dict | None = None) -> "SampleCorpus":
        corpora = list(corpora)
        for c in corpora:
            if c.env != env:
                raise ValueError(f"cannot mix corpora from {c.env!r} and {env!r}")
        if not corpora:
            return cls.from_samples([], env, meta)
        return cls(*(np.concatenate([getattr(c, f) for c in corpora]) for f in _COLUMNS),
                   env=env, meta=dict(meta or {}))

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i) -> GameSample:
        return GameSample(int(self.states[i]), int(self.agent_actions[i]), int(self.opp_actions[i]),
                          float(self.rewards[i]), int(self.next_states[i]), bool(self.terminals[i]))

    def subset(self, idx) -> "SampleCorpus":
        return SampleCorpus(*(getattr(self, f)[idx] for f in _COLUMNS), env=self.env, meta=dict(self.meta))


_COLUMNS = ("states", "agent_actions", "opp_actions", "rewards", "next_states", "terminals")


@dataclass
class LstdAccumulator:
    A_hat: np.ndarray
    b_hat: np.ndarray

    @classmethod
    def zeros(cls, k: int) -> "LstdAccumulator":
        return cls(np.zeros((k, k)), np.zeros(k))

    def __add__(self, other: "LstdAccumulator") -> "LstdAccumulator":
        return LstdAccumulator(self.A_hat + other.A_hat, self.b_hat + other.b_hat)

    def solve(self, ridge: float | None = None) -> np.ndarray:
        return _solve_system(self.A_hat, self.b_hat, ridge)


def _weights_array(w) -> np.ndarray:
    return np.asarray(w.w if isinstance(w, WeightVector) else w, dtype=float)


def policy_from_weights(weights, features: FeatureMap, state):
    """(strategy, value, opponent best response) of the approximate matrix game at ``state``."""
    m = features.q_matrix(state, _weights_array(weights))
    try:
        sol = solve_maximin(m)
    except LPError as exc:
        raise LPError(f"state {state}: {exc}") from exc
    return sol.strategy, sol.value, opponent_best_response(m, sol.strategy)


def accumulate(acc: LstdAccumulator, sample: GameSample, policy_weights, features: FeatureMap,
               discount: float, response_weights=None) -> LstdAccumulator:
    """One rank-one LSTDQ update; returns a new accumulator.

    ``response_weights`` (default: the policy weights) are used to pick the
    opponent's best response o' to the next-state strategy.
    """
    s, a, o, r, s2, terminal = sample
    phi = features.phi(s, a, o)
    nxt = np.zeros(features.dim)
    if not terminal:
        w = _weights_array(policy_weights)
        strategy, _, o2 = policy_from_weights(w, features, s2)
        if response_weights is not None:
            o2 = opponent_best_response(features.q_matrix(s2, _weights_array(response_weights)), strategy)
        for a2, p in enumerate(strategy):
            if p != 0.0:
                nxt += p * features.phi(s2, a2, o2)
    return LstdAccumulator(acc.A_hat + np.outer(phi, phi - discount * nxt), acc.b_hat + phi * r)


def default_ridge(A: np.ndarray) -> float:
    return 1e-6 * float(np.trace(A)) / A.shape[0]


def _solve_system(A: np.ndarray, b: np.ndarray, ridge: float | None) -> np.ndarray:
    k = A.shape[0]
    lam = default_ridge(A) if ridge is None else float(ridge)
    M = A + lam * np.eye(k) if lam else A
    msg = "LSTDQ system is singular; pass a positive ridge"
    if not np.any(M):
        raise np.linalg.LinAlgError(msg)
    try:
        w = np.linalg.solve(M, b)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(msg) from exc
    if not np.all(np.isfinite(w)) or (lam == 0.0 and np.linalg.cond(M) > 1e15):
        raise np.linalg.LinAlgError(msg)
    return w


class _Prepared:
    """Corpus aggregated for repeated LSTDQ solves under changing policies."""

    def __init__(self, corpus: SampleCorpus, features: FeatureMap, discount: float):
        if not isinstance(features, BlockFeatureMap):
            raise TypeError("batched LSTDQ needs a block-structured feature map")
        self.features = features
        self.discount = discount
        self.k = features.dim
        W = features.width
        m, l = features.n_agent_actions, features.n_opp_actions
        live = ~corpus.terminals
        states = np.unique(np.concatenate([corpus.states, corpus.next_states[live]]))
        self.states = states
        self.base = features.base_table(states)
        self.pairs, self.signs = features.layout_table(states)
        self.pairs = np.asarray(self.pairs)

        u = np.searchsorted(states, corpus.states)
        key = (u * m + corpus.agent_actions) * l + corpus.opp_actions
        keys, g_idx, counts = np.unique(key, return_inverse=True, return_counts=True)
        g_u, rem = np.divmod(keys, m * l)
        g_a, g_o = np.divmod(rem, l)
        n_g = len(keys)

        blocks = self.pairs[g_u, g_a, g_o]
        cols = blocks[:, None] * W + np.arange(W)[None, :]
        vals = self.signs[g_u][:, None] * self.base[g_u]
        rows = np.repeat(np.arange(n_g), W)
        phi_g = sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(n_g, self.k))
        phi_g.eliminate_zeros()
        self.phi_g = phi_g
        reward_sum = np.bincount(g_idx, weights=corpus.rewards, minlength=n_g)
        self.gram = (phi_g.T @ sp.diags(counts.astype(float)) @ phi_g).toarray()
        self.b = phi_g.T @ reward_sum

        nxt_u = np.searchsorted(states, corpus.next_states[live])
        self.next_states = np.unique(nxt_u)
        nu = np.searchsorted(self.next_states, nxt_u)
        transit = sp.csr_matrix(
            (np.ones(len(nu)), (g_idx[live], nu)), shape=(n_g, len(self.next_states)))
        transit.sum_duplicates()
        # phi_g^T N does not depend on the policy
        self.cross_base = (phi_g.T @ transit).tocsr()

    def q_matrices(self, w: np.ndarray, which: np.ndarray) -> np.ndarray:
        f = self.features
        vals = self.base[which] @ w.reshape(f.n_pairs, f.width).T
        return self.signs[which][:, None, None] * np.take_along_axis(
            vals[:, None, :], self.pairs[which].reshape(len(which), 1, -1), axis=2
        ).reshape(len(which), f.n_agent_actions, f.n_opp_actions)

    def next_strategies(self, w: np.ndarray):
        mats = self.q_matrices(w, self.next_states)
        strategies = np.empty((len(mats), mats.shape[1]))
        for i, mat in enumerate(mats):
            try:
                strategies[i] = solve_maximin(mat).strategy
            except LPError as exc:
                raise LPError(f"state {int(self.states[self.next_states[i]])}: {exc}") from exc
        return strategies, mats

    @staticmethod
    def responses(mats: np.ndarray, strategies: np.ndarray) -> np.ndarray:
        return np.array([opponent_best_response(mat, st) for mat, st in zip(mats, strategies)],
                        dtype=np.int64)

    def next_features(self, strategies: np.ndarray, responses: np.ndarray) -> sp.csr_matrix:
        f = self.features
        W, m = f.width, f.n_agent_actions
        u = self.next_states
        n = len(u)
        blocks = self.pairs[u][np.arange(n)[:, None], np.arange(m)[None, :], responses[:, None]]
        cols = blocks[:, :, None] * W + np.arange(W)[None, None, :]
        vals = (strategies[:, :, None] * (self.signs[u][:, None, None] * self.base[u][:, None, :]))
        rows = np.repeat(np.arange(n), m * W)
        psi = sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(n, self.k))
        psi.sum_duplicates()
        psi.eliminate_zeros()
        return psi

    def system(self, strategies, responses) -> LstdAccumulator:
        psi = self.next_features(strategies, responses)
        cross = (self.cross_base @ psi).toarray()
        return LstdAccumulator(self.gram - self.discount * cross, np.asarray(self.b, dtype=float))


def accumulate_corpus(corpus: SampleCorpus, policy_weights, features: FeatureMap,
                      discount: float) -> LstdAccumulator:
    """Sum of the rank-one updates over a corpus (or a shard of one).

    o' is the best response under the policy weights, so shard results add up
    exactly to the full-corpus accumulator.
    """
    w = _weights_array(policy_weights)
    if len(corpus) == 0:
        return LstdAccumulator.zeros(features.dim)
    prep = _Prepared(corpus, features, discount)
    strategies, mats = prep.next_strategies(w)
    return prep.system(strategies, prep.responses(mats, strategies))


def _lstdq(prep: _Prepared, w_policy: np.ndarray, ridge, opponent: str, max_refine: int):
    """Returns ``(w, settled)``; ``settled`` is False when the refinement fell back."""
    if opponent not in OPPONENT_MODES:
        raise ValueError(f"opponent must be one of {OPPONENT_MODES}")
    strategies, mats = prep.next_strategies(w_policy)
    responses = prep.responses(mats, strategies)
    w_first = prep.system(strategies, responses).solve(ridge)
    if opponent == "policy":
        return w_first, True
    w = w_first
    seen = {responses.tobytes()}
    for _ in range(max_refine):
        new_resp = prep.responses(prep.q_matrices(w, prep.next_states), strategies)
        if np.array_equal(new_resp, responses):
            return w, True
        key = new_resp.tobytes()
        if key in seen:
            break  # the responses cycle, so no evaluated fixed point exists
        seen.add(key)
        responses = new_resp
        w_new = prep.system(strategies, responses).solve(ridge)
        if np.linalg.norm(w_new - w) <= 1e-12 * max(1.0, np.linalg.norm(w)):
            return w_new, True
        w = w_new
    log.debug("opponent refinement did not settle; using the policy-weight responses")
    return w_first, False


def lstdq_solve(corpus: SampleCorpus, policy_weights, features: FeatureMap, discount: float,
                ridge: float | None = None, opponent: str = "evaluated",
                max_refine: int = 50) -> np.ndarray:
    """Weights of the approximate Q-function of the policy implied by ``policy_weights``.

    ``ridge=None`` uses 1e-6 * trace(A)/k; a number is used as given.

    ``opponent="policy"`` fixes o' as the best response under the policy
    weights (one linear solve).  ``"evaluated"`` then re-picks o' against the
    freshly solved weights, keeping the agent strategies fixed, until the
    responses stop changing; with a tabular basis this yields the Q-function of
    the policy against a best-responding opponent.  No extra LPs are solved.
    If the responses cycle or do not settle within ``max_refine`` passes, the
    ``"policy"`` solution is returned.
    """
    w_pol = _weights_array(policy_weights)
    if len(corpus) == 0:
        if ridge is None or ridge <= 0:
            raise np.linalg.LinAlgError("empty corpus: LSTDQ system is singular; pass a positive ridge")
        return np.zeros(features.dim)
    prep = _Prepared(corpus, features, discount)
    return _lstdq(prep, w_pol, ridge, opponent, max_refine)[0]


def lspi(corpus: SampleCorpus, features: FeatureMap, discount: float, max_iter: int = 25,
         tol: float = 1e-4, ridge: float | None = None, initial_weights=None,
         opponent: str = "evaluated", history: list | None = None, max_refine: int = 8):
    """Approximate policy iteration over a fixed corpus.

    Starts from ``initial_weights`` (zeros by default, i.e. uniform play).
    Stops when ||w_new - w||_2 < tol or after ``max_iter`` iterations.
    ``max_refine`` caps the opponent-response passes of each evaluation (see
    :func:`lstdq_solve`).  Returns ``(WeightVector, deltas)``; ``history``
    collects each iterate.
    """
    if len(corpus) == 0:
        raise ValueError("LSPI needs a non-empty corpus")
    prep = _Prepared(corpus, features, discount)
    w = (np.zeros(features.dim) if initial_weights is None
         else _weights_array(initial_weights).copy())
    deltas = []
    converged = False
    fallbacks = 0
    for it in range(1, max_iter + 1):
        try:
            w_new, settled = _lstdq(prep, w, ridge, opponent, max_refine)
            fallbacks += not settled
        except (LPError, np.linalg.LinAlgError) as exc:
            raise type(exc)(f"LSPI iteration {it}: {exc}") from exc
        delta = float(np.linalg.norm(w_new - w))
        deltas.append(delta)
        w = w_new
        if history is not None:
            history.append(w.copy())
        log.debug("lspi iteration %d: |dw| = %.3e", it, delta)
        if delta < tol:
            converged = True
            break
    meta = {"iterations": len(deltas), "converged": converged, "samples": len(corpus),
            "opponent": opponent, "refine_fallbacks": fallbacks}
    return WeightVector(w, features.name, discount, corpus.env, meta), deltas

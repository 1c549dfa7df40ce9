"""Linear value-function architecture.

Feature maps evaluate phi(state, a, o); every map used in this package is
*block structured*: a per-state base vector is copied into the block that
belongs to the joint action, optionally with a sign flip and a permutation
of the action pairs (the soccer features use both to stay role-relative).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .game import ConvergenceError


class RankDeficiencyError(np.linalg.LinAlgError):
    def __init__(self, message: str, dependent_columns=()):
        super().__init__(message)
        self.dependent_columns = tuple(dependent_columns)


class FeatureMap:
    """phi(state, a, o) -> length-``dim`` vector."""

    name = "features"
    dim: int
    n_agent_actions: int
    n_opp_actions: int

    def phi(self, state, a: int, o: int) -> np.ndarray:
        raise NotImplementedError

    def q_matrix(self, state, w: np.ndarray) -> np.ndarray:
        """Approximate Q(state, ., .) as an |A| x |O| payoff matrix."""
        m, l = self.n_agent_actions, self.n_opp_actions
        out = np.empty((m, l))
        for a in range(m):
            for o in range(l):
                out[a, o] = self.phi(state, a, o) @ w
        return out


class BlockFeatureMap(FeatureMap):
    """A base vector of length ``width`` replicated once per joint action."""

    width: int

    def __init__(self, width: int, n_agent_actions: int, n_opp_actions: int, name: str):
        self.width = int(width)
        self.n_agent_actions = int(n_agent_actions)
        self.n_opp_actions = int(n_opp_actions)
        self.name = name
        self._identity = np.arange(self.n_pairs).reshape(self.n_agent_actions, self.n_opp_actions)

    @property
    def n_pairs(self) -> int:
        return self.n_agent_actions * self.n_opp_actions

    @property
    def dim(self) -> int:
        return self.width * self.n_pairs

    def base(self, state) -> np.ndarray:
        raise NotImplementedError

    def layout(self, state) -> tuple[np.ndarray, float]:
        """(block index for each (a, o), sign applied to the base vector)."""
        return self._identity, 1.0

    def base_table(self, states) -> np.ndarray:
        return np.array([self.base(s) for s in states], dtype=float).reshape(len(states), self.width)

    def layout_table(self, states) -> tuple[np.ndarray, np.ndarray]:
        pairs = np.empty((len(states), self.n_agent_actions, self.n_opp_actions), dtype=np.int64)
        signs = np.empty(len(states))
        for i, s in enumerate(states):
            pairs[i], signs[i] = self.layout(s)
        return pairs, signs

    def phi(self, state, a: int, o: int) -> np.ndarray:
        pairs, sign = self.layout(state)
        out = np.zeros(self.dim)
        blk = int(pairs[a, o])
        out[blk * self.width:(blk + 1) * self.width] = sign * self.base(state)
        return out

    def q_matrix(self, state, w: np.ndarray) -> np.ndarray:
        pairs, sign = self.layout(state)
        vals = np.asarray(w, dtype=float).reshape(self.n_pairs, self.width) @ self.base(state)
        return sign * vals[pairs]


class IndicatorFeatures(BlockFeatureMap):
    """One feature per (s, a, o): the tabular representation."""

    def __init__(self, n_states: int, n_agent_actions: int, n_opp_actions: int):
        super().__init__(n_states, n_agent_actions, n_opp_actions, f"indicator{n_states}")

    def base(self, state) -> np.ndarray:
        v = np.zeros(self.width)
        v[int(state)] = 1.0
        return v

    def base_table(self, states) -> np.ndarray:
        out = np.zeros((len(states), self.width))
        out[np.arange(len(states)), np.asarray(states, dtype=np.int64)] = 1.0
        return out

    def layout_table(self, states):
        n = len(states)
        return np.broadcast_to(self._identity, (n,) + self._identity.shape), np.ones(n)

    def weights_from_q(self, q: np.ndarray) -> np.ndarray:
        """Weight vector reproducing a dense Q-table exactly."""
        q = np.asarray(q, dtype=float)
        return q.reshape(self.width, self.n_pairs).T.ravel()

    def q_from_weights(self, w: np.ndarray) -> np.ndarray:
        return np.asarray(w).reshape(self.n_pairs, self.width).T.reshape(
            self.width, self.n_agent_actions, self.n_opp_actions)


@dataclass
class WeightVector:
    w: np.ndarray
    features: str
    gamma: float
    env: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if self.w.ndim != 1:
            raise ValueError("weight vector must be 1-D")
        if not np.all(np.isfinite(self.w)):
            raise ValueError("weight vector has non-finite entries")

    @property
    def k(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True, eq=False)
class MarkovChain:
    transitions: sp.csr_matrix
    rewards: np.ndarray
    discount: float

    def __post_init__(self):
        P = sp.csr_matrix(self.transitions, dtype=float)
        n = P.shape[0]
        if P.shape != (n, n):
            raise ValueError("transition matrix must be square")
        if P.nnz and P.data.min() < 0:
            raise ValueError("negative transition probability")
        sums = np.asarray(P.sum(axis=1)).ravel()
        if np.any(np.abs(sums - 1.0) > 1e-12):
            raise ValueError(f"row {int(np.argmax(np.abs(sums - 1.0)))} is not a distribution")
        r = np.asarray(self.rewards, dtype=float)
        if r.shape != (n,):
            raise ValueError("reward vector length must match the chain")
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", r)
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must be in (0, 1]")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    def dense(self) -> np.ndarray:
        return self.transitions.toarray()

    def exact_values(self) -> np.ndarray:
        """Solves (I - gamma P) V = R."""
        n = self.n_states
        return np.linalg.solve(np.eye(n) - self.discount * self.dense(), self.rewards)


def _power(P_T, rho, tol, max_iter):
    for it in range(1, max_iter + 1):
        nxt = P_T @ rho
        nxt /= nxt.sum()
        if np.abs(nxt - rho).max() < tol:
            return nxt, it
        rho = nxt
    raise ConvergenceError("power iteration did not converge (periodic chain?)",
                           float(np.abs(nxt - rho).max()), max_iter)


def stationary_distribution(chain, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Stationary distribution by power iteration from two starting points.

    Both runs must land within 1e-8 of each other; otherwise the chain has more
    than one stationary distribution and a ConvergenceError is raised.
    """
    P = chain.transitions if isinstance(chain, MarkovChain) else sp.csr_matrix(chain)
    n = P.shape[0]
    P_T = P.T.tocsr()
    rho, _ = _power(P_T, np.full(n, 1.0 / n), tol, max_iter)
    start = np.zeros(n)
    start[0] = 1.0
    other, _ = _power(P_T, start, tol, max_iter)
    gap = float(np.abs(rho - other).max())
    if gap > 1e-8:
        raise ConvergenceError("stationary distribution is not unique (reducible chain)", gap, max_iter)
    return np.maximum(rho, 0.0) / np.maximum(rho, 0.0).sum()


def weighted_norm(v, rho) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(np.sum(np.asarray(rho, dtype=float) * v * v)))


def _dependent_columns(mat: np.ndarray, tol: float = 1e-10) -> list[int]:
    kept, dependent = [], []
    for j in range(mat.shape[1]):
        trial = mat[:, kept + [j]]
        if np.linalg.matrix_rank(trial, tol=tol * max(1.0, np.abs(mat).max())) == len(kept) + 1:
            kept.append(j)
        else:
            dependent.append(j)
    return dependent


def project_weighted(phi, rho, v, ridge: float | None = None) -> np.ndarray:
    """Weights of the rho-weighted least-squares projection of ``v`` onto span(phi)."""
    phi = np.asarray(phi, dtype=float)
    rho = np.asarray(rho, dtype=float)
    v = np.asarray(v, dtype=float)
    gram = phi.T @ (rho[:, None] * phi)
    rhs = phi.T @ (rho * v)
    if ridge:
        return np.linalg.solve(gram + ridge * np.eye(gram.shape[0]), rhs)
    support = rho > 0
    scaled = np.sqrt(rho[support])[:, None] * phi[support]
    dep = _dependent_columns(scaled)
    if dep:
        raise RankDeficiencyError(
            f"basis columns {dep} are linearly dependent on the support of rho; "
            "pass ridge > 0 to regularise", dep)
    return np.linalg.solve(gram, rhs)


def fixed_point_weights(chain: MarkovChain, phi, rho=None, unweighted: bool = False,
                        check_tol: float = 1e-8) -> np.ndarray:
    """Weights w with phi w equal to the projected backup of phi w.

    The default weighting is the chain's stationary distribution (computed if
    ``rho`` is None).  ``unweighted=True`` gives the plain normal-equation form
    (Phi^T (Phi - gamma P Phi))^-1 Phi^T R.
    """
    phi = np.asarray(phi, dtype=float)
    n = chain.n_states
    if unweighted:
        rho = np.full(n, 1.0)
    elif rho is None:
        rho = stationary_distribution(chain)
    rho = np.asarray(rho, dtype=float)
    P_phi = chain.transitions @ phi
    A = phi.T @ (rho[:, None] * (phi - chain.discount * P_phi))
    b = phi.T @ (rho * chain.rewards)
    try:
        w = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"projected fixed-point system is singular: {exc}") from exc
    if np.linalg.cond(A) > 1e14:
        raise np.linalg.LinAlgError("projected fixed-point system is numerically singular")
    target = chain.rewards + chain.discount * (P_phi @ w)
    back = project_weighted(phi, rho, target, ridge=None)
    err = float(np.abs(phi @ (back - w)).max())
    if err > check_tol * max(1.0, float(np.abs(phi @ w).max())):
        raise np.linalg.LinAlgError(f"fixed-point verification failed (residual {err:.3e})")
    return w


def pythagorean_bound(chain: MarkovChain, phi, rho=None) -> tuple[float, float]:
    """(||V* - V_hat||_rho, ||V* - Proj V*||_rho / sqrt(1 - gamma^2)).

    The first never exceeds the second when rho is the stationary distribution.
    """
    phi = np.asarray(phi, dtype=float)
    if rho is None:
        rho = stationary_distribution(chain)
    v_star = chain.exact_values()
    w = fixed_point_weights(chain, phi, rho)
    lhs = weighted_norm(v_star - phi @ w, rho)
    proj = phi @ project_weighted(phi, rho, v_star)
    rhs = float(weighted_norm(v_star - proj, rho) / np.sqrt(1.0 - chain.discount ** 2))
    if lhs > rhs + 1e-9:
        raise AssertionError(f"projection bound violated: {lhs:.6g} > {rhs:.6g}")
    return lhs, rhs

"""Random instances and independent oracles shared by the test modules."""

import itertools

import numpy as np
import scipy.sparse as sp

from zsmg.game import TabularGame
from zsmg.lspi import SampleCorpus


def random_game(rng, n=5, m=3, l=3, gamma=0.9, denom=None, max_succ=3, reward_scale=1.0):
    """Random game; with ``denom`` every probability is a multiple of 1/denom."""
    rows, cols, vals = [], [], []
    for r in range(n * m * l):
        k = int(rng.integers(1, max_succ + 1))
        succ = rng.choice(n, size=k, replace=False)
        if denom is None:
            p = rng.dirichlet(np.ones(k))
        else:
            cuts = np.sort(rng.integers(0, denom + 1, size=k - 1))
            counts = np.diff(np.concatenate([[0], cuts, [denom]]))
            p = counts / denom
        for s2, pr in zip(succ, p):
            if pr > 0:
                rows.append(r)
                cols.append(int(s2))
                vals.append(float(pr))
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n * m * l, n))
    R = rng.normal(scale=reward_scale, size=(n, m, l))
    return TabularGame(P, R, gamma)


def exhaustive_corpus(game, denom, env="random"):
    """Every (s, a, o, s') transition repeated denom * P times."""
    n, m, l = game.shape
    out = []
    for s, a, o in itertools.product(range(n), range(m), range(l)):
        for s2, p in game.successors(s, a, o):
            c = int(round(p * denom))
            assert abs(c - p * denom) < 1e-9
            out.extend([(s, a, o, float(game.rewards[s, a, o]), s2, False)] * c)
    return SampleCorpus.from_samples(out, env)


def enumerate_maximin(M):
    """Exact maximin value by enumerating square supports (vertex enumeration)."""
    M = np.asarray(M, dtype=float)
    m, l = M.shape
    best = -np.inf
    for k in range(1, min(m, l) + 1):
        rows = list(itertools.combinations(range(m), k))
        cols = list(itertools.combinations(range(l), k))
        mats = []
        for S in rows:
            for T in cols:
                A = np.zeros((k + 1, k + 1))
                A[:k, :k] = M[np.ix_(S, T)].T
                A[:k, k] = -1.0
                A[k, :k] = 1.0
                mats.append(A)
        mats = np.array(mats)
        rhs = np.zeros((len(mats), k + 1))
        rhs[:, k] = 1.0
        det = np.linalg.det(mats)
        ok = np.abs(det) > 1e-12
        sol = np.zeros_like(rhs)
        sol[ok] = np.linalg.solve(mats[ok], rhs[ok][..., None])[..., 0]
        idx = 0
        for S in rows:
            for T in cols:
                if ok[idx]:
                    pi_s = sol[idx, :k]
                    if pi_s.min() >= -1e-12:
                        pi = np.zeros(m)
                        pi[list(S)] = np.clip(pi_s, 0, None)
                        pi /= pi.sum()
                        best = max(best, float((pi @ M).min()))
                idx += 1
    return best


def grid_maximin_3(M, step=1e-3):
    """Maximin of a 3-row matrix by grid search over the simplex."""
    M = np.asarray(M, dtype=float)
    n = int(round(1 / step))
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    keep = i + j <= n
    p = np.stack([i[keep], j[keep], n - i[keep] - j[keep]], axis=1) / n
    return float((p @ M).min(axis=1).max())


def naive_t_pi(game, q, pi):
    """Direct summation backup for a fixed policy."""
    n, m, l = game.shape
    out = np.zeros_like(q)
    for s in range(n):
        for a in range(m):
            for o in range(l):
                tot = game.rewards[s, a, o]
                for s2, p in game.successors(s, a, o):
                    if game.terminal_mask[s2]:
                        continue
                    best = min(sum(pi[s2, a2] * q[s2, a2, o2] for a2 in range(m)) for o2 in range(l))
                    tot += game.discount * p * best
                out[s, a, o] = tot
    return out


def mdp_value_iteration(game, tol=1e-12):
    """Single-opponent-action game solved as an MDP by plain max backups."""
    n, m, l = game.shape
    assert l == 1
    P = game.transitions.toarray().reshape(n, m, n)
    R = game.rewards[:, :, 0]
    v = np.zeros(n)
    while True:
        q = R + game.discount * P @ v
        v_new = q.max(axis=1)
        if np.abs(v_new - v).max() < tol:
            return (R + game.discount * P @ v_new)[:, :, None]
        v = v_new


def random_chain(rng, n=6, gamma=0.9, density=0.6):
    """Random irreducible aperiodic chain (a self-loop and a cycle keep it ergodic)."""
    from zsmg.linapprox import MarkovChain

    P = rng.random((n, n)) * (rng.random((n, n)) < density)
    P[np.arange(n), (np.arange(n) + 1) % n] += 0.2
    P[np.arange(n), np.arange(n)] += 0.1
    P /= P.sum(axis=1, keepdims=True)
    return MarkovChain(sp.csr_matrix(P), rng.normal(size=n), gamma)


def eig_stationary(P):
    """Stationary distribution from the left eigenvector for eigenvalue 1."""
    vals, vecs = np.linalg.eig(np.asarray(P).T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    return v / v.sum()

"""Experiment engine: random-game corpora, players, tournaments and learning curves.

Every random draw comes from ``numpy.random.default_rng`` seeded with a tuple
``(seed, ...)`` that names the repetition and game, so results do not depend
on evaluation order or on how work is split between processes.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .game import TabularGame
from .linapprox import FeatureMap, WeightVector
from .lspi import SampleCorpus, lspi
from .matrix_lp import solve_maximin

log = logging.getLogger(__name__)

A_WIN, DRAW, B_WIN = 1, 0, -1


# --- players -----------------------------------------------------------------

class Player:
    """Maps (state, role) to a mixed strategy over that role's actions.

    Role "A" is the maximising agent (rows), role "B" the minimising
    opponent (columns).
    """

    name = "player"

    def strategy(self, state, role: str) -> np.ndarray:
        raise NotImplementedError


class RandomPlayer(Player):
    name = "random"

    def __init__(self, n_agent_actions: int, n_opp_actions: int):
        self._uniform = {"A": np.full(n_agent_actions, 1.0 / n_agent_actions),
                         "B": np.full(n_opp_actions, 1.0 / n_opp_actions)}

    def strategy(self, state, role):
        return self._uniform[role]


class _CachedPlayer(Player):
    def __init__(self):
        self._cache: dict = {}

    def strategy(self, state, role):
        key = (state, role)
        hit = self._cache.get(key)
        if hit is None:
            m = self.payoff(state)
            hit = solve_maximin(m if role == "A" else -m.T).strategy
            self._cache[key] = hit
        return hit

    def payoff(self, state) -> np.ndarray:
        raise NotImplementedError

    def __getstate__(self):
        d = self.__dict__.copy()
        d["_cache"] = {}
        return d


class ExactPlayer(_CachedPlayer):
    """Plays the minimax strategies of a tabular Q-function (either side)."""

    name = "exact"

    def __init__(self, q: np.ndarray):
        super().__init__()
        self.q = np.asarray(q, dtype=float)

    def payoff(self, state):
        return self.q[int(state)]


class ApproxPlayer(_CachedPlayer):
    """Minimax strategies of phi(s, ., .)^T w; the same weights serve both sides."""

    name = "lspi"

    def __init__(self, weights, features: FeatureMap, name: str | None = None):
        super().__init__()
        self.w = np.asarray(weights.w if isinstance(weights, WeightVector) else weights, dtype=float)
        if self.w.shape != (features.dim,):
            raise ValueError(f"weights have {self.w.shape[0]} entries, features need {features.dim}")
        self.features = features
        if name:
            self.name = name

    def payoff(self, state):
        return self.features.q_matrix(state, self.w)


class FixedPlayer(Player):
    """Externally supplied strategy tables, one per role (n_states x n_actions)."""

    name = "fixed"

    def __init__(self, table_a=None, table_b=None):
        self.tables = {"A": table_a, "B": table_b}

    def strategy(self, state, role):
        table = self.tables[role]
        if table is None:
            raise ValueError(f"fixed player has no strategy table for role {role}")
        return table[int(state)]


# --- games -------------------------------------------------------------------

@dataclass(frozen=True)
class GameResult:
    outcome: int
    steps: int
    discounted_score: float
    transcript: tuple = ()


def _draw(strategy: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(np.cumsum(strategy), u * strategy.sum(), side="right"))
    return min(idx, len(strategy) - 1)


def play_game(env, player_a: Player, player_b: Player, max_steps: int, seed,
              record: bool = False) -> GameResult:
    """One game; a game with no terminal transition within ``max_steps`` is a draw.

    The discounted score is sum_t gamma^t r_t from A's side (for soccer:
    +-gamma^t at the scoring step).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    gamma = env.discount
    s = env.reset(rng)
    score, disc = 0.0, 1.0
    log_ = []
    for t in range(max_steps):
        a = _draw(player_a.strategy(s, "A"), rng.random())
        o = _draw(player_b.strategy(s, "B"), rng.random())
        s2, r, done = env.step(s, a, o, rng)
        if record:
            log_.append((s, a, o, r, s2, done))
        score += disc * r
        disc *= gamma
        s = s2
        if done:
            outcome = A_WIN if r > 0 else B_WIN if r < 0 else DRAW
            return GameResult(outcome, t + 1, score, tuple(log_))
    return GameResult(DRAW, max_steps, score, tuple(log_))


def mean_ci(values, level: float = 0.95) -> tuple[float, float | None]:
    """Sample mean and Student-t confidence half-width (None for fewer than two values)."""
    values = np.asarray(values, dtype=float)
    mean = float(values.mean()) if len(values) else float("nan")
    if len(values) < 2:
        return mean, None
    sem = float(values.std(ddof=1)) / np.sqrt(len(values))
    return mean, float(stats.t.ppf(0.5 + level / 2, len(values) - 1) * sem)


@dataclass
class TournamentResult:
    """Outcomes for the first player (X) against the second (Y)."""

    games: int = 0
    wins: int = 0
    draws: int = 0
    losses: int = 0
    total_discounted_score: float = 0.0
    repetitions: list = field(default_factory=list)

    def rate(self, what: str) -> float:
        return getattr(self, what) / self.games if self.games else float("nan")

    def per_repetition(self, what: str) -> np.ndarray:
        """Per-repetition rate of wins/draws/losses/win_draw, or mean score."""
        out = []
        for rep in self.repetitions:
            if what == "win_draw":
                out.append((rep["wins"] + rep["draws"]) / rep["games"])
            elif what == "score":
                out.append(rep["score"] / rep["games"])
            else:
                out.append(rep[what] / rep["games"])
        return np.array(out)

    def ci(self, what: str, level: float = 0.95) -> tuple[float, float | None]:
        return mean_ci(self.per_repetition(what), level)

    def mirrored(self) -> "TournamentResult":
        reps = [dict(r, wins=r["losses"], losses=r["wins"], score=-r["score"]) for r in self.repetitions]
        return TournamentResult(self.games, self.losses, self.draws, self.wins,
                                -self.total_discounted_score, reps)


def _seed(seed, *more) -> list[int]:
    """Entropy list for default_rng from an int or a sequence of ints plus extra keys."""
    base = [int(seed)] if np.isscalar(seed) else [int(x) for x in seed]
    return base + [int(x) for x in more]


def _run_repetition(env, x: Player, y: Player, games: int, max_steps: int, seed, rep: int,
                    swap_roles: bool) -> dict:
    wins = draws = losses = 0
    scores = np.empty(games)
    x_as_a = 0
    for g in range(games):
        rng = np.random.default_rng(_seed(seed, rep, g))
        as_a = (rng.random() < 0.5) if swap_roles else True
        res = play_game(env, x, y, max_steps, rng) if as_a else play_game(env, y, x, max_steps, rng)
        sign = 1 if as_a else -1
        outcome = sign * res.outcome
        wins += outcome == A_WIN
        losses += outcome == B_WIN
        draws += outcome == DRAW
        scores[g] = sign * res.discounted_score
        x_as_a += as_a
    _, hw = mean_ci(scores)
    return {"games": games, "wins": wins, "draws": draws, "losses": losses,
            "score": float(scores.sum()), "score_ci": hw, "x_as_a": x_as_a,
            "score_sq": float((scores ** 2).sum())}


def tournament(env, player_x: Player, player_y: Player, games: int = 1000, max_steps: int = 100,
               repetitions: int = 1, seed: int = 0, swap_roles: bool = True,
               workers: int = 1) -> TournamentResult:
    """``repetitions`` independent tournaments of ``games`` games each.

    With ``swap_roles`` each game flips a seeded coin for which side X plays;
    results are always reported from X's point of view.
    """
    args = [(env, player_x, player_y, games, max_steps, seed, r, swap_roles) for r in range(repetitions)]
    if workers > 1 and repetitions > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(_run_repetition_star, args))
    else:
        reps = [_run_repetition(*a) for a in args]
    res = TournamentResult(repetitions=reps)
    for r in reps:
        res.games += r["games"]
        res.wins += r["wins"]
        res.draws += r["draws"]
        res.losses += r["losses"]
        res.total_discounted_score += r["score"]
    return res


def _run_repetition_star(args):
    return _run_repetition(*args)


# --- corpora -----------------------------------------------------------------

def collect_random_games(env, n_games: int, max_steps: int, seed: int,
                         max_samples: int | None = None) -> SampleCorpus:
    """Episodes of independent uniform play, each truncated at ``max_steps``.

    If ``max_samples`` is given, whole episodes are dropped from the end until
    the corpus fits.
    """
    m, l = env.n_agent_actions, env.n_opp_actions
    episodes = []
    for i in range(n_games):
        rng = np.random.default_rng(_seed(seed, i))
        s = env.reset(rng)
        ep = []
        for _ in range(max_steps):
            a = int(rng.integers(m))
            o = int(rng.integers(l))
            s2, r, done = env.step(s, a, o, rng)
            ep.append((s, a, o, r, s2, done))
            s = s2
            if done:
                break
        episodes.append(ep)
    if max_samples is not None:
        total = sum(len(e) for e in episodes)
        while episodes and total > max_samples:
            total -= len(episodes.pop())
    samples = [x for ep in episodes for x in ep]
    meta = {"seed": seed if np.isscalar(seed) else list(seed), "games": n_games, "episodes": len(episodes), "max_steps": max_steps,
            "max_samples": max_samples, "episode_lengths": [len(e) for e in episodes]}
    return SampleCorpus.from_samples(samples, env.name, meta)


def first_episodes(corpus: SampleCorpus, n: int) -> SampleCorpus:
    """Prefix of a collected corpus holding its first ``n`` episodes."""
    lengths = corpus.meta.get("episode_lengths")
    if lengths is None:
        raise ValueError("corpus has no episode boundaries")
    n = min(n, len(lengths))
    cut = int(sum(lengths[:n]))
    sub = corpus.subset(slice(0, cut))
    sub.meta.update(episodes=n, games=n, episode_lengths=list(lengths[:n]))
    return sub


# --- protocols -----------------------------------------------------------------

@dataclass(frozen=True)
class Protocol:
    games: int = 1000
    max_steps: int = 100
    repetitions: int = 20
    collect_max_steps: int = 1000
    max_samples: int | None = None
    lspi_max_iter: int = 25
    lspi_tol: float = 1e-4
    ridge: float | None = None
    seed: int = 0
    swap_roles: bool = True

    def scaled(self, **kw) -> "Protocol":
        return replace(self, **kw)


def build_benchmark_player(config, features: FeatureMap, discount: float | None = None,
                           max_iter: int = 25, tol: float = 1e-4, ridge: float | None = None):
    """LSPI on the exhaustive two-ordering corpus (uniform weighting over (s, a, o)).

    Returns ``(player, weights)``.
    """
    from .soccer import two_ordering_corpus

    corpus = two_ordering_corpus(config)
    gamma = config.discount if discount is None else discount
    weights, deltas = lspi(corpus, features, gamma, max_iter=max_iter, tol=tol, ridge=ridge)
    weights.meta.update(kind="benchmark", corpus_size=len(corpus))
    log.info("benchmark %s: %d samples, %d LSPI iterations", config.name, len(corpus), len(deltas))
    return ApproxPlayer(weights, features, name="benchmark"), weights


def train_player(corpus: SampleCorpus, features: FeatureMap, discount: float, protocol: Protocol):
    weights, _ = lspi(corpus, features, discount, max_iter=protocol.lspi_max_iter,
                      tol=protocol.lspi_tol, ridge=protocol.ridge)
    return ApproxPlayer(weights, features), weights


def learning_curve(env, sizes, features: FeatureMap, opponent: Player, protocol: Protocol,
                   experiment: str = "curve", on_row=None, role: str | None = None,
                   on_trained=None, workers: int = 1) -> list[dict]:
    """Train on the first n random games for each n in ``sizes`` and play the opponent.

    One row per (size, repetition).  Size 0 is the uniform random player.
    Within a repetition all sizes share one collected corpus (nested prefixes).
    ``role`` pins the learner to side "A" or "B"; by default sides are drawn per
    game.  ``on_trained(n, rep, player)`` sees every trained player.  With
    ``workers > 1`` repetitions run in separate processes; rows are identical.
    """
    sizes = sorted(int(n) for n in sizes)
    args = [(env, sizes, features, opponent, protocol, experiment, role, rep)
            for rep in range(protocol.repetitions)]
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_curve_repetition_star, args))
    else:
        results = (_curve_repetition(*a) for a in args)
    rows = []
    for rep_rows in results:
        for row, player in rep_rows:
            if on_trained is not None:
                on_trained(row["corpus_games"], row["repetition"], player)
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return rows


def _curve_repetition(env, sizes, features, opponent, protocol, experiment, role, rep):
    biggest = max(sizes) if sizes else 0
    corpus = collect_random_games(env, biggest, protocol.collect_max_steps,
                                  seed=_seed(protocol.seed, rep, 0))
    out = []
    for n in sizes:
        if n == 0:
            player = RandomPlayer(env.n_agent_actions, env.n_opp_actions)
            iters = 0
        else:
            sub = first_episodes(corpus, n)
            if protocol.max_samples is not None and len(sub) > protocol.max_samples:
                sub = _cap_episodes(sub, protocol.max_samples)
            player, weights = train_player(sub, features, env.discount, protocol)
            iters = weights.meta["iterations"]
        eval_seed = _seed(protocol.seed, rep, 1, n)
        if role == "B":
            res = tournament(env, opponent, player, protocol.games, protocol.max_steps, 1,
                             seed=eval_seed, swap_roles=False).mirrored()
        else:
            res = tournament(env, player, opponent, protocol.games, protocol.max_steps, 1,
                             seed=eval_seed, swap_roles=protocol.swap_roles and role is None)
        row = {"experiment": experiment, "corpus_games": n, "repetition": rep,
               "wins": res.wins, "draws": res.draws, "losses": res.losses,
               "discounted_score": res.total_discounted_score / res.games,
               "ci_halfwidth": res.repetitions[0]["score_ci"], "lspi_iterations": iters}
        log.info("%s n=%d rep=%d: W/D/L %d/%d/%d", experiment, n, rep, res.wins, res.draws, res.losses)
        out.append((row, player))
    return out


def _curve_repetition_star(args):
    return _curve_repetition(*args)


def _cap_episodes(corpus: SampleCorpus, max_samples: int) -> SampleCorpus:
    lengths = list(corpus.meta["episode_lengths"])
    while lengths and sum(lengths) > max_samples:
        lengths.pop()
    return first_episodes(corpus, len(lengths))


def summarize_curve(rows, key: str = "corpus_games") -> list[dict]:
    """Per-size means with 95% Student-t half-widths over repetitions."""
    out = []
    for n in sorted({r[key] for r in rows}):
        sel = [r for r in rows if r[key] == n]
        games = np.array([r["wins"] + r["draws"] + r["losses"] for r in sel], dtype=float)
        entry = {key: n, "repetitions": len(sel)}
        for what in ("wins", "draws", "losses"):
            entry[what], entry[what + "_ci"] = mean_ci([r[what] for r in sel])
        entry["win_draw_rate"], entry["win_draw_rate_ci"] = mean_ci(
            [(r["wins"] + r["draws"]) / g for r, g in zip(sel, games)])
        entry["loss_rate"], entry["loss_rate_ci"] = mean_ci([r["losses"] / g for r, g in zip(sel, games)])
        entry["discounted_score"], entry["discounted_score_ci"] = mean_ci([r["discounted_score"] for r in sel])
        out.append(entry)
    return out


def trend_statistic(summary, value: str = "discounted_score", key: str = "corpus_games") -> float:
    """Spearman rank correlation between corpus size and a summarised value (reported only)."""
    xs = [e[key] for e in summary]
    ys = [e[value] for e in summary]
    if len(xs) < 3:
        return float("nan")
    return float(stats.spearmanr(xs, ys).statistic)


def cross_grid_transfer(weights, target_config, opponent: Player, protocol: Protocol,
                        extended: bool = True) -> TournamentResult:
    """Evaluate soccer weights on another grid; the features are scale-free so w is reused."""
    from .soccer import SoccerEnv, SoccerFeatures

    features = SoccerFeatures(target_config, extended)
    player = ApproxPlayer(weights, features)
    env = SoccerEnv(target_config)
    return tournament(env, player, opponent, protocol.games, protocol.max_steps,
                      protocol.repetitions, protocol.seed, protocol.swap_roles)


def policy_agreement(game: TabularGame, q_opt: np.ndarray, player: Player, role: str = "A") -> float:
    """Fraction of non-terminal states where the player's most likely action matches the optimum's."""
    hits = 0
    live = np.flatnonzero(~game.terminal_mask)
    for s in live:
        m = q_opt[s]
        opt = solve_maximin(m if role == "A" else -m.T).strategy
        mine = player.strategy(int(s), role)
        hits += int(np.argmax(opt) == np.argmax(mine))
    return hits / len(live)

"""Grid soccer as a two-player zero-sum Markov game.

Player A starts in column 0 and scores by carrying the ball off the right
edge inside the goal zone; player B starts in column C-1 and scores off the
left edge.  Each step a fair coin decides who moves first; moves into a wall
or the other player are cancelled, and a ball carrier bumping into the
defender loses the ball.  Rewards are from A's point of view.

States are encoded as ``(pos_a * (N - 1) + pos_b') * 2 + ball`` with
``N = rows * cols``, ``pos = row * cols + col``, ``pos_b'`` skipping
``pos_a`` and ``ball`` 0 for A, 1 for B.  The encoding is a bijection onto
``0 .. N(N-1)*2 - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .game import TabularGame
from .linapprox import BlockFeatureMap
from .lspi import SampleCorpus

UP, DOWN, LEFT, RIGHT, STAND = range(5)
ACTIONS = "UDLRS"
N_ACTIONS = 5
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))
MIRROR = (UP, DOWN, RIGHT, LEFT, STAND)
BALL_A, BALL_B = 0, 1
ENUM_CAP = 100_000


@dataclass(frozen=True)
class SoccerConfig:
    rows: int = 4
    cols: int = 4
    discount: float = 0.9
    goal_zone: tuple[int, int] = field(default=None)

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("soccer grid needs at least 2 rows and 2 columns")
        if self.goal_zone is None:
            r = self.rows
            zone = (r // 2 - 1, r // 2) if r % 2 == 0 else (r // 2, r // 2)
            object.__setattr__(self, "goal_zone", zone)
        lo, hi = self.goal_zone
        if not 0 <= lo <= hi < self.rows or lo != self.rows - 1 - hi:
            raise ValueError(f"goal zone {self.goal_zone} must be a centred band of rows")

    @property
    def name(self) -> str:
        return f"soccer{self.rows}x{self.cols}"

    @property
    def cells(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class SoccerState:
    pos_a: tuple[int, int]
    pos_b: tuple[int, int]
    ball: int


def state_count(config: SoccerConfig) -> int:
    n = config.cells
    return n * (n - 1) * 2


def q_value_count(config: SoccerConfig) -> int:
    return state_count(config) * N_ACTIONS * N_ACTIONS


def encode(config: SoccerConfig, state: SoccerState) -> int:
    c = config.cols
    pa = state.pos_a[0] * c + state.pos_a[1]
    pb = state.pos_b[0] * c + state.pos_b[1]
    if pa == pb:
        raise ValueError("players cannot share a cell")
    return _code(config.cells, pa, pb, state.ball)


def _code(n: int, pa: int, pb: int, ball: int) -> int:
    return (pa * (n - 1) + (pb if pb < pa else pb - 1)) * 2 + ball


def _uncode(n: int, code: int) -> tuple[int, int, int]:
    rest, ball = divmod(int(code), 2)
    pa, pb = divmod(rest, n - 1)
    if pb >= pa:
        pb += 1
    return pa, pb, ball


def decode(config: SoccerConfig, code: int) -> SoccerState:
    if not 0 <= code < state_count(config):
        raise ValueError(f"state code {code} out of range")
    pa, pb, ball = _uncode(config.cells, code)
    c = config.cols
    return SoccerState(divmod(pa, c), divmod(pb, c), ball)


def enumerate_states(config: SoccerConfig, cap: int = ENUM_CAP) -> np.ndarray:
    n = state_count(config)
    if n > cap:
        raise ValueError(f"{config.name} has {n} states, above the enumeration cap {cap}")
    return np.arange(n)


def reset(config: SoccerConfig, rng: np.random.Generator) -> int:
    """A in a random row of column 0, B in a random row of the last column, ball to either."""
    ra, rb = rng.integers(config.rows, size=2)
    ball = int(rng.integers(2))
    c = config.cols
    return _code(config.cells, int(ra) * c, int(rb) * c + c - 1, ball)


def _move(config: SoccerConfig, mover: int, pa: int, pb: int, ball: int, action: int):
    """Apply one player's move.  Returns (pa, pb, ball, reward, terminal)."""
    c = config.cols
    pos, other = (pa, pb) if mover == BALL_A else (pb, pa)
    r, col = divmod(pos, c)
    dr, dc = MOVES[action]
    lo, hi = config.goal_zone
    if ball == mover and lo <= r <= hi:
        if mover == BALL_A and col == c - 1 and action == RIGHT:
            return pa, pb, ball, 1.0, True
        if mover == BALL_B and col == 0 and action == LEFT:
            return pa, pb, ball, -1.0, True
    nr, nc = r + dr, col + dc
    if not (0 <= nr < config.rows and 0 <= nc < c):
        return pa, pb, ball, 0.0, False
    target = nr * c + nc
    if target == other:
        if ball == mover:
            ball = 1 - mover
        return pa, pb, ball, 0.0, False
    if mover == BALL_A:
        return target, pb, ball, 0.0, False
    return pa, target, ball, 0.0, False


def transition(config: SoccerConfig, code: int, a: int, o: int, a_first: bool):
    """Deterministic outcome for a given move order: (next code, reward, terminal)."""
    if not (0 <= a < N_ACTIONS and 0 <= o < N_ACTIONS):
        raise ValueError(f"invalid action pair ({a}, {o})")
    n = config.cells
    pa, pb, ball = _uncode(n, code)
    order = ((BALL_A, a), (BALL_B, o)) if a_first else ((BALL_B, o), (BALL_A, a))
    for mover, act in order:
        pa, pb, ball, reward, done = _move(config, mover, pa, pb, ball, act)
        if done:
            return _code(n, pa, pb, ball), reward, True
    return _code(n, pa, pb, ball), 0.0, False


def step(config: SoccerConfig, code: int, a: int, o: int, rng: np.random.Generator):
    return transition(config, code, a, o, bool(rng.random() < 0.5))


def exact_model(config: SoccerConfig, cap: int = ENUM_CAP) -> TabularGame:
    """Tabular model with one extra absorbing terminal state (the last index)."""
    n = len(enumerate_states(config, cap))
    goal = n
    rows, cols, vals = [], [], []
    rewards = np.zeros((n + 1, N_ACTIONS, N_ACTIONS))
    for s in range(n):
        for a in range(N_ACTIONS):
            for o in range(N_ACTIONS):
                row = (s * N_ACTIONS + a) * N_ACTIONS + o
                total = 0.0
                for first in (True, False):
                    s2, r, done = transition(config, s, a, o, first)
                    total += r
                    rows.append(row)
                    cols.append(goal if done else s2)
                    vals.append(0.5)
                rewards[s, a, o] = 0.5 * total
    P = sp.csr_matrix((vals, (rows, cols)), shape=((n + 1) * N_ACTIONS * N_ACTIONS, n + 1))
    terminal = np.zeros(n + 1, dtype=bool)
    terminal[goal] = True
    return TabularGame(P, rewards, config.discount, terminal, config.name)


def two_ordering_corpus(config: SoccerConfig, cap: int = ENUM_CAP) -> SampleCorpus:
    """One sample per move order for every (state, a, o): the uniform benchmark corpus."""
    n = len(enumerate_states(config, cap))
    size = n * N_ACTIONS * N_ACTIONS * 2
    cols = {k: np.empty(size, dtype=t) for k, t in
            (("s", np.int64), ("a", np.int64), ("o", np.int64), ("r", float), ("s2", np.int64), ("t", bool))}
    i = 0
    for s in range(n):
        for a in range(N_ACTIONS):
            for o in range(N_ACTIONS):
                for first in (True, False):
                    s2, r, done = transition(config, s, a, o, first)
                    cols["s"][i], cols["a"][i], cols["o"][i] = s, a, o
                    cols["r"][i], cols["s2"][i], cols["t"][i] = r, s2, done
                    i += 1
    return SampleCorpus(cols["s"], cols["a"], cols["o"], cols["r"], cols["s2"], cols["t"],
                        env=config.name, meta={"kind": "two-ordering", "states": n})


def mirror_state(config: SoccerConfig, code: int) -> int:
    """Swap player identities and reflect columns: the same situation seen from the other side."""
    n, c = config.cells, config.cols
    pa, pb, ball = _uncode(n, code)

    def flip(p):
        r, col = divmod(p, c)
        return r * c + (c - 1 - col)

    return _code(n, flip(pb), flip(pa), 1 - ball)


# --- role-relative features -------------------------------------------------

BASIC_CASES = (4, 8, 7, 17)
EXTENDED_CASES = (9, 12, 15, 20)
BASIC_WIDTH = sum(BASIC_CASES)
EXTENDED_WIDTH = sum(EXTENDED_CASES)
# defender offsets (forward, down) from the attacker at Manhattan distance 1..2,
# minus the two cells straight behind the attacker
DEFENDER_OFFSETS = tuple(
    (dx, dy) for dx in range(-2, 3) for dy in range(-2, 3)
    if 1 <= abs(dx) + abs(dy) <= 2 and not (dy == 0 and dx < 0)
)
_EXTRA_OFFSET = BASIC_WIDTH
_EXTRA_CASE_START = (0, 5, 9, 17)


def attack_frame(config: SoccerConfig, code: int):
    """(attacker_is_a, attacker (row, fwd), defender (row, fwd)) with fwd pointing at the defended goal."""
    n, c = config.cells, config.cols
    pa, pb, ball = _uncode(n, code)
    att, dfd = (pa, pb) if ball == BALL_A else (pb, pa)
    ar, ac = divmod(att, c)
    dr, dc = divmod(dfd, c)
    if ball == BALL_B:
        ac, dc = c - 1 - ac, c - 1 - dc
    return ball == BALL_A, (ar, ac), (dr, dc)


def propositions(config: SoccerConfig, code: int) -> tuple[bool, bool]:
    """(attacker nearer the defended goal line than the defender, defender within distance 2)."""
    _, (ar, ac), (dr, dc) = attack_frame(config, code)
    return ac > dc, abs(ar - dr) + abs(ac - dc) <= 2


def _quantities(config: SoccerConfig, code: int) -> dict:
    _, (ar, ac), (dr, dc) = attack_frame(config, code)
    R, C = config.rows, config.cols
    lo, hi = config.goal_zone
    v_scale = max(lo, R - 1 - hi, 1)
    if ar < lo:
        sv = (lo - ar) / v_scale
    elif ar > hi:
        sv = -(ar - hi) / v_scale
    else:
        sv = 0.0
    q = {
        "DH": (C - 1 - ac) / (C - 1),
        "SV": sv,
        "PAUG": float(ar == lo),
        "PALG": float(ar == hi),
        "PAWG": float(lo <= ar <= hi),
        "SDH": (dc - ac) / (C - 1),
        "SDV": (dr - ar) / (R - 1),
        "PDGDL": float(dc == C - 1),
        "PDWG": float(lo <= dr <= hi),
        "offset": (dc - ac, dr - ar),
        "P1": ac > dc,
        "P2": abs(ar - dr) + abs(ac - dc) <= 2,
    }
    q["DHSV"] = q["DH"] * q["SV"]
    return q


def _case(q) -> int:
    if q["P1"]:
        return 1 if q["P2"] else 0
    return 3 if q["P2"] else 2


def basic_block(config: SoccerConfig, code: int) -> np.ndarray:
    q = _quantities(config, code)
    out = np.zeros(BASIC_WIDTH)
    case = _case(q)
    if case == 0:
        out[0:4] = (1.0, q["DH"], q["SV"], q["DHSV"])
    elif case == 1:
        out[4:12] = (1.0, q["DH"], q["SV"], q["DHSV"], q["PAUG"], q["PALG"], q["SDH"], q["SDV"])
    elif case == 2:
        out[12:19] = (1.0, q["DH"], q["SV"], q["DHSV"], q["PAUG"], q["PALG"], q["SDV"])
    else:
        out[19:26] = (q["DH"], q["SV"], q["DHSV"], q["PAUG"], q["PALG"], q["PDGDL"], q["PDWG"])
        if q["offset"] in DEFENDER_OFFSETS:
            out[26 + DEFENDER_OFFSETS.index(q["offset"])] = 1.0
    return out


def extended_block(config: SoccerConfig, code: int) -> np.ndarray:
    q = _quantities(config, code)
    out = np.zeros(EXTENDED_WIDTH)
    out[:BASIC_WIDTH] = basic_block(config, code)
    case = _case(q)
    dh2, sv2 = q["DH"] ** 2, q["SV"] ** 2
    if case == 0:
        extra = (dh2, sv2, q["PAUG"], q["PALG"], q["PAWG"])
    elif case == 1:
        extra = (dh2, sv2, q["PAWG"], q["SDH"] * q["SDV"])
    elif case == 2:
        extra = (dh2, sv2, q["PAWG"], q["SDH"], q["SDV"] ** 2, q["SDH"] ** 2,
                 q["SDH"] * q["SDV"], q["PDWG"])
    else:
        extra = (dh2, sv2, q["PAWG"])
    start = _EXTRA_OFFSET + _EXTRA_CASE_START[case]
    out[start:start + len(extra)] = extra
    return out


_PAIRS_A = np.arange(25).reshape(5, 5)
# B attacking: attacker action is o, defender action is a, both mirrored left/right
_PAIRS_B = np.array([[MIRROR[o] * 5 + MIRROR[a] for o in range(5)] for a in range(5)])


class SoccerFeatures(BlockFeatureMap):
    """Role-relative soccer features from A's perspective.

    The block for a joint action is chosen by (attacker action, defender
    action) in the attacker's frame, and the sign is flipped when B holds the
    ball, so one weight vector values both offence and defence.
    """

    def __init__(self, config: SoccerConfig, extended: bool = False):
        width = EXTENDED_WIDTH if extended else BASIC_WIDTH
        super().__init__(width, N_ACTIONS, N_ACTIONS, "extended" if extended else "basic")
        self.config = config
        self.extended = extended
        cases = EXTENDED_CASES if extended else BASIC_CASES
        if sum(cases) != width or self.dim != width * 25:
            raise AssertionError("soccer feature block does not add up")

    def with_config(self, config: SoccerConfig) -> "SoccerFeatures":
        return SoccerFeatures(config, self.extended)

    def base(self, state) -> np.ndarray:
        return (extended_block if self.extended else basic_block)(self.config, int(state))

    def layout(self, state):
        if int(state) % 2 == BALL_A:
            return _PAIRS_A, 1.0
        return _PAIRS_B, -1.0

    def attacker_phi(self, state, att_action: int, def_action: int) -> np.ndarray:
        """phi in attacker terms, with actions in the attacker's frame; no sign flip."""
        out = np.zeros(self.dim)
        blk = att_action * 5 + def_action
        out[blk * self.width:(blk + 1) * self.width] = self.base(state)
        return out


def case_slices(extended: bool = False) -> list[list[int]]:
    """Block-local slot indices of each case (P1&~P2, P1&P2, ~P1&~P2, ~P1&P2)."""
    basic = [list(range(0, 4)), list(range(4, 12)), list(range(12, 19)), list(range(19, 36))]
    if not extended:
        return basic
    sizes = (5, 4, 8, 3)
    return [b + list(range(_EXTRA_OFFSET + st, _EXTRA_OFFSET + st + sz))
            for b, st, sz in zip(basic, _EXTRA_CASE_START, sizes)]


class SoccerEnv:
    """Simulator facade used by the experiment harness."""

    n_agent_actions = N_ACTIONS
    n_opp_actions = N_ACTIONS

    def __init__(self, config: SoccerConfig):
        self.config = config

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def discount(self) -> float:
        return self.config.discount

    @property
    def n_states(self) -> int:
        return state_count(self.config)

    def reset(self, rng):
        return reset(self.config, rng)

    def step(self, state, a, o, rng):
        return step(self.config, state, a, o, rng)

    def features(self, kind: str = "basic") -> SoccerFeatures:
        if kind not in ("basic", "extended"):
            raise ValueError(f"soccer has no {kind!r} features")
        return SoccerFeatures(self.config, kind == "extended")

    def exact_model(self) -> TabularGame:
        return exact_model(self.config)

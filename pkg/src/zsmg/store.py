"""Versioned text formats for corpora, weights, games, solutions and results.

Corpus files are line oriented: one JSON header line, then one record per
line ``state,a,o,reward,next_state,terminal`` with rewards written to 17
significant digits so that floats survive a round trip bit-for-bit.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .game import TabularGame
from .linapprox import MarkovChain, WeightVector
from .lspi import GameSample, SampleCorpus
from .optout import OptOutGame

CORPUS_FORMAT = "zsmg-corpus"
WEIGHTS_FORMAT = "zsmg-weights"
GAME_FORMAT = "zsmg-game"
SOLUTION_FORMAT = "zsmg-solution"
OPTOUT_FORMAT = "zsmg-optout"
VERSION = 1
RESULT_COLUMNS = ("experiment", "corpus_games", "repetition", "wins", "draws", "losses",
                  "discounted_score", "ci_halfwidth")


class FormatError(ValueError):
    """A file does not follow its declared format."""


def _num(x: float) -> str:
    return format(float(x), ".17g")


def _check_header(doc: dict, fmt: str, where: str):
    if not isinstance(doc, dict):
        raise FormatError(f"{where}: expected a JSON object")
    if doc.get("format") != fmt:
        raise FormatError(f"{where}: format is {doc.get('format')!r}, expected {fmt!r}")
    if doc.get("version") != VERSION:
        raise FormatError(f"{where}: unsupported {fmt} version {doc.get('version')!r}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


# --- corpora -------------------------------------------------------------------

def write_corpus(path, corpus: SampleCorpus):
    header = {"format": CORPUS_FORMAT, "version": VERSION, "env": corpus.env,
              "samples": len(corpus), "meta": _jsonable(corpus.meta)}
    for key in ("seed", "episodes"):
        if key in corpus.meta:
            header[key] = _jsonable(corpus.meta[key])
    with open(path, "w", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for s, a, o, r, s2, t in zip(corpus.states.tolist(), corpus.agent_actions.tolist(),
                                     corpus.opp_actions.tolist(), corpus.rewards.tolist(),
                                     corpus.next_states.tolist(), corpus.terminals.tolist()):
            fh.write(f"{s},{a},{o},{_num(r)},{s2},{int(t)}\n")


def _parse_record(line: str, lineno: int, path) -> GameSample:
    parts = line.rstrip("\n").split(",")
    if len(parts) != 6:
        raise FormatError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
    try:
        s, a, o, s2 = int(parts[0]), int(parts[1]), int(parts[2]), int(parts[4])
        r = float(parts[3])
        if parts[5] not in ("0", "1"):
            raise ValueError("terminal flag must be 0 or 1")
    except ValueError as exc:
        raise FormatError(f"{path}:{lineno}: {exc}") from exc
    if not np.isfinite(r):
        raise FormatError(f"{path}:{lineno}: non-finite reward")
    return GameSample(s, a, o, r, s2, parts[5] == "1")


def read_corpus_header(path) -> dict:
    with open(path) as fh:
        first = fh.readline()
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:1: header is not JSON ({exc})") from exc
    _check_header(header, CORPUS_FORMAT, f"{path}:1")
    return header


def iter_corpus(path):
    """Stream the records of a corpus file without loading it whole."""
    read_corpus_header(path)
    with open(path) as fh:
        fh.readline()
        for lineno, line in enumerate(fh, start=2):
            if line.strip():
                yield _parse_record(line, lineno, path)


def read_corpus(path, env=None) -> SampleCorpus:
    """Load a corpus; with ``env`` given, check its id and the state/action domains."""
    header = read_corpus_header(path)
    if env is not None and header["env"] != env.name:
        raise FormatError(f"{path}: corpus is for {header['env']!r}, not {env.name!r}")
    samples = list(iter_corpus(path))
    if header.get("samples") is not None and header["samples"] != len(samples):
        raise FormatError(f"{path}: header announces {header['samples']} samples, found {len(samples)}")
    corpus = SampleCorpus.from_samples(samples, header["env"], header.get("meta", {}))
    if env is not None and len(corpus):
        n = getattr(env, "n_states", None)
        if n is not None and (corpus.states.max() >= n or corpus.next_states.max() >= n
                              or min(corpus.states.min(), corpus.next_states.min()) < 0):
            raise FormatError(f"{path}: state codes outside {env.name}'s domain")
        if (corpus.agent_actions.max() >= env.n_agent_actions or corpus.opp_actions.max() >= env.n_opp_actions
                or min(corpus.agent_actions.min(), corpus.opp_actions.min()) < 0):
            raise FormatError(f"{path}: action index outside {env.name}'s domain")
    return corpus


# --- weights -------------------------------------------------------------------

def weights_to_dict(weights: WeightVector) -> dict:
    return {"format": WEIGHTS_FORMAT, "version": VERSION, "features": weights.features,
            "gamma": weights.gamma, "env": weights.env, "k": weights.k,
            "w": weights.w.tolist(), "meta": _jsonable(weights.meta)}


def weights_from_dict(doc: dict, where: str = "weights") -> WeightVector:
    _check_header(doc, WEIGHTS_FORMAT, where)
    for key, kind in (("features", str), ("env", str), ("k", int), ("w", list)):
        if not isinstance(doc.get(key), kind):
            raise FormatError(f"{where}: field '{key}' missing or not {kind.__name__}")
    if not isinstance(doc.get("gamma"), (int, float)):
        raise FormatError(f"{where}: field 'gamma' missing or not a number")
    w = doc["w"]
    if len(w) != doc["k"]:
        raise FormatError(f"{where}: field 'w' has {len(w)} entries but k = {doc['k']}")
    for i, x in enumerate(w):
        if not isinstance(x, (int, float)) or isinstance(x, bool):
            raise FormatError(f"{where}: w[{i}] is not a number")
    return WeightVector(np.array(w, dtype=float), doc["features"], float(doc["gamma"]),
                        doc["env"], dict(doc.get("meta", {})))


def write_weights(path, weights: WeightVector):
    Path(path).write_text(json.dumps(weights_to_dict(weights), sort_keys=True) + "\n")


def read_weights(path) -> WeightVector:
    return weights_from_dict(_load_json(path), str(path))


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc


# --- games -------------------------------------------------------------------

def game_to_dict(game: TabularGame) -> dict:
    n, m, l = game.shape
    P = game.transitions
    rows = []
    for r in range(P.shape[0]):
        lo, hi = P.indptr[r], P.indptr[r + 1]
        rows.append([[int(j), float(p)] for j, p in zip(P.indices[lo:hi], P.data[lo:hi])])
    return {"format": GAME_FORMAT, "version": VERSION, "name": game.name,
            "n_states": n, "n_agent_actions": m, "n_opp_actions": l,
            "discount": game.discount, "terminal": np.flatnonzero(game.terminal_mask).tolist(),
            "rewards": game.rewards.tolist(), "transitions": rows}


def game_from_dict(doc: dict, where: str = "game") -> TabularGame:
    _check_header(doc, GAME_FORMAT, where)
    try:
        n, m, l = int(doc["n_states"]), int(doc["n_agent_actions"]), int(doc["n_opp_actions"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{where}: bad dimensions ({exc})") from exc
    rewards = np.array(doc.get("rewards"), dtype=float)
    if rewards.shape != (n, m, l):
        raise FormatError(f"{where}: rewards has shape {rewards.shape}, expected {(n, m, l)}")
    trans = doc.get("transitions")
    if not isinstance(trans, list) or len(trans) != n * m * l:
        raise FormatError(f"{where}: transitions must list {n * m * l} rows")
    rows, cols, vals = [], [], []
    for r, entries in enumerate(trans):
        for j, pair in enumerate(entries):
            if not (isinstance(pair, list) and len(pair) == 2):
                raise FormatError(f"{where}: transitions[{r}][{j}] must be [next_state, probability]")
            rows.append(r)
            cols.append(int(pair[0]))
            vals.append(float(pair[1]))
    terminal = np.zeros(n, dtype=bool)
    terminal[np.asarray(doc.get("terminal", []), dtype=np.int64)] = True
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n * m * l, n))
    try:
        return TabularGame(P, rewards, float(doc["discount"]), terminal, doc.get("name", "game"))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{where}: {exc}") from exc


def write_game(path, game: TabularGame):
    Path(path).write_text(json.dumps(game_to_dict(game)) + "\n")


def read_game(path) -> TabularGame:
    return game_from_dict(_load_json(path), str(path))


# --- solutions -------------------------------------------------------------------

def write_solution(path, q: np.ndarray, policy: np.ndarray, opponent_policy: np.ndarray,
                   values: np.ndarray, info: dict):
    doc = {"format": SOLUTION_FORMAT, "version": VERSION, "q": q.tolist(),
           "policy": policy.tolist(), "opponent_policy": opponent_policy.tolist(),
           "values": values.tolist(), "info": _jsonable(info)}
    Path(path).write_text(json.dumps(doc) + "\n")


def read_solution(path) -> dict:
    doc = _load_json(path)
    _check_header(doc, SOLUTION_FORMAT, str(path))
    out = {k: np.array(doc[k], dtype=float) for k in ("q", "policy", "opponent_policy", "values")}
    out["info"] = doc.get("info", {})
    return out


# --- opt-out games -------------------------------------------------------------------

def optout_to_dict(game: OptOutGame) -> dict:
    ch = game.chain
    return {"format": OPTOUT_FORMAT, "version": VERSION, "discount": ch.discount,
            "transitions": ch.dense().tolist(), "continue_reward": ch.rewards.tolist(),
            "terminate_prob": game.terminate_prob.tolist(), "exit_reward": game.exit_reward.tolist()}


def optout_from_dict(doc: dict, where: str = "optout") -> OptOutGame:
    _check_header(doc, OPTOUT_FORMAT, where)
    try:
        chain = MarkovChain(np.array(doc["transitions"], dtype=float),
                            np.array(doc["continue_reward"], dtype=float), float(doc["discount"]))
        return OptOutGame(chain, np.array(doc["terminate_prob"], dtype=float),
                          np.array(doc["exit_reward"], dtype=float))
    except KeyError as exc:
        raise FormatError(f"{where}: missing field {exc}") from exc
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from exc


def write_optout(path, game: OptOutGame):
    Path(path).write_text(json.dumps(optout_to_dict(game)) + "\n")


def read_optout(path) -> OptOutGame:
    return optout_from_dict(_load_json(path), str(path))


# --- results -------------------------------------------------------------------

def append_results_row(path, row: dict):
    """Append one row, writing the header first if the file is new or empty."""
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, extrasaction="ignore")
        if fresh:
            writer.writeheader()
        writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in RESULT_COLUMNS})


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise FormatError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = []
        for raw in reader:
            row = dict(raw)
            for k in ("corpus_games", "repetition", "wins", "draws", "losses"):
                row[k] = int(row[k]) if row[k] not in ("", None) else None
            for k in ("discounted_score", "ci_halfwidth"):
                row[k] = float(row[k]) if row[k] not in ("", None) else None
            rows.append(row)
        return rows

"""Command-line entry point: solve, collect, train, eval, reproduce, optout.

Exit codes: 0 success, 1 usage or I/O problems, 2 numerical non-convergence.
The default output directory comes from ``$ZSMG_OUT_DIR`` (else ``./results``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import store
from .flow import FlowEnv, FlowParams, threshold_report
from .game import (ConvergenceError, bellman_residual, minimax_greedy_policy, opponent_greedy_policy,
                   policy_iteration, state_values, value_iteration)
from .harness import (ApproxPlayer, ExactPlayer, Protocol, RandomPlayer, build_benchmark_player,
                      collect_random_games, cross_grid_transfer, first_episodes, learning_curve,
                      policy_agreement, summarize_curve, tournament, train_player, trend_statistic)
from .linapprox import stationary_distribution
from .lspi import lspi
from .optout import projected_value_iteration, tabular_value_iteration
from .soccer import SoccerConfig, SoccerEnv

OUT_DIR_VAR = "ZSMG_OUT_DIR"
log = logging.getLogger("zsmg")


class UsageError(Exception):
    pass


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_DIR_VAR, "results"))


# --- presets -------------------------------------------------------------------

@dataclass(frozen=True)
class Preset:
    name: str
    env: str
    discount: float
    sizes: tuple
    features: tuple
    opponent: str
    rows: int = 4
    cols: int = 4
    buffer_size: int = 100
    target_rows: int | None = None
    target_cols: int | None = None
    games: int = 1000
    max_steps: int = 100
    repetitions: int = 20
    collect_max_steps: int = 1000
    max_samples: int | None = None
    lspi_max_iter: int = 25
    lspi_tol: float = 1e-4
    seed: int = 0
    version: int = 1

    def protocol(self) -> Protocol:
        return Protocol(games=self.games, max_steps=self.max_steps, repetitions=self.repetitions,
                        collect_max_steps=self.collect_max_steps, max_samples=self.max_samples,
                        lspi_max_iter=self.lspi_max_iter, lspi_tol=self.lspi_tol, seed=self.seed)


PRESETS = {
    "soccer4": Preset("soccer4", "soccer", 0.9, tuple(range(0, 501, 50)), ("basic",), "exact",
                      rows=4, cols=4, max_samples=40_000),
    "soccer8": Preset("soccer8", "soccer", 0.8, tuple(range(0, 2001, 500)), ("basic", "extended"),
                      "benchmark", rows=8, cols=8, max_steps=300),
    "soccer40-transfer": Preset("soccer40-transfer", "soccer", 0.8, tuple(range(0, 2001, 500)),
                                ("extended",), "benchmark", rows=8, cols=8, target_rows=40,
                                target_cols=40, max_steps=300),
    "flow": Preset("flow", "flow", 0.95, (0, 1, 5, 100), ("poly3",), "exact",
                   collect_max_steps=100),
}


def resolve_preset(name: str, overrides: dict | None = None) -> Preset:
    if name not in PRESETS:
        raise UsageError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    preset = PRESETS[name]
    overrides = dict(overrides or {})
    unknown = set(overrides) - set(preset.__dataclass_fields__)
    if unknown:
        raise UsageError(f"config has unknown preset fields: {', '.join(sorted(unknown))}")
    if "sizes" in overrides:
        overrides["sizes"] = tuple(overrides["sizes"])
    if "features" in overrides:
        overrides["features"] = tuple(overrides["features"])
    return replace(preset, **overrides)


# --- environments and players -------------------------------------------------------------------

def make_env(args):
    if args.env == "soccer":
        return SoccerEnv(SoccerConfig(args.rows, args.cols, args.gamma if args.gamma is not None else 0.9))
    if args.env == "flow":
        kw = {"buffer_size": args.buffer_size}
        if args.gamma is not None:
            kw["discount"] = args.gamma
        return FlowEnv(FlowParams(**kw))
    raise UsageError(f"unknown environment {args.env!r}")


_SOCCER_ID = re.compile(r"^soccer(\d+)x(\d+)$")
_FLOW_ID = re.compile(r"^flow(\d+)$")


def env_from_id(env_id: str, discount: float | None):
    m = _SOCCER_ID.match(env_id)
    if m:
        cfg = SoccerConfig(int(m[1]), int(m[2]), discount if discount is not None else 0.9)
        return SoccerEnv(cfg)
    m = _FLOW_ID.match(env_id)
    if m:
        kw = {"buffer_size": int(m[1])}
        if discount is not None:
            kw["discount"] = discount
        return FlowEnv(FlowParams(**kw))
    raise UsageError(f"unrecognised environment id {env_id!r}")


def exact_q(env, tol: float = 1e-8) -> np.ndarray:
    q, _, _ = policy_iteration(env.exact_model(), tol=tol)
    return q


def make_player(spec: str, env):
    kind, _, path = spec.partition(":")
    if kind == "random":
        return RandomPlayer(env.n_agent_actions, env.n_opp_actions)
    if kind == "exact":
        if path:
            return ExactPlayer(store.read_solution(path)["q"])
        return ExactPlayer(exact_q(env))
    if kind in ("weights", "benchmark"):
        if not path:
            raise UsageError(f"player spec {spec!r} needs a file: {kind}:FILE")
        w = store.read_weights(path)
        features = env.features(w.features)
        if features.dim != w.k:
            raise UsageError(f"{path}: {w.k} weights but {w.features} features have {features.dim}")
        if w.env != env.name:
            log.info("evaluating %s weights on %s", w.env, env.name)
        return ApproxPlayer(w, features, name=kind)
    raise UsageError(f"unknown player spec {spec!r} (random, exact[:FILE], weights:FILE, benchmark:FILE)")


# --- commands -------------------------------------------------------------------

def cmd_solve(args) -> int:
    if args.game:
        game = store.read_game(args.game)
        env = None
    else:
        env = make_env(args)
        game = env.exact_model()
    t0 = time.perf_counter()
    if args.method == "vi":
        q, iters = value_iteration(game, tol=args.tol, max_iter=args.max_iter)
        policy = minimax_greedy_policy(game, q)
    else:
        q, policy, iters = policy_iteration(game, tol=args.tol, max_outer=args.max_iter)
    residual = bellman_residual(game, q)
    opp = opponent_greedy_policy(game, q)
    values = state_values(game, q)
    out = Path(args.out) if args.out else default_out_dir() / f"{game.name}-{args.method}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    info = {"game": game.name, "method": args.method, "iterations": iters, "residual": residual,
            "discount": game.discount, "seconds": time.perf_counter() - t0}
    store.write_solution(out, q, policy, opp, values, info)
    print(f"solved {game.name} by {args.method}: iterations={iters} residual={residual:.3e}")
    if isinstance(env, FlowEnv):
        for who, table in (("router", policy), ("server", opp)):
            rep = threshold_report(table)
            print(f"{who}: " + _policy_string(rep["actions"]) + f"  mixed={rep['mixed_states']}")
    print(f"wrote {out}")
    return 0


def _policy_string(actions) -> str:
    return "".join("LH"[a] if a >= 0 else "*" for a in actions)


def cmd_collect(args) -> int:
    env = make_env(args)
    max_steps = args.max_steps if args.max_steps is not None else (100 if args.env == "flow" else 1000)
    corpus = collect_random_games(env, args.games, max_steps, args.seed, args.max_samples)
    corpus.meta["discount"] = env.discount
    out = Path(args.out) if args.out else default_out_dir() / f"{env.name}-{args.games}.corpus"
    out.parent.mkdir(parents=True, exist_ok=True)
    store.write_corpus(out, corpus)
    lengths = corpus.meta["episode_lengths"]
    mean_len = float(np.mean(lengths)) if lengths else 0.0
    print(f"collected {len(corpus)} samples from {len(lengths)} episodes (mean length {mean_len:.1f})")
    print(f"wrote {out}")
    return 0


def cmd_train(args) -> int:
    corpus = store.read_corpus(args.corpus)
    gamma = args.gamma if args.gamma is not None else corpus.meta.get("discount")
    if gamma is None:
        raise UsageError("corpus does not record a discount; pass --gamma")
    env = env_from_id(corpus.env, gamma)
    store.read_corpus(args.corpus, env)  # domain check against the environment
    features = env.features(args.features)
    weights, deltas = lspi(corpus, features, gamma, max_iter=args.max_iter, tol=args.tol,
                           ridge=args.ridge, opponent=args.opponent_response)
    out = Path(args.out) if args.out else default_out_dir() / f"{env.name}-{args.features}.weights.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    store.write_weights(out, weights)
    status = "converged" if weights.meta["converged"] else "stopped at the iteration cap"
    print(f"LSPI {status} after {len(deltas)} iterations; k={weights.k}")
    print(f"wrote {out}")
    return 0


def cmd_eval(args) -> int:
    env = make_env(args)
    pa = make_player(args.player_a, env)
    pb = make_player(args.player_b, env)
    res = tournament(env, pa, pb, args.games, args.max_steps, args.repetitions, args.seed,
                     swap_roles=not args.fixed_roles, workers=args.threads)
    out = Path(args.out) if args.out else default_out_dir() / "eval.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    for r, rep in enumerate(res.repetitions):
        store.append_results_row(out, {"experiment": args.experiment, "corpus_games": "",
                                       "repetition": r, "wins": rep["wins"], "draws": rep["draws"],
                                       "losses": rep["losses"],
                                       "discounted_score": rep["score"] / rep["games"],
                                       "ci_halfwidth": rep["score_ci"]})
    print(f"{args.player_a} vs {args.player_b}: W/D/L {res.wins}/{res.draws}/{res.losses} "
          f"over {res.games} games")
    for what in ("wins", "draws", "losses", "score"):
        mean, hw = res.ci(what)
        print(f"  {what}: {mean:.4f}" + (f" +/- {hw:.4f}" if hw is not None else " (no CI: one repetition)"))
    print(f"wrote {out}")
    return 0


def cmd_optout(args) -> int:
    game = store.read_optout(args.game)
    rho = stationary_distribution(game.chain)
    n = game.chain.n_states
    if args.basis == "identity":
        phi = np.eye(n)
    else:
        degree = int(args.basis.partition(":")[2] or 3)
        x = np.arange(n) / max(n - 1, 1)
        phi = np.stack([x ** d for d in range(degree + 1)], axis=1)
    w, trace = projected_value_iteration(game, phi, rho, tol=args.tol)
    v_tab = tabular_value_iteration(game)
    v_hat = phi @ w
    ratios = [b / a for a, b in zip(trace, trace[1:]) if a > 0]
    print(f"projected value iteration: {len(trace)} steps, max rho-norm ratio "
          f"{max(ratios) if ratios else 0.0:.4f} (discount {game.chain.discount})")
    print(f"max |approx - tabular| = {np.abs(v_hat - v_tab).max():.3e}")
    if args.out:
        Path(args.out).write_text(json.dumps({"w": w.tolist(), "values": v_hat.tolist(),
                                              "tabular": v_tab.tolist()}) + "\n")
        print(f"wrote {args.out}")
    return 0


def cmd_reproduce(args) -> int:
    preset = resolve_preset(args.preset, args.config_data)
    out_dir = Path(args.out_dir) if args.out_dir else default_out_dir() / preset.name
    out_dir.mkdir(parents=True, exist_ok=True)
    results = out_dir / "results.csv"
    if results.exists():
        results.unlink()
    summary = {"preset": asdict(preset)}
    t0 = time.perf_counter()
    runner = {"soccer": _reproduce_soccer, "flow": _reproduce_flow}[preset.env]
    rows_by_exp = runner(preset, results, summary, args.threads)
    summary["curves"] = {name: summarize_curve(rows) for name, rows in rows_by_exp.items()}
    summary["trend"] = {name: trend_statistic(summary["curves"][name]) for name in rows_by_exp}
    summary["seconds"] = time.perf_counter() - t0
    (out_dir / "summary.json").write_text(json.dumps(store._jsonable(summary), indent=2) + "\n")

    from .plotting import plot_outcomes, plot_scores

    if preset.env == "soccer":
        plot_outcomes(rows_by_exp, out_dir / "outcomes.png", preset.name)
        plot_scores(rows_by_exp, out_dir / "scores.png", preset.name)
    else:
        plot_scores(rows_by_exp, out_dir / "scores.png", preset.name, "discounted score per game")
    for name, curve in summary["curves"].items():
        for e in curve:
            print(f"{name} n={e['corpus_games']}: W/D/L {e['wins']:.1f}/{e['draws']:.1f}/{e['losses']:.1f} "
                  f"score {e['discounted_score']:.4f}")
    for line in summary.get("report", []):
        print(line)
    print(f"wrote {results}, {out_dir / 'summary.json'} and figures in {out_dir}")
    return 0


def _append(path):
    return lambda row: store.append_results_row(path, row)


def _reproduce_soccer(preset: Preset, results: Path, summary: dict, threads: int) -> dict:
    protocol = preset.protocol()
    config = SoccerConfig(preset.rows, preset.cols, preset.discount)
    env = SoccerEnv(config)
    rows_by_exp = {}
    if preset.opponent == "exact":
        opponent = ExactPlayer(exact_q(env))
    else:
        bench_features = env.features(preset.features[-1])
        opponent, _ = build_benchmark_player(config, bench_features, preset.discount,
                                             max_iter=preset.lspi_max_iter, tol=preset.lspi_tol)
    if preset.target_rows is None:
        for kind in preset.features:
            name = f"{preset.name}-{kind}"
            rows_by_exp[name] = learning_curve(env, preset.sizes, env.features(kind), opponent, protocol,
                                               name, _append(results), workers=threads)
        return rows_by_exp
    # transfer: train at the source grid, evaluate on the target grid against the moved benchmark
    target = SoccerConfig(preset.target_rows, preset.target_cols, preset.discount)
    target_env = SoccerEnv(target)
    kind = preset.features[-1]
    features = env.features(kind)
    moved = ApproxPlayer(opponent.w, target_env.features(kind), name="benchmark")
    name = f"{preset.name}-{kind}"
    rows = []
    for rep in range(protocol.repetitions):
        corpus = collect_random_games(env, max(preset.sizes), protocol.collect_max_steps,
                                      seed=[preset.seed, rep, 0])
        for n in preset.sizes:
            eval_protocol = replace(protocol, repetitions=1, seed=[preset.seed, rep, 2, n])
            if n == 0:
                res = tournament(target_env, RandomPlayer(5, 5), moved, protocol.games,
                                 protocol.max_steps, 1, eval_protocol.seed)
            else:
                _, weights = train_player(first_episodes(corpus, n), features, preset.discount, protocol)
                res = cross_grid_transfer(weights, target, moved, eval_protocol, extended=kind == "extended")
            row = {"experiment": name, "corpus_games": n, "repetition": rep, "wins": res.wins,
                   "draws": res.draws, "losses": res.losses,
                   "discounted_score": res.total_discounted_score / res.games,
                   "ci_halfwidth": res.repetitions[0]["score_ci"]}
            store.append_results_row(results, row)
            rows.append(row)
    rows_by_exp[name] = rows
    return rows_by_exp


def _reproduce_flow(preset: Preset, results: Path, summary: dict, threads: int) -> dict:
    protocol = replace(preset.protocol(), swap_roles=False)
    env = FlowEnv(FlowParams(buffer_size=preset.buffer_size, discount=preset.discount))
    game = env.exact_model()
    q_opt = exact_q(env)
    optimal = ExactPlayer(q_opt)
    features = env.features("poly3")
    agreement = {"router": {}, "server": {}}

    def record(role):
        def hook(n, rep, player):
            agreement[role].setdefault(n, []).append(policy_agreement(game, q_opt, player, "A" if role == "router" else "B"))
        return hook

    rows_by_exp = {}
    for role, side in (("router", "A"), ("server", "B")):
        name = f"flow-{role}"
        rows_by_exp[name] = learning_curve(env, preset.sizes, features, optimal, protocol, name,
                                           _append(results), role=side, on_trained=record(role),
                                           workers=threads)
    base = tournament(env, optimal, optimal, protocol.games, protocol.max_steps, protocol.repetitions,
                      [preset.seed, 99], swap_roles=False, workers=threads)
    opt_mean, opt_hw = base.ci("score")
    summary["optimal_vs_optimal"] = {"score": opt_mean, "ci_halfwidth": opt_hw}
    summary["policy_agreement"] = {role: {n: float(np.mean(v)) for n, v in per.items()}
                                   for role, per in agreement.items()}
    report = [f"optimal vs optimal discounted score {opt_mean:.4f}"
              + (f" +/- {opt_hw:.4f}" if opt_hw is not None else "")]
    for role, per in summary["policy_agreement"].items():
        report.append(f"{role} agreement with optimal: " +
                      ", ".join(f"n={n}: {v:.3f}" for n, v in sorted(per.items())))
    summary["report"] = report
    return rows_by_exp


# --- argument parsing -------------------------------------------------------------------

def _env_flags(p, required=True):
    p.add_argument("--env", choices=("soccer", "flow"), required=required)
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--cols", type=int, default=4)
    p.add_argument("--buffer-size", type=int, default=100)
    p.add_argument("--gamma", type=float, default=None, help="discount (soccer 0.9, flow 0.95 by default)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zsmg", description="Zero-sum Markov game solving and LSPI.")
    parser.add_argument("--config", help="JSON file overriding command defaults or preset fields")
    parser.add_argument("--threads", type=int, default=1, help="worker processes (results do not depend on it)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="exact minimax value or policy iteration")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--game", help="zsmg-game JSON file")
    src.add_argument("--env", choices=("soccer", "flow"))
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--cols", type=int, default=4)
    p.add_argument("--buffer-size", type=int, default=100)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--method", choices=("vi", "pi"), default="pi")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=100_000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("collect", help="random-play sample corpus")
    _env_flags(p)
    p.add_argument("--games", type=int, required=True)
    p.add_argument("--max-steps", type=int, default=None, help="episode cap (soccer 1000, flow 100)")
    p.add_argument("--max-samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="LSPI on a corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--features", choices=("basic", "extended", "poly3"), required=True)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=25)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--ridge", type=float, default=None)
    p.add_argument("--opponent-response", choices=("evaluated", "policy"), default="evaluated")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="tournament between two players")
    _env_flags(p)
    p.add_argument("--player-a", required=True, help="random | exact[:SOLUTION] | weights:FILE | benchmark:FILE")
    p.add_argument("--player-b", required=True)
    p.add_argument("--games", type=int, default=1000)
    p.add_argument("--max-steps", type=int, default=100)
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fixed-roles", action="store_true", help="player A always plays side A")
    p.add_argument("--experiment", default="eval")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reproduce", help="run a preset experiment end to end")
    p.add_argument("--preset", required=True, help=", ".join(PRESETS))
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("optout", help="projected value iteration for an opt-out game")
    p.add_argument("--game", required=True, help="zsmg-optout JSON file")
    p.add_argument("--basis", default="identity", help="identity | poly:DEGREE")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_optout)
    return parser


def _load_config(argv) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    try:
        data = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {known.config}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config {known.config} must hold a JSON object")
    return data


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        config = _load_config(argv)
        command = next((a for a in argv if a in parser._subparsers._group_actions[0].choices), None)
        if command and command != "reproduce" and config:
            subparser = parser._subparsers._group_actions[0].choices[command]
            known = {a.dest for a in subparser._actions}
            unknown = set(config) - known
            if unknown:
                raise UsageError(f"config has unknown options for {command}: {', '.join(sorted(unknown))}")
            subparser.set_defaults(**config)
            for action in subparser._actions:
                if action.dest in config:
                    action.required = False
    except UsageError as exc:
        print(f"zsmg: error: {exc}", file=sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    args.config_data = config
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"zsmg: did not converge: {exc}", file=sys.stderr)
        return 2
    except (UsageError, store.FormatError, OSError, ValueError) as exc:
        print(f"zsmg: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""``decoy`` command line entry point.

Every subcommand that writes files also writes ``manifest.json`` next to
them with the resolved configuration, seed and library versions. Settings
resolve as flags, then ``--config`` JSON, then defaults. Relative paths that
do not exist under the working directory are looked up under
``$DECOY_DATA_ROOT`` when it is set.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import DecoyError

PKG = Path(__file__).resolve().parent
DEFAULT_MAP = PKG / "maps" / "test_map.json"
DEFAULT_GRAPH = PKG / "maps" / "test_map.graph.json"

DEFAULTS = {
    "map": str(DEFAULT_MAP), "graph": str(DEFAULT_GRAPH), "seed": 0, "agents": 10, "tick_rate": 60,
    "decision_rate": 2.0, "spacing": 0.7, "decisions": 10000, "mode": "movement", "rounds": 10,
    "epochs": None, "synthetic": 20000, "noise": 0.05, "policy": "scripted", "dims": 2, "cell": 1.0,
}


class UsageError(Exception):
    pass


def _data_path(p: Optional[str]) -> Optional[Path]:
    if p is None:
        return None
    path = Path(p)
    root = os.environ.get("DECOY_DATA_ROOT")
    if not path.is_absolute() and not path.exists() and root:
        return Path(root) / path
    return path


def _out_path(p: str) -> Path:
    path = Path(p)
    root = os.environ.get("DECOY_DATA_ROOT")
    return Path(root) / path if root and not path.is_absolute() else path


def write_manifest(directory: Path, command: str, cfg: dict, extra: Optional[dict] = None) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command, "config": cfg, "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "versions": {"decoy": __version__, "numpy": np.__version__, "python": platform.python_version()},
        **(extra or {}),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1, default=str) + "\n")


def _load_world(cfg):
    from .geometry import load_level
    from .waypoints import WaypointGraph
    level = load_level(_data_path(cfg["map"]))
    graph = WaypointGraph.load(_data_path(cfg["graph"]))
    return level, graph


def _load_rounds(p):
    """Rounds from a corpus file, or from every corpus file in a directory."""
    from .dataset import parse_rounds
    path = _data_path(p)
    if path.is_dir():
        files = sorted(f for f in path.glob("*.json") if f.name != "manifest.json")
        if not files:
            raise FileNotFoundError(f"no corpus files in {path}")
        return [r for f in files for r in parse_rounds(f)]
    return parse_rounds(path)


def _engine_config(cfg, **kw):
    from .engine import EngineConfig
    return EngineConfig(n_agents=int(cfg["agents"]), tick_rate=int(cfg["tick_rate"]),
                        damage_rate=float(cfg["decision_rate"]), sample_rate=float(cfg["decision_rate"]), **kw)


# ---------------------------------------------------------- subcommands

def cmd_waypoints(cfg) -> int:
    from .geometry import load_level
    from .waypoints import build_graph
    level = load_level(_data_path(cfg["map"]))
    t0 = time.perf_counter()
    graph = build_graph(level, spacing=float(cfg["spacing"]))
    out = _out_path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    graph.save(out)
    print(f"{graph.n_nodes} nodes, {graph.n_edges} edges, strongly connected: {graph.strongly_connected()}, "
          f"{time.perf_counter() - t0:.1f} s")
    write_manifest(out.parent, "waypoints", cfg)
    return 0


def cmd_simulate(cfg) -> int:
    from .damage import ModelBundle
    from .dataset import ScriptedPolicy
    from .engine import Env, random_walk_actions
    level, graph = _load_world(cfg)
    models = ModelBundle.load(_data_path(cfg["models"])) if cfg.get("models") else None
    env = Env(level, graph, models, _engine_config(cfg, damage=models is not None))
    env.reset(int(cfg["seed"]))
    rng = np.random.default_rng(int(cfg["seed"]))
    policy = ScriptedPolicy(env, rng) if cfg["policy"] == "scripted" else (lambda e: random_walk_actions(e, rng))
    while env.state.outcome is None:
        env.step(policy(env))
    out = env.state.outcome
    print(f"winner {out.winner} by {out.reason} at tick {out.end_tick}")
    if cfg.get("log"):
        log_path = _out_path(cfg["log"])
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_path.write_text(env.log_jsonl())
        write_manifest(log_path.parent, "simulate", cfg)
    return 0


def cmd_bench(cfg) -> int:
    from .engine import benchmark
    level, graph = _load_world(cfg)
    counts = [int(x) for x in str(cfg["agents"]).split(",")]
    rows = []
    print(f"{'agents':>7}{'ticks':>10}{'decisions':>11}{'wall s':>10}{'physics s':>11}{'ticks/s':>11}{'time scale':>12}")
    for n in counts:
        r = benchmark(level, graph, n, int(cfg["decisions"]), seed=int(cfg["seed"]))
        rows.append(r.to_dict())
        print(f"{r.n_agents:>7}{r.physics_ticks:>10}{r.decisions:>11}{r.wall_time:>10.2f}"
              f"{r.physics_time:>11.2f}{r.ticks_per_sec:>11.2f}{r.time_scale:>12.2f}")
    if cfg.get("out"):
        out = _out_path(cfg["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(rows, indent=1) + "\n")
        write_manifest(out.parent, "bench", cfg)
    return 0


def _training_rows(cfg, level, graph, schema):
    from .damage import DamageLaw
    from .dataset import random_pair_corpus, round_pair_rows, split
    if cfg.get("data"):
        rounds = _load_rounds(cfg["data"])
        train, val, _ = split(rounds, int(cfg["seed"]))
        return round_pair_rows(train, schema, level), round_pair_rows(val, schema, level)
    law = DamageLaw()
    n = int(cfg["synthetic"])
    corpus = random_pair_corpus(level, graph, n, law, int(cfg["seed"]), float(cfg["noise"]), schema)
    cut = int(0.8 * n)
    tr, va = corpus.take(slice(0, cut)), corpus.take(slice(cut, n))
    return ((tr.features, tr.labels, tr.damage, tr.hit_group), (va.features, va.labels, va.damage, va.hit_group))


def cmd_train_dip(cfg) -> int:
    from .damage import DipConfig, FeatureSchema, dip_train
    level, graph = _load_world(cfg)
    schema = FeatureSchema.for_level(level)
    (X, y, _, _), (Xv, yv, _, _) = _training_rows(cfg, level, graph, schema)
    dcfg = DipConfig() if cfg.get("epochs") is None else DipConfig(epochs=int(cfg["epochs"]))
    model, metrics = dip_train((X, y), (Xv, yv), dcfg, int(cfg["seed"]), log=print)
    out = _out_path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "dip.model")
    (out / "threshold.txt").write_text(f"{model.threshold!r}\n")
    (out / "features.schema").write_text(schema.to_json())
    (out / "dip_metrics.json").write_text(json.dumps(metrics, indent=1) + "\n")
    print(json.dumps(metrics, indent=1))
    write_manifest(out, "train-dip", cfg, {"hparams": asdict(dcfg)})
    return 0


def cmd_train_dog(cfg) -> int:
    from .damage import DogConfig, FeatureSchema, dog_train, export_latents, save_latents
    level, graph = _load_world(cfg)
    schema = FeatureSchema.for_level(level)
    (X, y, d, g), (Xv, yv, dv, gv) = _training_rows(cfg, level, graph, schema)
    hit, hv = y > 0, yv > 0
    dcfg = DogConfig() if cfg.get("epochs") is None else DogConfig(epochs=int(cfg["epochs"]))
    model, metrics = dog_train((X[hit], d[hit], g[hit]), (Xv[hv], dv[hv], gv[hv]), dcfg, int(cfg["seed"]), log=print)
    out = _out_path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "dog.model")
    (out / "features.schema").write_text(schema.to_json())
    (out / "dog_metrics.json").write_text(json.dumps(metrics, indent=1) + "\n")
    save_latents(out / "latents.csv", export_latents(model, Xv[hv], dv[hv], gv[hv]))
    print(json.dumps(metrics, indent=1))
    write_manifest(out, "train-dog", cfg, {"hparams": asdict(dcfg)})
    return 0


def cmd_eval_models(cfg) -> int:
    from .damage import DamageLaw, ModelBundle, binary_metrics, dog_metrics
    from .errors import ModelError
    from .metrics import wasserstein1d
    level, graph = _load_world(cfg)
    bundle = ModelBundle.load(_data_path(cfg["models"]))
    if isinstance(bundle.dip, DamageLaw):
        raise ModelError(f"{cfg['models']} holds a damage law, not trained models; nothing to evaluate")
    _, (Xv, yv, dv, gv) = _training_rows(cfg, level, graph, bundle.schema)
    scores = bundle.dip.predict_proba(Xv)
    result = {"dip": binary_metrics(scores, yv, bundle.threshold)}
    hv = yv > 0
    result["dog"] = dog_metrics(bundle.dog, Xv[hv], dv[hv], gv[hv])
    gen_d, _ = bundle.dog.generate(Xv[hv], np.random.default_rng(int(cfg["seed"])))
    result["dog"]["damage_wd"] = wasserstein1d(gen_d, dv[hv])
    print(json.dumps(result, indent=1))
    if cfg.get("out"):
        out = _out_path(cfg["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(result, indent=1) + "\n")
        write_manifest(out.parent, "eval-models", cfg)
    return 0


def cmd_synth(cfg) -> int:
    from .damage import DamageLaw, FeatureSchema
    from .dataset import SynthSpec, synth_rounds, write_law, write_rounds
    level, graph = _load_world(cfg)
    law = DamageLaw.from_dict(json.loads(_data_path(cfg["law"]).read_text())) if cfg.get("law") else DamageLaw()
    spec = SynthSpec(level, graph, law, n_rounds=int(cfg["rounds"]), n_agents=int(cfg["agents"]),
                     engine=_engine_config(cfg))
    rounds = synth_rounds(spec, int(cfg["seed"]))
    out = _out_path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if rounds:
        write_rounds(out / "rounds.json", rounds)
    write_law(out / "law", law, FeatureSchema.for_level(level))
    wins = [r.outcome.winner for r in rounds]
    print(f"{len(rounds)} rounds: T {wins.count('T')}, CT {wins.count('CT')}")
    write_manifest(out, "synth", cfg)
    return 0


def cmd_replay(cfg) -> int:
    from .damage import ModelBundle
    from .replay import replay_round
    level, graph = _load_world(cfg)
    rounds = _load_rounds(cfg["round"])
    models = ModelBundle.load(_data_path(cfg["models"])) if cfg.get("models") else None
    out = _out_path(cfg["out"])
    base = _engine_config({**cfg, "agents": max(2, rounds[0].n_agents if rounds else 2)})
    for rnd in rounds:
        res = replay_round(level, graph, rnd, cfg["mode"], models, int(cfg["seed"]), base)
        res.save(out / f"round_{rnd.round_id:04d}")
        got = f"{res.outcome.winner} ({res.outcome.reason})" if res.outcome else "none"
        print(f"round {rnd.round_id}: original {rnd.outcome.winner} ({rnd.outcome.reason}), replay {got}")
    write_manifest(out, "replay", cfg)
    return 0


def cmd_eval(cfg) -> int:
    from .geometry import load_level
    from .metrics import evaluate, grid_for, heatmap, pct_diff
    from .replay import ReplayResult
    rounds = _load_rounds(cfg["original"])
    rep_dir = _data_path(cfg["replayed"])
    replays = [ReplayResult.load(rep_dir / f"round_{r.round_id:04d}") for r in rounds]
    report = evaluate(rounds, replays, int(cfg["dims"]))
    report_path = _out_path(cfg["report"])
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report.save(report_path)
    print(report.to_text(), end="")
    if cfg.get("grids"):
        level = load_level(_data_path(cfg["map"]))
        origin, shape = grid_for(level.bounds, float(cfg["cell"]))
        grids = _out_path(cfg["grids"])
        grids.mkdir(parents=True, exist_ok=True)
        for team in ("T", "CT"):
            h_o = heatmap([r.positions[i] for r in rounds for i in range(r.n_agents) if r.teams[i] == team],
                          origin, shape, float(cfg["cell"]))
            h_r = heatmap([p.positions[i] for p in replays for i in range(p.positions.shape[0]) if p.teams[i] == team],
                          origin, shape, float(cfg["cell"]))
            h_o.save(grids / f"original_{team}.csv")
            h_r.save(grids / f"replayed_{team}.csv")
            pct_diff(h_o, h_r).save(grids / f"pct_diff_{team}.csv")
    write_manifest(report_path.parent, "eval", cfg)
    return 0


COMMANDS = {
    "waypoints": cmd_waypoints, "simulate": cmd_simulate, "bench": cmd_bench, "train-dip": cmd_train_dip,
    "train-dog": cmd_train_dog, "eval-models": cmd_eval_models, "synth": cmd_synth, "replay": cmd_replay,
    "eval": cmd_eval,
}

REQUIRED = {
    "waypoints": ("out",), "train-dip": ("out",), "train-dog": ("out",), "eval-models": ("models",),
    "synth": ("out",), "replay": ("round", "out"), "eval": ("original", "replayed", "report"),
}


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    p = argparse.ArgumentParser(prog="decoy", description="Waypoint-graph round simulator with learned damage models.")
    p.add_argument("--version", action="version", version=f"decoy {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command")

    def common(sp, world=True):
        sp.add_argument("--config", default=S, help="JSON file of settings; flags override it")
        sp.add_argument("--seed", type=int, default=S, help="random seed (default 0)")
        if world:
            sp.add_argument("--map", default=S, help="map JSON (default: shipped test map)")
            sp.add_argument("--graph", default=S, help="waypoint graph JSON (default: shipped graph)")
        return sp

    sp = common(sub.add_parser("waypoints", help="generate and verify a waypoint graph"))
    sp.add_argument("--out", default=S, help="output graph JSON")
    sp.add_argument("--spacing", type=float, default=S, help="lattice spacing in meters (default 0.7)")

    sp = common(sub.add_parser("simulate", help="play one round and write its event log"))
    sp.add_argument("--models", default=S, help="model directory (DIP/DOG or law.json); omit for no damage")
    sp.add_argument("--agents", type=int, default=S, help="number of agents (default 10)")
    sp.add_argument("--log", default=S, help="event log output (JSON lines)")
    sp.add_argument("--policy", choices=("scripted", "random"), default=S, help="agent policy (default scripted)")
    sp.add_argument("--tick-rate", dest="tick_rate", type=int, default=S, help="physics ticks per second (default 60)")
    sp.add_argument("--decision-rate", dest="decision_rate", type=float, default=S,
                    help="damage resolution and sampling rate per second (default 2)")

    sp = common(sub.add_parser("bench", help="simulation speed sweep"))
    sp.add_argument("--agents", default=S, help="comma-separated agent counts (default 10)")
    sp.add_argument("--decisions", type=int, default=S, help="agent decisions per run (default 10000)")
    sp.add_argument("--out", default=S, help="JSON report output")

    for name, helptext in (("train-dip", "train the damage indicator predictor"),
                           ("train-dog", "train the damage outcome generator")):
        sp = common(sub.add_parser(name, help=helptext))
        sp.add_argument("--data", default=S, help="round corpus file or directory; omit to train on synthetic pairs")
        sp.add_argument("--synthetic", type=int, default=S, help="synthetic pair count (default 20000)")
        sp.add_argument("--noise", type=float, default=S, help="synthetic label noise (default 0.05)")
        sp.add_argument("--epochs", type=int, default=S, help="training epochs")
        sp.add_argument("--out", default=S, help="model directory")

    sp = common(sub.add_parser("eval-models", help="score trained models on held-out rows"))
    sp.add_argument("--models", default=S, help="model directory")
    sp.add_argument("--data", default=S, help="round corpus file or directory; omit for synthetic pairs")
    sp.add_argument("--synthetic", type=int, default=S, help="synthetic pair count (default 20000)")
    sp.add_argument("--noise", type=float, default=S, help="synthetic label noise (default 0.05)")
    sp.add_argument("--report", "--out", dest="out", default=S, help="JSON report output")

    sp = common(sub.add_parser("synth", help="synthesize rounds with scripted policies and a damage law"))
    sp.add_argument("--rounds", type=int, default=S, help="number of rounds (default 10)")
    sp.add_argument("--agents", type=int, default=S, help="agents per round (default 10)")
    sp.add_argument("--law", default=S, help="damage law JSON (default built-in law)")
    sp.add_argument("--out", default=S, help="output directory")

    sp = common(sub.add_parser("replay", help="replay recorded rounds through the simulator"))
    sp.add_argument("--round", default=S, help="round corpus file or directory")
    sp.add_argument("--models", default=S, help="model directory (needed for --mode full)")
    sp.add_argument("--mode", choices=("full", "movement"), default=S, help="mechanics (default movement)")
    sp.add_argument("--out", default=S, help="output directory")

    sp = common(sub.add_parser("eval", help="fidelity report for replays"))
    sp.add_argument("--original", default=S, help="round corpus file or directory")
    sp.add_argument("--replayed", default=S, help="directory written by `decoy replay`")
    sp.add_argument("--report", default=S, help="report output (.json, plus a .txt table)")
    sp.add_argument("--grids", default=S, help="directory for heatmap CSVs")
    sp.add_argument("--dims", type=int, choices=(2, 3), default=S, help="metric dimensionality (default 2)")
    sp.add_argument("--cell", type=float, default=S, help="heatmap cell size in meters (default 1)")
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
    cfg = {**DEFAULTS, **file_cfg, **flags}
    missing = [k for k in REQUIRED.get(args.command, ()) if not cfg.get(k)]
    if missing:
        raise UsageError(f"{args.command}: missing required setting(s): {', '.join('--' + m for m in missing)}")
    if float(cfg["tick_rate"]) <= 0 or float(cfg["decision_rate"]) <= 0:
        raise UsageError("rates must be positive")
    return cfg


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = resolve_config(args)
    except UsageError as exc:
        print(f"decoy: error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg)
    except (DecoyError, OSError, ValueError) as exc:
        print(f"decoy {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

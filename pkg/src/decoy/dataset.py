"""Round corpus: data model, file format, damage alignment, splits and synthesis.

Corpus file (JSON, UTF-8)::

    {"format": "decoy-rounds", "version": 1, "map_id": str, "tick_rate": 2.0,
     "rounds": [{
        "round_id": int,
        "bomb_carrier": int,
        "agents": [{"agent_id": int, "team": "T"|"CT", "weapon": str,
                    "armor": float, "helmet": bool,
                    "states": [[x, y, z, view_deg, health], ...]}],
        "damage_events": [{"a": int, "v": int, "d": float, "g": "Head"|..., "t": float}],
        "bomb_events": [{"type": "plant"|"defuse"|"explode"|"bomb_drop"|"bomb_pickup",
                         "t": float, ...}],
        "outcome": {"winner": "T"|"CT", "reason": str, "end_tick": int}}]}

Sample ``k`` of every agent is taken at ``k / tick_rate`` seconds, starting
at 0. Positions are meters. ``end_tick`` counts physics ticks at 60/s.
Writing is canonical, so parse -> write reproduces the file byte for byte.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import TEAMS, AgentState, DamageEvent, Equipment, HitGroup, RoundOutcome
from .damage import DamageLaw, FeatureSchema, make_batch
from .errors import ContractError, RoundFormatError
from .geometry import LevelGeometry
from .waypoints import WaypointGraph, shortest_path

log = logging.getLogger(__name__)

FORMAT = "decoy-rounds"
VERSION = 1
SAMPLE_RATE = 2.0
ROUND_TIME = 155.0

# How a tournament-demo parse (for example an ESTA round) maps onto this format.
ESTA_FIELD_MAP = {
    "mapName": "map_id",
    "frames[].t.players[] / frames[].ct.players[]": "agents[].states (x, y, z, viewX, hp)",
    "frames[].t.players[].activeWeapon": "agents[].weapon (first frame)",
    "damages[] (attackerSteamID, victimSteamID, hpDamageTaken, hitGroup, seconds)": "damage_events[] (a, v, d, g, t)",
    "bombEvents[] (bombAction, seconds)": "bomb_events[] (type, t)",
    "winningSide, roundEndReason, endTick": "outcome",
}


@dataclass
class Round:
    round_id: int
    map_id: str
    teams: list[str]
    positions: np.ndarray            # (n_agents, T, 3)
    view_angles: np.ndarray          # (n_agents, T)
    health: np.ndarray               # (n_agents, T)
    equipment: list[Equipment]
    damage_events: list[DamageEvent]
    outcome: RoundOutcome
    bomb_events: list[dict] = field(default_factory=list)
    bomb_carrier: int = 0
    tick_rate: float = SAMPLE_RATE

    @property
    def n_agents(self) -> int:
        return len(self.teams)

    @property
    def length(self) -> int:
        return self.positions.shape[1]

    @property
    def alive(self) -> np.ndarray:
        return self.health > 0

    def times(self) -> np.ndarray:
        return np.arange(self.length) / self.tick_rate

    def state(self, agent: int, k: int) -> AgentState:
        return AgentState(agent, self.teams[agent], self.positions[agent, k], self.view_angles[agent, k],
                          float(self.health[agent, k]), replace(self.equipment[agent]),
                          bool(self.health[agent, k] > 0))

    def trajectory(self, agent: int) -> list[AgentState]:
        return [self.state(agent, k) for k in range(self.length)]

    def death_index(self, agent: int) -> Optional[int]:
        dead = np.flatnonzero(self.health[agent] <= 0)
        return int(dead[0]) if len(dead) else None

    def validate(self, round_time: float = ROUND_TIME) -> None:
        n, T = self.positions.shape[:2]
        if T < 1:
            raise RoundFormatError(f"round {self.round_id}: no samples")
        if self.view_angles.shape != (n, T) or self.health.shape != (n, T):
            raise RoundFormatError(f"round {self.round_id}: agents have different sample counts")
        if (T - 1) / self.tick_rate > round_time + 1e-9 and not any(e["type"] == "plant" for e in self.bomb_events):
            raise RoundFormatError(f"round {self.round_id}: {T} samples exceed {round_time} s without a plant")
        if np.any(np.diff(self.health, axis=1) > 0):
            raise RoundFormatError(f"round {self.round_id}: health increases within the round")
        if np.any(self.health < 0) or np.any(self.health > 100):
            raise RoundFormatError(f"round {self.round_id}: health outside [0, 100]")
        duration = (T - 1) / self.tick_rate
        for e in self.damage_events:
            if not (0 <= e.attacker < n and 0 <= e.victim < n):
                raise RoundFormatError(f"round {self.round_id}: event references unknown agent")
            if not -1e-9 <= e.t <= duration + 0.5 / self.tick_rate:
                raise RoundFormatError(f"round {self.round_id}: event at {e.t} s outside the round")
            k = max(_nearest_sample(e.t, self.tick_rate) - 1, 0)
            if self.health[e.victim, min(k, T - 1)] <= 0:
                raise RoundFormatError(f"round {self.round_id}: event at {e.t} s hits a dead agent")
        if not 0 <= self.bomb_carrier < n or self.teams[self.bomb_carrier] != "T":
            raise RoundFormatError(f"round {self.round_id}: bomb carrier must be a T agent")

    # ------------------------------------------------------------ json

    def to_dict(self) -> dict:
        agents = []
        for i in range(self.n_agents):
            eq = self.equipment[i]
            states = [[*map(float, self.positions[i, k]), float(self.view_angles[i, k]), float(self.health[i, k])]
                      for k in range(self.length)]
            agents.append({"agent_id": i, "team": self.teams[i], "weapon": eq.weapon, "armor": float(eq.armor),
                           "helmet": bool(eq.helmet), "states": states})
        return {"round_id": self.round_id, "bomb_carrier": self.bomb_carrier, "agents": agents,
                "damage_events": [e.to_dict() for e in self.damage_events],
                "bomb_events": [dict(e) for e in self.bomb_events], "outcome": self.outcome.to_dict()}

    @classmethod
    def from_dict(cls, d: dict, map_id: str, tick_rate: float) -> "Round":
        agents = sorted(d["agents"], key=lambda a: a["agent_id"])
        if [a["agent_id"] for a in agents] != list(range(len(agents))):
            raise RoundFormatError("agent ids must be 0..n-1")
        lengths = {len(a["states"]) for a in agents}
        if len(lengths) != 1:
            raise RoundFormatError(f"agents have different sample counts {sorted(lengths)}")
        states = np.array([a["states"] for a in agents], dtype=float).reshape(len(agents), -1, 5)
        teams = [a["team"] for a in agents]
        if any(t not in TEAMS for t in teams):
            raise RoundFormatError("team must be T or CT")
        r = cls(int(d["round_id"]), map_id, teams, states[:, :, :3].copy(), states[:, :, 3] % 360.0,
                states[:, :, 4].copy(),
                [Equipment(a["weapon"], float(a["armor"]), bool(a["helmet"])) for a in agents],
                [DamageEvent.from_dict(e) for e in d["damage_events"]], RoundOutcome.from_dict(d["outcome"]),
                [dict(e) for e in d.get("bomb_events", [])], int(d.get("bomb_carrier", 0)), tick_rate)
        r.validate()
        return r


def _nearest_sample(t: float, rate: float) -> int:
    # ties go to the earlier sample
    return int(math.ceil(t * rate - 0.5))


# ------------------------------------------------------------------ files

def dumps_rounds(rounds: Sequence[Round]) -> str:
    if not rounds:
        raise ContractError("nothing to write")
    map_ids = {r.map_id for r in rounds}
    rates = {r.tick_rate for r in rounds}
    if len(map_ids) != 1 or len(rates) != 1:
        raise ContractError("a corpus file holds rounds of a single map and tick rate")
    doc = {"format": FORMAT, "version": VERSION, "map_id": map_ids.pop(), "tick_rate": float(rates.pop()),
           "rounds": [r.to_dict() for r in sorted(rounds, key=lambda r: r.round_id)]}
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def write_rounds(path, rounds: Sequence[Round]) -> None:
    Path(path).write_text(dumps_rounds(rounds))


def loads_rounds(text: str, source: str = "<rounds>", diagnostics: Optional[list] = None) -> list[Round]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RoundFormatError(f"{source}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise RoundFormatError(f"{source}: not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise RoundFormatError(f"{source}: format version {doc.get('version')!r}, this reader handles {VERSION}")
    out = []
    for k, rd in enumerate(doc.get("rounds", [])):
        try:
            out.append(Round.from_dict(rd, doc["map_id"], float(doc["tick_rate"])))
        except (RoundFormatError, KeyError, TypeError, ValueError) as exc:
            msg = f"{source}: round #{k} skipped: {exc}"
            log.warning(msg)
            if diagnostics is not None:
                diagnostics.append(msg)
    return out


def parse_rounds(path, diagnostics: Optional[list] = None) -> list[Round]:
    """Read a corpus file; malformed rounds are skipped and reported."""
    return loads_rounds(Path(path).read_text(), str(path), diagnostics)


# -------------------------------------------------------------- alignment

def align_damage(rnd: Round) -> Round:
    """Snap events to the nearest sample and sum those sharing (a, v, g, sample)."""
    merged: dict[tuple, float] = {}
    for e in rnd.damage_events:
        key = (_nearest_sample(e.t, rnd.tick_rate), e.attacker, e.victim, int(e.hit_group))
        merged[key] = merged.get(key, 0.0) + e.damage
    events = [DamageEvent(a, v, d, HitGroup(g), k / rnd.tick_rate) for (k, a, v, g), d in sorted(merged.items())]
    return replace(rnd, damage_events=events)


def split(rounds: Sequence[Round], seed: int):
    """Round-level 8:1:1 partition. Train gets ceil(0.8 n), val floor(0.1 n), test the rest."""
    n = len(rounds)
    if n < 10:
        raise ContractError(f"need at least 10 rounds to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = (8 * n + 9) // 10
    n_val = n // 10
    pick = lambda idx: [rounds[i] for i in idx]
    return pick(order[:n_train]), pick(order[n_train:n_train + n_val]), pick(order[n_train + n_val:])


def split_sizes(n: int) -> tuple[int, int, int]:
    n_train, n_val = (8 * n + 9) // 10, n // 10
    return n_train, n_val, n - n_train - n_val


# ------------------------------------------------------------ from engine

def round_from_env(env, round_id: int) -> Round:
    """Package a finished :class:`~decoy.engine.Env` round as a corpus round."""
    s = env.state
    samples = env.samples
    pos = np.stack([smp.positions for smp in samples], axis=1)
    view = np.stack([smp.view_angles for smp in samples], axis=1)
    hp = np.stack([smp.health for smp in samples], axis=1)
    rate = env.config.tick_rate
    events = [DamageEvent(r["a"], r["v"], r["d"], HitGroup[r["g"]], r["t"]) for r in env.log if r["type"] == "damage"]
    bomb = [{**{k: v for k, v in r.items() if k != "tick"}, "t": r["tick"] / rate} for r in env.log
            if r["type"] in ("plant", "defuse", "explode", "bomb_drop", "bomb_pickup")]
    return Round(round_id, env.map_id, [a.team for a in s.agents], pos, view, hp,
                 [replace(a.equipment) for a in s.agents], events, s.outcome, bomb, env.initial_carrier,
                 env.config.sample_rate)


# -------------------------------------------------------------- synthesis

@dataclass
class SynthSpec:
    level: LevelGeometry
    graph: WaypointGraph
    law: DamageLaw = field(default_factory=DamageLaw)
    n_rounds: int = 10
    n_agents: int = 10
    pause_prob: float = 0.1
    pause_ticks: tuple[int, int] = (15, 60)
    weapons: tuple[str, ...] = ("ak47", "m4a4", "awp", "usp_s", "glock")
    engine: Optional[object] = None


class ScriptedPolicy:
    """T agents walk to one chosen bombsite, CT agents split between sites.

    Once the bomb is planted every CT heads for it. Agents pause at random
    and hold position with short stops when they have nowhere to go.
    """

    def __init__(self, env, rng: np.random.Generator, pause_prob: float = 0.1, pause_ticks=(15, 60)):
        self.env = env
        self.rng = rng
        self.pause_prob = pause_prob
        self.pause_ticks = pause_ticks
        site_nodes = {name: env._nodes_in([box]) for name, box in sorted(env.level.bombsite_regions.items())}
        sites = [s for s in site_nodes if site_nodes[s]]
        if not sites:
            raise ContractError("no waypoints inside any bombsite")
        t_site = sites[rng.integers(len(sites))]
        self.target: dict[int, int] = {}
        for a in env.state.agents:
            site = t_site if a.team == "T" else sites[rng.integers(len(sites))]
            nodes = site_nodes[site]
            self.target[a.agent_id] = int(nodes[rng.integers(len(nodes))])
        self.plan: dict[int, list[int]] = {}
        self.chasing_bomb = False

    def _route(self, aid: int, node: int) -> list[int]:
        path = shortest_path(self.env.graph, node, self.target[aid])
        return path[1:]

    def __call__(self, env) -> dict:
        from .engine import AgentAction
        s = env.state
        if s.bomb.status == "planted" and not self.chasing_bomb:
            self.chasing_bomb = True
            bomb_node = env.graph.nearest(s.bomb.position)
            for a in s.agents:
                if a.team == "CT":
                    self.target[a.agent_id] = bomb_node
                    self.plan.pop(a.agent_id, None)
        acts = {}
        for aid in s.ready_ids():
            a = s.agents[aid]
            if aid not in self.plan:
                self.plan[aid] = self._route(aid, a.current_node)
            plan = self.plan[aid]
            if not plan:
                acts[aid] = AgentAction.stop()
            elif self.rng.random() < self.pause_prob:
                acts[aid] = AgentAction.stop(int(self.rng.integers(self.pause_ticks[0], self.pause_ticks[1] + 1)))
            else:
                nxt = plan.pop(0)
                acts[aid] = AgentAction.move(env.graph.edge(a.current_node, nxt).direction)
        return acts


def synth_round(spec: SynthSpec, round_id: int, rng: np.random.Generator) -> Round:
    from .engine import EngineConfig, Env
    from .damage import ModelBundle
    cfg = spec.engine or EngineConfig(n_agents=spec.n_agents)
    cfg = replace(cfg, n_agents=spec.n_agents, record_samples=True)
    schema = FeatureSchema.for_level(spec.level)
    env = Env(spec.level, spec.graph, ModelBundle.from_law(spec.law, schema), cfg)
    equipment = [Equipment(spec.weapons[rng.integers(len(spec.weapons))], 100.0, bool(rng.random() < 0.7))
                 for _ in range(spec.n_agents)]
    env.reset(int(rng.integers(2 ** 31)), equipment=equipment)
    policy = ScriptedPolicy(env, rng, spec.pause_prob, spec.pause_ticks)
    while env.state.outcome is None:
        env.step(policy(env))
    return round_from_env(env, round_id)


def synth_rounds(spec: SynthSpec, seed: int) -> list[Round]:
    """Rounds played by scripted policies with ``spec.law`` resolving damage."""
    children = np.random.SeedSequence(seed).spawn(spec.n_rounds)
    return [synth_round(spec, i, np.random.default_rng(c)) for i, c in enumerate(children)]


def write_law(directory, law: DamageLaw, schema: FeatureSchema) -> None:
    """Store the law in a model directory so it can stand in for trained models."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "law.json").write_text(json.dumps(law.to_dict(), sort_keys=True, indent=1) + "\n")
    (d / "features.schema").write_text(schema.to_json())


FIXTURE_LAW = DamageLaw(engage_range=12.0, head_range=5.0, damage_ranges=((100, 100), (40, 60), (25, 35),
                                                                          (25, 35), (15, 25), (20, 20)))


def three_round_fixture(level: LevelGeometry, graph: WaypointGraph) -> list[Round]:
    return synth_rounds(SynthSpec(level, graph, FIXTURE_LAW, n_rounds=3), seed=7)


# -------------------------------------------------------- pair corpora

@dataclass
class PairCorpus:
    features: np.ndarray
    distances: np.ndarray
    labels: np.ndarray          # possibly noisy
    clean_labels: np.ndarray
    damage: np.ndarray
    hit_group: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "PairCorpus":
        return PairCorpus(*(getattr(self, f)[idx] for f in
                            ("features", "distances", "labels", "clean_labels", "damage", "hit_group")))


def random_pair_corpus(level: LevelGeometry, graph: WaypointGraph, n: int, law: DamageLaw, seed: int,
                       label_noise: float = 0.0, schema: Optional[FeatureSchema] = None,
                       weapons: Sequence[str] = ("ak47", "m4a4", "awp", "usp_s", "glock")) -> PairCorpus:
    """Random attacker/victim placements on graph nodes labeled by ``law``.

    Each label is flipped independently with probability ``label_noise``.
    Damage and hit group are drawn for every row, damaged or not.
    """
    rng = np.random.default_rng(seed)
    schema = schema or FeatureSchema.for_level(level)
    nodes = rng.integers(graph.n_nodes, size=(n, 2))
    pairs = []
    for k, (u, v) in enumerate(nodes):
        a = AgentState(0, "T", graph.positions[u], rng.uniform(0, 360), 100.0,
                       Equipment(weapons[rng.integers(len(weapons))], float(rng.integers(0, 101)), bool(rng.random() < .5)))
        b = AgentState(1, "CT", graph.positions[v], rng.uniform(0, 360), 100.0,
                       Equipment(weapons[rng.integers(len(weapons))], float(rng.integers(0, 101)), bool(rng.random() < .5)))
        pairs.append((a, b))
    batch = make_batch(pairs, schema.map_ids[0], schema)
    clean = law.damage_probability(batch, rng) > 0.5
    flip = rng.random(n) < label_noise
    damage, groups = law.generate_batch(batch, rng)
    return PairCorpus(batch.features, batch.distances, (clean ^ flip).astype(int), clean.astype(int),
                      damage, groups)


def round_pair_rows(rounds: Sequence[Round], schema: FeatureSchema, level: LevelGeometry):
    """DIP/DOG training rows from a round corpus.

    One row per living cross-team pair with line of sight at every sample;
    the label says whether an aligned damage event exists for that pair and
    sample. Returns (features, labels, damage, hit_group) with damage and
    group meaningful where the label is 1.
    """
    from .engine import GameState, BombState, candidate_pairs
    X, y, d, g = [], [], [], []
    for rnd in rounds:
        rnd = align_damage(rnd)
        ev = {(_nearest_sample(e.t, rnd.tick_rate), e.attacker, e.victim): e for e in rnd.damage_events}
        for k in range(1, rnd.length):
            # positions at the resolution tick, health from just before it
            agents = [rnd.state(i, k) for i in range(rnd.n_agents)]
            for i, a in enumerate(agents):
                a.health = float(rnd.health[i, k - 1])
                a.alive = a.health > 0
            st = GameState(agents, BombState(np.zeros(3)))
            batch = candidate_pairs(st, level, schema, rnd.map_id)
            for row, a, v in zip(batch.features, batch.attacker_ids, batch.victim_ids):
                e = ev.get((k, int(a), int(v)))
                X.append(row)
                y.append(int(e is not None))
                d.append(e.damage if e else 0.0)
                g.append(int(e.hit_group) if e else 0)
    dim = schema.dim
    return (np.array(X).reshape(-1, dim), np.array(y, dtype=int), np.array(d), np.array(g, dtype=int))

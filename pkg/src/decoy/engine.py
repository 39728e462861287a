"""Deterministic round simulator over a waypoint graph.

Agents move along graph edges asynchronously. Physics advances at 60 ticks
per second, and :meth:`Env.step` returns as soon as some living agent is
ready for a new decision. Damage is resolved on a fixed cadence from the
pairwise models, and the bomb follows the usual plant/defuse/explode rules.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .core import TEAMS, AgentState, DamageEvent, Equipment, HitGroup, RoundOutcome
from .damage import FeatureSchema, ModelBundle, PairBatch, make_batch
from .errors import ConfigError, ContractError, ModelError
from .geometry import AgentSpec, LevelGeometry, region_contains, segments_blocked
from .waypoints import PHYSICS_TICK_RATE, CompassDir, WaypointGraph

BOMB_STATUSES = ("carried", "dropped", "planted", "defused", "exploded")


@dataclass
class EngineConfig:
    n_agents: int = 10
    tick_rate: int = PHYSICS_TICK_RATE
    round_time: float = 155.0
    bomb_timer: float = 40.0
    defuse_duration: float = 5.0
    defuse_radius: float = 1.5
    pickup_radius: float = 1.0
    damage_rate: float = 2.0
    sample_rate: float = 2.0
    stop_ticks: int = 30
    damage: bool = True
    bomb: bool = True
    record_samples: bool = True
    agent: AgentSpec = field(default_factory=AgentSpec)

    def __post_init__(self):
        if self.n_agents < 2:
            raise ConfigError(f"need at least 2 agents, got {self.n_agents}")
        for name in ("damage_rate", "sample_rate"):
            per = self.tick_rate / getattr(self, name)
            if per != int(per) or per < 1:
                raise ConfigError(f"{name} must divide the tick rate {self.tick_rate}")
        if self.stop_ticks < 1:
            raise ConfigError("stop_ticks must be positive")

    def ticks(self, seconds: float) -> int:
        return int(round(seconds * self.tick_rate))

    @property
    def damage_every(self) -> int:
        return int(self.tick_rate / self.damage_rate)

    @property
    def sample_every(self) -> int:
        return int(self.tick_rate / self.sample_rate)


@dataclass
class BombState:
    position: np.ndarray
    status: str = "carried"
    carrier: Optional[int] = None
    timer_ticks: int = 0
    defuse_ticks: int = 0
    site: Optional[str] = None
    tick_rate: int = PHYSICS_TICK_RATE

    @property
    def timer(self) -> float:
        """Seconds remaining once planted."""
        return self.timer_ticks / self.tick_rate

    def to_dict(self) -> dict:
        return {"position": [float(v) for v in self.position], "status": self.status, "carrier": self.carrier,
                "timer": self.timer, "site": self.site}


@dataclass
class GameState:
    agents: list[AgentState]
    bomb: BombState
    tick: int = 0
    tick_rate: int = PHYSICS_TICK_RATE
    outcome: Optional[RoundOutcome] = None

    @property
    def clock(self) -> float:
        return self.tick / self.tick_rate

    def team(self, team: str) -> list[AgentState]:
        return [a for a in self.agents if a.team == team]

    def alive(self, team: str) -> list[AgentState]:
        return [a for a in self.agents if a.team == team and a.alive]

    def ready_ids(self) -> list[int]:
        return [a.agent_id for a in self.agents if a.ready]


@dataclass(frozen=True)
class AgentAction:
    kind: str
    direction: Optional[CompassDir] = None
    angle: Optional[float] = None
    ticks: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("move", "stop", "set_view"):
            raise ContractError(f"unknown action kind {self.kind!r}")
        if self.kind == "move" and self.direction is None:
            raise ContractError("move needs a direction")
        if self.kind == "set_view" and self.angle is None:
            raise ContractError("set_view needs an angle")
        if self.ticks is not None and self.ticks < 1:
            raise ContractError("stop duration must be at least one tick")

    @classmethod
    def move(cls, direction) -> "AgentAction":
        return cls("move", direction=CompassDir(direction) if not isinstance(direction, str) else CompassDir[direction])

    @classmethod
    def stop(cls, ticks: Optional[int] = None) -> "AgentAction":
        return cls("stop", ticks=ticks)

    @classmethod
    def set_view(cls, angle: float) -> "AgentAction":
        return cls("set_view", angle=float(angle))


@dataclass
class Observation:
    own: dict
    visible: list[dict]
    bomb: Optional[dict]
    valid_moves: list[str]


@dataclass(frozen=True)
class SpeedReport:
    n_agents: int
    physics_ticks: int
    decisions: int
    wall_time: float
    physics_time: float
    ticks_per_sec: float
    time_scale: float

    @classmethod
    def from_counts(cls, n_agents: int, physics_ticks: int, decisions: int, wall_time: float,
                    tick_rate: int = PHYSICS_TICK_RATE) -> "SpeedReport":
        if not wall_time > 0:
            raise ContractError("wall time must be positive")
        physics_time = physics_ticks / tick_rate
        return cls(n_agents, physics_ticks, decisions, wall_time, physics_time,
                   physics_ticks / wall_time, physics_time / wall_time)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Sample:
    tick: int
    positions: np.ndarray
    view_angles: np.ndarray
    health: np.ndarray
    alive: np.ndarray


RewardFn = Callable[[GameState, list[dict], Optional[RoundOutcome]], dict[int, float]]


def terminal_reward(state: GameState, events: list[dict], outcome: Optional[RoundOutcome]) -> dict[int, float]:
    if outcome is None:
        return {a.agent_id: 0.0 for a in state.agents}
    return {a.agent_id: 1.0 if a.team == outcome.winner else -1.0 for a in state.agents}


def eye(agent: AgentState, spec: AgentSpec = AgentSpec()) -> np.ndarray:
    return agent.position + np.array([0.0, 0.0, spec.eye_height])


def line_of_sight(level: LevelGeometry, a: AgentState, b: AgentState, spec: AgentSpec = AgentSpec()) -> bool:
    """Eye-to-eye ray between two living agents is unobstructed."""
    if not (a.alive and b.alive):
        raise ContractError("line of sight is defined between living agents")
    return not bool(segments_blocked(level, eye(a, spec), eye(b, spec))[0])


def visibility_matrix(level: LevelGeometry, agents: Sequence[AgentState], spec: AgentSpec = AgentSpec()) -> np.ndarray:
    """Symmetric boolean matrix of mutual line of sight; False for dead agents."""
    n = len(agents)
    vis = np.zeros((n, n), dtype=bool)
    live = [i for i, a in enumerate(agents) if a.alive]
    pairs = [(i, j) for k, i in enumerate(live) for j in live[k + 1:]]
    if pairs:
        src = np.array([eye(agents[i], spec) for i, _ in pairs])
        dst = np.array([eye(agents[j], spec) for _, j in pairs])
        clear = ~segments_blocked(level, src, dst)
        for (i, j), c in zip(pairs, clear):
            vis[i, j] = vis[j, i] = c
    return vis


def yaw_towards(p, q) -> float:
    d = np.asarray(q, dtype=float) - np.asarray(p, dtype=float)
    return math.degrees(math.atan2(d[1], d[0])) % 360.0


def resolve_damage(state: GameState, level: LevelGeometry, dip, dog, threshold: float, rng: np.random.Generator,
                   schema: FeatureSchema, map_id: Optional[str] = None,
                   spec: AgentSpec = AgentSpec()) -> list[DamageEvent]:
    """One damage resolution step; mutates ``state`` and returns the events.

    Every row is scored and applied from the same pre-step snapshot, so
    mutual engagements are simultaneous and the outcome does not depend on
    attacker order. Damage is clamped at the victim's remaining health; rows
    that would apply nothing (victim already at 0) are dropped. Events come
    back sorted by (attacker, victim).
    """
    if not 0 < threshold < 1:
        raise ContractError(f"threshold must be in (0, 1), got {threshold}")
    batch = candidate_pairs(state, level, schema, map_id, spec)
    if len(batch) == 0:
        return []
    try:
        p = np.asarray(dip.damage_probability(batch, rng), dtype=float)
        hit = p > threshold
        if not hit.any():
            return []
        sub = batch.subset(hit)
        damage, groups = dog.generate_batch(sub, rng)
    except (OSError, ValueError) as exc:
        raise ModelError(f"damage model failed: {exc}") from exc
    by_id = {a.agent_id: a for a in state.agents}
    t = state.clock
    events = []
    for a_id, v_id, d, g in zip(sub.attacker_ids, sub.victim_ids, damage, groups):
        victim = by_id[int(v_id)]
        applied = min(float(d), victim.health)
        if applied <= 0:
            continue
        victim.health -= applied
        events.append(DamageEvent(int(a_id), int(v_id), applied, HitGroup(int(g)), t))
    return events


def candidate_pairs(state: GameState, level: LevelGeometry, schema: FeatureSchema, map_id: Optional[str] = None,
                    spec: AgentSpec = AgentSpec()) -> PairBatch:
    """Ordered living cross-team pairs with line of sight, sorted by (attacker, victim)."""
    agents = sorted(state.agents, key=lambda a: a.agent_id)
    vis = visibility_matrix(level, agents, spec)
    pairs = [(a, b) for i, a in enumerate(agents) for j, b in enumerate(agents)
             if a.team != b.team and vis[i, j]]
    return make_batch(pairs, map_id or schema.map_ids[0], schema)


class Env:
    """Multi-agent environment with a reset/step contract.

    ``step`` must receive exactly one action per agent listed as ready after
    the previous call. Damage needs a :class:`ModelBundle`; without one, or
    with ``config.damage`` off, only movement and the bomb are simulated.
    """

    def __init__(self, level: LevelGeometry, graph: WaypointGraph, models: Optional[ModelBundle] = None,
                 config: EngineConfig = EngineConfig(), reward_fn: RewardFn = terminal_reward,
                 map_id: Optional[str] = None):
        self.level = level
        self.graph = graph
        self.models = models
        self.config = config
        self.reward_fn = reward_fn
        self.map_id = map_id or (models.schema.map_ids[0] if models else level.name)
        self.state: Optional[GameState] = None
        self.log: list[dict] = []
        self.samples: list[Sample] = []
        self.rng = np.random.default_rng(0)
        self._spawn_nodes = {team: self._nodes_in(level.spawn_regions.get(team, [])) for team in TEAMS}

    # -------------------------------------------------------------- setup

    def _nodes_in(self, regions) -> list[int]:
        pos = self.graph.positions
        return [i for i in range(len(pos)) if any(region_contains(r, pos[i]) for r in regions)]

    def spawn_nodes(self, team: str) -> list[int]:
        return list(self._spawn_nodes[team])

    def reset(self, seed: int, *, start_nodes: Optional[Sequence[int]] = None,
              teams: Optional[Sequence[str]] = None, bomb_carrier: Optional[int] = None,
              equipment: Optional[Sequence[Equipment]] = None, health: Optional[Sequence[float]] = None):
        """Start a round. Returns ``(state, observations)``."""
        cfg = self.config
        n = cfg.n_agents
        self.rng = np.random.default_rng(seed)
        teams = list(teams) if teams is not None else ["T" if i < math.ceil(n / 2) else "CT" for i in range(n)]
        if len(teams) != n or any(t not in TEAMS for t in teams):
            raise ConfigError(f"teams must list {n} entries of T/CT")
        if "T" not in teams or "CT" not in teams:
            raise ConfigError("both teams need at least one agent")
        if start_nodes is None:
            start_nodes = [0] * n
            for team in TEAMS:
                members = [i for i in range(n) if teams[i] == team]
                nodes = self._spawn_nodes[team]
                if not nodes:
                    raise ConfigError(f"spawn region for {team} contains no waypoints")
                order = self.rng.permutation(len(nodes))
                for k, i in enumerate(members):
                    start_nodes[i] = nodes[order[k % len(nodes)]]
        elif len(start_nodes) != n:
            raise ConfigError(f"start_nodes must have {n} entries")
        for u in start_nodes:
            self.graph._check(int(u))
        centroids = {t: self.graph.positions[[start_nodes[i] for i in range(n) if teams[i] == t]].mean(axis=0)
                     for t in TEAMS}
        agents = []
        for i in range(n):
            p = self.graph.positions[int(start_nodes[i])].copy()
            foe = centroids["CT" if teams[i] == "T" else "T"]
            agents.append(AgentState(
                agent_id=i, team=teams[i], position=p, view_angle=yaw_towards(p, foe),
                health=100.0 if health is None else float(health[i]),
                equipment=replace(equipment[i]) if equipment is not None else Equipment(),
                current_node=int(start_nodes[i])))
        t_ids = [i for i in range(n) if teams[i] == "T"]
        if bomb_carrier is None:
            bomb_carrier = int(self.rng.choice(t_ids))
        elif bomb_carrier not in t_ids:
            raise ConfigError(f"bomb carrier {bomb_carrier} is not a T agent")
        self.initial_carrier = int(bomb_carrier)
        bomb = BombState(agents[bomb_carrier].position.copy(), "carried", bomb_carrier, tick_rate=cfg.tick_rate)
        self.state = GameState(agents, bomb, 0, cfg.tick_rate)
        self.log = []
        self.samples = []
        self._record_sample()
        return self.state, self.observe()

    # ------------------------------------------------------------ stepping

    def step(self, actions: dict[int, AgentAction]):
        """Dispatch actions, then advance until someone is ready or the round ends.

        Returns ``(state, observations, rewards, dones, info)``.
        """
        s = self.state
        if s is None:
            raise ContractError("call reset() before step()")
        if s.outcome is not None:
            raise ContractError("round is over; call reset()")
        ready = set(s.ready_ids())
        if set(actions) != ready:
            extra = sorted(set(actions) - ready)
            missing = sorted(ready - set(actions))
            raise ContractError(f"actions must cover exactly the ready agents; extra {extra}, missing {missing}")
        invalid = {}
        by_id = {a.agent_id: a for a in s.agents}
        for aid in sorted(actions):
            invalid[aid] = not self._dispatch(by_id[aid], actions[aid])
        rewards = {a.agent_id: 0.0 for a in s.agents}
        n_ticks = 0
        while s.outcome is None and not any(a.ready for a in s.agents):
            events = self._tick()
            n_ticks += 1
            for k, r in self.reward_fn(s, events, s.outcome).items():
                rewards[k] += r
        done = s.outcome is not None
        dones = {a.agent_id: done or not a.alive for a in s.agents}
        info = {"invalid": invalid, "ticks": n_ticks, "ready": s.ready_ids() if not done else [],
                "outcome": s.outcome}
        return s, self.observe(), rewards, dones, info

    def _dispatch(self, agent: AgentState, action: AgentAction) -> bool:
        if action.kind == "set_view":
            agent.view_angle = float(action.angle) % 360.0
            return True
        if action.kind == "stop":
            agent.hold = action.ticks or self.config.stop_ticks
            return True
        edge = self.graph.out_edges(agent.current_node).get(action.direction)
        if edge is None:
            # keep the agent in place for one stop so the round still advances
            agent.hold = self.config.stop_ticks
            return False
        agent.in_transit = (edge.src, edge.dst)
        agent.transit_frames = edge.frames
        agent.transit_progress = 0
        agent.view_angle = yaw_towards(self.graph.positions[edge.src], self.graph.positions[edge.dst])
        return True

    def _emit(self, kind: str, **payload) -> dict:
        rec = {"tick": self.state.tick, "type": kind, **payload}
        self.log.append(rec)
        return rec

    def _tick(self) -> list[dict]:
        s = self.state
        cfg = self.config
        mark = len(self.log)
        s.tick += 1
        pos = self.graph.positions
        for a in s.agents:
            if not a.alive:
                continue
            if a.in_transit is not None:
                u, v = a.in_transit
                a.transit_progress += 1
                f = a.transit_progress / a.transit_frames
                if a.transit_progress >= a.transit_frames:
                    a.position = pos[v].copy()
                    a.current_node = v
                    a.in_transit = None
                    a.transit_progress = a.transit_frames = 0
                    self._emit("move_complete", agent=a.agent_id, node=int(v))
                else:
                    a.position = pos[u] + f * (pos[v] - pos[u])
            elif a.hold > 0:
                a.hold -= 1
        if cfg.bomb:
            self.bomb_update()
        if cfg.damage and self.models is not None and s.tick % cfg.damage_every == 0:
            self._resolve_damage()
        if cfg.record_samples and s.tick % cfg.sample_every == 0:
            self._record_sample()
        out = round_outcome(s, self.config)
        if out is not None:
            s.outcome = out
            self._emit("round_end", **out.to_dict())
        return self.log[mark:]

    def _resolve_damage(self) -> None:
        s = self.state
        m = self.models
        events = resolve_damage(s, self.level, m.dip, m.dog, m.threshold, self.rng, m.schema, self.map_id,
                                self.config.agent)
        by_id = {a.agent_id: a for a in s.agents}
        for e in events:
            self._emit("damage", **e.to_dict())
        for aid in sorted({e.victim for e in events}):
            a = by_id[aid]
            if a.alive and a.health <= 0:
                self._kill(a)

    def _kill(self, a: AgentState) -> None:
        a.health = 0.0
        a.alive = False
        a.in_transit = None
        a.hold = 0
        self._emit("death", agent=a.agent_id, position=[float(v) for v in a.position])
        b = self.state.bomb
        if b.status == "carried" and b.carrier == a.agent_id:
            b.status, b.carrier, b.position = "dropped", None, a.position.copy()
            self._emit("bomb_drop", agent=a.agent_id, position=[float(v) for v in b.position])

    def kill(self, agent_id: int) -> None:
        """Scripted death, for fixtures and tests."""
        a = self.state.agents[agent_id]
        if a.alive:
            self._kill(a)

    def bomb_update(self) -> BombState:
        s = self.state
        b = s.bomb
        cfg = self.config
        if b.status == "carried":
            carrier = s.agents[b.carrier]
            b.position = carrier.position.copy()
            site = self.level.bombsite_at(carrier.position)
            if site is not None:
                b.status, b.site, b.carrier = "planted", site, None
                b.timer_ticks = cfg.ticks(cfg.bomb_timer)
                self._emit("plant", agent=carrier.agent_id, site=site, position=[float(v) for v in b.position])
        elif b.status == "dropped":
            near = [a for a in s.alive("T")
                    if np.linalg.norm(a.position - b.position) <= cfg.pickup_radius]
            if near:
                b.status, b.carrier = "carried", near[0].agent_id
                self._emit("bomb_pickup", agent=b.carrier)
        elif b.status == "planted":
            b.timer_ticks -= 1
            if b.timer_ticks <= 0:
                b.status = "exploded"
                self._emit("explode", site=b.site)
                return b
            if any(np.linalg.norm(a.position - b.position) <= cfg.defuse_radius for a in s.alive("CT")):
                b.defuse_ticks += 1
                if b.defuse_ticks >= cfg.ticks(cfg.defuse_duration):
                    b.status = "defused"
                    self._emit("defuse", site=b.site)
            else:
                b.defuse_ticks = 0
        return b

    def _record_sample(self) -> None:
        ag = self.state.agents
        self.samples.append(Sample(
            self.state.tick, np.array([a.position for a in ag]), np.array([a.view_angle for a in ag]),
            np.array([a.health for a in ag]), np.array([a.alive for a in ag])))

    # ---------------------------------------------------------- observing

    def observe(self) -> dict[int, Observation]:
        """Observations for the agents that must act next."""
        s = self.state
        if s.outcome is not None:
            return {}
        ready = [a for a in s.agents if a.ready]
        if not ready:
            return {}
        others = [a for a in s.agents if a.alive]
        src = np.array([eye(r, self.config.agent) for r in ready for o in others])
        dst = np.array([eye(o, self.config.agent) for r in ready for o in others])
        clear = ~segments_blocked(self.level, src, dst)
        obs = {}
        k = 0
        b = s.bomb
        for r in ready:
            visible = []
            for o in others:
                if o.agent_id != r.agent_id and clear[k]:
                    visible.append(o.to_dict())
                k += 1
            sees_bomb = b.carrier == r.agent_id or not segments_blocked(
                self.level, eye(r, self.config.agent), b.position + np.array([0.0, 0.0, 0.1]))[0]
            obs[r.agent_id] = Observation(
                r.to_dict(), visible, b.to_dict() if sees_bomb else None,
                [d.name for d in self.graph.out_edges(r.current_node)])
        return obs

    def log_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.log)


def round_outcome(state: GameState, config: EngineConfig = EngineConfig()) -> Optional[RoundOutcome]:
    """Terminal condition, if any; checked in a fixed priority order."""
    b = state.bomb
    tick = state.tick
    if b.status == "exploded":
        return RoundOutcome("T", "bomb_exploded", tick)
    if b.status == "defused":
        return RoundOutcome("CT", "bomb_defused", tick)
    if not state.alive("CT"):
        return RoundOutcome("T", "elimination", tick)
    planted = b.status == "planted"
    if not state.alive("T") and not planted:
        return RoundOutcome("CT", "elimination", tick)
    if not planted and tick >= config.ticks(config.round_time):
        return RoundOutcome("CT", "time_expired", tick)
    return None


# ---------------------------------------------------------------- policies

def random_walk_actions(env: Env, rng: np.random.Generator) -> dict[int, AgentAction]:
    acts = {}
    for aid in env.state.ready_ids():
        dirs = sorted(env.graph.out_edges(env.state.agents[aid].current_node))
        acts[aid] = AgentAction.move(dirs[rng.integers(len(dirs))]) if dirs else AgentAction.stop()
    return acts


def run_round(env: Env, policy: Callable[[Env], dict[int, AgentAction]], seed: int, max_steps: int = 1_000_000,
              **reset_kw) -> RoundOutcome:
    env.reset(seed, **reset_kw)
    for _ in range(max_steps):
        _, _, _, _, info = env.step(policy(env))
        if info["outcome"] is not None:
            return info["outcome"]
    raise ContractError(f"round did not finish within {max_steps} steps")


def benchmark(level: LevelGeometry, graph: WaypointGraph, n_agents: int, total_decisions: int, seed: int = 0,
              models: Optional[ModelBundle] = None, config: Optional[EngineConfig] = None) -> SpeedReport:
    """Random-walk agents until ``total_decisions`` actions have been dispatched."""
    cfg = config or EngineConfig(n_agents=n_agents, damage=models is not None, record_samples=False)
    if cfg.n_agents != n_agents:
        cfg = replace(cfg, n_agents=n_agents)
    env = Env(level, graph, models, cfg)
    rng = np.random.default_rng(seed)
    decisions = ticks = 0
    round_seed = seed
    t0 = time.perf_counter()
    env.reset(round_seed)
    while decisions < total_decisions:
        acts = random_walk_actions(env, rng)
        decisions += len(acts)
        _, _, _, _, info = env.step(acts)
        ticks += info["ticks"]
        if info["outcome"] is not None:
            round_seed += 1
            env.reset(round_seed)
    wall = time.perf_counter() - t0
    return SpeedReport.from_counts(n_agents, ticks, decisions, wall, cfg.tick_rate)

"""Turn recorded trajectories into waypoint actions and replay them."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, GenerationError
from .waypoints import WaypointGraph, nearest_waypoints, shortest_path


@dataclass(frozen=True)
class WaypointTrajectory:
    """Node sequence with the physics tick at which each node should be reached.

    ``arrival_ticks[0]`` is the start tick; filled-in nodes carry
    interpolated targets.
    """

    agent_id: int
    nodes: tuple[int, ...]
    arrival_ticks: tuple[int, ...]
    start_tick: int = 0

    def __post_init__(self):
        if len(self.nodes) != len(self.arrival_ticks) or not self.nodes:
            raise ContractError("nodes and arrival_ticks must be non-empty and equal-length")
        if any(a == b for a, b in zip(self.nodes, self.nodes[1:])):
            raise ContractError("consecutive nodes must differ")


def fill_gaps(graph: WaypointGraph, nodes: Sequence[int]) -> list[int]:
    """Expand every non-adjacent consecutive pair into its shortest path."""
    nodes = [int(u) for u in nodes]
    for u in nodes:
        graph._check(u)
    if not nodes:
        return []
    out = [nodes[0]]
    for u, v in zip(nodes, nodes[1:]):
        if u == v:
            out.append(v)
        elif graph.edge(u, v) is not None:
            out.append(v)
        else:
            out.extend(shortest_path(graph, u, v)[1:])
    return out


def _project(p, a, b) -> tuple[float, float]:
    """(fraction along a->b of the closest point to p, squared distance)."""
    d = b - a
    L2 = float(d @ d)
    f = 0.0 if L2 == 0 else min(max(float((p - a) @ d) / L2, 0.0), 1.0)
    q = a + f * d - p
    return f, float(q @ q)


def _arrival_ticks(graph: WaypointGraph, path: list[int], anchors: list[int], positions: np.ndarray,
                   sample_ticks: list[int]) -> list[int]:
    """Tick at which each path node is reached, read off the samples.

    Every sample gets a coordinate along the path measured in travel frames,
    refined by projecting it onto the edges next to its snapped node. Node
    arrivals interpolate linearly between the bracketing samples.
    """
    pos = graph.positions
    cum = np.concatenate([[0.0], np.cumsum([graph.edge(a, b).frames for a, b in zip(path, path[1:])])])
    coord = np.empty(len(anchors))
    for k, (j, p) in enumerate(zip(anchors, positions)):
        best, c = np.inf, cum[j]
        for lo in (j - 1, j):
            if 0 <= lo < len(path) - 1:
                f, d2 = _project(p, pos[path[lo]], pos[path[lo + 1]])
                if d2 < best:
                    best, c = d2, cum[lo] + f * (cum[lo + 1] - cum[lo])
        coord[k] = c
    coord = np.maximum.accumulate(coord)
    ticks = [sample_ticks[0]]
    for F in cum[1:]:
        k = int(np.searchsorted(coord, F - 1e-9))
        if k == 0:
            t = sample_ticks[0] + F
        elif k == len(coord):
            # past the last sample the agent is assumed to keep full speed
            t = sample_ticks[-1] + (F - coord[-1])
        else:
            c0, c1 = coord[k - 1], coord[k]
            t = sample_ticks[k - 1] + (F - c0) / (c1 - c0) * (sample_ticks[k] - sample_ticks[k - 1])
        ticks.append(int(round(t)))
    return ticks


def to_waypoints(graph: WaypointGraph, positions, agent_id: int = 0, sample_ticks: int = 30,
                 start_tick: int = 0) -> WaypointTrajectory:
    """Snap a sampled trajectory to nodes, collapse repeats, and repair gaps.

    ``positions`` holds one point per sample, ``sample_ticks`` physics ticks
    apart. Arrival targets follow the recorded progress along the path.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(positions) == 0:
        raise ContractError("empty trajectory")
    snapped = nearest_waypoints(graph, positions)
    path, anchors = [int(snapped[0])], [0]
    for u in snapped[1:]:
        u = int(u)
        if u != path[-1]:
            if graph.edge(path[-1], u) is not None:
                path.append(u)
            else:
                path.extend(shortest_path(graph, path[-1], u)[1:])
        anchors.append(len(path) - 1)
    times = [start_tick + k * sample_ticks for k in range(len(positions))]
    ticks = _arrival_ticks(graph, path, anchors, positions, times)
    return WaypointTrajectory(agent_id, tuple(path), tuple(ticks), start_tick)


def to_actions(graph: WaypointGraph, wt: WaypointTrajectory, stop_ticks: int = 30):
    """One move per consecutive node pair, with stops inserted where the
    recording lingered so that arrivals track the recorded schedule."""
    from .engine import AgentAction
    if len(wt.nodes) == 1:
        return [AgentAction.stop(stop_ticks)]
    acts = []
    t = wt.start_tick
    for (u, v), target in zip(zip(wt.nodes, wt.nodes[1:]), wt.arrival_ticks[1:]):
        e = graph.edge(u, v)
        if e is None:
            raise GenerationError(f"trajectory uses missing edge {u}->{v}")
        wait = target - (t + e.frames)
        if wait > 0:
            acts.append(AgentAction.stop(wait))
            t += wait
        acts.append(AgentAction.move(e.direction))
        t += e.frames
    return acts


def resample(series, target_len: int) -> np.ndarray:
    """Linear interpolation of a (T, ...) series onto ``target_len`` evenly spaced points."""
    x = np.asarray(series, dtype=float)
    if len(x) < 2 or target_len < 2:
        raise ContractError("resample needs at least 2 input points and target_len >= 2")
    if target_len == len(x):
        return x.copy()
    flat = x.reshape(len(x), -1)
    pos = np.linspace(0.0, len(x) - 1, target_len)
    i0 = np.minimum(np.floor(pos).astype(int), len(x) - 2)
    w = (pos - i0)[:, None]
    out = flat[i0] * (1 - w) + flat[i0 + 1] * w
    out[0], out[-1] = flat[0], flat[-1]
    return out.reshape((target_len,) + x.shape[1:])


@dataclass
class ReplayResult:
    positions: np.ndarray          # (n_agents, T, 3) at the source sample rate
    health: np.ndarray             # (n_agents, T)
    events: list[dict]
    outcome: Optional[object]
    tick_rate: float = 2.0
    teams: list[str] = field(default_factory=list)

    @property
    def bomb_events(self) -> list[dict]:
        return [e for e in self.events if e["type"] in ("plant", "defuse", "explode", "bomb_drop", "bomb_pickup")]

    @property
    def damage_events(self) -> list[dict]:
        return [e for e in self.events if e["type"] in ("damage", "death")]

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "events.jsonl").write_text("".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events))
        n, T = self.health.shape
        np.savetxt(d / "positions.csv", self.positions.transpose(1, 0, 2).reshape(T, 3 * n), delimiter=",",
                   fmt="%.17g", header=",".join(f"{c}{i}" for i in range(n) for c in "xyz"), comments="")
        np.savetxt(d / "health.csv", self.health.T, delimiter=",", fmt="%.17g",
                   header=",".join(f"h{i}" for i in range(n)), comments="")
        meta = {"tick_rate": self.tick_rate, "teams": self.teams,
                "outcome": self.outcome.to_dict() if self.outcome else None}
        (d / "result.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, directory) -> "ReplayResult":
        from .core import RoundOutcome
        d = Path(directory)
        meta = json.loads((d / "result.json").read_text())
        n = len(meta["teams"])
        pos = np.loadtxt(d / "positions.csv", delimiter=",", skiprows=1, ndmin=2).reshape(-1, n, 3).transpose(1, 0, 2)
        hp = np.loadtxt(d / "health.csv", delimiter=",", skiprows=1, ndmin=2).T
        events = [json.loads(line) for line in (d / "events.jsonl").read_text().splitlines() if line]
        out = RoundOutcome.from_dict(meta["outcome"]) if meta["outcome"] else None
        return cls(pos, hp, events, out, meta["tick_rate"], meta["teams"])


class ActionQueuePolicy:
    """Feeds each agent its precomputed actions, then idles."""

    def __init__(self, actions: dict[int, list], idle_ticks: int = 30):
        self.queues = {k: list(v) for k, v in actions.items()}
        self.idle_ticks = idle_ticks
        self.visits: dict[int, list[int]] = {}

    def __call__(self, env) -> dict:
        from .engine import AgentAction
        acts = {}
        for aid in env.state.ready_ids():
            self.visits.setdefault(aid, [env.state.agents[aid].current_node])
            if self.visits[aid][-1] != env.state.agents[aid].current_node:
                self.visits[aid].append(env.state.agents[aid].current_node)
            q = self.queues.get(aid)
            acts[aid] = q.pop(0) if q else AgentAction.stop(self.idle_ticks)
        return acts


def replay_trajectories(env, graph: WaypointGraph, trajectories: Sequence[WaypointTrajectory], seed: int,
                        n_samples: Optional[int] = None, reset_kw: Optional[dict] = None):
    """Drive ``env`` with actions derived from ``trajectories``.

    Stops after ``n_samples`` samples were recorded (movement replays) or
    when the round ends.
    """
    for wt in trajectories:
        if not graph.out_edges(wt.nodes[0]):
            raise GenerationError(f"agent {wt.agent_id} starts on node {wt.nodes[0]} with no exits; graph is corrupt")
    policy = ActionQueuePolicy({wt.agent_id: to_actions(graph, wt, env.config.stop_ticks) for wt in trajectories},
                               env.config.stop_ticks)
    env.reset(seed, start_nodes=[wt.nodes[0] for wt in trajectories], **(reset_kw or {}))
    while env.state.outcome is None and (n_samples is None or len(env.samples) < n_samples):
        env.step(policy(env))
    for aid, a in enumerate(env.state.agents):
        visits = policy.visits.setdefault(aid, [a.current_node])
        if visits[-1] != a.current_node:
            visits.append(a.current_node)
    return policy


def replay_round(level, graph: WaypointGraph, rnd, mode: str = "movement", models=None, seed: int = 0,
                 config=None) -> ReplayResult:
    """Replay a recorded round through the simulator.

    ``movement`` disables damage and the bomb and runs for the recorded
    duration. ``full`` enables every mechanic and runs to the round end.
    """
    from .engine import EngineConfig, Env
    if mode not in ("movement", "full"):
        raise ContractError(f"mode must be 'movement' or 'full', got {mode!r}")
    if mode == "full" and models is None:
        raise ContractError("full replay needs damage models")
    base = config or EngineConfig(n_agents=rnd.n_agents)
    cfg = replace(base, n_agents=rnd.n_agents, damage=mode == "full", bomb=mode == "full",
                  sample_rate=rnd.tick_rate, record_samples=True)
    env = Env(level, graph, models, cfg, map_id=rnd.map_id)
    sample_ticks = cfg.sample_every
    trajs = []
    for i in range(rnd.n_agents):
        pos = rnd.positions[i]
        death = rnd.death_index(i)
        if mode == "movement" and death is not None:
            # stop issuing moves once the recorded agent is dead
            pos = pos[: death + 1]
        trajs.append(to_waypoints(graph, pos, i, sample_ticks))
    reset_kw = {"teams": rnd.teams, "bomb_carrier": rnd.bomb_carrier, "equipment": rnd.equipment}
    replay_trajectories(env, graph, trajs, seed, rnd.length if mode == "movement" else None, reset_kw)
    samples = env.samples[: rnd.length] if mode == "movement" else env.samples
    pos = np.stack([s.positions for s in samples], axis=1)
    hp = np.stack([s.health for s in samples], axis=1)
    return ReplayResult(pos, hp, list(env.log), env.state.outcome, rnd.tick_rate, list(rnd.teams))

"""Directed waypoint lattice: three-pass generation, verification, and queries.

Generation runs breadth-first expansion from seed points, then adds one-way
drop edges, then walks a capsule along every edge and prunes what fails,
keeping the largest strongly connected component.
"""
from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ContractError, GenerationError, VerificationError
from .geometry import AgentSpec, LevelGeometry, capsule_free, capsules_free, ground_height, segments_blocked

DEFAULT_SPACING = 0.7
ELEVATION_WEIGHT = 2.0
PHYSICS_TICK_RATE = 60
# nodes closer than this vertically share an elevation band for de-duplication
ELEVATION_BAND = 1.0
WALL_RAY_HEIGHT = 0.9
SWEEP_STEP = 0.1


class CompassDir(IntEnum):
    N = 0
    NE = 1
    E = 2
    SE = 3
    S = 4
    SW = 5
    W = 6
    NW = 7

    @property
    def opposite(self) -> "CompassDir":
        return CompassDir((self + 4) % 8)

    @property
    def offset(self) -> tuple[int, int]:
        return _OFFSETS[self]

    @property
    def is_diagonal(self) -> bool:
        return self % 2 == 1


_OFFSETS = {
    CompassDir.N: (0, 1), CompassDir.NE: (1, 1), CompassDir.E: (1, 0), CompassDir.SE: (1, -1),
    CompassDir.S: (0, -1), CompassDir.SW: (-1, -1), CompassDir.W: (-1, 0), CompassDir.NW: (-1, 1),
}


def direction_label(a, b) -> CompassDir:
    """Compass sector of the horizontal bearing from a to b.

    Bearing is measured clockwise from +y. Exact sector boundaries go to the
    cardinal neighbour (round-half-even lands on the even, cardinal, index).
    """
    dx, dy = float(b[0]) - float(a[0]), float(b[1]) - float(a[1])
    if math.hypot(dx, dy) <= 1e-9:
        raise ContractError("vertical-only displacement has no compass direction")
    bearing = math.degrees(math.atan2(dx, dy)) % 360.0
    return CompassDir(round(bearing / 45.0) % 8)


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    direction: CompassDir
    frames: int


class WaypointGraph:
    """Immutable directed graph; node ids are 0..n-1.

    Each node has at most one outgoing edge per compass direction, so a
    ``move(direction)`` action is unambiguous.
    """

    def __init__(self, spacing: float, positions, edges: Iterable[Edge]):
        self.spacing = float(spacing)
        pos = np.array(positions, dtype=float).reshape(-1, 3)
        pos.setflags(write=False)
        self.positions = pos
        self._out: list[dict[CompassDir, Edge]] = [dict() for _ in range(len(pos))]
        self._succ: list[dict[int, Edge]] = [dict() for _ in range(len(pos))]
        self._pred: list[list[tuple[int, int]]] = [[] for _ in range(len(pos))]
        for e in sorted(edges, key=lambda e: (e.src, e.direction)):
            if e.direction in self._out[e.src]:
                raise ValueError(f"node {e.src} has two edges labelled {e.direction.name}")
            if e.frames < 1:
                raise ValueError(f"edge {e.src}->{e.dst} has non-positive frames")
            self._out[e.src][e.direction] = e
            self._succ[e.src][e.dst] = e
            self._pred[e.dst].append((e.src, e.frames))

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    def out_edges(self, u: int) -> dict[CompassDir, Edge]:
        return self._out[u]

    def successors(self, u: int) -> dict[int, Edge]:
        return self._succ[u]

    def edge(self, u: int, v: int) -> Optional[Edge]:
        return self._succ[u].get(v)

    def edges(self) -> list[Edge]:
        return [e for u in range(self.n_nodes) for e in sorted(self._out[u].values(), key=lambda e: e.dst)]

    @property
    def n_edges(self) -> int:
        return sum(len(o) for o in self._out)

    def out_degrees(self) -> np.ndarray:
        return np.array([len(o) for o in self._out])

    def position(self, u: int) -> np.ndarray:
        return self.positions[u]

    def _check(self, u: int) -> None:
        if not (isinstance(u, (int, np.integer)) and 0 <= u < self.n_nodes):
            raise ContractError(f"unknown node id {u!r}")

    # ----------------------------------------------------------- queries

    def nearest(self, p, w_z: float = ELEVATION_WEIGHT) -> int:
        return nearest_waypoint(self, p, w_z)

    def shortest_path(self, a: int, b: int) -> list[int]:
        return shortest_path(self, a, b)

    def path_cost(self, path: Sequence[int]) -> int:
        total = 0
        for u, v in zip(path, path[1:]):
            e = self._succ[u].get(v)
            if e is None:
                raise ContractError(f"{u}->{v} is not an edge")
            total += e.frames
        return total

    def strongly_connected(self) -> bool:
        return len(scc_labels(self)[1]) == 1

    # ----------------------------------------------------- serialization

    def to_dict(self) -> dict:
        return {
            "format": "decoy-waypoints",
            "version": 1,
            "spacing": self.spacing,
            "nodes": [[i, *map(float, p)] for i, p in enumerate(self.positions)],
            "edges": [[e.src, e.dst, e.direction.name, e.frames] for e in self.edges()],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":")) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, doc: dict) -> "WaypointGraph":
        if doc.get("format") != "decoy-waypoints":
            raise ValueError("not a waypoint graph file")
        nodes = sorted(doc["nodes"], key=lambda r: r[0])
        if [r[0] for r in nodes] != list(range(len(nodes))):
            raise ValueError("node ids must be 0..n-1")
        edges = [Edge(int(s), int(d), CompassDir[name], int(f)) for s, d, name, f in doc["edges"]]
        return cls(doc["spacing"], [r[1:] for r in nodes], edges)

    @classmethod
    def load(cls, path) -> "WaypointGraph":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------- queries

def nearest_waypoint(graph: WaypointGraph, p, w_z: float = ELEVATION_WEIGHT) -> int:
    """Node minimising horizontal distance + w_z * |dz|; ties go to the smallest id."""
    if graph.n_nodes == 0:
        raise ContractError("graph is empty")
    pos = graph.positions
    dx = pos[:, 0] - p[0]
    dy = pos[:, 1] - p[1]
    cost = np.sqrt(dx * dx + dy * dy) + w_z * np.abs(pos[:, 2] - p[2])
    return int(np.argmin(cost))


def nearest_waypoints(graph: WaypointGraph, points, w_z: float = ELEVATION_WEIGHT, chunk: int = 256) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    pos = graph.positions
    out = np.empty(len(pts), dtype=int)
    for s in range(0, len(pts), chunk):
        q = pts[s:s + chunk, None, :]
        dx = pos[None, :, 0] - q[..., 0]
        dy = pos[None, :, 1] - q[..., 1]
        cost = np.sqrt(dx * dx + dy * dy) + w_z * np.abs(pos[None, :, 2] - q[..., 2])
        out[s:s + chunk] = np.argmin(cost, axis=1)
    return out


def _distances_to(graph: WaypointGraph, b: int, stop_at: Optional[int] = None) -> dict[int, int]:
    """Reverse Dijkstra: settled cost-to-b for every node popped before ``stop_at``."""
    dist = {b: 0}
    settled: dict[int, int] = {}
    heap = [(0, b)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in settled:
            continue
        settled[u] = d
        if u == stop_at:
            break
        for w, c in graph._pred[u]:
            nd = d + c
            if w not in settled and nd < dist.get(w, math.inf):
                dist[w] = nd
                heapq.heappush(heap, (nd, w))
    return settled


def shortest_path(graph: WaypointGraph, a: int, b: int) -> list[int]:
    """Minimum total traversal_frames from a to b.

    Among equal-cost paths the lexicographically smallest node sequence wins:
    walking forward, always take the smallest-id successor that stays on some
    optimal path.
    """
    graph._check(a)
    graph._check(b)
    if a == b:
        return [a]
    to_b = _distances_to(graph, b, stop_at=a)
    if a not in to_b:
        raise ContractError(f"no path from {a} to {b}")
    path = [a]
    u = a
    while u != b:
        du = to_b[u]
        nxt = min(v for v, e in graph._succ[u].items() if to_b.get(v, math.inf) + e.frames == du)
        path.append(nxt)
        u = nxt
    return path


def scc_labels(graph: WaypointGraph) -> tuple[np.ndarray, np.ndarray]:
    n = graph.n_nodes
    edges = graph.edges()
    m = csr_matrix((np.ones(len(edges)), ([e.src for e in edges], [e.dst for e in edges])), shape=(n, n))
    _, labels = connected_components(m, directed=True, connection="strong")
    sizes = np.bincount(labels)
    return labels, sizes


# ------------------------------------------------------------ generation

class _Builder:
    def __init__(self, spacing: float):
        self.spacing = spacing
        self.pos: list[tuple[float, float, float]] = []
        self.out: list[dict[CompassDir, Edge]] = []
        self._cells: dict[tuple[int, int], list[int]] = {}
        self._cell = 0.5 * spacing

    def _key(self, x, y):
        return (math.floor(x / self._cell), math.floor(y / self._cell))

    def find_near(self, p) -> Optional[int]:
        kx, ky = self._key(p[0], p[1])
        best, best_d = None, 0.5 * self.spacing
        for i in range(kx - 1, kx + 2):
            for j in range(ky - 1, ky + 2):
                for v in self._cells.get((i, j), ()):
                    q = self.pos[v]
                    d = math.hypot(q[0] - p[0], q[1] - p[1])
                    if d < best_d and abs(q[2] - p[2]) < ELEVATION_BAND:
                        best, best_d = v, d
        return best

    def add_node(self, p) -> int:
        self.pos.append(tuple(float(v) for v in p))
        self.out.append({})
        self._cells.setdefault(self._key(p[0], p[1]), []).append(len(self.pos) - 1)
        return len(self.pos) - 1

    def try_link(self, u: int, v: int, frames_fn, both: bool = True) -> bool:
        pu, pv = self.pos[u], self.pos[v]
        duv = direction_label(pu, pv)
        if duv in self.out[u] or any(e.dst == v for e in self.out[u].values()):
            return False
        if both:
            dvu = direction_label(pv, pu)
            if dvu in self.out[v] or any(e.dst == u for e in self.out[v].values()):
                return False
            self.out[v][dvu] = Edge(v, u, dvu, frames_fn(pv, pu))
        self.out[u][duv] = Edge(u, v, duv, frames_fn(pu, pv))
        return True

    def build(self) -> WaypointGraph:
        return WaypointGraph(self.spacing, self.pos, [e for o in self.out for e in o.values()])


def _frames_for_length(length: float, agent: AgentSpec, tick_rate: int = PHYSICS_TICK_RATE) -> int:
    return max(1, math.ceil(length / (agent.speed / tick_rate) - 1e-9))


def _estimate_frames(agent: AgentSpec):
    def fn(p, q):
        return _frames_for_length(math.dist(p, q), agent)
    return fn


def _edge_clear(level: LevelGeometry, p, q, agent: AgentSpec) -> bool:
    heights = (WALL_RAY_HEIGHT, agent.eye_height)
    a = [(p[0], p[1], p[2] + h) for h in heights]
    b = [(q[0], q[1], q[2] + h) for h in heights]
    return not segments_blocked(level, a, b).any()


def _hull(agent: AgentSpec) -> tuple[float, float, float]:
    """(z offset, radius, height) of the clearance capsule.

    The hull is tested lifted by the step allowance, as a step-up character
    controller does; anything lower than a step is climbable, not an obstacle.
    """
    return agent.step_allowance, agent.radius, agent.height - agent.step_allowance


def _standable(level: LevelGeometry, p, agent: AgentSpec) -> bool:
    off, r, h = _hull(agent)
    return capsule_free(level, (p[0], p[1], p[2] + off), r, h)


def _clear_along(level: LevelGeometry, pts: np.ndarray, agent: AgentSpec) -> bool:
    off, r, h = _hull(agent)
    return bool(capsules_free(level, pts + np.array([0.0, 0.0, off]), r, h).all())


def generate_bfs(level: LevelGeometry, spacing: float = DEFAULT_SPACING, agent: AgentSpec = AgentSpec()) -> WaypointGraph:
    """Stage 1: breadth-first lattice from the level's seeds, bidirectional edges."""
    if not spacing > 0:
        raise ContractError("spacing must be positive")
    if len(level.waypoint_seeds) == 0:
        raise GenerationError("level has no waypoint seeds")
    step = agent.step_allowance
    frames = _estimate_frames(agent)
    g = _Builder(spacing)
    queue: deque[int] = deque()
    for k, s in enumerate(level.waypoint_seeds):
        z = ground_height(level, s[0], s[1], s[2], step_allowance=step, max_drop=agent.max_drop)
        if z is None:
            raise GenerationError(f"seed {k} at {s.tolist()} has no ground below it")
        p = (s[0], s[1], z)
        if not _standable(level, p, agent):
            raise GenerationError(f"seed {k} at {s.tolist()} is inside solid geometry")
        if g.find_near(p) is None:
            queue.append(g.add_node(p))

    while queue:
        u = queue.popleft()
        x, y, zu = g.pos[u]
        for d in CompassDir:
            if d in g.out[u]:
                continue
            ox, oy = d.offset
            tx, ty = x + ox * spacing, y + oy * spacing
            z = ground_height(level, tx, ty, zu, step_allowance=step, max_drop=agent.max_drop)
            if z is None or abs(z - zu) > step + 1e-9:
                continue
            q = (tx, ty, z)
            v = g.find_near(q)
            if v is not None:
                q = g.pos[v]
                if abs(q[2] - zu) > step + 1e-9 or v == u:
                    continue
            elif not _standable(level, q, agent):
                continue
            if not _edge_clear(level, g.pos[u], q, agent):
                continue
            new = v is None
            if new:
                v = g.add_node(q)
            if g.try_link(u, v, frames) and new:
                queue.append(v)

    _inject_manual(level, g, agent, frames)
    return g.build()


def _inject_manual(level: LevelGeometry, g: _Builder, agent: AgentSpec, frames) -> None:
    step = agent.step_allowance
    reach = g.spacing * math.sqrt(2) * 1.01
    for k, m in enumerate(level.manual_waypoints):
        z = ground_height(level, m[0], m[1], m[2], step_allowance=step, max_drop=agent.max_drop)
        if z is None or not _standable(level, (m[0], m[1], z), agent):
            raise GenerationError(f"manual waypoint {k} at {m.tolist()} is not standable")
        p = (m[0], m[1], z)
        u = g.find_near(p)
        if u is None:
            u = g.add_node(p)
        p = g.pos[u]
        cands = []
        for v, q in enumerate(g.pos):
            h = math.hypot(q[0] - p[0], q[1] - p[1])
            if v != u and 1e-9 < h <= reach and abs(q[2] - p[2]) <= step + 1e-9:
                cands.append((h, v))
        for _, v in sorted(cands):
            if _edge_clear(level, p, g.pos[v], agent):
                g.try_link(u, v, frames)


def _descent_clear(level: LevelGeometry, p, q, agent: AgentSpec) -> bool:
    h = math.hypot(q[0] - p[0], q[1] - p[1])
    n = max(1, math.ceil(h / SWEEP_STEP))
    t = np.arange(1, n + 1) / n
    across = np.column_stack([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]), np.full(n, p[2])])
    m = max(1, math.ceil((p[2] - q[2]) / SWEEP_STEP))
    down = np.column_stack([np.full(m, q[0]), np.full(m, q[1]), p[2] - np.arange(1, m + 1) / m * (p[2] - q[2])])
    return _clear_along(level, np.vstack([across, down]), agent)


def add_drop_edges(graph: WaypointGraph, level: LevelGeometry, max_drop: Optional[float] = None,
                   agent: AgentSpec = AgentSpec()) -> WaypointGraph:
    """Stage 2: one-way edges from nodes down to nearby lower nodes."""
    max_drop = agent.max_drop if max_drop is None else max_drop
    step = agent.step_allowance
    pos = graph.positions
    g = _Builder(graph.spacing)
    for p in pos:
        g.add_node(p)
    for e in graph.edges():
        g.out[e.src][e.direction] = e
    frames = _estimate_frames(agent)
    reach = graph.spacing * (1 + 1e-9)
    for u in range(graph.n_nodes):
        p = pos[u]
        h = np.hypot(pos[:, 0] - p[0], pos[:, 1] - p[1])
        dz = p[2] - pos[:, 2]
        cand = np.flatnonzero((h > 1e-9) & (h <= reach) & (dz > step + 1e-9) & (dz <= max_drop + 1e-9))
        for v in cand:
            v = int(v)
            if graph.edge(u, v) is not None:
                continue
            if _descent_clear(level, tuple(p), tuple(pos[v]), agent):
                g.try_link(u, v, frames, both=False)
    return g.build()


def sweep_edge(level: LevelGeometry, p, q, agent: AgentSpec = AgentSpec()) -> Optional[float]:
    """Walk a capsule from p toward q the way a character controller would.

    The agent steps up at most ``step_allowance`` and falls at most
    ``max_drop``. Returns the travelled path length, or None if blocked or if
    it does not end on q's floor.
    """
    h = math.hypot(q[0] - p[0], q[1] - p[1])
    n = max(1, math.ceil(h / SWEEP_STEP))
    z = float(p[2])
    pts = np.empty((n, 3))
    for k in range(1, n + 1):
        t = k / n
        x = p[0] + t * (q[0] - p[0])
        y = p[1] + t * (q[1] - p[1])
        gz = ground_height(level, x, y, z, step_allowance=agent.step_allowance, max_drop=agent.max_drop)
        if gz is None:
            return None
        z = gz
        pts[k - 1] = (x, y, z)
    if abs(z - q[2]) > 1e-6:
        return None
    if not _clear_along(level, pts, agent):
        return None
    path = np.vstack([np.asarray(p, dtype=float)[None], pts])
    return float(np.linalg.norm(np.diff(path, axis=0), axis=1).sum())


def verify_edges(graph: WaypointGraph, level: LevelGeometry, agent: AgentSpec = AgentSpec(),
                 tick_rate: int = PHYSICS_TICK_RATE, min_fraction: float = 0.5) -> WaypointGraph:
    """Stage 3: keep edges an agent can actually walk, then the largest SCC."""
    kept = []
    for e in graph.edges():
        length = sweep_edge(level, graph.positions[e.src], graph.positions[e.dst], agent)
        if length is not None:
            kept.append(Edge(e.src, e.dst, e.direction, _frames_for_length(length, agent, tick_rate)))
    walked = WaypointGraph(graph.spacing, graph.positions, kept)
    labels, sizes = scc_labels(walked)
    # ties between equal-size components go to the one holding the smallest node id
    best = int(labels[np.flatnonzero(sizes[labels] == sizes.max())[0]])
    keep = np.flatnonzero(labels == best)
    if len(keep) < min_fraction * graph.n_nodes:
        raise VerificationError(
            f"largest strongly connected component has {len(keep)} of {graph.n_nodes} nodes")
    remap = {int(old): new for new, old in enumerate(keep)}
    edges = [Edge(remap[e.src], remap[e.dst], e.direction, e.frames) for e in kept
             if e.src in remap and e.dst in remap]
    return WaypointGraph(graph.spacing, graph.positions[keep], edges)


def build_graph(level: LevelGeometry, spacing: float = DEFAULT_SPACING, agent: AgentSpec = AgentSpec(),
                tick_rate: int = PHYSICS_TICK_RATE) -> WaypointGraph:
    """All three passes."""
    g = generate_bfs(level, spacing, agent)
    g = add_drop_edges(g, level, agent.max_drop, agent)
    return verify_edges(g, level, agent, tick_rate)

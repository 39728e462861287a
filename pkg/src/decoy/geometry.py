"""Axis-aligned box levels and the spatial queries the waypoint builder and
simulator run against them.

All coordinates are meters, z is up, +y is north. The map file stores source
units; :func:`load_level` converts using the file's ``unit_scale``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, GeometryValidationError, MapFormatError

SOURCE_UNIT_METERS = 0.01905
STEP_ALLOWANCE = 0.45
MAX_DROP = 3.0

_TOUCH_EPS = 1e-9


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        if not all(a < b for a, b in zip(self.lo, self.hi)):
            raise GeometryValidationError(f"box min {self.lo} not below max {self.hi}")

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lo) + np.asarray(self.hi)) / 2

    def scaled(self, s: float) -> "Box":
        return Box(tuple(v * s for v in self.lo), tuple(v * s for v in self.hi))


@dataclass(frozen=True)
class AgentSpec:
    """Player hull and movement constants, in meters and meters/second."""

    radius: float = 16 * SOURCE_UNIT_METERS
    height: float = 72 * SOURCE_UNIT_METERS
    eye_height: float = 64 * SOURCE_UNIT_METERS
    speed: float = 250 * SOURCE_UNIT_METERS
    step_allowance: float = STEP_ALLOWANCE
    max_drop: float = MAX_DROP


@dataclass(frozen=True)
class RayHit:
    distance: float
    point: np.ndarray
    box_index: int


@dataclass(frozen=True, eq=False)
class LevelGeometry:
    box_min: np.ndarray
    box_max: np.ndarray
    spawn_regions: dict[str, list[Box]] = field(default_factory=dict)
    bombsite_regions: dict[str, Box] = field(default_factory=dict)
    waypoint_seeds: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    manual_waypoints: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    unit_scale: float = 1.0
    name: str = "level"
    step_allowance: float = STEP_ALLOWANCE
    max_drop: float = MAX_DROP

    def __post_init__(self):
        for attr in ("box_min", "box_max", "waypoint_seeds", "manual_waypoints"):
            arr = np.array(getattr(self, attr), dtype=float).reshape(-1, 3)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        _validate(self)

    @property
    def n_boxes(self) -> int:
        return len(self.box_min)

    @property
    def bounds(self) -> Box:
        return Box(tuple(self.box_min.min(axis=0)), tuple(self.box_max.max(axis=0)))

    def box(self, i: int) -> Box:
        return Box(tuple(self.box_min[i]), tuple(self.box_max[i]))

    def bombsite_at(self, p) -> Optional[str]:
        for name in sorted(self.bombsite_regions):
            if region_contains(self.bombsite_regions[name], p):
                return name
        return None


def make_level(boxes: Sequence[Box], *, spawns=None, bombsites=None, seeds=(), manual=(),
               name: str = "level", **kw) -> LevelGeometry:
    """Build a level directly from metric boxes (used by fixtures and tests)."""
    boxes = list(boxes)
    return LevelGeometry(
        box_min=np.array([b.lo for b in boxes], dtype=float).reshape(-1, 3),
        box_max=np.array([b.hi for b in boxes], dtype=float).reshape(-1, 3),
        spawn_regions={k: list(v) for k, v in (spawns or {}).items()},
        bombsite_regions=dict(bombsites or {}),
        waypoint_seeds=np.array(seeds, dtype=float).reshape(-1, 3),
        manual_waypoints=np.array(manual, dtype=float).reshape(-1, 3),
        name=name,
        **kw,
    )


def _validate(level: LevelGeometry) -> None:
    if not level.unit_scale > 0:
        raise GeometryValidationError(f"unit_scale must be positive, got {level.unit_scale}")
    if level.n_boxes == 0:
        raise GeometryValidationError("level has no boxes")
    bad = np.flatnonzero(~np.all(level.box_min < level.box_max, axis=1))
    if bad.size:
        i = int(bad[0])
        raise GeometryValidationError(
            f"box {i} has min {level.box_min[i].tolist()} not below max {level.box_max[i].tolist()}")
    lo, hi = level.box_min.min(axis=0), level.box_max.max(axis=0)
    regions = [(f"spawns.{t}[{k}]", b) for t, bs in level.spawn_regions.items() for k, b in enumerate(bs)]
    regions += [(f"bombsites.{n}", b) for n, b in level.bombsite_regions.items()]
    for label, b in regions:
        if np.any(np.asarray(b.lo) < lo - 1e-9) or np.any(np.asarray(b.hi) > hi + 1e-9):
            raise GeometryValidationError(f"{label} lies outside the map bounding volume")


# ---------------------------------------------------------------- file format

def _parse_vec(obj, where: str) -> tuple[float, float, float]:
    if not isinstance(obj, (list, tuple)) or len(obj) != 3:
        raise MapFormatError(where, "expected a list of 3 numbers")
    try:
        return tuple(float(v) for v in obj)
    except (TypeError, ValueError):
        raise MapFormatError(where, f"non-numeric coordinate in {obj!r}") from None


def _parse_box(obj, where: str, scale: float) -> Box:
    if not isinstance(obj, dict) or "min" not in obj or "max" not in obj:
        raise MapFormatError(where, "expected an object with 'min' and 'max'")
    lo = _parse_vec(obj["min"], where + ".min")
    hi = _parse_vec(obj["max"], where + ".max")
    if not all(a < b for a, b in zip(lo, hi)):
        raise GeometryValidationError(f"{where}: min {list(lo)} not below max {list(hi)}")
    return Box(tuple(v * scale for v in lo), tuple(v * scale for v in hi))


def parse_level(text: str, source: str = "<map>") -> LevelGeometry:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MapFormatError(f"{source} line {exc.lineno}", exc.msg) from None
    if not isinstance(doc, dict):
        raise MapFormatError(source, "top level must be an object")
    for key in ("unit_scale", "boxes", "spawns", "bombsites", "waypoint_seeds"):
        if key not in doc:
            raise MapFormatError(key, "missing required field")
    try:
        scale = float(doc["unit_scale"])
    except (TypeError, ValueError):
        raise MapFormatError("unit_scale", "must be a number") from None
    if not scale > 0:
        raise GeometryValidationError(f"unit_scale must be positive, got {scale}")
    if not isinstance(doc["boxes"], list):
        raise MapFormatError("boxes", "must be a list")
    boxes = [_parse_box(b, f"boxes[{i}]", scale) for i, b in enumerate(doc["boxes"])]
    spawns = {}
    for team in ("T", "CT"):
        raw = doc["spawns"].get(team) if isinstance(doc["spawns"], dict) else None
        if not isinstance(raw, list) or not raw:
            raise MapFormatError(f"spawns.{team}", "expected a non-empty list of boxes")
        spawns[team] = [_parse_box(b, f"spawns.{team}[{i}]", scale) for i, b in enumerate(raw)]
    if not isinstance(doc["bombsites"], dict) or not doc["bombsites"]:
        raise MapFormatError("bombsites", "expected a non-empty object of named boxes")
    sites = {n: _parse_box(b, f"bombsites.{n}", scale) for n, b in doc["bombsites"].items()}
    seeds = [_parse_vec(p, f"waypoint_seeds[{i}]") for i, p in enumerate(doc["waypoint_seeds"])]
    manual = [_parse_vec(p, f"manual_waypoints[{i}]") for i, p in enumerate(doc.get("manual_waypoints", []))]
    extra = {}
    for key in ("step_allowance", "max_drop"):
        if key in doc:
            extra[key] = float(doc[key])
    return make_level(boxes, spawns=spawns, bombsites=sites,
                      seeds=[tuple(v * scale for v in p) for p in seeds],
                      manual=[tuple(v * scale for v in p) for p in manual],
                      name=str(doc.get("name", Path(source).stem)), unit_scale=scale, **extra)


def load_level(path) -> LevelGeometry:
    path = Path(path)
    return parse_level(path.read_text(), source=str(path))


def level_to_dict(level: LevelGeometry) -> dict:
    """Inverse of :func:`parse_level`, writing source units."""
    s = level.unit_scale

    def box(b: Box):
        return {"min": [v / s for v in b.lo], "max": [v / s for v in b.hi]}

    return {
        "format": "decoy-map",
        "version": 1,
        "name": level.name,
        "unit_scale": s,
        "step_allowance": level.step_allowance,
        "max_drop": level.max_drop,
        "boxes": [box(level.box(i)) for i in range(level.n_boxes)],
        "spawns": {t: [box(b) for b in bs] for t, bs in level.spawn_regions.items()},
        "bombsites": {n: box(b) for n, b in level.bombsite_regions.items()},
        "waypoint_seeds": (level.waypoint_seeds / s).tolist(),
        "manual_waypoints": (level.manual_waypoints / s).tolist(),
    }


# -------------------------------------------------------------------- queries

def _slab(lo: np.ndarray, hi: np.ndarray, o: np.ndarray, d: np.ndarray):
    """Entry/exit parameters of rays against boxes. Broadcasts over leading axes."""
    parallel = d == 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv = 1.0 / d
        t0 = (lo - o) * inv
        t1 = (hi - o) * inv
    near = np.minimum(t0, t1)
    far = np.maximum(t0, t1)
    if np.any(parallel):
        inside = (o >= lo) & (o <= hi)
        par = np.broadcast_to(parallel, near.shape)
        near = np.where(par, np.where(inside, -np.inf, np.inf), near)
        far = np.where(par, np.where(inside, np.inf, -np.inf), far)
    return near.max(axis=-1), far.min(axis=-1)


def raycast(level: LevelGeometry, origin, direction, max_dist: float) -> Optional[RayHit]:
    """Nearest box surface hit along a ray, or None.

    A box that strictly contains the origin is ignored; a ray leaving a face it
    starts on does not hit that face.
    """
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    if abs(math.sqrt(float(d @ d)) - 1.0) > 1e-9:
        raise ContractError(f"ray direction must be unit length, |d| = {math.sqrt(float(d @ d))!r}")
    if not max_dist > 0:
        raise ContractError("max_dist must be positive")
    lo, hi = level.box_min, level.box_max
    near, far = _slab(lo, hi, o, d)
    contains = np.all((o > lo) & (o < hi), axis=1)
    ok = (near <= far) & (near >= 0) & (near <= max_dist) & ~contains
    if not ok.any():
        return None
    t = np.where(ok, near, np.inf)
    i = int(np.argmin(t))
    dist = float(t[i])
    return RayHit(distance=dist, point=o + dist * d, box_index=i)


def segments_blocked(level: LevelGeometry, a, b) -> np.ndarray:
    """For each segment a[k] -> b[k], whether geometry is struck before b[k]."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    seg = b - a
    length = np.linalg.norm(seg, axis=1)
    out = np.zeros(len(a), dtype=bool)
    live = length > 0
    if not live.any():
        return out
    a, d, length = a[live], seg[live] / length[live, None], length[live]
    lo, hi = level.box_min[None], level.box_max[None]
    o, dd = a[:, None, :], d[:, None, :]
    near, far = _slab(lo, hi, o, dd)
    contains = np.all((o > lo) & (o < hi), axis=2)
    hit = (near <= far) & (near >= 0) & (near < length[:, None] - 1e-9) & ~contains
    out[live] = hit.any(axis=1)
    return out


def _capsule_dist2(level: LevelGeometry, bases: np.ndarray, radius: float, height: float) -> np.ndarray:
    x, y = bases[:, 0:1], bases[:, 1:2]
    z0 = bases[:, 2:3] + radius
    z1 = bases[:, 2:3] + height - radius
    lo, hi = level.box_min, level.box_max
    dx = np.maximum(np.maximum(lo[:, 0] - x, x - hi[:, 0]), 0.0)
    dy = np.maximum(np.maximum(lo[:, 1] - y, y - hi[:, 1]), 0.0)
    dz = np.maximum(np.maximum(lo[:, 2] - z1, z0 - hi[:, 2]), 0.0)
    return dx * dx + dy * dy + dz * dz


def _check_capsule(radius: float, height: float) -> None:
    if not radius > 0 or not height > 2 * radius:
        raise ContractError(f"capsule needs radius > 0 and height > 2*radius, got r={radius}, h={height}")


def capsule_free(level: LevelGeometry, base, radius: float, height: float) -> bool:
    """Whether a vertical capsule standing at ``base`` overlaps no box.

    Touching a surface (distance exactly ``radius``) counts as free so that an
    agent can stand on a floor and lean on a wall.
    """
    _check_capsule(radius, height)
    d2 = _capsule_dist2(level, np.asarray(base, dtype=float).reshape(1, 3), radius, height)
    return bool(np.all(d2 >= (radius - _TOUCH_EPS) ** 2))


def capsules_free(level: LevelGeometry, bases, radius: float, height: float) -> np.ndarray:
    _check_capsule(radius, height)
    bases = np.asarray(bases, dtype=float).reshape(-1, 3)
    d2 = _capsule_dist2(level, bases, radius, height)
    return np.all(d2 >= (radius - _TOUCH_EPS) ** 2, axis=1)


def ground_height(level: LevelGeometry, x: float, y: float, z_hint: float, *,
                  step_allowance: Optional[float] = None, max_drop: Optional[float] = None) -> Optional[float]:
    """Highest box top under (x, y) that is at most a step above ``z_hint``
    and at most ``max_drop`` below it."""
    step = level.step_allowance if step_allowance is None else step_allowance
    drop = level.max_drop if max_drop is None else max_drop
    lo, hi = level.box_min, level.box_max
    tops = hi[:, 2]
    cand = ((lo[:, 0] <= x) & (x <= hi[:, 0]) & (lo[:, 1] <= y) & (y <= hi[:, 1])
            & (tops <= z_hint + step + 1e-9) & (tops >= z_hint - drop - 1e-9))
    if not cand.any():
        return None
    return float(tops[cand].max())


def region_contains(region: Box, p) -> bool:
    return all(lo <= v <= hi for lo, v, hi in zip(region.lo, p, region.hi))

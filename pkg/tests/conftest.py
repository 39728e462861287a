from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from decoy.damage import FeatureSchema, ModelBundle
from decoy.dataset import parse_rounds
from decoy.geometry import Box, load_level, make_level
from decoy.waypoints import WaypointGraph, build_graph

PKG = Path(__file__).resolve().parents[1] / "src" / "decoy"
MAP = PKG / "maps" / "test_map.json"
GRAPH = PKG / "maps" / "test_map.graph.json"
ROUNDS = PKG / "fixtures" / "three_rounds.json"


def B(x0, y0, z0, x1, y1, z1):
    return Box((x0, y0, z0), (x1, y1, z1))


def walls(x0, y0, x1, y1, h=3.0, t=0.5):
    return [B(x0 - t, y0 - t, 0, x0, y1 + t, h), B(x1, y0 - t, 0, x1 + t, y1 + t, h),
            B(x0, y0 - t, 0, x1, y0, h), B(x0, y1, 0, x1, y1 + t, h)]


def flat_room_level(**kw):
    return make_level([B(0, 0, -0.5, 10, 10, 0), *walls(0, 0, 10, 10)],
                      spawns={"T": [B(0.5, 0.5, 0, 3, 3, 2)], "CT": [B(7, 7, 0, 9.5, 9.5, 2)]},
                      bombsites={"A": B(7, 0.5, 0, 9.5, 3, 2)}, seeds=[(5.0, 5.0, 0.5)], name="flat_room", **kw)


@pytest.fixture(scope="session")
def level():
    return load_level(MAP)


@pytest.fixture(scope="session")
def graph():
    return WaypointGraph.load(GRAPH)


@pytest.fixture(scope="session")
def rounds():
    return parse_rounds(ROUNDS)


@pytest.fixture(scope="session")
def flat_room():
    return flat_room_level()


@pytest.fixture(scope="session")
def flat_graph(flat_room):
    return build_graph(flat_room)


@pytest.fixture(scope="session")
def two_rooms():
    # rooms [0,8]x[0,8] and [9,17]x[0,8] joined by a 1.5 m door in the dividing wall
    boxes = [B(0, 0, -0.5, 17, 8, 0), *walls(0, 0, 17, 8), B(8, 0, 0, 9, 3.25, 3), B(8, 4.75, 0, 9, 8, 3)]
    return make_level(boxes, seeds=[(2.0, 2.0, 0.5)], name="two_rooms")


@pytest.fixture(scope="session")
def knee_bar():
    # thin bar above step height, crossing the edge between (5.0, 5.0) and (5.7, 5.0)
    boxes = [B(0, 0, -0.5, 10, 10, 0), *walls(0, 0, 10, 10), B(5.33, 4.9, 0.5, 5.37, 5.1, 0.6)]
    return make_level(boxes, seeds=[(5.0, 5.0, 0.5)], name="knee_bar")


def ledge_level(height: float):
    boxes = [B(0, 0, -0.5, 10, 10, 0), *walls(0, 0, 10, 10, h=height + 3), B(0, 0, 0, 4.97, 10, height)]
    # one seed on the ledge, one on the floor
    return make_level(boxes, seeds=[(2.0, 5.0, height + 0.5), (7.5, 5.0, 0.5)], name="ledge")


@pytest.fixture(scope="session")
def schema(level):
    return FeatureSchema.for_level(level)


class ConstDip:
    def __init__(self, p):
        self.p = p

    def damage_probability(self, batch, rng=None):
        return np.full(len(batch), self.p)


class ConstDog:
    def __init__(self, damage, group=0):
        self.damage, self.group = damage, group

    def generate_batch(self, batch, rng):
        return np.full(len(batch), float(self.damage)), np.full(len(batch), self.group, dtype=int)


@pytest.fixture
def stub_bundle(schema):
    def make(p=1.0, damage=150.0, group=0, threshold=0.5):
        return ModelBundle(ConstDip(p), ConstDog(damage, group), threshold, schema)
    return make


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

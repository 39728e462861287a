"""Regenerate the shipped map, waypoint graph, and round fixtures.

    python scripts/make_fixtures.py

The test map is authored here in meters and written in source units.
"""
from __future__ import annotations

import json
import time
from pathlib import Path

from decoy.geometry import SOURCE_UNIT_METERS, Box, level_to_dict, load_level, make_level
from decoy.waypoints import build_graph

ROOT = Path(__file__).resolve().parents[1] / "src" / "decoy"
MAPS = ROOT / "maps"
FIXTURES = ROOT / "fixtures"


def B(x0, y0, z0, x1, y1, z1):
    return Box((x0, y0, z0), (x1, y1, z1))


def test_map_boxes() -> list[Box]:
    boxes = [
        B(0, 0, -0.5, 40, 30, 0),          # floor
        B(0, 0, 0, 0.5, 30, 3),            # outer walls
        B(39.5, 0, 0, 40, 30, 3),
        B(0.5, 0, 0, 39.5, 0.5, 3),
        B(0.5, 29.5, 0, 39.5, 30, 3),
        B(19, 0.5, 0, 21, 6, 3),           # middle wall, two doors
        B(19, 10, 0, 21, 18, 3),
        B(19, 23, 0, 21, 29.5, 3),
        B(8, 14, 0, 10, 16, 1.0),          # low crate, can be seen over
        B(12, 20, 0, 14, 22, 2.2),         # tall crates
        B(26, 5, 0, 27.5, 6.5, 2.0),
        B(6, 24, 0, 7.5, 25.5, 1.0),       # low crate on site A
        B(33, 5, 0, 34.5, 6, 1.0),         # low crate on site B
        B(31, 20, 0, 34, 21, 3),           # wall piece in CT area
    ]
    # staircase up to a 2 m platform; the other platform sides are drop-only
    for k in range(1, 5):
        boxes.append(B(22 + k, 13, 0, 23 + k, 15, 0.4 * k))
    boxes.append(B(27, 13, 0, 34, 17, 2.0))
    return boxes


def build_test_map():
    return make_level(
        test_map_boxes(),
        spawns={"T": [B(2, 2, 0, 8, 8, 2)], "CT": [B(32, 22, 0, 38, 28, 2)]},
        bombsites={"A": B(3, 22, 0, 10, 28, 3), "B": B(30, 2.5, 0, 37, 9, 3)},
        seeds=[(4.0, 4.0, 0.5)],
        name="test_map",
    )


def main() -> None:
    MAPS.mkdir(parents=True, exist_ok=True)
    FIXTURES.mkdir(parents=True, exist_ok=True)
    level = build_test_map()
    doc = level_to_dict(make_level(
        [b.scaled(1 / SOURCE_UNIT_METERS) for b in test_map_boxes()],
        spawns={k: [b.scaled(1 / SOURCE_UNIT_METERS) for b in v] for k, v in level.spawn_regions.items()},
        bombsites={k: b.scaled(1 / SOURCE_UNIT_METERS) for k, b in level.bombsite_regions.items()},
        seeds=(level.waypoint_seeds / SOURCE_UNIT_METERS).tolist(),
        name="test_map",
    ))
    doc["unit_scale"] = SOURCE_UNIT_METERS
    map_path = MAPS / "test_map.json"
    map_path.write_text(json.dumps(doc, indent=1) + "\n")
    level = load_level(map_path)

    t0 = time.perf_counter()
    graph = build_graph(level)
    print(f"graph: {graph.n_nodes} nodes, {graph.n_edges} edges in {time.perf_counter() - t0:.1f}s")
    graph.save(MAPS / "test_map.graph.json")

    from decoy.dataset import three_round_fixture, write_rounds
    rounds = three_round_fixture(level, graph)
    write_rounds(FIXTURES / "three_rounds.json", rounds)
    print(f"rounds: {[r.outcome.winner for r in rounds]}")


if __name__ == "__main__":
    main()

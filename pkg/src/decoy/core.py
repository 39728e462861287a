"""Domain types shared by the simulator, damage models and dataset code."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

TEAMS = ("T", "CT")
OUTCOME_REASONS = ("elimination", "bomb_exploded", "bomb_defused", "time_expired")


class HitGroup(IntEnum):
    Head = 0
    Neck = 1
    Chest = 2
    Stomach = 3
    Arm = 4
    Leg = 5


N_HIT_GROUPS = len(HitGroup)


def other_team(team: str) -> str:
    return "CT" if team == "T" else "T"


@dataclass
class Equipment:
    weapon: str = "ak47"
    armor: float = 100.0
    helmet: bool = True


@dataclass
class AgentState:
    """One agent at one instant. ``position`` is the feet point in meters;
    ``view_angle`` is yaw in degrees, counter-clockwise from +x."""

    agent_id: int
    team: str
    position: np.ndarray
    view_angle: float = 0.0
    health: float = 100.0
    equipment: Equipment = field(default_factory=Equipment)
    alive: bool = True
    current_node: int = -1
    in_transit: Optional[tuple[int, int]] = None
    transit_progress: int = 0
    transit_frames: int = 0
    hold: int = 0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.view_angle = float(self.view_angle) % 360.0

    @property
    def ready(self) -> bool:
        return self.alive and self.in_transit is None and self.hold == 0

    def to_dict(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "team": self.team,
            "position": [float(v) for v in self.position],
            "view_angle": float(self.view_angle),
            "health": float(self.health),
            "weapon": self.equipment.weapon,
            "armor": float(self.equipment.armor),
            "helmet": bool(self.equipment.helmet),
            "alive": self.alive,
            "current_node": int(self.current_node),
            "in_transit": list(self.in_transit) if self.in_transit else None,
        }


@dataclass(frozen=True)
class DamageEvent:
    attacker: int
    victim: int
    damage: float
    hit_group: HitGroup
    t: float

    def __post_init__(self):
        if not self.damage > 0:
            raise ValueError(f"damage must be positive, got {self.damage}")
        if self.attacker == self.victim:
            raise ValueError("attacker and victim must differ")

    def to_dict(self) -> dict:
        return {"a": self.attacker, "v": self.victim, "d": float(self.damage),
                "g": HitGroup(self.hit_group).name, "t": float(self.t)}

    @classmethod
    def from_dict(cls, d: dict) -> "DamageEvent":
        return cls(int(d["a"]), int(d["v"]), float(d["d"]), HitGroup[d["g"]], float(d["t"]))


@dataclass(frozen=True)
class RoundOutcome:
    winner: str
    reason: str
    end_tick: int

    def __post_init__(self):
        if self.winner not in TEAMS:
            raise ValueError(f"unknown winner {self.winner!r}")
        if self.reason not in OUTCOME_REASONS:
            raise ValueError(f"unknown reason {self.reason!r}")
        forced = {"bomb_exploded": "T", "bomb_defused": "CT", "time_expired": "CT"}.get(self.reason)
        if forced and forced != self.winner:
            raise ValueError(f"{self.reason} implies winner {forced}, got {self.winner}")

    def to_dict(self) -> dict:
        return {"winner": self.winner, "reason": self.reason, "end_tick": self.end_tick}

    @classmethod
    def from_dict(cls, d: dict) -> "RoundOutcome":
        return cls(d["winner"], d["reason"], int(d["end_tick"]))

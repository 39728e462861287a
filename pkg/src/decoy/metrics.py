"""Trajectory, distribution and outcome fidelity metrics."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError


def _points(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if len(a) == 0:
        raise ContractError("sequence must be non-empty")
    return a


def _cost_matrix(a, b) -> np.ndarray:
    a, b = _points(a), _points(b)
    if a.shape[1] != b.shape[1]:
        raise ContractError(f"point dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))


def dtw(a, b) -> float:
    """Dynamic time warping cost with Euclidean ground distance (not normalized)."""
    c = _cost_matrix(a, b)
    n, m = c.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row, prev = acc[i], acc[i - 1]
        ci = c[i - 1]
        for j in range(1, m + 1):
            row[j] = ci[j - 1] + min(prev[j - 1], prev[j], row[j - 1])
    return float(acc[n, m])


def dtw_per_step(a, b) -> float:
    """DTW divided by the longer sequence length."""
    return dtw(a, b) / max(len(_points(a)), len(_points(b)))


def frechet(a, b) -> float:
    """Discrete Fréchet distance."""
    c = _cost_matrix(a, b)
    n, m = c.shape
    acc = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                best = -np.inf
            elif i == 0:
                best = acc[0, j - 1]
            elif j == 0:
                best = acc[i - 1, 0]
            else:
                best = min(acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])
            acc[i, j] = max(best, c[i, j])
    return float(acc[-1, -1])


def _pointwise(a, b) -> np.ndarray:
    a, b = _points(a), _points(b)
    if a.shape != b.shape:
        raise ContractError(f"sequences must have equal shape, got {a.shape} and {b.shape}; resample first")
    return np.sqrt(((a - b) ** 2).sum(axis=1))


def mean_euclidean(a, b) -> float:
    return float(_pointwise(a, b).mean())


def rmse(a, b) -> float:
    return float(np.sqrt((_pointwise(a, b) ** 2).mean()))


def wasserstein1d(p, q) -> float:
    """W1 between two empirical distributions by aligning their quantile functions."""
    p = np.sort(np.asarray(p, dtype=float).ravel())
    q = np.sort(np.asarray(q, dtype=float).ravel())
    if len(p) == 0 or len(q) == 0:
        raise ContractError("both samples must be non-empty")
    n, m = len(p), len(q)
    if n == m:
        return float(np.abs(p - q).mean())
    # quantile levels where either step function changes, as exact fractions i*m and j*n over n*m
    levels = np.union1d(np.arange(1, n + 1) * m, np.arange(1, m + 1) * n)
    widths = np.diff(np.concatenate([[0], levels])) / (n * m)
    ip = (levels - 1) // m
    iq = (levels - 1) // n
    return float(np.sum(widths * np.abs(p[ip] - q[iq])))


def pearson(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape or len(x) < 2:
        raise ContractError("pearson needs two equal-length series of at least 2 values")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise ContractError("correlation is undefined for a constant series")
    return float(dx @ dy) / (sx * sy)


def mae(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape or len(x) == 0:
        raise ContractError("mae needs two equal-length non-empty series")
    return float(np.abs(x - y).mean())


def outcome_agreement(pairs: Sequence) -> float:
    """Fraction of (original, replayed) outcome pairs with the same winner."""
    pairs = list(pairs)
    if not pairs:
        raise ContractError("no outcome pairs")
    return sum(a.winner == b.winner for a, b in pairs) / len(pairs)


# -------------------------------------------------------- classification

def roc_auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative; ties count half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Sum over distinct thresholds of precision times recall increment."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if not y.any():
        return float("nan")
    uniq = np.unique(s)[::-1]
    ap, prev_recall = 0.0, 0.0
    for t in uniq:
        pred = s >= t
        tp = int(np.sum(pred & y))
        recall = tp / y.sum()
        ap += (recall - prev_recall) * tp / pred.sum()
        prev_recall = recall
    return float(ap)


# ---------------------------------------------------------------- heatmap

@dataclass
class HeatGrid:
    origin: tuple[float, float]
    cell: float
    values: np.ndarray

    def matches(self, other: "HeatGrid") -> bool:
        return (np.allclose(self.origin, other.origin) and self.cell == other.cell
                and self.values.shape == other.values.shape)

    def percentages(self) -> "HeatGrid":
        total = self.values.sum()
        if total <= 0:
            raise ContractError("empty grid")
        return HeatGrid(self.origin, self.cell, self.values / total * 100.0)

    def save(self, path) -> None:
        header = f"origin_x={self.origin[0]!r} origin_y={self.origin[1]!r} cell={self.cell!r}"
        np.savetxt(path, self.values, delimiter=",", fmt="%.17g", header=header)

    @classmethod
    def load(cls, path) -> "HeatGrid":
        first = Path(path).read_text().splitlines()[0].lstrip("# ")
        kv = dict(item.split("=") for item in first.split())
        vals = np.loadtxt(path, delimiter=",", ndmin=2)
        return cls((float(kv["origin_x"]), float(kv["origin_y"])), float(kv["cell"]), vals)


def grid_for(bounds, cell: float = 1.0):
    """(origin, shape) covering ``bounds`` (a Box) in the ground plane."""
    lo, hi = bounds.lo, bounds.hi
    nx = int(math.ceil((hi[0] - lo[0]) / cell))
    ny = int(math.ceil((hi[1] - lo[1]) / cell))
    return (float(lo[0]), float(lo[1])), (nx, ny)


def heatmap(trajectories: Iterable, origin, shape, cell: float = 1.0) -> HeatGrid:
    """Visit counts per ground-plane cell; points outside the grid land in the edge cells."""
    counts = np.zeros(shape, dtype=float)
    for traj in trajectories:
        pts = _points(traj) if len(np.asarray(traj)) else np.zeros((0, 2))
        if len(pts) == 0:
            continue
        ix = np.clip(np.floor((pts[:, 0] - origin[0]) / cell).astype(int), 0, shape[0] - 1)
        iy = np.clip(np.floor((pts[:, 1] - origin[1]) / cell).astype(int), 0, shape[1] - 1)
        np.add.at(counts, (ix, iy), 1.0)
    return HeatGrid(tuple(map(float, origin)), float(cell), counts)


def pct_diff(h1: HeatGrid, h2: HeatGrid) -> HeatGrid:
    """Per-cell difference of the two normalized grids, in percentage points."""
    if not h1.matches(h2):
        raise ContractError("grids differ in origin, cell size or shape")
    return HeatGrid(h1.origin, h1.cell, h1.percentages().values - h2.percentages().values)


# ----------------------------------------------------------------- report

TRAJECTORY_METRICS = ("dtw", "dtw_per_step", "euclidean", "rmse", "frechet")


@dataclass
class MetricReport:
    """Per-metric (mean, std) for T, CT and Overall; std is the population std."""

    samples: dict[str, dict[str, list[float]]] = field(default_factory=dict)
    scalars: dict[str, float] = field(default_factory=dict)

    def add(self, metric: str, team: str, value: float) -> None:
        groups = self.samples.setdefault(metric, {"T": [], "CT": []})
        groups[team].append(float(value))

    def summary(self) -> dict[str, dict[str, tuple[float, float]]]:
        out = {}
        for metric, groups in self.samples.items():
            row = {}
            for name, vals in (("T", groups["T"]), ("CT", groups["CT"]), ("Overall", groups["T"] + groups["CT"])):
                row[name] = (float(np.mean(vals)), float(np.std(vals))) if vals else (float("nan"), float("nan"))
            out[metric] = row
        return out

    def to_text(self) -> str:
        lines = [f"{'metric':<14}{'T':>20}{'CT':>20}{'Overall':>20}"]
        for metric, row in self.summary().items():
            cells = "".join(f"{f'{m:.3f} ± {s:.3f}':>20}" for m, s in (row["T"], row["CT"], row["Overall"]))
            lines.append(f"{metric:<14}{cells}")
        for k, v in sorted(self.scalars.items()):
            lines.append(f"{k:<14}{v:>20.4f}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"summary": {m: {g: list(v) for g, v in row.items()} for m, row in self.summary().items()},
                "scalars": dict(self.scalars)}

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")
        path.with_suffix(".txt").write_text(self.to_text())


def compare_trajectories(orig, rep, report: MetricReport, team: str, dims: int = 2) -> None:
    """Add every trajectory metric for one agent to ``report``.

    Lengths are equalized by resampling both series to the longer length.
    """
    from .replay import resample
    a, b = np.asarray(orig)[:, :dims], np.asarray(rep)[:, :dims]
    if len(a) == 0 or len(b) == 0:
        return
    n = max(len(a), len(b))
    if len(a) != len(b):
        a = resample(a, n) if len(a) >= 2 else np.repeat(a, n, axis=0)
        b = resample(b, n) if len(b) >= 2 else np.repeat(b, n, axis=0)
    report.add("dtw", team, dtw(a, b))
    report.add("dtw_per_step", team, dtw_per_step(a, b))
    report.add("euclidean", team, mean_euclidean(a, b))
    report.add("rmse", team, rmse(a, b))
    report.add("frechet", team, frechet(a, b))


def evaluate(rounds: Sequence, replays: Sequence, dims: int = 2) -> MetricReport:
    """Fidelity of replays against their source rounds.

    Only samples at which the source agent is alive enter the trajectory
    metrics. Outcome agreement is added when both outcomes exist.
    """
    if len(rounds) != len(replays):
        raise ContractError("need one replay per round")
    report = MetricReport()
    pairs = []
    for rnd, rep in zip(rounds, replays):
        for i in range(rnd.n_agents):
            alive = rnd.health[i] > 0
            n = min(int(alive.sum()), rep.positions.shape[1])
            if n == 0:
                continue
            compare_trajectories(rnd.positions[i][alive][:n], rep.positions[i][:n], report, rnd.teams[i], dims)
        if rnd.outcome is not None and rep.outcome is not None:
            pairs.append((rnd.outcome, rep.outcome))
    if pairs:
        report.scalars["outcome_agreement"] = outcome_agreement(pairs)
    dmg_o = [e.damage for r in rounds for e in r.damage_events]
    dmg_r = [e["d"] for rep in replays for e in rep.events if e["type"] == "damage"]
    if dmg_o and dmg_r:
        report.scalars["damage_wd"] = wasserstein1d(dmg_o, dmg_r)
    return report

"""Boolean driving events and displacement metrics.

Collision is rectangle overlap decided by the separating-axis test;
offroad compares the agent center's distance to the nearest lane-center
polyline against the lane half width. Both are deliberately boolean and
carry no gradients: they gate losses, they do not shape them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "OrientedBox", "EventLabels", "obb_overlap", "collision_flag",
    "offroad_distance", "offroad_flag", "ade",
]


@dataclass(frozen=True)
class OrientedBox:
    cx: float
    cy: float
    yaw: float
    length: float
    width: float


@dataclass(frozen=True)
class EventLabels:
    collision: bool
    offroad: bool


def obb_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    """True iff the rotated rectangles intersect; touching counts."""
    ca, sa = math.cos(a.yaw), math.sin(a.yaw)
    cb, sb = math.cos(b.yaw), math.sin(b.yaw)
    dx, dy = b.cx - a.cx, b.cy - a.cy
    hal, haw = a.length / 2.0, a.width / 2.0
    hbl, hbw = b.length / 2.0, b.width / 2.0
    for ux, uy in ((ca, sa), (-sa, ca), (cb, sb), (-sb, cb)):
        ra = hal * abs(ux * ca + uy * sa) + haw * abs(uy * ca - ux * sa)
        rb = hbl * abs(ux * cb + uy * sb) + hbw * abs(uy * cb - ux * sb)
        if abs(ux * dx + uy * dy) > ra + rb:
            return False
    return True


def _agent_box(state, length, width):
    return OrientedBox(state.x, state.y, state.yaw, length, width)


def collision_flag(state, agent_index: int) -> bool:
    """True iff the agent's box overlaps any other valid agent's box.

    Dimensions and per-timestep validity come from the scenario tracks
    referenced by the sim state.
    """
    tracks = state.scenario.tracks
    me = tracks[agent_index]
    mine = _agent_box(state.agents[agent_index], me.length, me.width)
    for j, track in enumerate(tracks):
        if j == agent_index:
            continue
        vt = min(state.t, len(track.valid) - 1)
        if not track.valid[vt]:
            continue
        if obb_overlap(mine, _agent_box(state.agents[j], track.length,
                                        track.width)):
            return True
    return False


def _polyline_min_distance(px: float, py: float, pts) -> float:
    pts = np.asarray(pts, dtype=np.float64)
    a = pts[:-1]
    v = pts[1:] - a
    w = np.array([px, py]) - a
    vv = (v * v).sum(axis=1)
    t = np.divide((w * v).sum(axis=1), vv,
                  out=np.zeros_like(vv), where=vv > 0.0)
    np.clip(t, 0.0, 1.0, out=t)
    d = w - t[:, None] * v
    return float(np.sqrt((d * d).sum(axis=1).min()))


def offroad_distance(px: float, py: float, roadgraph) -> float:
    """Distance from a point to the nearest lane_center polyline segment."""
    best = math.inf
    for pl in roadgraph.polylines:
        if pl.kind != "lane_center":
            continue
        best = min(best, _polyline_min_distance(px, py, pl.points))
    if not math.isfinite(best):
        raise ValueError("roadgraph has no lane_center polyline")
    return best


def offroad_flag(state, dims, roadgraph) -> bool:
    """True iff the agent center strays beyond the lane half width.

    dims rides along for future footprint-aware variants; the decision
    uses the center point only.
    """
    del dims
    return bool(offroad_distance(state.x, state.y, roadgraph)
                > roadgraph.lane_half_width)


def ade(traj, expert) -> float:
    """Mean Euclidean distance between paired (x, y) sequences."""
    traj = np.asarray(traj, dtype=np.float64)
    expert = np.asarray(expert, dtype=np.float64)
    if traj.shape != expert.shape or traj.ndim != 2 or traj.shape[1] != 2:
        raise ValueError("paired (T, 2) position sequences required, got %r"
                         " vs %r" % (traj.shape, expert.shape))
    if traj.shape[0] < 1:
        raise ValueError("empty trajectory")
    diff = traj - expert
    return float(np.hypot(diff[:, 0], diff[:, 1]).mean())

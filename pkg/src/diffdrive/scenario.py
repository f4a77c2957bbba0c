"""Scenario data model, JSON file format, and synthetic generation.

A scenario is a fixed-horizon scene: a roadgraph of sampled polylines, one
track per agent holding logged states and validity per timestep, the ego
index, and the destination waypoint (the ego log's last valid position).
The generator scripts every agent with a pure-pursuit path follower so the
logs are reproducible, event-free for the ego, and cheap to make at any
difficulty.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from diffdrive import geometry
from diffdrive.dynamics import DT, WHEELBASE, Action, AgentState, SimState, \
    step_agent

KINDS = ("straight", "curve", "intersection", "obstacle_lane")
HORIZON = 90
MAX_AGENTS = 16
LANE_HALF_WIDTH = 2.0
SAMPLE_SPACING = 1.0
LOOKAHEAD = 6.0
SPEED_RANGE = (5.0, 12.0)
SCHEMA_VERSION = 1

EGO_LENGTH = 4.5
EGO_WIDTH = 2.0

__all__ = [
    "KINDS", "HORIZON", "MAX_AGENTS", "LANE_HALF_WIDTH", "Polyline",
    "Roadgraph", "AgentTrack", "Scenario", "scenario_to_dict",
    "scenario_from_dict", "load_scenario", "save_scenario", "validate",
    "generate_synthetic", "nearest_roadgraph_points", "road_point_index",
]


@dataclass(eq=False)
class Polyline:
    kind: str  # "lane_center" or "road_edge"
    points: np.ndarray  # (P, 2) float64


@dataclass(eq=False)
class Roadgraph:
    polylines: list
    lane_half_width: float


@dataclass(eq=False)
class AgentTrack:
    length: float
    width: float
    states: list  # AgentState per timestep 0..L
    valid: list  # bool per timestep


@dataclass(eq=False)
class Scenario:
    roadgraph: Roadgraph
    tracks: list
    ego_index: int
    dt: float
    horizon: int
    destination: tuple
    traffic_lights: list


# -- serialization -------------------------------------------------------------


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "dt": sc.dt,
        "horizon": sc.horizon,
        "ego_index": sc.ego_index,
        "destination": [sc.destination[0], sc.destination[1]],
        "roadgraph": {
            "lane_half_width": sc.roadgraph.lane_half_width,
            "polylines": [
                {"type": pl.kind,
                 "points": np.asarray(pl.points, dtype=np.float64).tolist()}
                for pl in sc.roadgraph.polylines
            ],
        },
        "agents": [
            {"length": tr.length, "width": tr.width,
             "states": [[s.x, s.y, s.yaw, s.speed] for s in tr.states],
             "valid": [bool(v) for v in tr.valid]}
            for tr in sc.tracks
        ],
        "traffic_lights": list(sc.traffic_lights),
    }


def _check_keys(d: dict, allowed, path: str):
    if not isinstance(d, dict):
        raise ValueError("%s: expected an object" % path)
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ValueError("%s: unknown key(s) %s" % (path, ", ".join(unknown)))
    missing = sorted(set(allowed) - set(d))
    if missing:
        raise ValueError("%s: missing key(s) %s" % (path, ", ".join(missing)))


def scenario_from_dict(d: dict) -> Scenario:
    """Parse and shape-check; invariants are the job of validate()."""
    _check_keys(d, ("version", "dt", "horizon", "ego_index", "destination",
                    "roadgraph", "agents", "traffic_lights"), "scenario")
    if d["version"] != SCHEMA_VERSION:
        raise ValueError("version: expected %d, got %r"
                         % (SCHEMA_VERSION, d["version"]))
    rg = d["roadgraph"]
    _check_keys(rg, ("lane_half_width", "polylines"), "roadgraph")
    polylines = []
    for i, pl in enumerate(rg["polylines"]):
        path = "roadgraph.polylines[%d]" % i
        _check_keys(pl, ("type", "points"), path)
        if pl["type"] not in ("lane_center", "road_edge"):
            raise ValueError("%s.type: unknown tag %r" % (path, pl["type"]))
        pts = np.asarray(pl["points"], dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("%s.points: expected [[x,y],...]" % path)
        polylines.append(Polyline(kind=pl["type"], points=pts))
    dest = d["destination"]
    if not (isinstance(dest, (list, tuple)) and len(dest) == 2):
        raise ValueError("destination: expected [x, y]")
    tracks = []
    for i, ag in enumerate(d["agents"]):
        path = "agents[%d]" % i
        _check_keys(ag, ("length", "width", "states", "valid"), path)
        states = []
        for t, row in enumerate(ag["states"]):
            if len(row) != 4:
                raise ValueError("%s.states[%d]: expected [x,y,yaw,speed]"
                                 % (path, t))
            states.append(AgentState(float(row[0]), float(row[1]),
                                     float(row[2]), float(row[3])))
        tracks.append(AgentTrack(length=float(ag["length"]),
                                 width=float(ag["width"]),
                                 states=states,
                                 valid=[bool(v) for v in ag["valid"]]))
    if not isinstance(d["traffic_lights"], list):
        raise ValueError("traffic_lights: expected a list")
    return Scenario(
        roadgraph=Roadgraph(polylines=polylines,
                            lane_half_width=float(rg["lane_half_width"])),
        tracks=tracks,
        ego_index=int(d["ego_index"]),
        dt=float(d["dt"]),
        horizon=int(d["horizon"]),
        destination=(float(dest[0]), float(dest[1])),
        traffic_lights=list(d["traffic_lights"]),
    )


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    sc = scenario_from_dict(data)
    problems = validate(sc)
    if problems:
        raise ValueError("invalid scenario %s: %s"
                         % (path, "; ".join(problems)))
    return sc


def save_scenario(sc: Scenario, path) -> None:
    """Canonical serialization: key-sorted compact JSON, one trailing
    newline, shortest-roundtrip floats. Byte-stable for identical data."""
    text = json.dumps(scenario_to_dict(sc), sort_keys=True,
                      separators=(",", ":")) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def validate(sc: Scenario) -> list:
    """Invariant check; returns human-readable violations (empty = ok)."""
    out = []
    if not sc.dt > 0:
        out.append("dt must be > 0")
    if sc.horizon < 1:
        out.append("horizon must be >= 1")
    if not 1 <= len(sc.tracks) <= MAX_AGENTS:
        out.append("agent count %d outside 1..%d"
                   % (len(sc.tracks), MAX_AGENTS))
    if not 0 <= sc.ego_index < len(sc.tracks):
        out.append("ego_index %d out of range" % sc.ego_index)
        return out
    if sc.roadgraph.lane_half_width <= 0:
        out.append("roadgraph.lane_half_width must be > 0")
    n_center = n_edge = 0
    for i, pl in enumerate(sc.roadgraph.polylines):
        pts = np.asarray(pl.points)
        if len(pts) < 2:
            out.append("roadgraph.polylines[%d] has fewer than 2 points" % i)
            continue
        if np.any(np.all(np.diff(pts, axis=0) == 0.0, axis=1)):
            out.append("roadgraph.polylines[%d] repeats a point" % i)
        if pl.kind == "lane_center":
            n_center += 1
        else:
            n_edge += 1
    if n_center > 0 and n_edge == 0:
        out.append("lane_center polylines present but no road_edge bounds")
    for i, tr in enumerate(sc.tracks):
        if tr.length <= 0:
            out.append("agents[%d].length must be > 0" % i)
        if tr.width <= 0:
            out.append("agents[%d].width must be > 0" % i)
        if len(tr.states) != sc.horizon + 1:
            out.append("agents[%d].states must cover timesteps 0..%d"
                       % (i, sc.horizon))
        if len(tr.valid) != len(tr.states):
            out.append("agents[%d].valid length mismatch" % i)
            continue
        for t, (st, ok) in enumerate(zip(tr.states, tr.valid)):
            if not ok:
                continue
            if not all(map(math.isfinite, (st.x, st.y, st.yaw, st.speed))):
                out.append("agents[%d].states[%d] not finite" % (i, t))
                break
    ego = sc.tracks[sc.ego_index]
    if len(ego.valid) == len(ego.states) and any(ego.valid):
        last = max(t for t, ok in enumerate(ego.valid) if ok)
        want = (ego.states[last].x, ego.states[last].y)
        if tuple(sc.destination) != want:
            out.append("destination %r != last valid ego position %r"
                       % (tuple(sc.destination), want))
    elif not any(ego.valid):
        out.append("ego track has no valid timestep")
    if sc.traffic_lights:
        out.append("traffic_lights is reserved and must be empty")
    return out


# -- roadgraph queries ---------------------------------------------------------


def _point_table(roadgraph):
    cached = getattr(roadgraph, "_point_table", None)
    if cached is None:
        pts, pidx, kidx = [], [], []
        for i, pl in enumerate(roadgraph.polylines):
            p = np.asarray(pl.points, dtype=np.float64)
            pts.append(p)
            pidx.append(np.full(len(p), i, dtype=np.int64))
            kidx.append(np.arange(len(p), dtype=np.int64))
        cached = (np.concatenate(pts), np.concatenate(pidx),
                  np.concatenate(kidx))
        roadgraph._point_table = cached
    return cached


def nearest_roadgraph_points(pos, roadgraph, R: int) -> np.ndarray:
    """R closest sampled polyline points, sorted by distance.

    Ties break by polyline index then point index; the result pads by
    repeating the farthest point when the roadgraph has fewer than R.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    pts, pidx, kidx = _point_table(roadgraph)
    d2 = (pts[:, 0] - pos[0]) ** 2 + (pts[:, 1] - pos[1]) ** 2
    order = np.lexsort((kidx, pidx, d2))
    out = pts[order[:R]]
    if len(out) < R:
        out = np.concatenate(
            [out, np.repeat(out[-1:], R - len(out), axis=0)])
    return out


def road_point_index(roadgraph):
    """(points, kd-tree) pair, cached on the roadgraph, for bulk nearest
    queries on the hot path. The exact query above stays authoritative."""
    cached = getattr(roadgraph, "_point_tree", None)
    if cached is None:
        pts = _point_table(roadgraph)[0]
        cached = (pts, cKDTree(pts))
        roadgraph._point_tree = cached
    return cached


# -- synthetic generation ------------------------------------------------------


def _straight_points(length, start, heading):
    n = int(round(length / SAMPLE_SPACING)) + 1
    s = np.arange(n, dtype=np.float64) * SAMPLE_SPACING
    direction = np.array([math.cos(heading), math.sin(heading)])
    return np.asarray(start, dtype=np.float64) + s[:, None] * direction


def _curve_points(straight_len, radius, sweep_sign, arc_len, start):
    lead = _straight_points(straight_len, start, 0.0)
    n_arc = int(round(arc_len / SAMPLE_SPACING))
    dth = SAMPLE_SPACING / radius
    cx = lead[-1][0]
    cy = lead[-1][1] + sweep_sign * radius
    th0 = -sweep_sign * math.pi / 2.0
    th = th0 + sweep_sign * dth * np.arange(1, n_arc + 1)
    arc = np.column_stack([cx + radius * np.cos(th),
                           cy + radius * np.sin(th)])
    return np.concatenate([lead, arc])


def _offset_polyline(pts, lateral):
    t = np.gradient(pts, axis=0)
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    normal = np.column_stack([-t[:, 1], t[:, 0]])
    return pts + lateral * normal


def _drive_path(path_pts, v_ref, n_steps, start_s=5.0, kp=1.5):
    """Scripted pure-pursuit follower; returns n_steps+1 states."""
    i0 = min(int(round(start_s / SAMPLE_SPACING)), len(path_pts) - 2)
    tangent = path_pts[i0 + 1] - path_pts[i0]
    yaw0 = math.atan2(tangent[1], tangent[0])
    st = AgentState(float(path_pts[i0][0]), float(path_pts[i0][1]),
                    yaw0, v_ref)
    states = [st]
    near = i0
    la_steps = int(round(LOOKAHEAD / SAMPLE_SPACING))
    for _ in range(n_steps):
        px, py = st.x, st.y
        while (near + 1 < len(path_pts)
               and (path_pts[near + 1][0] - px) ** 2
               + (path_pts[near + 1][1] - py) ** 2
               <= (path_pts[near][0] - px) ** 2
               + (path_pts[near][1] - py) ** 2):
            near += 1
        target = path_pts[min(near + la_steps, len(path_pts) - 1)]
        dx, dy = target[0] - px, target[1] - py
        c, s = math.cos(st.yaw), math.sin(st.yaw)
        ly = -s * dx + c * dy
        ld2 = dx * dx + dy * dy
        steer = math.atan2(2.0 * WHEELBASE * ly, ld2) if ld2 > 1e-9 else 0.0
        accel = kp * (v_ref - st.speed)
        st = step_agent(st, Action(accel, steer).clamped())
        states.append(st)
    return states


def _constant_track(x, y, yaw, n_steps):
    st = AgentState(x, y, yaw, 0.0)
    return [st] * (n_steps + 1)


def _lane_polylines(center_pts, half_width):
    return [
        Polyline("lane_center", center_pts),
        Polyline("road_edge", _offset_polyline(center_pts, half_width)),
        Polyline("road_edge", _offset_polyline(center_pts, -half_width)),
    ]


def _path_tangent_yaw(path_pts, idx):
    i = min(max(idx, 0), len(path_pts) - 2)
    d = path_pts[i + 1] - path_pts[i]
    return math.atan2(d[1], d[0])


def _build(kind, rng, n_agents):
    half = LANE_HALF_WIDTH
    shift = rng.uniform(-40.0, 40.0, size=2)
    lanes = {}  # lateral offset -> path points

    def lane(offset, base_pts):
        if offset not in lanes:
            lanes[offset] = (_offset_polyline(base_pts, offset)
                             if offset else base_pts)
        return lanes[offset]

    if kind == "curve":
        radius = float(rng.uniform(40.0, 70.0))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        base = _curve_points(30.0, radius, sign, 240.0, shift)
        side_offsets = (4.0, -4.0, 8.0, -8.0)
    else:
        base = _straight_points(280.0, shift, 0.0)
        side_offsets = ((6.0, -6.0, 10.0, -10.0, 14.0, -14.0)
                        if kind == "obstacle_lane"
                        else (4.0, -4.0, 8.0, -8.0, 12.0, -12.0))

    ego_v = float(rng.uniform(*SPEED_RANGE))
    tracks = [AgentTrack(EGO_LENGTH, EGO_WIDTH,
                         _drive_path(lane(0.0, base), ego_v, HORIZON),
                         [True] * (HORIZON + 1))]
    lane_speed = {}

    def add_mover(offset, slot):
        path = lane(offset, base)
        if offset not in lane_speed:
            lane_speed[offset] = float(rng.uniform(*SPEED_RANGE))
        states = _drive_path(path, lane_speed[offset], HORIZON,
                             start_s=5.0 + 28.0 * slot)
        tracks.append(AgentTrack(float(rng.uniform(4.2, 5.0)),
                                 float(rng.uniform(1.8, 2.05)),
                                 states, [True] * (HORIZON + 1)))

    cross_path = None
    if kind == "intersection":
        # perpendicular lane whose follower reaches the crossing point a
        # sampled time gap before or after the ego does
        cross_start = shift + np.array([50.0, -160.0])
        cross_path = _straight_points(280.0, cross_start, math.pi / 2.0)
        ego_arrival = 95.0 / ego_v  # ego starts at s=5, crossing at s=100
        gap = float(rng.uniform(1.5, 3.0))
        if rng.random() < 0.5:
            gap = -gap
        v_c = float(rng.uniform(*SPEED_RANGE))
        # cross inside the log even when the ego itself arrives after it
        # ends; the event-free rejection loop below rules out collisions
        t_cross = min(max(ego_arrival + gap, 1.5), 8.0)
        s0 = min(max(160.0 - v_c * t_cross, 2.0), 150.0)
        states = _drive_path(cross_path, v_c, HORIZON, start_s=s0)
        tracks.append(AgentTrack(float(rng.uniform(4.2, 5.0)),
                                 float(rng.uniform(1.8, 2.05)),
                                 states, [True] * (HORIZON + 1)))

    n_parked = 0
    if kind == "obstacle_lane":
        n_parked = int(rng.integers(2, 5))
        side = 1.0 if rng.random() < 0.5 else -1.0
        travel = min(35.0 + ego_v * HORIZON * DT, 260.0)
        for k in range(n_parked):
            s_obs = 35.0 + (travel - 45.0) * (k + 1) / (n_parked + 1) \
                + float(rng.uniform(-4.0, 4.0))
            lat = side * (2.1 + float(rng.uniform(0.0, 0.25)))
            idx = int(round(s_obs / SAMPLE_SPACING))
            yaw = _path_tangent_yaw(base, idx)
            p = _offset_polyline(base, lat)[min(idx, len(base) - 1)]
            tracks.append(AgentTrack(4.4, 1.8,
                                     _constant_track(float(p[0]),
                                                     float(p[1]), yaw,
                                                     HORIZON),
                                     [True] * (HORIZON + 1)))
            side = -side

    if n_agents is None:
        n_target = len(tracks) + int(rng.integers(0, 4))
        n_target = min(n_target, MAX_AGENTS)
    else:
        n_target = n_agents
    if len(tracks) > n_target:
        del tracks[n_target:]
    slot_per_lane = {}
    oi = 0
    while len(tracks) < n_target:
        off = side_offsets[oi % len(side_offsets)]
        slot = slot_per_lane.get(off, 0)
        slot_per_lane[off] = slot + 1
        add_mover(off, slot)
        oi += 1

    polylines = _lane_polylines(base, half)
    for off in sorted(lanes):
        if off != 0.0:
            polylines.extend(_lane_polylines(lanes[off], half))
    if cross_path is not None:
        polylines.extend(_lane_polylines(cross_path, half))

    ego = tracks[0]
    dest = (ego.states[-1].x, ego.states[-1].y)
    return Scenario(
        roadgraph=Roadgraph(polylines=polylines, lane_half_width=half),
        tracks=tracks, ego_index=0, dt=DT, horizon=HORIZON,
        destination=dest, traffic_lights=[])


def _ego_log_event_free(sc: Scenario) -> bool:
    ego = sc.tracks[sc.ego_index]
    for t in range(sc.horizon + 1):
        st = ego.states[t]
        if geometry.offroad_flag(st, (ego.length, ego.width), sc.roadgraph):
            return False
        sim = SimState(agents=tuple(tr.states[t] for tr in sc.tracks),
                       t=t, ego_index=sc.ego_index, scenario=sc)
        if geometry.collision_flag(sim, sc.ego_index):
            return False
    return True


def generate_synthetic(kind: str, seed: int, n_agents: int = None
                       ) -> Scenario:
    """Deterministic desk-scale scenario of the given kind.

    Every agent follows a scripted pure-pursuit driver (or stands still);
    rejection sampling guarantees the ego log is collision- and
    offroad-free. n_agents overrides the sampled agent count.
    """
    if kind not in KINDS:
        raise ValueError("unknown scenario kind %r (choose from %s)"
                         % (kind, ", ".join(KINDS)))
    if n_agents is not None and not 1 <= n_agents <= MAX_AGENTS:
        raise ValueError("n_agents outside 1..%d" % MAX_AGENTS)
    for attempt in range(32):
        rng = np.random.default_rng([seed, KINDS.index(kind), attempt])
        sc = _build(kind, rng, n_agents)
        if _ego_log_event_free(sc):
            return sc
    raise RuntimeError("no event-free %s scenario for seed %d" % (kind, seed))

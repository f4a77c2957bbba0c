"""Collision, offroad, and displacement metric tests against oracles."""

from __future__ import annotations

import math
from types import SimpleNamespace

import numpy as np
import pytest

import _oracles as oracles
from diffdrive.dynamics import AgentState, SimState
from diffdrive.geometry import (
    EventLabels,
    OrientedBox,
    ade,
    collision_flag,
    obb_overlap,
    offroad_distance,
    offroad_flag,
)


def _box(*args):
    return OrientedBox(*args)


def test_identical_boxes_overlap():
    a = _box(1.0, 2.0, 0.3, 4.0, 2.0)
    assert obb_overlap(a, a) is True


def test_distant_boxes_do_not_overlap():
    a = _box(0.0, 0.0, 0.0, 1.0, 1.0)
    b = _box(10.0, 0.0, 0.0, 1.0, 1.0)
    assert obb_overlap(a, b) is False


def test_touching_edges_count_as_overlap():
    a = _box(0.0, 0.0, 0.0, 2.0, 2.0)
    b = _box(2.0, 0.0, 0.0, 2.0, 2.0)
    assert obb_overlap(a, b) is True
    # pull apart by a hair and the verdict flips
    c = _box(2.0 + 1e-9, 0.0, 0.0, 2.0, 2.0)
    assert obb_overlap(a, c) is False


def test_rotated_cross_overlap():
    # thin crossed slabs share only their middles
    a = _box(0.0, 0.0, 0.0, 6.0, 0.4)
    b = _box(0.0, 0.0, math.pi / 2, 6.0, 0.4)
    assert obb_overlap(a, b) is True
    # same slabs, offset so the cross misses
    c = _box(2.0, 3.5, math.pi / 2, 6.0, 0.4)
    assert obb_overlap(a, c) is False


def test_overlap_against_sampling_oracle():
    rng = np.random.default_rng(20260816)
    checked = 0
    for _ in range(1000):
        ta = oracles.random_box(rng)
        tb = oracles.random_box(rng)
        if not oracles.robustly_decided(ta, tb):
            continue
        got = obb_overlap(_box(*ta), _box(*tb))
        want = oracles.overlap_by_sampling(ta, tb)
        assert got == want, f"disagrees on {ta} vs {tb}"
        checked += 1
    assert checked > 800  # tangency skips must stay rare


def test_overlap_symmetry():
    rng = np.random.default_rng(7)
    for _ in range(300):
        a = _box(*oracles.random_box(rng))
        b = _box(*oracles.random_box(rng))
        assert obb_overlap(a, b) == obb_overlap(b, a)


def test_overlap_rigid_transform_invariance():
    rng = np.random.default_rng(11)
    tested = 0
    for _ in range(300):
        ta = oracles.random_box(rng)
        tb = oracles.random_box(rng)
        if not oracles.robustly_decided(ta, tb):
            continue
        base = obb_overlap(_box(*ta), _box(*tb))
        ang = float(rng.uniform(-math.pi, math.pi))
        tx, ty = rng.uniform(-50, 50, 2)
        c, s = math.cos(ang), math.sin(ang)

        def moved(t):
            x, y, yaw, length, width = t
            return _box(c * x - s * y + tx, s * x + c * y + ty,
                        yaw + ang, length, width)

        assert obb_overlap(moved(ta), moved(tb)) == base
        tested += 1
    assert tested > 200


def _scene(agent_states, dims=None, ego_index=0, t=0):
    n = len(agent_states)
    dims = dims or [(4.5, 2.0)] * n
    tracks = [SimpleNamespace(length=dims[i][0], width=dims[i][1],
                              states=[agent_states[i]], valid=[True])
              for i in range(n)]
    sc = SimpleNamespace(tracks=tracks, ego_index=ego_index)
    return SimState(agents=tuple(agent_states), t=t, ego_index=ego_index,
                    scenario=sc)


def test_collision_flag_single_agent_false():
    st = _scene([AgentState(0.0, 0.0, 0.0, 5.0)])
    assert collision_flag(st, 0) is False


def test_collision_flag_colocated_true():
    st = _scene([AgentState(0.0, 0.0, 0.0, 5.0),
                 AgentState(0.0, 0.0, 1.0, 0.0)])
    assert collision_flag(st, 0) is True
    assert collision_flag(st, 1) is True


def test_collision_flag_matches_pairwise_reduction():
    rng = np.random.default_rng(13)
    for _ in range(50):
        n = int(rng.integers(2, 6))
        states = [AgentState(float(rng.uniform(-8, 8)),
                             float(rng.uniform(-8, 8)),
                             float(rng.uniform(-math.pi, math.pi)), 0.0)
                  for _ in range(n)]
        dims = [(float(rng.uniform(1, 5)), float(rng.uniform(0.5, 2.5)))
                for _ in range(n)]
        st = _scene(states, dims)
        for i in range(n):
            want = any(
                obb_overlap(
                    OrientedBox(states[i].x, states[i].y, states[i].yaw,
                                *dims[i]),
                    OrientedBox(states[j].x, states[j].y, states[j].yaw,
                                *dims[j]))
                for j in range(n) if j != i)
            assert collision_flag(st, i) == want


def test_collision_flag_ignores_invalid_agents():
    states = [AgentState(0.0, 0.0, 0.0, 0.0), AgentState(0.0, 0.0, 0.0, 0.0)]
    st = _scene(states)
    st.scenario.tracks[1].valid = [False]
    assert collision_flag(st, 0) is False


def _straight_road(half_width=2.0):
    pts = np.column_stack([np.arange(0.0, 50.0, 1.0), np.zeros(50)])
    pl = SimpleNamespace(kind="lane_center", points=pts)
    edge = SimpleNamespace(kind="road_edge",
                           points=pts + np.array([0.0, half_width]))
    return SimpleNamespace(polylines=[pl, edge], lane_half_width=half_width)


def test_offroad_flag_on_and_off_centerline():
    rg = _straight_road(half_width=2.0)
    on = AgentState(10.0, 0.0, 0.0, 5.0)
    assert offroad_flag(on, (4.5, 2.0), rg) is False
    off = AgentState(10.0, 4.0, 0.0, 5.0)
    assert offroad_flag(off, (4.5, 2.0), rg) is True


def test_offroad_distance_matches_exhaustive_oracle():
    rng = np.random.default_rng(17)
    # bent polyline plus a second lane to exercise the minimum
    pts1 = np.array([[0.0, 0.0], [10.0, 0.0], [20.0, 5.0], [30.0, 5.0]])
    pts2 = np.array([[0.0, 8.0], [30.0, 8.0]])
    rg = SimpleNamespace(
        polylines=[SimpleNamespace(kind="lane_center", points=pts1),
                   SimpleNamespace(kind="road_edge",
                                   points=pts1 + np.array([0.0, 2.0])),
                   SimpleNamespace(kind="lane_center", points=pts2)],
        lane_half_width=2.0)
    for _ in range(300):
        px = float(rng.uniform(-5, 35))
        py = float(rng.uniform(-5, 13))
        got = offroad_distance(px, py, rg)
        want = oracles.min_centerline_distance(px, py, rg)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-12)
        if abs(want - rg.lane_half_width) > 1e-6:
            flag = offroad_flag(AgentState(px, py, 0.0, 0.0), (4.5, 2.0), rg)
            assert flag == (want > rg.lane_half_width)


def test_offroad_segment_not_vertex_distance():
    # midway between two distant vertices the segment distance is small
    pts = np.array([[0.0, 0.0], [20.0, 0.0]])
    rg = SimpleNamespace(
        polylines=[SimpleNamespace(kind="lane_center", points=pts)],
        lane_half_width=2.0)
    assert offroad_distance(10.0, 1.0, rg) == pytest.approx(1.0, abs=1e-12)
    assert offroad_flag(AgentState(10.0, 1.0, 0.0, 0.0), (4.5, 2.0),
                        rg) is False


def test_offroad_invariant_to_polyline_order():
    rng = np.random.default_rng(19)
    pts1 = np.array([[0.0, 0.0], [10.0, 0.0], [20.0, 3.0]])
    pts2 = np.array([[0.0, 6.0], [20.0, 6.0]])
    a = SimpleNamespace(kind="lane_center", points=pts1)
    b = SimpleNamespace(kind="lane_center", points=pts2)
    rg_ab = SimpleNamespace(polylines=[a, b], lane_half_width=1.5)
    rg_ba = SimpleNamespace(polylines=[b, a], lane_half_width=1.5)
    for _ in range(100):
        st = AgentState(float(rng.uniform(-2, 22)),
                        float(rng.uniform(-2, 8)), 0.0, 0.0)
        assert (offroad_flag(st, (4.5, 2.0), rg_ab)
                == offroad_flag(st, (4.5, 2.0), rg_ba))


def test_ade_examples():
    traj = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.5]])
    assert ade(traj, traj) == 0.0
    offset = traj + np.array([3.0, 4.0])
    assert ade(offset, traj) == pytest.approx(5.0, rel=1e-15)


def test_ade_matches_high_precision_oracle():
    rng = np.random.default_rng(23)
    for _ in range(50):
        n = int(rng.integers(1, 91))
        a = rng.uniform(-100, 100, (n, 2))
        b = rng.uniform(-100, 100, (n, 2))
        assert ade(a, b) == pytest.approx(
            oracles.mean_displacement(a, b), rel=1e-12)
        assert ade(a, b) >= 0.0


def test_ade_length_mismatch_errors():
    with pytest.raises(ValueError):
        ade(np.zeros((3, 2)), np.zeros((4, 2)))


def test_event_labels_fields():
    lab = EventLabels(collision=True, offroad=False)
    assert lab.collision is True
    assert lab.offroad is False

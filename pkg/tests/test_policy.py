"""Tests for the recurrent mixture policy: observation building, the
forward step on both the recorded and plain routes, sampling, mode
selection, expert-nearest component probes, and checkpoints."""

import math
import os
from types import SimpleNamespace

import numpy as np
import pytest

from diffdrive import backend
from diffdrive.dynamics import (ACCEL_MAX, ACCEL_MIN, DT, STEER_MAX,
                                AgentState, SimState, step_agent)
from diffdrive.policy import (HIDDEN, N_COMPONENTS, MixtureAction, ObsConfig,
                              PolicyParams, batch_mean_actions,
                              gather_features, init_params, load_params,
                              mean_action, observe, observe_batch,
                              params_f32, policy_step, policy_step_batch,
                              policy_step_rec, policy_step_rec_trainable,
                              sample_action, sample_action_rec, save_params,
                              select_component_near_expert, upload_params,
                              zero_hidden)
from diffdrive.scenario import generate_synthetic, nearest_roadgraph_points


def _scene(agent_rows, ego_index=0, t=0, half_width=4.0,
           road=((-50.0, 0.0), (150.0, 0.0)), dest=None, valid=None):
    """Build a SimState over SimpleNamespace tracks.

    agent_rows: list of (x, y, yaw, speed). The roadgraph is one long
    straight lane so offroad never interferes.
    """
    n = len(agent_rows)
    if valid is None:
        valid = [[True] * 91 for _ in range(n)]
    tracks = []
    for i, (x, y, yaw, v) in enumerate(agent_rows):
        st = AgentState(x, y, yaw, v)
        tracks.append(SimpleNamespace(length=4.5, width=2.0,
                                      states=[st] * 91, valid=valid[i]))
    pts = np.linspace(road[0], road[1], 201)
    rg = SimpleNamespace(
        polylines=[SimpleNamespace(kind="lane_center", points=pts),
                   SimpleNamespace(kind="road_edge", points=pts + [0, half_width]),
                   SimpleNamespace(kind="road_edge", points=pts - [0, half_width])],
        lane_half_width=half_width)
    if dest is None:
        dest = (agent_rows[ego_index][0] + 40.0, agent_rows[ego_index][1])
    # destination must be written into the ego track's last state
    ego_last = AgentState(dest[0], dest[1], agent_rows[ego_index][2],
                          agent_rows[ego_index][3])
    tr = tracks[ego_index]
    tr.states = [tr.states[0]] * 90 + [ego_last]
    sc = SimpleNamespace(tracks=tracks, roadgraph=rg, destination=dest,
                         ego_index=ego_index, dt=DT, horizon=90,
                         traffic_lights=[])
    agents = tuple(AgentState(*row) for row in agent_rows)
    return SimState(agents=agents, t=t, ego_index=ego_index, scenario=sc)


CFG = ObsConfig()


def test_obs_config_defaults():
    assert CFG.n_road == 16
    assert CFG.n_neighbors == 8
    assert CFG.obs_dim == 3 + 2 * 16 + 5 * 8 == 75


def test_init_params_shapes_and_determinism():
    p = init_params(seed=1)
    assert p.obs_dim == 75 and p.hidden == HIDDEN
    shapes = [a.shape for a in p.as_tuple()]
    assert shapes == [(128, 75), (128,), (128, 128), (128,),
                      (384, 128), (384,), (384, 128), (384,),
                      (30, 128), (30,)]
    assert all(np.isfinite(a).all() for a in p.as_tuple())
    q = init_params(seed=1)
    for a, b in zip(p.as_tuple(), q.as_tuple()):
        assert np.array_equal(a, b)
    r = init_params(seed=2)
    assert any(not np.array_equal(a, b)
               for a, b in zip(p.as_tuple(), r.as_tuple()))


def test_observe_identity_frame():
    st = _scene([(0.0, 0.0, 0.0, 7.5)], dest=(10.0, 0.0))
    obs = observe(st, 0, CFG)
    assert obs.shape == (75,)
    assert obs[0] == 7.5
    assert obs[1] == 10.0 and obs[2] == 0.0


def test_observe_rotated_frame():
    # destination 10 m north of an ego facing north sits dead ahead
    st = _scene([(0.0, 0.0, math.pi / 2, 5.0)], dest=(0.0, 10.0))
    obs = observe(st, 0, CFG)
    assert abs(obs[1] - 10.0) < 1e-12
    assert abs(obs[2]) < 1e-12


def test_observe_padding_and_validity():
    st = _scene([(0.0, 0.0, 0.0, 5.0), (8.0, 1.0, 0.2, 3.0)])
    obs = observe(st, 0, CFG)
    neigh = obs[3 + 32:].reshape(8, 5)
    assert neigh[0, 4] == 1.0
    assert np.all(neigh[1:] == 0.0)
    assert neigh[0, 0] == 8.0 and neigh[0, 1] == 1.0
    assert neigh[0, 2] == 3.0
    assert abs(neigh[0, 3] - 0.2) < 1e-15


def test_observe_neighbor_ordering_nearest_first():
    st = _scene([(0.0, 0.0, 0.0, 5.0),
                 (5.0, 0.0, 0.0, 1.0),
                 (2.0, 0.0, 0.0, 2.0),
                 (-9.0, 0.0, 0.0, 3.0)])
    neigh = observe(st, 0, CFG)[3 + 32:].reshape(8, 5)
    assert [row[2] for row in neigh[:3]] == [2.0, 1.0, 3.0]
    assert np.all(neigh[3:] == 0.0)


def test_observe_skips_invalid_neighbors():
    valid = [[True] * 91, [False] * 91, [True] * 91]
    st = _scene([(0.0, 0.0, 0.0, 5.0),
                 (2.0, 0.0, 0.0, 1.0),
                 (6.0, 0.0, 0.0, 2.0)], valid=valid)
    neigh = observe(st, 0, CFG)[3 + 32:].reshape(8, 5)
    assert neigh[0, 2] == 2.0  # the valid one, not the nearer invalid one
    assert np.all(neigh[1:] == 0.0)


def test_observe_caps_neighbor_count():
    rows = [(0.0, 0.0, 0.0, 5.0)] + [(3.0 + k, 0.5, 0.0, float(k))
                                     for k in range(12)]
    cfg = ObsConfig(n_road=4, n_neighbors=2)
    neigh = observe(_scene(rows), 0, cfg)[3 + 8:].reshape(2, 5)
    assert list(neigh[:, 2]) == [0.0, 1.0]
    assert np.all(neigh[:, 4] == 1.0)


def test_observe_translation_invariance():
    # ego placed off the road-sample grid so no nearest-point ties exist;
    # at an exact tie the selected points may legitimately swap
    rows = [(3.3, -2.1, 0.4, 6.0), (9.0, 1.0, -0.7, 4.0)]
    st = _scene(rows, dest=(40.0, 5.0))
    base = observe(st, 0, CFG)
    dx, dy = 113.0, -57.0
    rows2 = [(x + dx, y + dy, yaw, v) for x, y, yaw, v in rows]
    st2 = _scene(rows2, dest=(40.0 + dx, 5.0 + dy),
                 road=((-50.0 + dx, dy), (150.0 + dx, dy)))
    moved = observe(st2, 0, CFG)
    np.testing.assert_allclose(moved, base, atol=1e-9)


def test_gather_road_points_match_exact_query():
    sc = generate_synthetic("intersection", seed=4)
    ego = sc.tracks[sc.ego_index].states[0]
    rng = np.random.default_rng(99)
    for _ in range(30):
        x = ego.x + rng.uniform(-60, 60)
        y = ego.y + rng.uniform(-60, 60)
        st = SimState(agents=(AgentState(x, y, 0.3, 5.0),), t=0,
                      ego_index=0,
                      scenario=SimpleNamespace(tracks=[sc.tracks[0]],
                                               roadgraph=sc.roadgraph,
                                               destination=sc.destination))
        _, road, _ = gather_features(st, 0, CFG)
        want = nearest_roadgraph_points((x, y), sc.roadgraph, CFG.n_road)
        assert np.array_equal(road, want)


def test_policy_step_zero_params_symmetry():
    p = init_params(seed=0)
    zeroed = PolicyParams(*[np.zeros_like(a) for a in p.as_tuple()])
    obs = np.zeros(75)
    obs[0] = 5.0
    mix, h1 = policy_step(zeroed, zero_hidden(), obs)
    assert np.all(mix.logits == mix.logits[0])
    np.testing.assert_allclose(mix.probs(), 1.0 / 6.0, atol=1e-15)
    assert np.all(h1 == 0.0)


def test_policy_step_determinism_and_mixture_validity():
    p = init_params(seed=3)
    rng = np.random.default_rng(7)
    h = rng.normal(size=HIDDEN) * 0.3
    obs = rng.normal(size=75)
    m1, h1 = policy_step(p, h, obs)
    m2, h2 = policy_step(p, h, obs)
    assert np.array_equal(h1, h2)
    assert np.array_equal(m1.logits, m2.logits)
    assert np.array_equal(m1.means, m2.means)
    assert np.array_equal(m1.stds, m2.stds)
    assert abs(m1.probs().sum() - 1.0) <= 1e-9
    assert np.all(m1.stds >= 1e-3)
    assert np.isfinite(h1).all()


def test_policy_step_rejects_bad_shapes():
    p = init_params(seed=3)
    with pytest.raises(ValueError):
        policy_step(p, zero_hidden(), np.zeros(74))
    with pytest.raises(ValueError):
        policy_step(p, np.zeros(HIDDEN - 1), np.zeros(75))


def test_recorded_step_matches_plain_bitwise():
    """The planner route and the plain route must produce the same bits."""
    p = init_params(seed=11)
    rng = np.random.default_rng(23)
    h = rng.normal(size=HIDDEN) * 0.2
    dest = np.array([30.0, 4.0])
    road = rng.normal(scale=20.0, size=(16, 2))
    neigh = rng.normal(scale=5.0, size=(8, 5))
    neigh[:, 4] = 1.0
    neigh[5:, :] = 0.0
    ego = (2.0, -1.0, 0.3, 6.0)

    rec = backend.core.Record()
    exi = rec.var(ego[0])
    eyi = rec.var(ego[1])
    eyawi = rec.var(ego[2])
    espdi = rec.var(ego[3])
    obs0, width = rec.observation(exi, eyi, eyawi, espdi, dest, road, neigh)
    h0 = rec.const_block(np.ascontiguousarray(h))
    blocks = policy_step_rec(rec, p, h0, obs0)

    obs = backend.core.obs_build_plain(np.array(ego), dest, road, neigh)
    mix, h1 = policy_step(p, h, obs)
    assert np.array_equal(rec.values_block(blocks.logits, 6), mix.logits)
    assert np.array_equal(rec.values_block(blocks.means, 12),
                          mix.means.ravel())
    assert np.array_equal(rec.values_block(blocks.stds, 12),
                          mix.stds.ravel())
    assert np.array_equal(rec.values_block(blocks.hidden, HIDDEN), h1)


def test_trainable_step_gradients_match_finite_differences():
    cfg = ObsConfig(n_road=2, n_neighbors=1)
    p = init_params(seed=5, config=cfg, hidden=8)
    rng = np.random.default_rng(31)
    h = rng.normal(size=8) * 0.1
    dest = np.array([12.0, 1.0])
    road = np.array([[3.0, 0.5], [6.0, -0.5]])
    neigh = np.array([[4.0, 1.0, 3.0, 0.3, 1.0]])
    ego = np.array([0.5, -0.2, 0.15, 4.0])
    obs = backend.core.obs_build_plain(ego, dest, road, neigh)

    rec = backend.core.Record()
    handles = upload_params(rec, p)
    obs0 = rec.const_block(obs)
    h0 = rec.const_block(np.ascontiguousarray(h))
    blocks = policy_step_rec_trainable(rec, handles, h0, obs0)
    rec.backward(blocks.means + 0)

    def plain_mean0(params):
        mix, _ = policy_step(params, h, obs)
        return mix.means[0, 0]

    # directional derivative across every parameter at once: a
    # well-conditioned probe of the whole adjoint vector
    direction = [rng.normal(size=a.shape) for a in p.as_tuple()]
    step = 1e-6
    up = plain_mean0(PolicyParams(*[a + step * d for a, d in
                                    zip(p.as_tuple(), direction)]))
    dn = plain_mean0(PolicyParams(*[a - step * d for a, d in
                                    zip(p.as_tuple(), direction)]))
    fd_dir = (up - dn) / (2 * step)
    adj_dir = sum(
        float(np.dot(rec.adjoints_block(base, a.size), d.ravel()))
        for base, a, d in zip(handles.bases, p.as_tuple(), direction))
    assert abs(fd_dir - adj_dir) / max(abs(fd_dir), 1e-8) <= 1e-5

    # spot checks of single entries; the absolute term covers cancellation
    # noise where the true gradient is itself ~1e-9
    picks = [(0, (5, 3)), (0, (2, 11)), (1, (4,)), (2, (3, 3)), (3, (7,)),
             (4, (10, 2)), (5, (20,)), (6, (13, 5)), (7, (2,)),
             (8, (6, 4)), (9, (18,))]
    for ai, idx in picks:
        arrays = [a.copy() for a in p.as_tuple()]
        arrays[ai][idx] += step
        up = plain_mean0(PolicyParams(*arrays))
        arrays[ai][idx] -= 2 * step
        dn = plain_mean0(PolicyParams(*arrays))
        fd = (up - dn) / (2 * step)
        flat = np.ravel_multi_index(idx, p.as_tuple()[ai].shape) \
            if len(idx) > 1 else idx[0]
        got = rec.adjoint(handles.bases[ai] + int(flat))
        assert abs(fd - got) <= 1e-5 * max(abs(fd), abs(got)) + 1e-9


def test_recorded_step_state_gradients_match_finite_differences():
    """d mean_accel / d ego state through the feature block, one step."""
    cfg = ObsConfig(n_road=3, n_neighbors=2)
    p = init_params(seed=9, config=cfg, hidden=16)
    h = np.zeros(16)
    dest = np.array([15.0, -3.0])
    road = np.array([[2.0, 1.0], [5.0, 0.0], [9.0, -1.0]])
    neigh = np.array([[3.0, 2.0, 4.0, -0.4, 1.0],
                      [0.0, 0.0, 0.0, 0.0, 0.0]])
    ego = np.array([1.0, 0.5, 0.2, 6.0])

    rec = backend.core.Record()
    ids = [rec.var(v) for v in ego]
    obs0, _ = rec.observation(ids[0], ids[1], ids[2], ids[3],
                              dest, road, neigh)
    h0 = rec.const_block(h)
    blocks = policy_step_rec(rec, p, h0, obs0)
    rec.backward(blocks.means + 0)

    step = 1e-6
    for k in range(4):
        e_up = ego.copy()
        e_up[k] += step
        e_dn = ego.copy()
        e_dn[k] -= step
        up = policy_step(p, h, backend.core.obs_build_plain(
            e_up, dest, road, neigh))[0].means[0, 0]
        dn = policy_step(p, h, backend.core.obs_build_plain(
            e_dn, dest, road, neigh))[0].means[0, 0]
        fd = (up - dn) / (2 * step)
        got = rec.adjoint(ids[k])
        assert abs(fd - got) / max(abs(fd), abs(got), 1e-8) <= 1e-5


def _mix(logits, means, stds=None):
    means = np.asarray(means, dtype=np.float64)
    if stds is None:
        stds = np.full((6, 2), 0.1)
    return MixtureAction(logits=np.asarray(logits, dtype=np.float64),
                         means=means, stds=np.asarray(stds, np.float64))


def test_sample_action_reparameterization():
    means = np.zeros((6, 2))
    means[2] = (1.0, 0.1)
    stds = np.full((6, 2), 0.1)
    stds[2] = (0.5, 0.2)
    mix = _mix(np.zeros(6), means, stds)
    a = sample_action(mix, 2, np.zeros(2))
    assert (a.accel, a.steer) == (1.0, 0.1)
    a = sample_action(mix, 2, np.array([1.0, 0.0]))
    assert (a.accel, a.steer) == (1.5, 0.1)
    a = sample_action(mix, 2, np.array([0.0, -1.0]))
    assert abs(a.steer - (0.1 - 0.2)) < 1e-15


def test_sample_action_clamps_to_bounds():
    means = np.zeros((6, 2))
    means[0] = (5.9, 0.59)
    mix = _mix(np.zeros(6), means)
    a = sample_action(mix, 0, np.array([50.0, 50.0]))
    assert a.accel == ACCEL_MAX and a.steer == STEER_MAX
    a = sample_action(mix, 0, np.array([-500.0, -500.0]))
    assert a.accel == ACCEL_MIN and a.steer == -STEER_MAX


def test_sample_action_monte_carlo_mean():
    mix = _mix(np.zeros(6), np.tile([[1.0, 0.1]], (6, 1)),
               np.tile([[0.5, 0.05]], (6, 1)))
    rng = np.random.default_rng(2026)
    n = 100_000
    noise = rng.standard_normal((n, 2))
    acc = np.empty(n)
    st = np.empty(n)
    for i in range(n):
        a = sample_action(mix, 3, noise[i])
        acc[i] = a.accel
        st[i] = a.steer
    assert abs(acc.mean() - 1.0) < 3 * 0.5 / math.sqrt(n)
    assert abs(st.mean() - 0.1) < 3 * 0.05 / math.sqrt(n)


def test_sample_action_rec_gradient_is_identity_inside_bounds():
    rec = backend.core.Record()
    means = np.array([0.5, 0.05, 1.0, 0.1] + [0.0] * 8)
    stds = np.array([0.3, 0.02] * 6)
    m0 = rec.var_block(means)
    s0 = rec.var_block(stds)
    aid, sid = sample_action_rec(rec, m0, s0, 1, np.array([0.7, -0.4]))
    assert rec.value(aid) == 1.0 + 0.3 * 0.7
    rec.backward(aid)
    assert rec.adjoint(m0 + 2) == 1.0  # component 1 accel mean
    assert rec.adjoint(s0 + 2) == 0.7
    assert rec.adjoint(m0 + 3) == 0.0

    rec2 = backend.core.Record()
    m0 = rec2.var_block(means)
    s0 = rec2.var_block(stds)
    aid, _ = sample_action_rec(rec2, m0, s0, 1, np.array([100.0, 0.0]))
    assert rec2.value(aid) == ACCEL_MAX
    rec2.backward(aid)
    assert rec2.adjoint(m0 + 2) == 0.0  # clamped: no gradient


def test_mean_action_mode_selection():
    means = np.arange(12, dtype=np.float64).reshape(6, 2) * 0.04
    mix = _mix([0.0, 2.0, 1.0, -1.0, 0.5, 1.9], means)
    a = mean_action(mix)
    assert (a.accel, a.steer) == tuple(means[1])
    # ties resolve to the lowest index
    tie = _mix(np.zeros(6), means)
    a = mean_action(tie)
    assert (a.accel, a.steer) == tuple(means[0])
    # softmax shift and positive-scale invariance
    shifted = _mix(np.array([0.0, 2.0, 1.0, -1.0, 0.5, 1.9]) + 7.0, means)
    scaled = _mix(np.array([0.0, 2.0, 1.0, -1.0, 0.5, 1.9]) * 3.0, means)
    assert mean_action(shifted).accel == means[1, 0]
    assert mean_action(scaled).accel == means[1, 0]


def test_mean_action_clamps():
    means = np.zeros((6, 2))
    means[0] = (50.0, -50.0)
    a = mean_action(_mix(np.zeros(6), means))
    assert a.accel == ACCEL_MAX and a.steer == -STEER_MAX


def _two_step_probe(ego, accel, steer):
    # position reacts to an action only after two integrator steps
    from diffdrive.dynamics import Action
    act = Action(accel, steer).clamped()
    return step_agent(step_agent(ego, act), act)


def test_select_component_matches_explicit_probes():
    st = _scene([(0.0, 0.0, 0.0, 6.0)])
    ego = st.agents[0]
    rng = np.random.default_rng(17)
    means = np.column_stack([rng.uniform(-6, 5, size=6),
                             rng.uniform(-0.5, 0.5, size=6)])
    mix = _mix(rng.normal(size=6), means)
    for target_comp in range(6):
        probe = _two_step_probe(ego, *means[target_comp])
        expert_next = (probe.x + 1e-6, probe.y)
        got = select_component_near_expert(mix, st, expert_next)
        best, best_d = 0, float("inf")
        for c in range(6):
            q = _two_step_probe(ego, *means[c])
            d = (q.x - expert_next[0]) ** 2 + (q.y - expert_next[1]) ** 2
            if d < best_d:
                best, best_d = c, d
        assert got == best == target_comp


def test_select_component_tie_and_permutation():
    st = _scene([(0.0, 0.0, 0.0, 6.0)])
    mix = _mix(np.zeros(6), np.tile([[1.0, 0.0]], (6, 1)))
    assert select_component_near_expert(mix, st, (3.0, 0.0)) == 0

    rng = np.random.default_rng(5)
    means = np.column_stack([rng.uniform(-6, 5, size=6),
                             rng.uniform(-0.5, 0.5, size=6)])
    mix = _mix(rng.normal(size=6), means)
    expert_next = (0.9, 0.05)
    base = select_component_near_expert(mix, st, expert_next)
    perm = np.array([3, 0, 5, 1, 4, 2])
    permuted = _mix(mix.logits[perm], mix.means[perm], mix.stds[perm])
    got = select_component_near_expert(permuted, st, expert_next)
    assert perm[got] == base


def test_checkpoint_roundtrip_and_rejection(tmp_path):
    p = init_params(seed=42)
    path = tmp_path / "policy.ckpt"
    save_params(p, path)
    q = load_params(path)
    for a, b in zip(p.as_tuple(), q.as_tuple()):
        assert np.array_equal(a, b)
    # identical bytes when saved twice
    path2 = tmp_path / "again.ckpt"
    save_params(p, path2)
    assert path.read_bytes() == path2.read_bytes()

    blob = bytearray(path.read_bytes())
    blob[:4] = b"XXXX"
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(blob))
    with pytest.raises(ValueError):
        load_params(bad)

    small = init_params(seed=1, config=ObsConfig(n_road=2, n_neighbors=1),
                        hidden=8)
    mixed = tmp_path / "short.ckpt"
    save_params(small, mixed)
    loaded = load_params(mixed)
    assert loaded.hidden == 8 and loaded.obs_dim == 12
    # truncated payload is rejected
    data = mixed.read_bytes()
    trunc = tmp_path / "trunc.ckpt"
    trunc.write_bytes(data[:-16])
    with pytest.raises(ValueError):
        load_params(trunc)


def test_batched_step_tracks_plain_route():
    p = init_params(seed=13)
    p32 = params_f32(p)
    rng = np.random.default_rng(3)
    n = 6
    H = (rng.normal(size=(n, HIDDEN)) * 0.2).astype(np.float32)
    OBS = rng.normal(size=(n, 75)).astype(np.float32)
    logits, means, stds, H1 = policy_step_batch(p32, H, OBS)
    assert logits.shape == (n, 6) and means.shape == (n, 6, 2)
    assert stds.shape == (n, 6, 2) and H1.shape == (n, HIDDEN)
    assert logits.dtype == np.float32
    for i in range(n):
        mix, h1 = policy_step(p, H[i].astype(np.float64),
                              OBS[i].astype(np.float64))
        np.testing.assert_allclose(logits[i], mix.logits, atol=2e-3)
        np.testing.assert_allclose(means[i], mix.means, atol=2e-3)
        np.testing.assert_allclose(stds[i], mix.stds, atol=2e-3)
        np.testing.assert_allclose(H1[i], h1, atol=2e-3)
    assert np.all(stds >= 1e-3 - 1e-6)
    # bitwise repeatable
    again = policy_step_batch(p32, H, OBS)
    assert all(np.array_equal(a, b)
               for a, b in zip((logits, means, stds, H1), again))


def test_batch_mean_actions_argmax_and_clip():
    logits = np.array([[0.0, 3.0, 1.0, 0.0, 0.0, 0.0],
                       [9.0, 0.0, 0.0, 0.0, 0.0, 9.0]], dtype=np.float32)
    means = np.zeros((2, 6, 2), dtype=np.float32)
    means[0, 1] = (2.0, -0.2)
    means[1, 0] = (50.0, 1.0)
    acts = batch_mean_actions(logits, means)
    np.testing.assert_allclose(acts[0], [2.0, -0.2], atol=1e-6)
    assert acts[1, 0] == ACCEL_MAX and acts[1, 1] == STEER_MAX


def test_observe_batch_matches_scalar_observe():
    sc = generate_synthetic("obstacle_lane", seed=2, n_agents=6)
    agents = tuple(tr.states[0] for tr in sc.tracks)
    st = SimState(agents=agents, t=0, ego_index=sc.ego_index, scenario=sc)
    idx = list(range(len(agents)))
    batch = observe_batch(st, idx, CFG)
    assert batch.shape == (len(agents), 75)
    for i in idx:
        row = observe(st, i, CFG)
        assert np.array_equal(batch[i], row)


def test_observe_batch_uses_each_agents_own_destination():
    sc = generate_synthetic("straight", seed=6, n_agents=3)
    agents = tuple(tr.states[0] for tr in sc.tracks)
    st = SimState(agents=agents, t=0, ego_index=0, scenario=sc)
    batch = observe_batch(st, [0, 1, 2], CFG)
    for i in range(3):
        tr = sc.tracks[i]
        last = max(t for t, ok in enumerate(tr.valid) if ok)
        want = np.array([tr.states[last].x, tr.states[last].y])
        ego = agents[i]
        c, s = math.cos(ego.yaw), math.sin(ego.yaw)
        dx, dy = want[0] - ego.x, want[1] - ego.y
        np.testing.assert_allclose(
            batch[i, 1:3], [c * dx + s * dy, -s * dx + c * dy], atol=1e-12)

"""Recurrent stochastic driving policy with a 6-component Gaussian
mixture head.

Observation -> 2-layer tanh encoder -> gated recurrent cell -> head
emitting per-component logits, 2-D action means, and raw stds (softplus
plus a 1e-3 floor). Three evaluation routes share the same inner
numerics: a plain float64 forward, a recorded forward on a gradient tape
(with weights either constant, for planning, or uploaded as tape
variables, for training), and a float32 batched forward for imagined
background agents. Plain and recorded routes agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from diffdrive import backend, serialize
from diffdrive.dynamics import (ACCEL_MAX, ACCEL_MIN, STEER_MAX, Action,
                                step_agent)
from diffdrive.scenario import road_point_index

HIDDEN = 128
N_COMPONENTS = 6
HEAD_DIM = 5 * N_COMPONENTS  # logit + 2 means + 2 raw stds per component
_STD_FLOOR = 1e-3

__all__ = [
    "HIDDEN", "N_COMPONENTS", "ObsConfig", "PolicyParams", "MixtureAction",
    "init_params", "zero_hidden", "gather_features", "observe",
    "observe_batch", "policy_step", "policy_step_rec", "upload_params",
    "policy_step_rec_trainable", "params_f32", "policy_step_batch",
    "batch_mean_actions", "sample_action", "sample_action_rec",
    "mean_action", "select_component_near_expert", "save_params",
    "load_params",
]


@dataclass(frozen=True)
class ObsConfig:
    n_road: int = 16
    n_neighbors: int = 8

    @property
    def obs_dim(self) -> int:
        return 3 + 2 * self.n_road + 5 * self.n_neighbors


@dataclass(frozen=True)
class PolicyParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    Wx: np.ndarray
    bx: np.ndarray
    Wh: np.ndarray
    bh: np.ndarray
    Wo: np.ndarray
    bo: np.ndarray

    def as_tuple(self):
        return (self.W1, self.b1, self.W2, self.b2, self.Wx, self.bx,
                self.Wh, self.bh, self.Wo, self.bo)

    @property
    def hidden(self) -> int:
        return self.W2.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def n_scalars(self) -> int:
        return sum(a.size for a in self.as_tuple())


_ARRAY_NAMES = ("W1", "b1", "W2", "b2", "Wx", "bx", "Wh", "bh", "Wo", "bo")


def init_params(seed: int = 0, config: ObsConfig = None,
                hidden: int = HIDDEN) -> PolicyParams:
    """Seeded initialization with the component means spread apart so the
    mixture covers braking, cruising, and turning before any training."""
    cfg = config or ObsConfig()
    rng = np.random.default_rng([seed, 0xD1FF])

    def uniform(nout, nin):
        a = math.sqrt(6.0 / (nin + nout))
        return rng.uniform(-a, a, size=(nout, nin))

    bo = np.zeros(HEAD_DIM)
    bo[6:18:2] = (-3.0, -1.5, 0.0, 1.5, 3.0, 0.5)
    bo[7:18:2] = (-0.2, 0.1, 0.0, -0.1, 0.2, 0.0)
    bo[18:30:2] = math.log(math.expm1(0.4))  # accel sigma ~= 0.4
    bo[19:30:2] = math.log(math.expm1(0.05))  # steer sigma ~= 0.05
    return PolicyParams(
        W1=uniform(hidden, cfg.obs_dim), b1=np.zeros(hidden),
        W2=uniform(hidden, hidden), b2=np.zeros(hidden),
        Wx=uniform(3 * hidden, hidden), bx=np.zeros(3 * hidden),
        Wh=uniform(3 * hidden, hidden), bh=np.zeros(3 * hidden),
        Wo=rng.uniform(-0.05, 0.05, size=(HEAD_DIM, hidden)), bo=bo)


def zero_hidden(hidden: int = HIDDEN) -> np.ndarray:
    return np.zeros(hidden)


# -- observations --------------------------------------------------------------


def _valid_at(track, t: int) -> bool:
    return bool(track.valid[min(t, len(track.valid) - 1)])


def _agent_destination(scenario, index: int):
    """Last valid logged (x, y) of the agent's own track; cached."""
    track = scenario.tracks[index]
    dest = getattr(track, "_dest_xy", None)
    if dest is None:
        last = max(t for t, ok in enumerate(track.valid) if ok)
        dest = (track.states[last].x, track.states[last].y)
        try:
            track._dest_xy = dest
        except AttributeError:
            pass
    return dest


def _valid_columns(scenario) -> np.ndarray:
    """Per-timestep validity rows, one column per agent, padded with each
    track's last flag so the per-track index clamp is baked in; cached."""
    vm = getattr(scenario, "_valid_cols", None)
    if vm is None:
        L = max(len(tr.valid) for tr in scenario.tracks)
        vm = np.zeros((L, len(scenario.tracks)), dtype=bool)
        for j, tr in enumerate(scenario.tracks):
            v = np.asarray(tr.valid, dtype=bool)
            vm[:len(v), j] = v
            vm[len(v):, j] = v[-1]
        try:
            scenario._valid_cols = vm
        except AttributeError:
            pass
    return vm


def _destination_arrays(scenario):
    arrs = getattr(scenario, "_dest_arrs", None)
    if arrs is None:
        arrs = [np.array(_agent_destination(scenario, i))
                for i in range(len(scenario.tracks))]
        try:
            scenario._dest_arrs = arrs
        except AttributeError:
            pass
    return arrs


_ARANGE_CACHE: dict = {}


def _aranges(B: int, k: int):
    """(row labels, row offsets) for one global lexsort over B blocks of k."""
    got = _ARANGE_CACHE.get((B, k))
    if got is None:
        got = (np.repeat(np.arange(B), k), np.arange(B)[:, None] * k)
        _ARANGE_CACHE[(B, k)] = got
    return got


def _tiled(n: int, B: int) -> np.ndarray:
    got = _ARANGE_CACHE.get(("t", n, B))
    if got is None:
        got = np.tile(np.arange(n), B)
        _ARANGE_CACHE[("t", n, B)] = got
    return got


def _road_for(px: float, py: float, roadgraph, n_road: int) -> np.ndarray:
    """n_road nearest sampled road points via the cached kd-tree, with the
    same ordering as the exact query: distance, then polyline index, then
    point index. The tree over-fetches a margin so boundary ties resolve
    identically."""
    pts, tree = road_point_index(roadgraph)
    k = min(n_road + 8, len(pts))
    _, idx = tree.query((px, py), k=k)
    idx = np.atleast_1d(idx)
    cand = pts[idx]
    d2 = (cand[:, 0] - px) ** 2 + (cand[:, 1] - py) ** 2
    from diffdrive.scenario import _point_table
    _, pidx, kidx = _point_table(roadgraph)
    order = np.lexsort((kidx[idx], pidx[idx], d2))
    out = cand[order[:n_road]]
    if len(out) < n_road:
        out = np.concatenate(
            [out, np.repeat(out[-1:], n_road - len(out), axis=0)])
    return np.ascontiguousarray(out)


def _neighbor_rows(state, agent_index: int, n_neighbors: int) -> np.ndarray:
    me = state.agents[agent_index]
    order = []
    for j, other in enumerate(state.agents):
        if j == agent_index or not _valid_at(state.scenario.tracks[j],
                                             state.t):
            continue
        dx = other.x - me.x
        dy = other.y - me.y
        order.append((dx * dx + dy * dy, j))
    order.sort()
    neigh = np.zeros((n_neighbors, 5))
    for slot, (_, j) in enumerate(order[:n_neighbors]):
        a = state.agents[j]
        neigh[slot] = (a.x, a.y, a.speed, a.yaw, 1.0)
    return neigh


def gather_features(state, agent_index: int, config: ObsConfig):
    """(destination, road points, neighbor rows) in absolute coordinates,
    ready for the ego-frame feature kernel on either route."""
    me = state.agents[agent_index]
    dest = np.array(_agent_destination(state.scenario, agent_index))
    road = _road_for(me.x, me.y, state.scenario.roadgraph, config.n_road)
    neigh = _neighbor_rows(state, agent_index, config.n_neighbors)
    return dest, road, neigh


def observe(state, agent_index: int, config: ObsConfig) -> np.ndarray:
    dest, road, neigh = gather_features(state, agent_index, config)
    me = state.agents[agent_index]
    ego = np.array([me.x, me.y, me.yaw, me.speed])
    return backend.core.obs_build_plain(ego, dest, road, neigh)


def _destination_matrix(scenario) -> np.ndarray:
    m = getattr(scenario, "_dest_mat", None)
    if m is None:
        m = np.ascontiguousarray(np.vstack(_destination_arrays(scenario)))
        try:
            scenario._dest_mat = m
        except AttributeError:
            pass
    return m


def scene_bundle(state, indices, config: ObsConfig):
    """Per-agent (destination, road points, neighbor rows) plus stacked
    observe() rows for several agents of one state, bit-identical to the
    scalar route but with one road-tree query and one selection pass.

    The compiled backend selects in C; the numpy route keeps the scalar
    tie-break keys behind a leading row index, so both orderings match
    per-agent sorts exactly."""
    indices = list(indices)
    if not indices:
        return [], np.empty((0, config.obs_dim))
    sc = state.scenario
    pts, tree = road_point_index(sc.roadgraph)
    k = min(config.n_road + 8, len(pts))
    B = len(indices)
    ags = state.agents
    n = len(ags)
    AG = np.array([(a.x, a.y, a.speed, a.yaw) for a in ags])
    sel = np.asarray(indices, dtype=np.intp)
    P = np.ascontiguousarray(AG[sel, :2])
    _, idx = tree.query(P, k=k)
    idx = np.ascontiguousarray(np.asarray(idx).reshape(B, -1),
                               dtype=np.intp)
    vm = _valid_columns(sc)
    ok = vm[min(state.t, len(vm) - 1)]
    dests = _destination_arrays(sc)

    fast = getattr(backend.core, "scene_rows", None)
    if fast is not None:
        road_all, neigh_all, OBS = fast(
            AG, sel, ok.view(np.uint8), pts, idx,
            _destination_matrix(sc)[sel], config.n_road, config.n_neighbors)
        feats = [(dests[i], road_all[row], neigh_all[row])
                 for row, i in enumerate(indices)]
        return feats, OBS

    cand = pts[idx]
    d2 = ((cand[:, :, 0] - P[:, :1]) ** 2
          + (cand[:, :, 1] - P[:, 1:]) ** 2)
    if k >= config.n_road and bool((np.diff(d2) > 0.0).all()):
        # the tree already returned the candidates distance-sorted and the
        # squared distances are strict, so no tie-break can reorder them
        road_all = np.ascontiguousarray(cand[:, :config.n_road])
    else:
        # the point table is laid out polyline-major, so the global point
        # id equals the (polyline, point) tie-break rank
        rows, _ = _aranges(B, k)
        order = np.lexsort((idx.ravel(), d2.ravel(), rows))
        first = order.reshape(B, k)[:, :config.n_road]
        road_all = pts[idx.ravel()[first]]
        if k < config.n_road:
            pad = np.repeat(road_all[:, -1:], config.n_road - k, axis=1)
            road_all = np.ascontiguousarray(
                np.concatenate([road_all, pad], axis=1))

    X = AG[:, 0]
    Y = AG[:, 1]
    dxm = X[None, :] - X[sel, None]
    dym = Y[None, :] - Y[sel, None]
    key = dxm * dxm + dym * dym
    key[:, ~ok] = np.inf
    key[_tiled(B, 1), sel] = np.inf
    m = min(config.n_neighbors, n)
    # stable sort ties by column position, which is the agent index
    top = np.argsort(key, axis=1, kind="stable")[:, :m]
    neigh_all = np.zeros((B, config.n_neighbors, 5))
    neigh_all[:, :m, :4] = AG[top]
    neigh_all[:, :m, 4] = 1.0
    total_ok = int(ok.sum())
    if total_ok - 1 < config.n_neighbors:
        # some rows cannot fill every slot; zero the excess exactly
        n_valid = total_ok - ok[sel].astype(int)
        slot_ok = _tiled(config.n_neighbors, 1)[None, :] < \
            np.minimum(n_valid, config.n_neighbors)[:, None]
        neigh_all = np.where(slot_ok[:, :, None], neigh_all, 0.0)

    feats = [(dests[i], road_all[row], neigh_all[row])
             for row, i in enumerate(indices)]
    ego_rows = AG[:, (0, 1, 3, 2)][sel]
    OBS = np.empty((B, config.obs_dim))
    for row, f in enumerate(feats):
        OBS[row] = backend.core.obs_build_plain(ego_rows[row], *f)
    return feats, OBS


def scene_features(state, indices, config: ObsConfig):
    """Per-agent (destination, road points, neighbor rows); see
    scene_bundle."""
    return scene_bundle(state, indices, config)[0]


def observe_batch(state, indices, config: ObsConfig) -> np.ndarray:
    """Stacked observe() rows; bit-identical to the scalar route."""
    return scene_bundle(state, indices, config)[1]


# -- forward routes ------------------------------------------------------------


@dataclass(frozen=True)
class MixtureAction:
    logits: np.ndarray  # (6,)
    means: np.ndarray  # (6, 2)
    stds: np.ndarray  # (6, 2), >= 1e-3

    def probs(self) -> np.ndarray:
        e = np.exp(self.logits - self.logits.max())
        return e / e.sum()


def _split_head(raw: np.ndarray) -> MixtureAction:
    nc = N_COMPONENTS
    softplus = backend.core.softplus_plain
    # scalar kernel calls, not a numpy expression: the vectorized log1p/exp
    # can differ from the tape's libm in the last bit
    stds = np.array([softplus(v) for v in raw[3 * nc:]]).reshape(nc, 2) \
        + _STD_FLOOR
    return MixtureAction(logits=raw[:nc].copy(),
                         means=raw[nc:3 * nc].reshape(nc, 2).copy(),
                         stds=stds)


def policy_step(params: PolicyParams, hidden, obs):
    h = np.ascontiguousarray(hidden, dtype=np.float64)
    o = np.ascontiguousarray(obs, dtype=np.float64)
    raw, h1 = backend.core.policy_forward_plain(*params.as_tuple(), h, o)
    if not (np.isfinite(raw).all() and np.isfinite(h1).all()):
        raise OverflowError("policy output diverged")
    return _split_head(raw), h1


class PolicyBlocks(NamedTuple):
    """Tape node ids: base of each contiguous output block."""
    logits: int
    means: int
    stds: int
    hidden: int


def _ids(base: int, n: int) -> np.ndarray:
    return np.arange(base, base + n, dtype=np.int32)


def policy_step_rec(rec, params: PolicyParams, h0: int,
                    obs0: int) -> PolicyBlocks:
    """Recorded forward with the weights as constants (planning)."""
    core = backend.core
    p = params
    nh = p.hidden
    n1 = p.W1.shape[0]
    e1 = rec.linear_const(_ids(obs0, p.obs_dim), p.W1, p.b1)
    e1t = rec.ew(core.EW_TANH, e1, n1)
    e2 = rec.linear_const(_ids(e1t, n1), p.W2, p.b2)
    e2t = rec.ew(core.EW_TANH, e2, nh)
    gx = rec.linear_const(_ids(e2t, nh), p.Wx, p.bx)
    gh = rec.linear_const(_ids(h0, nh), p.Wh, p.bh)
    h1 = rec.gru(gx, gh, h0, nh)
    out = rec.linear_const(_ids(h1, nh), p.Wo, p.bo)
    sp = rec.ew(core.EW_SOFTPLUS, out + 3 * N_COMPONENTS, 2 * N_COMPONENTS)
    stds = rec.ew(core.EW_ADDC, sp, 2 * N_COMPONENTS, aux=_STD_FLOOR)
    return PolicyBlocks(logits=out, means=out + N_COMPONENTS, stds=stds,
                        hidden=h1)


@dataclass(frozen=True)
class ParamHandles:
    """Tape variable ids for every parameter array, in as_tuple() order."""
    params: PolicyParams
    bases: tuple


def upload_params(rec, params: PolicyParams) -> ParamHandles:
    bases = tuple(rec.var_block(np.ascontiguousarray(a.ravel()))
                  for a in params.as_tuple())
    return ParamHandles(params=params, bases=bases)


def policy_step_rec_trainable(rec, handles: ParamHandles, h0: int,
                              obs0: int) -> PolicyBlocks:
    """Recorded forward with weights on the tape (training)."""
    core = backend.core
    p = handles.params
    w1, b1, w2, b2, wx, bx, wh, bh, wo, bo = handles.bases
    nh = p.hidden
    n1 = p.W1.shape[0]
    e1 = rec.linear_param(_ids(obs0, p.obs_dim), w1, b1, n1, p.obs_dim)
    e1t = rec.ew(core.EW_TANH, e1, n1)
    e2 = rec.linear_param(_ids(e1t, n1), w2, b2, nh, n1)
    e2t = rec.ew(core.EW_TANH, e2, nh)
    gx = rec.linear_param(_ids(e2t, nh), wx, bx, 3 * nh, nh)
    gh = rec.linear_param(_ids(h0, nh), wh, bh, 3 * nh, nh)
    h1 = rec.gru(gx, gh, h0, nh)
    out = rec.linear_param(_ids(h1, nh), wo, bo, HEAD_DIM, nh)
    sp = rec.ew(core.EW_SOFTPLUS, out + 3 * N_COMPONENTS, 2 * N_COMPONENTS)
    stds = rec.ew(core.EW_ADDC, sp, 2 * N_COMPONENTS, aux=_STD_FLOOR)
    return PolicyBlocks(logits=out, means=out + N_COMPONENTS, stds=stds,
                        hidden=h1)


@dataclass(frozen=True)
class BatchParams32:
    W1T: np.ndarray
    b1: np.ndarray
    W2T: np.ndarray
    b2: np.ndarray
    WxT: np.ndarray
    bx: np.ndarray
    WhT: np.ndarray
    bh: np.ndarray
    WoT: np.ndarray
    bo: np.ndarray
    hidden: int


def params_f32(params: PolicyParams) -> BatchParams32:
    f = lambda a: np.ascontiguousarray(a, dtype=np.float32)  # noqa: E731
    return BatchParams32(
        W1T=f(params.W1.T), b1=f(params.b1), W2T=f(params.W2.T),
        b2=f(params.b2), WxT=f(params.Wx.T), bx=f(params.bx),
        WhT=f(params.Wh.T), bh=f(params.bh), WoT=f(params.Wo.T),
        bo=f(params.bo), hidden=params.hidden)


def policy_step_batch(p32: BatchParams32, H: np.ndarray, OBS: np.ndarray):
    """float32 forward for a batch of background agents. Approximate
    relative to the float64 routes but deterministic run to run."""
    nh = p32.hidden
    e1 = OBS @ p32.W1T
    e1 += p32.b1
    np.tanh(e1, out=e1)
    e2 = e1 @ p32.W2T
    e2 += p32.b2
    np.tanh(e2, out=e2)
    gx = e2 @ p32.WxT
    gx += p32.bx
    gh = H @ p32.WhT
    gh += p32.bh
    gx[:, :2 * nh] += gh[:, :2 * nh]
    rz = expit(gx[:, :2 * nh])
    r = rz[:, :nh]
    z = rz[:, nh:]
    gn = gx[:, 2 * nh:]
    gn += r * gh[:, 2 * nh:]
    n = np.tanh(gn, out=gn)
    H1 = H - n
    H1 *= z
    H1 += n
    out = H1 @ p32.WoT
    out += p32.bo
    nc = N_COMPONENTS
    logits = out[:, :nc]
    means = out[:, nc:3 * nc].reshape(-1, nc, 2)
    sp = np.logaddexp(np.float32(0.0), out[:, 3 * nc:])
    sp += np.float32(_STD_FLOOR)
    return logits, means, sp.reshape(-1, nc, 2), H1


def batch_mean_actions(logits: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Per-row mode-component mean, clipped to action bounds; float64."""
    pick = np.argmax(logits, axis=1)
    acts = means[np.arange(len(pick)), pick].astype(np.float64)
    acts[:, 0] = np.clip(acts[:, 0], ACCEL_MIN, ACCEL_MAX)
    acts[:, 1] = np.clip(acts[:, 1], -STEER_MAX, STEER_MAX)
    return acts


# -- action selection ----------------------------------------------------------


def sample_action(mix: MixtureAction, component: int, noise) -> Action:
    c = int(component)
    if not 0 <= c < len(mix.logits):
        raise ValueError("component %d out of range" % c)
    clampd = backend.core.clampd
    accel = clampd(mix.means[c, 0] + mix.stds[c, 0] * noise[0],
                   ACCEL_MIN, ACCEL_MAX)
    steer = clampd(mix.means[c, 1] + mix.stds[c, 1] * noise[1],
                   -STEER_MAX, STEER_MAX)
    return Action(accel, steer)


def sample_action_rec(rec, means0: int, stds0: int, component: int, noise):
    """Recorded reparameterized sample; returns (accel id, steer id)."""
    c = int(component)
    na = rec.const(float(noise[0]))
    nb = rec.const(float(noise[1]))
    accel = rec.clamp(rec.add(means0 + 2 * c,
                              rec.mul(stds0 + 2 * c, na)),
                      ACCEL_MIN, ACCEL_MAX)
    steer = rec.clamp(rec.add(means0 + 2 * c + 1,
                              rec.mul(stds0 + 2 * c + 1, nb)),
                      -STEER_MAX, STEER_MAX)
    return accel, steer


def mean_action(mix: MixtureAction) -> Action:
    c = int(np.argmax(mix.logits))  # ties resolve to the lowest index
    return Action(mix.means[c, 0], mix.means[c, 1]).clamped()


def select_component_near_expert(mix: MixtureAction, state,
                                 expert_next) -> int:
    """One plain simulator probe per component mean; argmin distance to
    the expert's next position. Probes never touch a tape.

    Each probe integrates two steps with the mean held fixed: the
    integrator commits speed and heading on the first step and only
    exposes them in position on the second, so a single step is blind to
    the action."""
    ego = state.agents[state.ego_index]
    ex, ey = float(expert_next[0]), float(expert_next[1])
    best, best_d2 = 0, math.inf
    for c in range(len(mix.logits)):
        act = Action(mix.means[c, 0], mix.means[c, 1]).clamped()
        probe = step_agent(step_agent(ego, act), act)
        d2 = (probe.x - ex) ** 2 + (probe.y - ey) ** 2
        if d2 < best_d2:
            best, best_d2 = c, d2
    return best


# -- checkpoints ---------------------------------------------------------------


def save_params(params: PolicyParams, path) -> None:
    serialize.save_arrays(path, "policy",
                          list(zip(_ARRAY_NAMES, params.as_tuple())))


def load_params(path) -> PolicyParams:
    arrays = serialize.load_arrays(path, "policy")
    if tuple(arrays) != _ARRAY_NAMES:
        raise ValueError("%s: unexpected arrays %s" % (path, tuple(arrays)))
    p = PolicyParams(**arrays)
    nh = p.hidden
    want = [(nh, p.obs_dim), (nh,), (nh, nh), (nh,), (3 * nh, nh), (3 * nh,),
            (3 * nh, nh), (3 * nh,), (HEAD_DIM, nh), (HEAD_DIM,)]
    got = [a.shape for a in p.as_tuple()]
    if got != want:
        raise ValueError("%s: parameter shapes inconsistent: %s"
                         % (path, got))
    return p

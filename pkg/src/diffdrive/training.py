"""Policy training through the differentiable simulator, plus an event
classifier over observation features.

Two trainers live here. `apg_train` pushes analytic gradients of a
windowed imitation loss through the simulator and the recurrent policy:
each scenario is rolled out in fixed-size windows, every window restarts
from the previous window's final ego state and hidden state as plain
constants (gradients stop at the boundary), and every step samples the
proximity-selected mixture component with reparameterized noise so the
position error reaches only that component's head.

The component logits never influence the rollout (selection probes use
the means, sampling uses the selected mean and std), so the squared
position error cannot train them. They get a separate convex update: a
per-step cross-entropy against the selected component with the hidden
features held constant, whose gradient touches the logit rows of the
output layer and nothing else. Because those rows see no other gradient,
apg_train drives them with their own optimizer at mode_lr, which can run
much hotter than the simulator-gradient rate; the windowed loss itself
stays pure position error.

`train_classifier` fits a two-head MLP (collision, off-road) on labeled
observation features with plain numpy backprop. The tape only sees the
classifier at planning time, where `classifier_predict_rec` re-records
the frozen net on top of live observation nodes.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from . import backend, gradcore, serialize
from .dynamics import Action, AgentState, SimState, step_agent_rec, step_sim
from .geometry import EventLabels, ade, collision_flag, offroad_flag
from .policy import (N_COMPONENTS, MixtureAction, ObsConfig, PolicyParams,
                     gather_features, mean_action, observe, policy_step,
                     policy_step_rec, policy_step_rec_trainable,
                     sample_action_rec, select_component_near_expert,
                     upload_params)

CLASSIFIER_HIDDEN = 64
_CLS_NAMES = ("V1", "c1", "V2", "c2")
# accel spans 14 m/s^2 end to end and steer 1.2 rad; dataset noise scales
# with half of each so perturb=1.0 injects range-sized kicks
_PERTURB_SCALE = (7.0, 0.6)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization knobs shared by the policy and classifier trainers."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    window: int = 20  # BPTT truncation length, policy trainer only
    clip: float = 1.0  # global gradient-norm ceiling
    epochs: int = 1
    batch_size: int = 4
    seed: int = 0
    mode_lr: float = 1e-2  # logit-head rate; 0 freezes the component logits

    def __post_init__(self):
        if not self.lr > 0.0:
            raise ValueError("lr must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("betas must lie in (0, 1)")
        if not self.eps > 0.0:
            raise ValueError("eps must be positive")
        if self.window < 1:
            raise ValueError("window must be at least 1")
        if not self.clip > 0.0:
            raise ValueError("clip must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.mode_lr < 0.0:
            raise ValueError("mode_lr must be non-negative")


# -- optimizer ---------------------------------------------------------------


def _clip_global(grads, clip):
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > clip:
        scale = clip / total
        grads = [g * scale for g in grads]
    return grads


class _Adam:
    def __init__(self, arrays, cfg, lr=None):
        self.cfg = cfg
        self.lr = cfg.lr if lr is None else lr
        self.t = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]

    def step(self, arrays, grads):
        cfg = self.cfg
        self.t += 1
        b1t = 1.0 - cfg.beta1 ** self.t
        b2t = 1.0 - cfg.beta2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            a -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + cfg.eps)


# -- windowed policy gradients -----------------------------------------------


class WindowResult(NamedTuple):
    loss: float  # summed squared position error against the expert
    dist_sum: float  # per-step distances to the expert, summed
    grads: Optional[tuple]  # d loss / d params, matching as_tuple() order
    mode_err: float  # summed cross-entropy of logits vs selected component
    mode_grads: tuple  # d mode_err / d (Wo, bo), hidden features detached
    end_ego: AgentState
    end_hidden: np.ndarray


class ScenarioPass(NamedTuple):
    loss: float
    dist_sum: float
    grads: Optional[tuple]
    mode_err: float
    mode_grads: tuple


def window_gradient(scenario, params, cfg, t0, n_steps, ego, hidden, noise,
                    *, obs_config=None, need_grad=True, scenario_index=0):
    """Roll n_steps from (ego, hidden) on a fresh tape and differentiate.

    The window opens from plain values, so gradients never cross its
    boundary. Other agents replay their logs; only the ego is simulated.
    Per step the loss adds the squared distance between the stepped ego
    and the expert's next position. The logit-head cross-entropy against
    the selected component rides along as plain numbers (mode_err and its
    gradient on the output layer's logit rows), never on the tape.
    """
    ocfg = obs_config or ObsConfig()
    tracks = scenario.tracks
    egoi = scenario.ego_index
    horizon = scenario.horizon
    hvec = np.ascontiguousarray(hidden, dtype=np.float64)
    rec = gradcore.new_record()
    handles = upload_params(rec, params) if need_grad else None
    ex = rec.const(ego.x)
    ey = rec.const(ego.y)
    eyaw = rec.const(ego.yaw)
    espd = rec.const(ego.speed)
    h0 = rec.const_block(hvec)
    nh = hvec.size
    sq_ids = []
    dist = 0.0
    mode_err = 0.0
    mode_wo = np.zeros((params.bo.size, nh))
    mode_bo = np.zeros(params.bo.size)
    cur = ego
    t = t0
    try:
        for i in range(n_steps):
            t = t0 + i
            agents = tuple(cur if j == egoi else tr.states[t]
                           for j, tr in enumerate(tracks))
            state = SimState(agents=agents, t=t, ego_index=egoi,
                             scenario=scenario)
            dest, road, neigh = gather_features(state, egoi, ocfg)
            obs0, _ = rec.observation(ex, ey, eyaw, espd, dest, road, neigh)
            if need_grad:
                blocks = policy_step_rec_trainable(rec, handles, h0, obs0)
            else:
                blocks = policy_step_rec(rec, params, h0, obs0)
            mix = MixtureAction(
                rec.values_block(blocks.logits, N_COMPONENTS),
                rec.values_block(blocks.means,
                                 2 * N_COMPONENTS).reshape(-1, 2),
                rec.values_block(blocks.stds,
                                 2 * N_COMPONENTS).reshape(-1, 2))
            tgt = tracks[egoi].states[min(t + 2, horizon)]
            comp = select_component_near_expert(mix, state, (tgt.x, tgt.y))
            acc_id, steer_id = sample_action_rec(rec, blocks.means,
                                                 blocks.stds, comp, noise[i])
            ex, ey, eyaw, espd = step_agent_rec(rec, (ex, ey, eyaw, espd),
                                                (acc_id, steer_id))
            exp1 = tracks[egoi].states[t + 1]
            dx = rec.sub(ex, rec.const(exp1.x))
            dy = rec.sub(ey, rec.const(exp1.y))
            sq = rec.add(rec.mul(dx, dx), rec.mul(dy, dy))
            sq_ids.append(sq)
            # convex classification of the selected component; the hidden
            # features are plain values here, so nothing leaks off the
            # logit rows
            hvals = rec.values_block(blocks.hidden, nh)
            shifted = np.exp(mix.logits - mix.logits.max())
            total = shifted.sum()
            mode_err += math.log(total) + mix.logits.max() - mix.logits[comp]
            p = shifted / total
            p[comp] -= 1.0
            mode_wo[:N_COMPONENTS] += np.outer(p, hvals)
            mode_bo[:N_COMPONENTS] += p
            dist += math.sqrt(rec.value(sq))
            cur = AgentState(rec.value(ex), rec.value(ey), rec.value(eyaw),
                             rec.value(espd))
            h0 = blocks.hidden
        loss_id = rec.sum(sq_ids)
    except OverflowError as exc:
        raise OverflowError("training diverged at step %d of scenario %s: %s"
                            % (t, scenario_index, exc)) from exc
    end_hidden = rec.values_block(h0, hvec.size)
    grads = None
    if need_grad:
        try:
            rec.backward(loss_id)
        except ValueError as exc:
            raise OverflowError(
                "non-finite gradient in window starting at step %d of "
                "scenario %s: %s" % (t0, scenario_index, exc)) from exc
        grads = tuple(
            rec.adjoints_block(base, a.size).reshape(a.shape)
            for base, a in zip(handles.bases, params.as_tuple()))
        for g in grads:
            if not np.isfinite(g).all():
                raise OverflowError(
                    "non-finite gradient in window starting at step %d of "
                    "scenario %s" % (t0, scenario_index))
    return WindowResult(loss=rec.value(loss_id), dist_sum=dist, grads=grads,
                        mode_err=mode_err, mode_grads=(mode_wo, mode_bo),
                        end_ego=cur, end_hidden=end_hidden)


def _check_expert_log(scenario, scenario_index):
    track = scenario.tracks[scenario.ego_index]
    if not all(bool(v) for v in track.valid):
        raise ValueError("scenario %s lacks a complete expert ego log"
                         % scenario_index)


def scenario_gradient(scenario, params, cfg, *, obs_config=None, epoch=0,
                      scenario_index=0, noise=None, need_grad=True):
    """Chain truncated windows across one scenario.

    Losses and gradients sum over windows; each window restarts from the
    previous one's final values, so no gradient crosses a boundary. The
    noise draw is a pure function of (cfg.seed, epoch, scenario_index)
    unless an explicit (horizon, 2) array is supplied.
    """
    horizon = scenario.horizon
    if cfg.window > horizon:
        raise ValueError("window %d exceeds scenario horizon %d"
                         % (cfg.window, horizon))
    _check_expert_log(scenario, scenario_index)
    if noise is None:
        noise = np.random.default_rng(
            [cfg.seed, epoch, scenario_index]).standard_normal((horizon, 2))
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (horizon, 2):
        raise ValueError("noise must have shape (%d, 2)" % horizon)
    ego = scenario.tracks[scenario.ego_index].states[0]
    hidden = np.zeros(params.hidden)
    loss = 0.0
    dist = 0.0
    mode_err = 0.0
    mode_wo = np.zeros_like(params.Wo)
    mode_bo = np.zeros_like(params.bo)
    grads = ([np.zeros_like(a) for a in params.as_tuple()]
             if need_grad else None)
    for t0 in range(0, horizon, cfg.window):
        n = min(cfg.window, horizon - t0)
        res = window_gradient(scenario, params, cfg, t0, n, ego, hidden,
                              noise[t0:t0 + n], obs_config=obs_config,
                              need_grad=need_grad,
                              scenario_index=scenario_index)
        loss += res.loss
        dist += res.dist_sum
        mode_err += res.mode_err
        mode_wo += res.mode_grads[0]
        mode_bo += res.mode_grads[1]
        if need_grad:
            for g, r in zip(grads, res.grads):
                g += r
        ego = res.end_ego
        hidden = res.end_hidden
    return ScenarioPass(loss=loss, dist_sum=dist,
                        grads=tuple(grads) if need_grad else None,
                        mode_err=mode_err, mode_grads=(mode_wo, mode_bo))


def windowed_loss(scenario, params, cfg, *, obs_config=None, epoch=0,
                  scenario_index=0, noise=None):
    """Training objective evaluated without differentiation. Shares every
    bit with the gradient route: identical kernels, weights as constants."""
    return scenario_gradient(scenario, params, cfg, obs_config=obs_config,
                             epoch=epoch, scenario_index=scenario_index,
                             noise=noise, need_grad=False).loss


def apg_train(scenarios, params, cfg, *, obs_config=None, curve_path=None):
    """Imitate the expert logs by analytic gradients through the simulator.

    Scenario gradients are averaged per batch in list order, clipped by
    global norm, and applied with Adam. Returns new parameters; the input
    set is untouched. curve_path, when given, receives one CSV row per
    epoch with the mean scenario loss and the mode-rollout ADE.
    """
    scenarios = list(scenarios)
    if not scenarios:
        raise ValueError("need at least one scenario")
    for si, sc in enumerate(scenarios):
        if cfg.window > sc.horizon:
            raise ValueError("window %d exceeds horizon %d of scenario %d"
                             % (cfg.window, sc.horizon, si))
        _check_expert_log(sc, si)
    arrays = [a.copy() for a in params.as_tuple()]
    live = PolicyParams(*arrays)  # view over the arrays the optimizers mutate
    opt = _Adam(arrays, cfg)
    # the logit rows see no simulator gradient, so a hotter optimizer can
    # own them outright; the two never touch the same coordinate
    logit_rows = [arrays[8][:N_COMPONENTS], arrays[9][:N_COMPONENTS]]
    mode_opt = _Adam(logit_rows, cfg, lr=cfg.mode_lr)
    rows = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for b0 in range(0, len(scenarios), cfg.batch_size):
            batch = range(b0, min(b0 + cfg.batch_size, len(scenarios)))
            acc = [np.zeros_like(a) for a in arrays]
            acc_mode = [np.zeros_like(a) for a in logit_rows]
            for si in batch:
                res = scenario_gradient(scenarios[si], live, cfg,
                                        obs_config=obs_config, epoch=epoch,
                                        scenario_index=si)
                total += res.loss
                for g, r in zip(acc, res.grads):
                    g += r
                acc_mode[0] += res.mode_grads[0][:N_COMPONENTS]
                acc_mode[1] += res.mode_grads[1][:N_COMPONENTS]
            inv = 1.0 / len(batch)
            grads = _clip_global([g * inv for g in acc], cfg.clip)
            opt.step(arrays, grads)
            if cfg.mode_lr > 0.0:
                mode_opt.step(logit_rows,
                              _clip_global([g * inv for g in acc_mode],
                                           cfg.clip))
        if curve_path is not None:
            ade_now = float(np.mean([reactive_ade(sc, live,
                                                  obs_config=obs_config)
                                     for sc in scenarios]))
            rows.append((epoch, total / len(scenarios), ade_now, None, None))
    if curve_path is not None:
        _write_curve(curve_path, rows)
    return PolicyParams(*arrays)


# -- plain rollouts ----------------------------------------------------------


def rollout_mean(scenario, params, *, obs_config=None):
    """Ego under the argmax-mode policy while other agents replay logs;
    returns the (horizon+1, 2) ego position trace."""
    ocfg = obs_config or ObsConfig()
    egoi = scenario.ego_index
    state = SimState(agents=tuple(tr.states[0] for tr in scenario.tracks),
                     t=0, ego_index=egoi, scenario=scenario)
    h = np.zeros(params.hidden)
    pos = np.empty((scenario.horizon + 1, 2))
    pos[0] = (state.agents[egoi].x, state.agents[egoi].y)
    for t in range(scenario.horizon):
        mix, h = policy_step(params, h, observe(state, egoi, ocfg))
        state = step_sim(state, mean_action(mix))
        pos[t + 1] = (state.agents[egoi].x, state.agents[egoi].y)
    return pos


def reactive_ade(scenario, params, *, obs_config=None):
    """Average displacement between the mode rollout and the expert log,
    excluding the shared start state."""
    pos = rollout_mean(scenario, params, obs_config=obs_config)
    expert = np.array([(s.x, s.y)
                       for s in scenario.tracks[scenario.ego_index].states])
    return ade(pos[1:], expert[1:])


# -- training curves ---------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def _write_curve(path, rows):
    # columns stay fixed across trainers; inapplicable cells stay empty
    with open(path, "w", newline="") as fh:
        fh.write("epoch,loss,ade,positive_rate,auc\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


# -- classifier dataset ------------------------------------------------------


@dataclass(frozen=True)
class LabeledState:
    """One visited state: observation features plus event labels computed
    on that exact state. group ties states to their source scenario so
    held-out splits never cut a rollout in half."""

    features: np.ndarray
    labels: EventLabels
    state: object = None
    group: int = 0


@dataclass(frozen=True)
class DatasetBalance:
    n_states: int
    collision_positives: int
    offroad_positives: int
    either_positives: int

    @property
    def positive_rate(self):
        if self.n_states == 0:
            return 0.0
        return self.either_positives / self.n_states


def generate_classifier_dataset(params, scenarios, perturb, seed, *,
                                obs_config=None):
    """Noise-injected rollouts labeled by the event detectors.

    The ego follows its argmax-mode action plus Gaussian kicks scaled by
    perturb while other agents replay logs; every visited state, first
    and last included, yields one LabeledState. Returns (states, balance).
    """
    if perturb < 0.0:
        raise ValueError("perturb must be non-negative")
    ocfg = obs_config or ObsConfig()
    out = []
    n_col = n_off = n_any = 0
    for si, sc in enumerate(scenarios):
        noise = np.random.default_rng([seed, si]).standard_normal(
            (sc.horizon, 2))
        egoi = sc.ego_index
        track = sc.tracks[egoi]
        state = SimState(agents=tuple(tr.states[0] for tr in sc.tracks),
                         t=0, ego_index=egoi, scenario=sc)
        h = np.zeros(params.hidden)
        for t in range(sc.horizon + 1):
            feats = observe(state, egoi, ocfg)
            col = collision_flag(state, egoi)
            off = offroad_flag(state.agents[egoi],
                               (track.length, track.width), sc.roadgraph)
            n_col += col
            n_off += off
            n_any += col or off
            out.append(LabeledState(features=feats,
                                    labels=EventLabels(col, off),
                                    state=state, group=si))
            if t == sc.horizon:
                break
            mix, h = policy_step(params, h, feats)
            base = mean_action(mix)
            act = Action(
                base.accel + perturb * _PERTURB_SCALE[0] * noise[t, 0],
                base.steer + perturb * _PERTURB_SCALE[1] * noise[t, 1])
            state = step_sim(state, act)
    return out, DatasetBalance(n_states=len(out), collision_positives=n_col,
                               offroad_positives=n_off,
                               either_positives=n_any)


# -- event classifier --------------------------------------------------------


@dataclass(frozen=True)
class ClassifierParams:
    """Two-head event net: features -> tanh hidden -> (collision, offroad)
    logits."""

    V1: np.ndarray
    c1: np.ndarray
    V2: np.ndarray
    c2: np.ndarray

    def as_tuple(self):
        return (self.V1, self.c1, self.V2, self.c2)

    @property
    def n_inputs(self):
        return self.V1.shape[1]

    @property
    def hidden(self):
        return self.V1.shape[0]


def init_classifier(n_inputs, seed=0, hidden=CLASSIFIER_HIDDEN):
    rng = np.random.default_rng([seed, 0xC1A5])

    def glorot(nout, nin):
        s = math.sqrt(6.0 / (nin + nout))
        return rng.uniform(-s, s, size=(nout, nin))

    return ClassifierParams(V1=glorot(hidden, n_inputs), c1=np.zeros(hidden),
                            V2=glorot(2, hidden), c2=np.zeros(2))


def classifier_predict(phi, features):
    """(p_collision, p_offroad) for one observation vector."""
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.shape != (phi.n_inputs,):
        raise ValueError("expected %d features, got shape %s"
                         % (phi.n_inputs, x.shape))
    logits = backend.core.mlp2_forward_plain(phi.V1, phi.c1, phi.V2, phi.c2,
                                             x)
    sig = backend.core.sigmoid_plain
    return float(sig(logits[0])), float(sig(logits[1]))


def classifier_predict_rec(rec, phi, obs0):
    """Record the frozen classifier on top of live observation nodes;
    returns (p_collision id, p_offroad id). Weights enter as constants, so
    their adjoints are never materialized."""
    core = backend.core
    ids = np.arange(obs0, obs0 + phi.n_inputs, dtype=np.int32)
    l1 = rec.linear_const(ids, phi.V1, phi.c1)
    a1 = rec.ew(core.EW_TANH, l1, phi.hidden)
    hid = np.arange(a1, a1 + phi.hidden, dtype=np.int32)
    l2 = rec.linear_const(hid, phi.V2, phi.c2)
    probs = rec.ew(core.EW_SIGM, l2, 2)
    return probs, probs + 1


def _cls_forward(V1, c1, V2, c2, X):
    A = np.tanh(X @ V1.T + c1)
    return A, A @ V2.T + c2


def _bce(logits, Y):
    # stable elementwise binary cross-entropy on raw logits
    return (np.maximum(logits, 0.0) - logits * Y
            + np.log1p(np.exp(-np.abs(logits))))


def classifier_loss(phi, data):
    """Mean over states of the summed per-head cross-entropy."""
    X = np.stack([np.asarray(ls.features, dtype=np.float64) for ls in data])
    Y = np.array([[ls.labels.collision, ls.labels.offroad] for ls in data],
                 dtype=np.float64)
    _, Z = _cls_forward(*phi.as_tuple(), X)
    return float(np.mean(_bce(Z, Y).sum(axis=1)))


def _rank_auc(scores, labels):
    pos = np.asarray(labels, dtype=bool)
    n1 = int(pos.sum())
    n0 = pos.size - n1
    if n1 == 0 or n0 == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def _grouped_split(groups, holdout, seed):
    """Index split (train, held); whole groups move together so one
    rollout never straddles the split."""
    n = len(groups)
    rng = np.random.default_rng([seed, 0x5B117])
    uniq = np.unique(groups)
    if len(uniq) > 1:
        order = rng.permutation(uniq)
        want = holdout * n
        held_groups = []
        count = 0
        for g in order:
            held_groups.append(g)
            count += int((groups == g).sum())
            if count >= want:
                break
        if len(held_groups) == len(uniq):  # keep at least one group to train
            held_groups.pop()
        mask = np.isin(groups, held_groups)
    else:
        k = min(max(1, int(round(holdout * n))), n - 1)
        mask = np.zeros(n, dtype=bool)
        mask[rng.permutation(n)[:k]] = True
    return np.flatnonzero(~mask), np.flatnonzero(mask)


class ClassifierReport(NamedTuple):
    auc_collision: float
    auc_offroad: float
    accuracy_collision: float
    accuracy_offroad: float
    train_loss: float
    n_train: int
    n_held: int


def train_classifier(data, cfg, *, holdout=0.2, curve_path=None):
    """Adam on sigmoid cross-entropy over both heads.

    Requires both classes present in each head. Returns (params, report)
    where the report carries held-out AUC and accuracy per head; a head
    whose held-out slice is single-class gets AUC nan.
    """
    data = list(data)
    if not 0.0 < holdout < 1.0:
        raise ValueError("holdout must lie in (0, 1)")
    if len(data) < 4:
        raise ValueError("need at least 4 labeled states")
    X = np.stack([np.asarray(ls.features, dtype=np.float64) for ls in data])
    Y = np.array([[ls.labels.collision, ls.labels.offroad] for ls in data],
                 dtype=np.float64)
    for head, name in ((0, "collision"), (1, "offroad")):
        total = Y[:, head].sum()
        if total == 0.0 or total == len(data):
            raise ValueError("%s labels contain a single class" % name)
    groups = np.array([ls.group for ls in data])
    train_idx, held_idx = _grouped_split(groups, holdout, cfg.seed)
    arrays = [a.copy()
              for a in init_classifier(X.shape[1], seed=cfg.seed).as_tuple()]
    opt = _Adam(arrays, cfg)
    ntr = len(train_idx)
    rows = []
    last = 0.0
    for epoch in range(cfg.epochs):
        perm = np.random.default_rng([cfg.seed, 1, epoch]).permutation(ntr)
        total = 0.0
        nb = 0
        for b0 in range(0, ntr, cfg.batch_size):
            idx = train_idx[perm[b0:b0 + cfg.batch_size]]
            V1, c1, V2, c2 = arrays
            A, Z = _cls_forward(V1, c1, V2, c2, X[idx])
            loss = float(np.mean(_bce(Z, Y[idx]).sum(axis=1)))
            if not math.isfinite(loss):
                raise OverflowError(
                    "non-finite classifier loss at epoch %d batch %d"
                    % (epoch, nb))
            G = (expit(Z) - Y[idx]) / len(idx)
            dA = G @ V2
            dH = dA * (1.0 - A * A)
            grads = _clip_global([dH.T @ X[idx], dH.sum(axis=0),
                                  G.T @ A, G.sum(axis=0)], cfg.clip)
            opt.step(arrays, grads)
            total += loss
            nb += 1
        last = total / nb
        if curve_path is not None:
            _, Zh = _cls_forward(*arrays, X[held_idx])
            aucs = [_rank_auc(Zh[:, k], Y[held_idx, k]) for k in (0, 1)]
            rows.append((epoch, last, None, float(Y[train_idx].mean()),
                         float(np.nanmean(aucs))))
    _, Zh = _cls_forward(*arrays, X[held_idx])
    Yh = Y[held_idx]
    acc = ((Zh > 0.0) == (Yh > 0.5)).mean(axis=0)
    report = ClassifierReport(auc_collision=_rank_auc(Zh[:, 0], Yh[:, 0]),
                              auc_offroad=_rank_auc(Zh[:, 1], Yh[:, 1]),
                              accuracy_collision=float(acc[0]),
                              accuracy_offroad=float(acc[1]),
                              train_loss=last, n_train=ntr,
                              n_held=len(held_idx))
    if curve_path is not None:
        _write_curve(curve_path, rows)
    return ClassifierParams(*arrays), report


# -- checkpoints -------------------------------------------------------------


def save_classifier(phi, path):
    serialize.save_arrays(path, "classifier",
                          list(zip(_CLS_NAMES, phi.as_tuple())))


def load_classifier(path):
    arrays = serialize.load_arrays(path, "classifier")
    if tuple(arrays) != _CLS_NAMES:
        raise ValueError("unexpected arrays in classifier checkpoint: %s"
                         % (tuple(arrays),))
    V1, c1, V2, c2 = (arrays[k] for k in _CLS_NAMES)
    if V1.ndim != 2 or c1.shape != (V1.shape[0],):
        raise ValueError("classifier checkpoint has inconsistent shapes")
    if V2.shape != (2, V1.shape[0]) or c2.shape != (2,):
        raise ValueError("classifier checkpoint has inconsistent shapes")
    return ClassifierParams(V1, c1, V2, c2)

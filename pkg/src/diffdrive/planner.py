"""Test-time planning through the differentiable simulator.

A plan is built from K imagined rollouts. Every agent in a rollout acts
through the policy (nobody replays logs inside imagination), but only
the ego branch is recorded on a tape; the other agents' actions enter as
plain constants, so adjoints stay ego-only and the record stays small.
Each rollout is scored by a scalar loss, the first M ego actions are
refined against that loss's gradient, and the refined candidates are
averaged under a softmax over rollout losses. The control loop executes
M actions of the winning average, re-plans, and repeats; during physical
execution the other agents replay their logs.

Imagination always runs the full horizon T, even when fewer than T steps
remain in the episode: the imagined future needs no logs, and keeping
the horizon fixed keeps the per-plan policy-call count at exactly
K * T * n_agents. Near the episode end only the tracking window and the
number of executed actions shrink.

Non-ego agents inside imagination run through the float32 batched policy
path; the ego, the tape, and everything physically executed stay in
float64.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import gradcore
from .dynamics import (ACCEL_MAX, ACCEL_MIN, STEER_MAX, Action, AgentState,
                       SimState, step_agent_rec, step_agents_arrays, step_sim)
from .geometry import ade, collision_flag, offroad_flag
from .policy import (N_COMPONENTS, ObsConfig, batch_mean_actions,
                     gather_features, observe_batch, observe_rows, params_f32,
                     policy_step, policy_step_batch, policy_step_rec,
                     sample_action_rec, scene_features, zero_hidden)
from .training import classifier_predict_rec


@dataclass(frozen=True)
class PlanConfig:
    """Search knobs: rollout population, horizon, refinement and softmax."""

    K: int = 8
    T: int = 10
    M: int = 3
    eta: tuple = (0.0, 0.0)  # per-dimension (accel, steer) refinement step
    tau: float = 0.01
    gamma: float = 1.0  # optional per-step discount inside the losses
    grad_steps: int = 1
    mean_first: bool = True  # rollout 0 deterministic, the rest sampled
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not 1 <= self.M <= self.T:
            raise ValueError("M must satisfy 1 <= M <= T")
        if len(self.eta) != 2 or self.eta[0] < 0.0 or self.eta[1] < 0.0:
            raise ValueError("eta must be two non-negative step sizes")
        if not self.tau > 0.0:
            raise ValueError("tau must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.grad_steps < 1:
            raise ValueError("grad_steps must be at least 1")


def tracking_config(**overrides) -> PlanConfig:
    """Expert-tracking search defaults at this package's action scale."""
    base = dict(K=8, T=10, M=3, eta=(2.0, 0.02), tau=0.01)
    base.update(overrides)
    return PlanConfig(**base)


def guided_config(**overrides) -> PlanConfig:
    """Classifier-guided search defaults; steer moves more than tracking."""
    base = dict(K=8, T=10, M=3, eta=(2.0, 0.1), tau=0.01)
    base.update(overrides)
    return PlanConfig(**base)


@dataclass(frozen=True)
class RolloutNoise:
    """Pre-drawn randomness for one rollout: a component-selection uniform
    and a reparameterization normal pair per (step, agent)."""

    uniforms: np.ndarray  # (T, n_agents)
    normals: np.ndarray  # (T, n_agents, 2)


def draw_rollout_noise(seed: int, plan_index: int, rollout_index: int,
                       T: int, n_agents: int) -> RolloutNoise:
    """Independent stream per (seed, plan, rollout); uniforms drawn before
    normals so a rollout replays bit-identically from the same triple."""
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, plan_index, rollout_index]))
    return RolloutNoise(uniforms=rng.random((T, n_agents)),
                        normals=rng.standard_normal((T, n_agents, 2)))


@dataclass
class ImaginedRollout:
    """One recorded imagination: states for all agents, the ego action
    nodes with their tape, and bookkeeping set later by the loss ops."""

    rec: object
    states: list  # SimState per step, length T+1 when valid
    ego_nodes: list  # (x, y, yaw, speed) node ids per step
    act_nodes: np.ndarray  # (T, 2) int32 ids of the applied ego actions
    actions: np.ndarray  # (T, 2) applied ego action values
    comps: np.ndarray  # (T,) selected mixture component, -1 for open-loop
    n_policy_calls: int
    valid: bool = True
    fail_reason: str = ""
    loss_id: int = -1
    loss: float = math.nan
    event_counts: Optional[tuple] = None  # (collision, offroad) step counts

    @property
    def ego_positions(self) -> np.ndarray:
        egoi = self.states[0].ego_index
        return np.array([(s.agents[egoi].x, s.agents[egoi].y)
                         for s in self.states])


def _softmax_component(logits: np.ndarray, u: float) -> int:
    z = logits.astype(np.float64) - float(np.max(logits))
    p = np.exp(z)
    cum = np.cumsum(p / p.sum())
    return min(int(np.searchsorted(cum, u, side="right")),
               N_COMPONENTS - 1)


def _batch_sampled_actions(logits, means, stds, uniforms, normals):
    """Mixture-probability component draw + reparameterized sample for a
    batch of background agents; returns float64 actions within bounds."""
    z = logits.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    cum = np.cumsum(p, axis=1)
    comps = np.minimum((uniforms[:, None] > cum).sum(axis=1),
                       N_COMPONENTS - 1)
    rows = np.arange(len(comps))
    acts = means[rows, comps].astype(np.float64) \
        + stds[rows, comps].astype(np.float64) * normals
    acts[:, 0] = np.clip(acts[:, 0], ACCEL_MIN, ACCEL_MAX)
    acts[:, 1] = np.clip(acts[:, 1], -STEER_MAX, STEER_MAX)
    return acts


def imagine_rollout(s0: SimState, hiddens, params, T: int, mode: str = "mean",
                    *, noise: Optional[RolloutNoise] = None, open_loop=None,
                    obs_config: Optional[ObsConfig] = None, p32=None):
    """Roll T steps from s0 with every agent driven by the policy.

    The ego's observation, policy forward, action and dynamics go on a
    fresh tape; other agents run the batched float32 path and enter the
    ego's observations as constants. mode "mean" takes each agent's
    mode-component mean, "sample" draws a component by mixture
    probability and reparameterizes with the provided noise. open_loop,
    when given, overrides the first len(open_loop) ego actions with tape
    variables (the gradient-refinement replay path). A non-finite value
    anywhere flags the rollout invalid instead of raising.
    """
    if T < 1:
        raise ValueError("imagination horizon must be at least 1")
    if mode not in ("mean", "sample"):
        raise ValueError("mode must be mean or sample")
    if mode == "sample" and noise is None:
        raise ValueError("sample mode needs a noise stream")
    if s0.scenario is None:
        raise ValueError("imagination needs the scenario context on s0")
    ocfg = obs_config or ObsConfig()
    scenario = s0.scenario
    egoi = s0.ego_index
    n = len(s0.agents)
    if len(hiddens) != n:
        raise ValueError("need one hidden state per agent")
    others = [j for j in range(n) if j != egoi]
    if others and p32 is None:
        p32 = params_f32(params)
    rec = gradcore.new_record()
    n_open = 0 if open_loop is None else len(open_loop)
    act_nodes = np.zeros((T, 2), dtype=np.int32)
    actions = np.zeros((T, 2))
    comps = np.full(T, -1, dtype=np.int64)
    states = [s0]
    ego_nodes = []
    calls = 0
    try:
        ego0 = s0.agents[egoi]
        ex = rec.const(ego0.x)
        ey = rec.const(ego0.y)
        eyaw = rec.const(ego0.yaw)
        espd = rec.const(ego0.speed)
        h_ego = rec.const_block(
            np.ascontiguousarray(hiddens[egoi], dtype=np.float64))
        H = (np.stack([hiddens[j] for j in others]).astype(np.float32)
             if others else None)
        BG = (np.array([(s0.agents[j].x, s0.agents[j].y, s0.agents[j].yaw,
                         s0.agents[j].speed) for j in others])
              if others else None)
        ego_nodes.append((ex, ey, eyaw, espd))
        state = s0
        all_idx = list(range(len(s0.agents)))
        for i in range(T):
            feats, OBS = scene_bundle(state, all_idx, ocfg)
            dest, road, neigh = feats[egoi]
            obs0, _ = rec.observation(ex, ey, eyaw, espd, dest, road, neigh)
            blocks = policy_step_rec(rec, params, h_ego, obs0)
            h_ego = blocks.hidden
            calls += 1
            if i < n_open:
                acc_id = rec.var(float(open_loop[i][0]))
                steer_id = rec.var(float(open_loop[i][1]))
            elif mode == "mean":
                logits = rec.values_block(blocks.logits, N_COMPONENTS)
                c = int(np.argmax(logits))
                comps[i] = c
                acc_id = rec.clamp(blocks.means + 2 * c,
                                   ACCEL_MIN, ACCEL_MAX)
                steer_id = rec.clamp(blocks.means + 2 * c + 1,
                                     -STEER_MAX, STEER_MAX)
            else:
                logits = rec.values_block(blocks.logits, N_COMPONENTS)
                c = _softmax_component(logits, noise.uniforms[i, egoi])
                comps[i] = c
                acc_id, steer_id = sample_action_rec(
                    rec, blocks.means, blocks.stds, c, noise.normals[i, egoi])
            act_nodes[i] = (acc_id, steer_id)
            agents = list(state.agents)
            if others:
                obs = OBS[others].astype(np.float32)
                logitsB, meansB, stdsB, H = policy_step_batch(p32, H, obs)
                calls += len(others)
                if mode == "mean":
                    acts = batch_mean_actions(logitsB, meansB)
                else:
                    acts = _batch_sampled_actions(
                        logitsB, meansB, stdsB,
                        noise.uniforms[i, others],
                        noise.normals[i, others])
                BG = step_agents_arrays(BG, acts)
                for row, j in zip(BG.tolist(), others):
                    agents[j] = AgentState(row[0], row[1], row[2], row[3])
            ex, ey, eyaw, espd = step_agent_rec(
                rec, (ex, ey, eyaw, espd), (acc_id, steer_id))
            actions[i] = (rec.value(acc_id), rec.value(steer_id))
            ego_nodes.append((ex, ey, eyaw, espd))
            agents[egoi] = AgentState(rec.value(ex), rec.value(ey),
                                      rec.value(eyaw), rec.value(espd))
            state = SimState(agents=tuple(agents), t=state.t + 1,
                             ego_index=egoi, scenario=scenario)
            states.append(state)
    except OverflowError as exc:
        return ImaginedRollout(rec=rec, states=states, ego_nodes=ego_nodes,
                               act_nodes=act_nodes, actions=actions,
                               comps=comps, n_policy_calls=calls,
                               valid=False, fail_reason=str(exc))
    return ImaginedRollout(rec=rec, states=states, ego_nodes=ego_nodes,
                           act_nodes=act_nodes, actions=actions, comps=comps,
                           n_policy_calls=calls)


def tracking_loss(rollout: ImaginedRollout, expert, gamma: float = 1.0):
    """Mean squared ego displacement from the expert positions, recorded
    on the rollout's tape; returns the loss node id.

    expert holds one (x, y) row per imagined step starting at the first
    step after s0. Near the episode end the window may be shorter than
    the imagination horizon; the mean then runs over the covered steps.
    """
    expert = np.asarray(expert, dtype=np.float64)
    if expert.ndim != 2 or expert.shape[1] != 2 or len(expert) < 1:
        raise ValueError("expert window must be a non-empty (n, 2) array")
    n = len(expert)
    if n > len(rollout.states) - 1:
        raise ValueError("expert window longer than the imagination horizon")
    rec = rollout.rec
    ids = []
    for i in range(n):
        ex, ey = rollout.ego_nodes[i + 1][0], rollout.ego_nodes[i + 1][1]
        dx = rec.sub(ex, rec.const(expert[i, 0]))
        dy = rec.sub(ey, rec.const(expert[i, 1]))
        sq = rec.add(rec.mul(dx, dx), rec.mul(dy, dy))
        if gamma != 1.0:
            sq = rec.mul(sq, rec.const(gamma ** i))
        ids.append(sq)
    return rec.mul(rec.sum(ids), rec.const(1.0 / n))


def classifier_guided_loss(rollout: ImaginedRollout, phi, gamma: float = 1.0,
                           obs_config: Optional[ObsConfig] = None):
    """Average gated event probability over the imagined steps.

    The boolean detectors run on the imagined states and gate which steps
    contribute; the classifier probabilities are recorded on the tape, so
    the gradient reaches the ego actions only through them. With no event
    anywhere the loss is the constant zero. Also stores the rollout's
    (collision, offroad) step counts.
    """
    ocfg = obs_config or ObsConfig()
    rec = rollout.rec
    states = rollout.states
    T = len(states) - 1
    scenario = states[0].scenario
    egoi = states[0].ego_index
    track = scenario.tracks[egoi]
    dims = (track.length, track.width)
    terms = []
    n_col = 0
    n_off = 0
    for t in range(1, T + 1):
        st = states[t]
        col = collision_flag(st, egoi)
        off = offroad_flag(st.agents[egoi], dims, scenario.roadgraph)
        n_col += int(col)
        n_off += int(off)
        if not (col or off):
            continue
        dest, road, neigh = gather_features(st, egoi, ocfg)
        x, y, yaw, spd = rollout.ego_nodes[t]
        obs0, _ = rec.observation(x, y, yaw, spd, dest, road, neigh)
        pc, po = classifier_predict_rec(rec, phi, obs0)
        if col and off:
            term = rec.add(pc, po)
        else:
            term = pc if col else po
        if gamma != 1.0:
            term = rec.mul(term, rec.const(gamma ** (t - 1)))
        terms.append(term)
    rollout.event_counts = (n_col, n_off)
    if not terms:
        return rec.const(0.0)
    return rec.mul(rec.sum(terms), rec.const(1.0 / T))


@dataclass(frozen=True)
class PlanDiagnostics:
    n_policy_calls: int
    n_backward: int
    grad_norms: np.ndarray  # (K,), nan where no gradient was taken
    refined: np.ndarray  # (K, M, 2) candidate actions, zeros for invalid
    trajectories: np.ndarray  # (K, T+1, 2) imagined ego paths, nan-padded
    event_counts: Optional[tuple]  # per-rollout counts when the loss set them


@dataclass(frozen=True)
class PlanResult:
    actions: tuple  # M executed-candidate Actions
    weights: np.ndarray  # (K,), zero for invalid rollouts
    losses: np.ndarray  # (K,), nan for invalid rollouts
    valid: tuple
    diagnostics: PlanDiagnostics


def _attach_loss(rollout, loss_fn):
    if not rollout.valid:
        return
    try:
        rollout.loss_id = loss_fn(rollout)
        rollout.loss = float(rollout.rec.value(rollout.loss_id))
    except OverflowError as exc:
        rollout.valid = False
        rollout.fail_reason = str(exc)
        return
    if not math.isfinite(rollout.loss):
        rollout.valid = False
        rollout.fail_reason = "non-finite rollout loss"


def plan(s0: SimState, hiddens, params, loss_fn: Callable, cfg: PlanConfig,
         *, obs_config: Optional[ObsConfig] = None, plan_index: int = 0,
         noise_streams: Optional[list] = None) -> PlanResult:
    """One planning cycle: imagine K rollouts, score them, refine the
    first M ego actions along the loss gradient, and softmax-average the
    candidates. Invalid rollouts keep zero weight; if every rollout is
    invalid the plan fails."""
    ocfg = obs_config or ObsConfig()
    n = len(s0.agents)
    K, T, M = cfg.K, cfg.T, cfg.M
    if noise_streams is not None and len(noise_streams) != K:
        raise ValueError("need one noise stream per rollout")
    p32 = params_f32(params) if n > 1 else None

    def stream(k):
        if noise_streams is not None and noise_streams[k] is not None:
            return noise_streams[k]
        return draw_rollout_noise(cfg.seed, plan_index, k, T, n)

    modes = ["mean" if (cfg.mean_first and k == 0) else "sample"
             for k in range(K)]
    rollouts = []
    n_calls = 0
    for k in range(K):
        noise = stream(k) if modes[k] == "sample" else None
        r = imagine_rollout(s0, hiddens, params, T, modes[k], noise=noise,
                            obs_config=ocfg, p32=p32)
        n_calls += r.n_policy_calls
        _attach_loss(r, loss_fn)
        rollouts.append(r)

    eta = np.asarray(cfg.eta, dtype=np.float64)
    refine = bool(eta.any())
    refined = np.zeros((K, M, 2))
    for k, r in enumerate(rollouts):
        if r.valid:
            refined[k] = r.actions[:M]
    grad_norms = np.full(K, math.nan)
    n_backward = 0
    if refine:
        for gs in range(cfg.grad_steps):
            for k, r in enumerate(rollouts):
                if not r.valid:
                    continue
                try:
                    r.rec.backward(r.loss_id)
                except ValueError as exc:
                    r.valid = False
                    r.fail_reason = "non-finite gradient: %s" % exc
                    refined[k] = 0.0
                    continue
                n_backward += 1
                g = np.array([[r.rec.adjoint(r.act_nodes[t, 0]),
                               r.rec.adjoint(r.act_nodes[t, 1])]
                              for t in range(M)])
                if not np.isfinite(g).all():
                    r.valid = False
                    r.fail_reason = "non-finite action gradient"
                    refined[k] = 0.0
                    continue
                grad_norms[k] = float(np.sqrt((g * g).sum()))
                new = refined[k] - eta * g
                new[:, 0] = np.clip(new[:, 0], ACCEL_MIN, ACCEL_MAX)
                new[:, 1] = np.clip(new[:, 1], -STEER_MAX, STEER_MAX)
                refined[k] = new
            if gs == cfg.grad_steps - 1:
                break
            # regenerate from the refined open-loop prefix so the next
            # gradient sees the losses those actions actually produce
            for k, r in enumerate(rollouts):
                if not r.valid:
                    continue
                noise = stream(k) if modes[k] == "sample" else None
                r2 = imagine_rollout(s0, hiddens, params, T, modes[k],
                                     noise=noise, open_loop=refined[k],
                                     obs_config=ocfg, p32=p32)
                n_calls += r2.n_policy_calls
                _attach_loss(r2, loss_fn)
                rollouts[k] = r2
                if not r2.valid:
                    refined[k] = 0.0

    alive = [k for k in range(K) if rollouts[k].valid]
    if not alive:
        raise RuntimeError(
            "all %d rollouts invalid (last failure: %s)"
            % (K, rollouts[-1].fail_reason))
    losses = np.array([r.loss if r.valid else math.nan for r in rollouts])
    weights = np.zeros(K)
    zs = losses[alive]
    e = np.exp((zs.min() - zs) / cfg.tau)  # largest exponent is exactly 0
    weights[alive] = e / e.sum()

    actions = []
    for t in range(M):
        acc = float(np.dot(weights, refined[:, t, 0]))
        steer = float(np.dot(weights, refined[:, t, 1]))
        actions.append(Action(acc, steer).clamped())

    horizon = max(len(r.states) for r in rollouts)
    trajectories = np.full((K, horizon, 2), math.nan)
    for k, r in enumerate(rollouts):
        egoi = r.states[0].ego_index
        for i, st in enumerate(r.states):
            a = st.agents[egoi]
            trajectories[k, i] = (a.x, a.y)
    counts = tuple(r.event_counts for r in rollouts)
    diag = PlanDiagnostics(
        n_policy_calls=n_calls, n_backward=n_backward,
        grad_norms=grad_norms, refined=refined, trajectories=trajectories,
        event_counts=counts if any(c is not None for c in counts) else None)
    return PlanResult(actions=tuple(actions), weights=weights, losses=losses,
                      valid=tuple(r.valid for r in rollouts),
                      diagnostics=diag)


@dataclass(frozen=True)
class ControlResult:
    positions: np.ndarray  # (L+1, 2) executed ego positions
    actions: np.ndarray  # (L, 2) executed ego actions
    ade: float
    collision: bool
    offroad: bool
    n_plan_calls: int
    n_policy_calls: int
    n_backward: int


def control_loop(scenario, params, cfg: PlanConfig, *, loss: str = "tracking",
                 phi=None, obs_config: Optional[ObsConfig] = None
                 ) -> ControlResult:
    """Plan-execute-replan over a full scenario.

    Every cfg.M steps (fewer at the very end) a fresh plan is built from
    the current physical state; its actions drive the ego through
    step_sim while the other agents replay their logs. Policy hidden
    states for every agent advance along the physical trajectory and are
    cloned into each planning call. The tracking loss scores rollouts
    against the expert ego log; the guided loss needs trained classifier
    weights.
    """
    if loss not in ("tracking", "guided"):
        raise ValueError("loss must be tracking or guided")
    if loss == "guided" and phi is None:
        raise ValueError("the guided loss needs classifier weights")
    ocfg = obs_config or ObsConfig()
    egoi = scenario.ego_index
    L = scenario.horizon
    track = scenario.tracks[egoi]
    log_complete = all(bool(v) for v in track.valid)
    if loss == "tracking" and not log_complete:
        raise ValueError("tracking needs a complete expert ego log")
    expert = np.array([(s.x, s.y) for s in track.states])
    n = len(scenario.tracks)
    state = SimState(agents=tuple(tr.states[0] for tr in scenario.tracks),
                     t=0, ego_index=egoi, scenario=scenario)
    hiddens = [zero_hidden(params.hidden) for _ in range(n)]
    positions = [(state.agents[egoi].x, state.agents[egoi].y)]
    executed = []
    visited = []
    n_plans = 0
    n_calls = 0
    n_back = 0
    t0 = 0
    plan_index = 0
    while t0 < L:
        m_eff = min(cfg.M, L - t0)
        if loss == "tracking":
            n_cov = min(cfg.T, L - t0)
            window = expert[t0 + 1:t0 + 1 + n_cov]
            loss_fn = (lambda r, w=window:
                       tracking_loss(r, w, gamma=cfg.gamma))
        else:
            loss_fn = (lambda r:
                       classifier_guided_loss(r, phi, gamma=cfg.gamma,
                                              obs_config=ocfg))
        res = plan(state, hiddens, params, loss_fn, cfg, obs_config=ocfg,
                   plan_index=plan_index)
        n_plans += 1
        n_calls += res.diagnostics.n_policy_calls
        n_back += res.diagnostics.n_backward
        for i in range(m_eff):
            rows = observe_batch(state, range(n), ocfg)
            for j in range(n):
                _, hj = policy_step(params, hiddens[j], rows[j])
                hiddens[j] = hj
            act = res.actions[i]
            state = step_sim(state, act)
            ego = state.agents[egoi]
            executed.append((act.accel, act.steer))
            positions.append((ego.x, ego.y))
            visited.append(state)
        t0 += m_eff
        plan_index += 1
    positions = np.array(positions)
    col = any(collision_flag(s, egoi) for s in visited)
    off = any(offroad_flag(s.agents[egoi], (track.length, track.width),
                           scenario.roadgraph) for s in visited)
    score = (ade(positions[1:], expert[1:]) if log_complete else math.nan)
    return ControlResult(positions=positions,
                         actions=np.array(executed), ade=score,
                         collision=bool(col), offroad=bool(off),
                         n_plan_calls=n_plans, n_policy_calls=n_calls,
                         n_backward=n_back)

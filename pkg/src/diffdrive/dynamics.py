"""Kinematic bicycle dynamics: the hardcoded next-state predictor.

One agent advances by an explicit Euler step that integrates position with
the pre-step speed, then updates yaw and speed:

    x' = x + v cos(yaw) dt          yaw' = wrap(yaw + v tan(steer)/wb dt)
    y' = y + v sin(yaw) dt          v'   = clamp(v + accel dt, 0, v_max)

The plain and the recorded step share the backend's inner routine, so a
trajectory evaluated with gradients enabled reproduces the plain one bit
for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from diffdrive import backend
from diffdrive.gradcore import wrap_angle

DT = 0.1
WHEELBASE = 2.8
V_MAX = 30.0
ACCEL_MIN = -8.0
ACCEL_MAX = 6.0
STEER_MAX = 0.6

__all__ = [
    "DT", "WHEELBASE", "V_MAX", "ACCEL_MIN", "ACCEL_MAX", "STEER_MAX",
    "AgentState", "Action", "SimState", "step_agent", "step_agents_arrays",
    "step_agent_rec", "step_sim", "wrap_angle",
]


class AgentState(NamedTuple):
    # a NamedTuple, not a dataclass: planning builds tens of thousands per
    # scenario and tuple construction is several times cheaper
    x: float
    y: float
    yaw: float
    speed: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw, self.speed])


class Action(NamedTuple):
    accel: float
    steer: float

    def clamped(self) -> "Action":
        c = backend.core.clampd
        return Action(c(self.accel, ACCEL_MIN, ACCEL_MAX),
                      c(self.steer, -STEER_MAX, STEER_MAX))


@dataclass(frozen=True)
class SimState:
    """All agents at one timestep; ego sits at ego_index.

    scenario carries the logged tracks used by replay mode; imagination
    never touches it.
    """

    agents: tuple
    t: int
    ego_index: int
    scenario: Optional[object] = None


def step_agent(state: AgentState, action: Action, dt: float = DT,
               wheelbase: float = WHEELBASE,
               v_max: float = V_MAX) -> AgentState:
    # scalar checks: this sits on the per-agent hot path
    if not (math.isfinite(state.x) and math.isfinite(state.y) and
            math.isfinite(state.yaw) and math.isfinite(state.speed)):
        raise OverflowError("non-finite agent state")
    if not (math.isfinite(action.accel) and math.isfinite(action.steer)):
        raise OverflowError("non-finite action")
    out = backend.core.bicycle_plain(state.as_array(), action.accel,
                                     action.steer, dt, wheelbase, v_max)
    return AgentState(float(out[0]), float(out[1]), float(out[2]),
                      float(out[3]))


def step_agents_arrays(S: np.ndarray, A: np.ndarray, dt: float = DT,
                       wheelbase: float = WHEELBASE,
                       v_max: float = V_MAX) -> np.ndarray:
    """Vectorized step_agent over (x, y, yaw, speed) rows with pre-clamped
    (accel, steer) rows. Same update rule through numpy ufuncs, which may
    differ from the scalar kernel in the last ulp; used for imagined
    background agents only."""
    if not (np.isfinite(S).all() and np.isfinite(A).all()):
        raise OverflowError("non-finite agent state")
    X, Y, YAW, V = S[:, 0], S[:, 1], S[:, 2], S[:, 3]
    out = np.empty_like(S)
    out[:, 0] = X + (V * np.cos(YAW)) * dt
    out[:, 1] = Y + (V * np.sin(YAW)) * dt
    yw = YAW + ((V * np.tan(A[:, 1])) / wheelbase) * dt
    out[:, 2] = np.arctan2(np.sin(yw), np.cos(yw))
    out[:, 3] = np.clip(V + A[:, 0] * dt, 0.0, v_max)
    return out


def step_agent_rec(rec, state_ids, action_ids, dt: float = DT,
                   wheelbase: float = WHEELBASE, v_max: float = V_MAX):
    """Recorded twin of step_agent; returns the four next-state node ids."""
    return rec.bicycle(state_ids[0], state_ids[1], state_ids[2],
                       state_ids[3], action_ids[0], action_ids[1],
                       dt, wheelbase, v_max)


def step_sim(state: SimState, ego_action: Action,
             other_actions: Optional[Sequence[Optional[Action]]] = None,
             ) -> SimState:
    """Advance every agent one step and increment t.

    With other_actions None the non-ego agents copy their logged states at
    t+1 exactly (physical execution); otherwise other_actions is a
    per-agent list aligned with state.agents (the ego slot is ignored) and
    every agent advances through step_agent (imagination).
    """
    n = len(state.agents)
    ego = state.ego_index
    tn = state.t + 1
    agents = list(state.agents)
    agents[ego] = step_agent(state.agents[ego], ego_action.clamped())
    if other_actions is None:
        sc = state.scenario
        if sc is None:
            raise ValueError("replay mode needs a scenario with logs")
        for i in range(n):
            if i == ego:
                continue
            track = sc.tracks[i]
            if tn >= len(track.states) or not track.valid[tn]:
                raise ValueError(
                    "missing log entry for agent %d at t=%d" % (i, tn))
            agents[i] = track.states[tn]
    else:
        if len(other_actions) != n:
            raise ValueError("need one action slot per agent (%d != %d)"
                             % (len(other_actions), n))
        for i in range(n):
            if i == ego:
                continue
            act = other_actions[i]
            if act is None:
                raise ValueError("missing action for agent %d" % i)
            agents[i] = step_agent(state.agents[i], act.clamped())
    return SimState(agents=tuple(agents), t=tn, ego_index=ego,
                    scenario=state.scenario)

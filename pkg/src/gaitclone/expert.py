"""Step-adaptive expert controller.

Every control tick the expert measures the DCM, re-solves the step QP for
the next footstep location and step time, regenerates the swing-foot
setpoint (quintic in the plane, sine bump vertically, re-anchored to the
latest plan), holds the CoM height reference, schedules the running thrust
pulse, and publishes both the plant action and the contact plan that the
learned policies are conditioned on.

The heavy lifting happens in the jitted kernels in ``rollout``; this module
is the dataclass face plus the episode driver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rollout as rk
from .dcm import GaitParams, nominal_references, stance_start_offsets
from .plant import (
    Action, ContactMode, Gait, PlantParams, PlantState,
    LEFT, RIGHT, N_ACTION, N_STATE, S_TPLAN,
    write_trajectory_csv,
)

__all__ = [
    "Command",
    "ContactPlan",
    "GoalCC",
    "GoalTCC",
    "GoalVC",
    "ExpertConfig",
    "Expert",
    "expert_tick",
    "build_goals",
    "run_expert_episode",
    "Trajectory",
    "make_initial_state",
]


@dataclass(frozen=True)
class Command:
    """Desired average velocity (2D, heading frame) and gait."""

    v_d: np.ndarray
    gait: Gait

    @classmethod
    def of(cls, vx: float, vy: float = 0.0, gait: Gait = Gait.WALK) -> "Command":
        return cls(v_d=np.array([float(vx), float(vy)]), gait=gait)


@dataclass
class ContactPlan:
    """Planned next contact, time remaining to it, and the heuristic second
    contact. ``anchor`` is the stance foot the relative goals refer to."""

    p_next: np.ndarray
    t_rem: float
    p_next2: np.ndarray
    t_next2: float
    anchor: np.ndarray


@dataclass
class GoalCC:
    p_next: np.ndarray   # relative to stance anchor
    t_rem: float

    def vector(self) -> np.ndarray:
        return np.array([self.p_next[0], self.p_next[1], self.t_rem])


@dataclass
class GoalTCC:
    p_next: np.ndarray
    t_rem: float
    p_next2: np.ndarray
    t_next2: float

    def vector(self) -> np.ndarray:
        return np.array([self.p_next[0], self.p_next[1], self.t_rem,
                         self.p_next2[0], self.p_next2[1], self.t_next2])


@dataclass
class GoalVC:
    v_d: np.ndarray
    gait_onehot: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.v_d, self.gait_onehot])


@dataclass(frozen=True)
class ExpertConfig:
    """Planner cost weights and trajectory-shaping knobs."""

    w_u: float = 1.0
    w_tau: float = 5.0
    w_b: float = 1000.0
    z_apex: float = 0.05
    thrust_window: float = 0.06
    thrust_margin: float = 1.15
    z_drive: float = 0.03
    dive_lead: float = 0.03
    xy_arrive: float = 0.85
    thrust_gate_v: float = 0.45
    v_jitter: float = 0.02

    def pack(self) -> np.ndarray:
        return np.array([self.w_u, self.w_tau, self.w_b, self.z_apex,
                         self.thrust_window, self.thrust_margin,
                         self.z_drive, self.dive_lead, self.xy_arrive,
                         self.thrust_gate_v])


def _gpack_pair(cmd: Command, gp: GaitParams) -> np.ndarray:
    out = np.empty((2, 18))
    out[LEFT] = nominal_references(cmd.v_d, cmd.gait, LEFT, gp).pack()
    out[RIGHT] = nominal_references(cmd.v_d, cmd.gait, RIGHT, gp).pack()
    return out


class Expert:
    """Stateful per-episode controller instance.

    Holds the receding-horizon plan, the swing-foot liftoff anchors, and the
    feasibility fallback counter. One instance per episode; episodes never
    share state.
    """

    def __init__(self, plant: PlantParams | None = None,
                 gaits: GaitParams | None = None,
                 config: ExpertConfig | None = None):
        self.plant = plant or PlantParams()
        self.gaits = gaits or GaitParams(omega=self.plant.omega)
        self.config = config or ExpertConfig()
        self._pp = self.plant.pack()
        self._econ = self.config.pack()
        self.exp = np.zeros(rk.N_EXP)
        self._cmd_key = None
        self._gpacks = None

    def _packs_for(self, cmd: Command) -> np.ndarray:
        key = (float(cmd.v_d[0]), float(cmd.v_d[1]), int(cmd.gait))
        if key != self._cmd_key:
            self._gpacks = _gpack_pair(cmd, self.gaits)
            self._cmd_key = key
        return self._gpacks

    def reset(self, state: PlantState, cmd: Command):
        """Sync the registers to a state at (or just after) a touchdown."""
        if state.mode == ContactMode.FLIGHT:
            raise ValueError("expert reset requires a stance state")
        packs = self._packs_for(cmd)
        side = int(state.mode)
        swing = state.swing_side
        nom = packs[side]
        e = self.exp
        e[:] = 0.0
        e[rk.X_ANCHX] = state.foot_pos[side][0]
        e[rk.X_ANCHY] = state.foot_pos[side][1]
        e[rk.X_UNX] = e[rk.X_ANCHX] + nom[5]
        e[rk.X_UNY] = e[rk.X_ANCHY] + nom[6]
        e[rk.X_TNEXT] = nom[0]
        e[rk.X_TREM] = nom[0] + nom[1]
        e[rk.X_LIFTX:rk.X_LIFTZ + 1] = state.foot_pos[swing]
        e[rk.X_AIR] = nom[1]  # in running the swing foot lifted one flight ago
        e[rk.X_BX], e[rk.X_BY] = nom[3], nom[4]

    def tick(self, state: PlantState, cmd: Command) -> tuple[Action, ContactPlan]:
        """Plan for the given state; mutates state.t_planned and internal
        registers. Call once per plant tick, then feed the plant events back
        through ``observe``."""
        packs = self._packs_for(cmd)
        s = state.to_array()
        a = np.empty(N_ACTION)
        plan = np.empty(6)
        sol = np.empty(9)
        rk.expert_tick_kernel(s, self.exp, cmd.v_d[0], cmd.v_d[1],
                              int(cmd.gait), packs, self._pp, self._econ,
                              a, plan, sol)
        state.t_planned = float(s[S_TPLAN])
        action = Action.from_array(a)
        cplan = ContactPlan(
            p_next=plan[0:2].copy(),
            t_rem=float(plan[2]),
            p_next2=plan[3:5].copy(),
            t_next2=float(plan[5]),
            anchor=self.exp[rk.X_ANCHX:rk.X_ANCHY + 1].copy(),
        )
        return action, cplan

    def observe(self, state: PlantState, events, pre_mode: ContactMode):
        """Post-step bookkeeping: swing liftoff captures and air time."""
        s = state.to_array()
        ev = np.zeros(9)
        if events.takeoff is not None:
            ev[4] = 1.0
        if events.touchdown is not None:
            ev[0] = 1.0
            ev[1] = float(events.touchdown[0])
            ev[2], ev[3] = events.touchdown[1]
        rk.post_step_update(s, self.exp, ev, self._pp, int(pre_mode))

    @property
    def infeasible_count(self) -> int:
        return int(self.exp[rk.X_INFEAS])


def expert_tick(state: PlantState, cmd: Command,
                plant: PlantParams | None = None,
                gaits: GaitParams | None = None,
                config: ExpertConfig | None = None) -> tuple[Action, ContactPlan]:
    """Single stateless planning call for a stance state.

    Convenience for tests and inspection; closed-loop use wants the stateful
    ``Expert`` so swing anchors and held flight plans survive across ticks.
    """
    expert = Expert(plant, gaits, config)
    expert.reset(state, cmd)
    return expert.tick(state, cmd)


def build_goals(plan: ContactPlan, cmd: Command) -> tuple[GoalCC, GoalTCC, GoalVC]:
    """The three conditioning vectors, all derived from the same plan and
    expressed relative to the plan's stance anchor."""
    rel_next = plan.p_next - plan.anchor
    rel_next2 = plan.p_next2 - plan.anchor
    onehot = np.array([1.0, 0.0]) if cmd.gait == Gait.WALK else np.array([0.0, 1.0])
    return (
        GoalCC(p_next=rel_next, t_rem=plan.t_rem),
        GoalTCC(p_next=rel_next, t_rem=plan.t_rem,
                p_next2=rel_next2, t_next2=plan.t_next2),
        GoalVC(v_d=cmd.v_d.copy(), gait_onehot=onehot),
    )


def make_initial_state(cmd: Command, plant: PlantParams, gaits: GaitParams,
                       rng: np.random.Generator | None = None,
                       v_jitter: float = 0.0) -> PlantState:
    """Left-stance touchdown state on the periodic orbit of ``cmd``.

    Optional seeded velocity jitter diversifies collection episodes without
    breaking determinism.
    """
    delta, gamma = stance_start_offsets(cmd.v_d, cmd.gait, LEFT, gaits)
    w = gaits.step_width
    u_l = np.array([0.0, w / 2.0])
    xi0 = u_l + delta
    ze0 = u_l + gamma
    com_xy = (xi0 + ze0) / 2.0
    vel_xy = plant.omega * (xi0 - ze0) / 2.0
    if rng is not None and v_jitter > 0.0:
        vel_xy = vel_xy + rng.uniform(-v_jitter, v_jitter, 2)
    t_f = gaits.run_t_f if cmd.gait == Gait.RUN else 0.0
    vz0 = -plant.gravity * t_f / 2.0
    # the swing (right) foot starts at its previous nominal stance spot
    du_r = nominal_references(cmd.v_d, cmd.gait, RIGHT, gaits).u_nom_offset
    r_foot = np.array([u_l[0] - du_r[0], u_l[1] - du_r[1], 0.0])
    state = PlantState(
        com_pos=np.array([com_xy[0], com_xy[1], plant.h_nom]),
        com_vel=np.array([vel_xy[0], vel_xy[1], vz0]),
        foot_pos=np.stack([np.array([u_l[0], u_l[1], 0.0]), r_foot]),
        foot_vel=np.zeros((2, 3)),
        mode=ContactMode.LEFT_STANCE,
        gait=cmd.gait,
        swing_side=RIGHT,
        t_planned=gaits.run_t_nom if cmd.gait == Gait.RUN else gaits.walk_t_nom,
    )
    return state


@dataclass
class Trajectory:
    """Everything one closed-loop episode produced."""

    dt: float
    ticks: int
    feat: np.ndarray            # (ticks, 31) shared | goals | action rows
    aux: np.ndarray             # (ticks, 8) mode, anchor, events, cmd index
    steps: np.ndarray           # (n_steps, 9) touchdown records
    failure: int                # 0 none, 1 velocity, 2 height
    fail_tick: int
    expected_duration: float
    commands: list[Command] = field(default_factory=list)
    switch_times: np.ndarray | None = None
    infeasible_count: int = 0
    full_states: np.ndarray | None = None
    full_actions: np.ndarray | None = None
    initial_com: np.ndarray | None = None

    @property
    def survived(self) -> bool:
        return self.failure == 0

    @property
    def survival_time(self) -> float:
        if self.failure == 0:
            return self.expected_duration
        return self.ticks * self.dt

    def write_csv(self, path):
        if self.full_states is None:
            raise ValueError("episode was run without full state recording")
        n = self.ticks
        times = np.arange(n) * self.dt
        events = np.zeros((n, 9))
        events[:, 0] = self.aux[:n, rk.AUX_TD]
        events[:, 4] = self.aux[:n, rk.AUX_TO]
        write_trajectory_csv(path, times, self.full_states[:n],
                             self.full_actions[:n], events)


def _command_schedule(tuples, heading: float) -> tuple[np.ndarray, list[Command]]:
    cmds = np.zeros((len(tuples), 4))
    objs = []
    t_end = 0.0
    c, s = math.cos(heading), math.sin(heading)
    for i, (v_d, t_d, gait) in enumerate(tuples):
        t_end += float(t_d)
        cmds[i, 0] = float(v_d) * c
        cmds[i, 1] = float(v_d) * s
        cmds[i, 2] = float(int(gait))
        cmds[i, 3] = t_end
        objs.append(Command(v_d=cmds[i, 0:2].copy(), gait=Gait(int(gait))))
    return cmds, objs


def run_episode(tuples, seed: int = 0, heading: float = 0.0,
                plant: PlantParams | None = None,
                gaits: GaitParams | None = None,
                config: ExpertConfig | None = None,
                policy=None, record_full: bool = False) -> Trajectory:
    """Closed-loop rollout over a command-tuple sequence.

    ``policy`` None runs the expert's own actions; otherwise a tagged Mlp
    supplies actions while the expert planner keeps generating goals from
    the policy-driven state.
    """
    plant = plant or PlantParams()
    gaits = gaits or GaitParams(omega=plant.omega)
    config = config or ExpertConfig()
    if not tuples:
        raise ValueError("tuple sequence must be non-empty")
    cmds, cmd_objs = _command_schedule(tuples, heading)
    gpacks = np.empty((len(tuples), 2, 18))
    for i, cobj in enumerate(cmd_objs):
        gpacks[i] = _gpack_pair(cobj, gaits)

    rng = np.random.default_rng([seed, 0x5eed]) if seed is not None else None
    state = make_initial_state(cmd_objs[0], plant, gaits, rng=rng,
                               v_jitter=config.v_jitter)
    expert = Expert(plant, gaits, config)
    expert.reset(state, cmd_objs[0])

    expected = float(cmds[-1, 3])
    max_ticks = int(round(expected / plant.dt))
    feat = np.zeros((max_ticks, rk.N_FEAT))
    aux = np.zeros((max_ticks, rk.N_AUX))
    steps = np.zeros((max(64, int(expected / gaits.t_min) + 8), rk.N_STEP))
    if record_full:
        full_s = np.zeros((max_ticks, N_STATE))
        full_a = np.zeros((max_ticks, N_ACTION))
    else:
        full_s = np.zeros((1, N_STATE))
        full_a = np.zeros((1, N_ACTION))

    if policy is None:
        kind = rk.POLICY_EXPERT
        dummy = np.zeros(1)
        ddims = np.array([1, 1], dtype=np.int64)
        args = (dummy, ddims, dummy, np.ones(1), dummy, np.ones(1))
    else:
        kind = {"cc": rk.POLICY_CC, "tcc": rk.POLICY_TCC, "vc": rk.POLICY_VC}[policy.tag]
        args = (policy.params, policy.dims_array(), policy.in_mean,
                policy.in_std, policy.out_mean, policy.out_std)

    s = state.to_array()
    ticks, n_steps, fail, fail_tick = rk.run_episode_kernel(
        s, expert.exp, cmds, gpacks, plant.pack(), config.pack(), kind,
        *args, feat, aux, steps, full_s, full_a,
        1 if record_full else 0, max_ticks)
    if fail == rk.FAIL_NONFINITE:
        raise ValueError("non-finite state or action inside episode rollout")

    return Trajectory(
        dt=plant.dt,
        ticks=int(ticks),
        feat=feat[:ticks],
        aux=aux[:ticks],
        steps=steps[:n_steps],
        failure=int(fail),
        fail_tick=int(fail_tick),
        expected_duration=expected,
        commands=cmd_objs,
        switch_times=cmds[:, 3].copy(),
        infeasible_count=expert.infeasible_count,
        full_states=full_s[:ticks] if record_full else None,
        full_actions=full_a[:ticks] if record_full else None,
        initial_com=state.com_pos.copy(),
    )


def run_expert_episode(tuples, seed: int = 0, heading: float = 0.0,
                       plant: PlantParams | None = None,
                       gaits: GaitParams | None = None,
                       config: ExpertConfig | None = None,
                       record_full: bool = False) -> Trajectory:
    """Expert rollout: switch commands at each duration boundary, record
    shared state, all three goal vectors and the expert action every tick,
    stop at the schedule end or on failure."""
    return run_episode(tuples, seed=seed, heading=heading, plant=plant,
                       gaits=gaits, config=config, policy=None,
                       record_full=record_full)

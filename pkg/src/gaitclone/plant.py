"""Point-mass biped plant stepped at 1 kHz.

The trunk is a point mass, the two feet are massless points. In single
stance the horizontal CoM follows linear-inverted-pendulum dynamics about
the stance foot, the vertical CoM follows a PD on a height setpoint plus
an optional thrust feedforward. Contact is unilateral: the moment the
commanded vertical ground-reaction acceleration goes non-positive the
plant switches to ballistic flight. Swing feet are servoed to the action's
target with a clamped PD. Touchdown of the swing foot exchanges support.

All hot-path arithmetic lives in numba kernels over flat float64 arrays;
the dataclasses here are the public face used by tests and callers that
step the plant directly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from numba import njit

__all__ = [
    "ContactMode",
    "Gait",
    "FailureKind",
    "PlantParams",
    "PlantState",
    "Action",
    "StepEvents",
    "step_plant",
    "detect_failure",
]


class ContactMode(IntEnum):
    LEFT_STANCE = 0
    RIGHT_STANCE = 1
    FLIGHT = 2


class Gait(IntEnum):
    WALK = 0
    RUN = 1


class FailureKind(IntEnum):
    VELOCITY = 1
    HEIGHT = 2


LEFT, RIGHT = 0, 1

# state vector layout (flat float64, used by every kernel)
S_COM, S_VEL = 0, 3
S_LF, S_LFV = 6, 9
S_RF, S_RFV = 12, 15
S_MODE, S_GAIT, S_TPH, S_STEPI, S_PHASE, S_TPLAN, S_SWING = 18, 19, 20, 21, 22, 23, 24
N_STATE = 25

# params vector layout
P_MASS, P_G, P_HNOM, P_OMEGA, P_KZ, P_DZ = 0, 1, 2, 3, 4, 5
P_KSW, P_DSW, P_ASWMAX, P_LMAX, P_TDB, P_DT, P_TRAIL = 6, 7, 8, 9, 10, 11, 12
N_PPARAM = 13

# action vector layout: swing target xyz, height setpoint, vertical thrust
A_TX, A_TY, A_TZ, A_HREF, A_THR = 0, 1, 2, 3, 4
N_ACTION = 5

# events vector layout
E_TD, E_TD_SIDE, E_TD_X, E_TD_Y = 0, 1, 2, 3
E_TO, E_TO_VX, E_TO_VY, E_TO_VZ = 4, 5, 6, 7
E_ERR = 8
N_EVENT = 9

PHASE_EPS = 1e-6


@dataclass(frozen=True)
class PlantParams:
    """Physical constants and servo gains of the plant.

    ``omega`` is always sqrt(gravity / h_nom); it is derived, never set.
    ``dt`` is pinned to 1 ms, the rate the whole pipeline runs at.
    """

    mass: float = 1.3
    gravity: float = 9.81
    h_nom: float = 0.35
    kz: float = 100.0
    dz: float = 20.0
    k_sw: float = 6400.0
    d_sw: float = 160.0
    a_sw_max: float = 800.0
    l_max: float = 0.45
    t_db: float = 0.05
    dt: float = 0.001
    trail_clearance: float = 0.04

    def __post_init__(self):
        if self.dt != 0.001:
            raise ValueError(f"plant runs at 1 kHz; dt must be 0.001, got {self.dt}")
        for name in ("mass", "gravity", "h_nom", "kz", "dz", "k_sw", "d_sw",
                     "a_sw_max", "l_max", "t_db"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"PlantParams.{name} must be > 0")

    @property
    def omega(self) -> float:
        return math.sqrt(self.gravity / self.h_nom)

    def pack(self) -> np.ndarray:
        p = np.empty(N_PPARAM)
        p[P_MASS] = self.mass
        p[P_G] = self.gravity
        p[P_HNOM] = self.h_nom
        p[P_OMEGA] = self.omega
        p[P_KZ] = self.kz
        p[P_DZ] = self.dz
        p[P_KSW] = self.k_sw
        p[P_DSW] = self.d_sw
        p[P_ASWMAX] = self.a_sw_max
        p[P_LMAX] = self.l_max
        p[P_TDB] = self.t_db
        p[P_DT] = self.dt
        p[P_TRAIL] = self.trail_clearance
        return p


@dataclass
class PlantState:
    """Full simulator state.

    ``t_planned`` holds the controller's current step-duration plan and only
    feeds the phase variable; the plant itself never reads it for dynamics.
    ``swing_side`` is the foot that will make the next touchdown (in stance
    it is the non-stance foot, in flight it keeps its pre-takeoff value).
    """

    com_pos: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.35]))
    com_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    foot_pos: np.ndarray = field(default_factory=lambda: np.zeros((2, 3)))
    foot_vel: np.ndarray = field(default_factory=lambda: np.zeros((2, 3)))
    mode: ContactMode = ContactMode.LEFT_STANCE
    gait: Gait = Gait.WALK
    t_in_phase: float = 0.0
    step_index: int = 0
    phase: float = 0.0
    t_planned: float = 0.3
    swing_side: int = RIGHT

    def to_array(self) -> np.ndarray:
        s = np.empty(N_STATE)
        s[S_COM:S_COM + 3] = self.com_pos
        s[S_VEL:S_VEL + 3] = self.com_vel
        s[S_LF:S_LF + 3] = self.foot_pos[LEFT]
        s[S_LFV:S_LFV + 3] = self.foot_vel[LEFT]
        s[S_RF:S_RF + 3] = self.foot_pos[RIGHT]
        s[S_RFV:S_RFV + 3] = self.foot_vel[RIGHT]
        s[S_MODE] = float(self.mode)
        s[S_GAIT] = float(self.gait)
        s[S_TPH] = self.t_in_phase
        s[S_STEPI] = float(self.step_index)
        s[S_PHASE] = self.phase
        s[S_TPLAN] = self.t_planned
        s[S_SWING] = float(self.swing_side)
        return s

    @classmethod
    def from_array(cls, s: np.ndarray) -> "PlantState":
        return cls(
            com_pos=s[S_COM:S_COM + 3].copy(),
            com_vel=s[S_VEL:S_VEL + 3].copy(),
            foot_pos=np.stack([s[S_LF:S_LF + 3], s[S_RF:S_RF + 3]]).copy(),
            foot_vel=np.stack([s[S_LFV:S_LFV + 3], s[S_RFV:S_RFV + 3]]).copy(),
            mode=ContactMode(int(s[S_MODE])),
            gait=Gait(int(s[S_GAIT])),
            t_in_phase=float(s[S_TPH]),
            step_index=int(s[S_STEPI]),
            phase=float(s[S_PHASE]),
            t_planned=float(s[S_TPLAN]),
            swing_side=int(s[S_SWING]),
        )

    @property
    def stance_side(self) -> int | None:
        if self.mode == ContactMode.FLIGHT:
            return None
        return int(self.mode)


@dataclass
class Action:
    """Task-space setpoints: world-frame swing foot target, CoM height
    setpoint, vertical thrust feedforward (zero for walking)."""

    swing_target: np.ndarray
    h_ref: float
    a_thrust: float = 0.0

    def to_array(self) -> np.ndarray:
        a = np.empty(N_ACTION)
        a[A_TX:A_TZ + 1] = self.swing_target
        a[A_HREF] = self.h_ref
        a[A_THR] = self.a_thrust
        return a

    @classmethod
    def from_array(cls, a: np.ndarray) -> "Action":
        return cls(swing_target=a[:3].copy(), h_ref=float(a[A_HREF]),
                   a_thrust=float(a[A_THR]))


@dataclass
class StepEvents:
    touchdown: tuple[int, np.ndarray] | None = None   # (side, xy)
    takeoff: np.ndarray | None = None                 # CoM velocity entering flight
    failure: FailureKind | None = None

    @classmethod
    def from_array(cls, ev: np.ndarray, failure: int = 0) -> "StepEvents":
        td = None
        if ev[E_TD] > 0.0:
            td = (int(ev[E_TD_SIDE]), ev[E_TD_X:E_TD_Y + 1].copy())
        to = None
        if ev[E_TO] > 0.0:
            to = ev[E_TO_VX:E_TO_VZ + 1].copy()
        return cls(touchdown=td, takeoff=to,
                   failure=FailureKind(failure) if failure else None)


@njit(cache=True, inline="always")
def _foot_pd(s, base, tx, ty, tz, ksw, dsw, amax, dt):
    ax = ksw * (tx - s[base]) - dsw * s[base + 3]
    ay = ksw * (ty - s[base + 1]) - dsw * s[base + 4]
    az = ksw * (tz - s[base + 2]) - dsw * s[base + 5]
    an = math.sqrt(ax * ax + ay * ay + az * az)
    if an > amax:
        k = amax / an
        ax *= k
        ay *= k
        az *= k
    s[base + 3] += ax * dt
    s[base + 4] += ay * dt
    s[base + 5] += az * dt
    s[base] += s[base + 3] * dt
    s[base + 1] += s[base + 4] * dt
    s[base + 2] += s[base + 5] * dt


@njit(cache=True, inline="always")
def _reach_clamp(s, base, lmax):
    dx = s[base] - s[S_COM]
    dy = s[base + 1] - s[S_COM + 1]
    dz = s[base + 2] - s[S_COM + 2]
    n = math.sqrt(dx * dx + dy * dy + dz * dz)
    if n > lmax:
        k = lmax / n
        s[base] = s[S_COM] + dx * k
        s[base + 1] = s[S_COM + 1] + dy * k
        s[base + 2] = s[S_COM + 2] + dz * k


@njit(cache=True)
def plant_tick(s, a, pp, ev):
    """One semi-implicit Euler step of the hybrid dynamics. Mutates ``s``.

    Sets ev[E_ERR] and leaves the state untouched when any input is not
    finite; the caller turns that into a hard error.
    """
    for i in range(N_EVENT):
        ev[i] = 0.0
    for i in range(N_ACTION):
        if not np.isfinite(a[i]):
            ev[E_ERR] = 1.0
            return
    for i in range(18):
        if not np.isfinite(s[i]):
            ev[E_ERR] = 1.0
            return

    dt = pp[P_DT]
    g = pp[P_G]
    mode = int(s[S_MODE])
    swing = int(s[S_SWING])
    tph0 = s[S_TPH]

    # CoM accelerations
    if mode == 2:
        acx, acy, acz = 0.0, 0.0, -g
    else:
        ub = S_LF if mode == 0 else S_RF
        w2 = pp[P_OMEGA] * pp[P_OMEGA]
        acx = w2 * (s[S_COM] - s[ub])
        acy = w2 * (s[S_COM + 1] - s[ub + 1])
        az_pd = pp[P_KZ] * (a[A_HREF] - s[S_COM + 2]) - pp[P_DZ] * s[S_VEL + 2] + a[A_THR]
        if az_pd + g <= 0.0:
            # unilateral contact: a pulling ground reaction is replaced by takeoff
            mode = 2
            s[S_MODE] = 2.0
            s[S_TPH] = 0.0
            ev[E_TO] = 1.0
            acx, acy, acz = 0.0, 0.0, -g
        else:
            acz = az_pd

    s[S_VEL] += acx * dt
    s[S_VEL + 1] += acy * dt
    s[S_VEL + 2] += acz * dt
    s[S_COM] += s[S_VEL] * dt
    s[S_COM + 1] += s[S_VEL + 1] * dt
    s[S_COM + 2] += s[S_VEL + 2] * dt

    if ev[E_TO] > 0.0:
        ev[E_TO_VX] = s[S_VEL]
        ev[E_TO_VY] = s[S_VEL + 1]
        ev[E_TO_VZ] = s[S_VEL + 2]

    # swing foot servo; in flight the trailing foot holds a clearance pose
    sb = S_LF if swing == 0 else S_RF
    _foot_pd(s, sb, a[A_TX], a[A_TY], a[A_TZ],
             pp[P_KSW], pp[P_DSW], pp[P_ASWMAX], dt)
    _reach_clamp(s, sb, pp[P_LMAX])
    if mode == 2:
        tb = S_RF if swing == 0 else S_LF
        _foot_pd(s, tb, s[S_COM], s[S_COM + 1], pp[P_TRAIL],
                 pp[P_KSW], pp[P_DSW], pp[P_ASWMAX], dt)
        _reach_clamp(s, tb, pp[P_LMAX])
        if s[tb + 2] < 0.0:
            s[tb + 2] = 0.0
            if s[tb + 5] < 0.0:
                s[tb + 5] = 0.0

    # touchdown: support exchange, debounced against the pre-tick phase time
    if s[sb + 2] <= 0.0 and s[sb + 5] < 0.0 and tph0 > pp[P_TDB]:
        ev[E_TD] = 1.0
        ev[E_TD_SIDE] = float(swing)
        ev[E_TD_X] = s[sb]
        ev[E_TD_Y] = s[sb + 1]
        s[sb + 2] = 0.0
        s[sb + 3] = 0.0
        s[sb + 4] = 0.0
        s[sb + 5] = 0.0
        s[S_MODE] = float(swing)
        s[S_SWING] = float(1 - swing)
        s[S_STEPI] += 1.0
        s[S_TPH] = 0.0
    elif s[sb + 2] < 0.0:
        s[sb + 2] = 0.0
        if s[sb + 5] < 0.0:
            s[sb + 5] = 0.0

    s[S_TPH] += dt
    tplan = s[S_TPLAN] if s[S_TPLAN] > dt else dt
    ph = s[S_TPH] / tplan
    if ph < 0.0:
        ph = 0.0
    if ph > 1.0 - PHASE_EPS:
        ph = 1.0 - PHASE_EPS
    s[S_PHASE] = ph


@njit(cache=True, inline="always")
def failure_code(s):
    if abs(s[S_VEL]) > 3.0:
        return 1
    z = s[S_COM + 2]
    if z <= 0.1 or z >= 0.6:
        return 2
    return 0


def step_plant(state: PlantState, action: Action,
               params: PlantParams) -> tuple[PlantState, StepEvents]:
    """Advance the plant by one control period.

    Raises ValueError on non-finite state or action components: that is a
    simulation bug upstream, never something to clamp away.
    """
    s = state.to_array()
    a = action.to_array()
    ev = np.zeros(N_EVENT)
    plant_tick(s, a, params.pack(), ev)
    if ev[E_ERR] > 0.0:
        raise ValueError("non-finite state or action passed to step_plant")
    new_state = PlantState.from_array(s)
    return new_state, StepEvents.from_array(ev, failure_code(s))


def detect_failure(state: PlantState) -> FailureKind | None:
    """Velocity blowup or CoM height out of (0.1, 0.6) m.

    The height window is read as "failure when h outside (0.1, 0.6)"; the
    published bound expression is malformed and this is the only consistent
    reading.
    """
    code = failure_code(state.to_array())
    return FailureKind(code) if code else None


def write_trajectory_csv(path, times, states, actions, events):
    """One row per tick: time, mode, gait, com (6), feet (12), phase,
    action (5), touchdown/takeoff flags."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["t", "mode", "gait"]
            + [f"com_{c}" for c in "xyz"] + [f"comv_{c}" for c in "xyz"]
            + [f"lf_{c}" for c in "xyz"] + [f"lfv_{c}" for c in "xyz"]
            + [f"rf_{c}" for c in "xyz"] + [f"rfv_{c}" for c in "xyz"]
            + ["phase", "tgt_x", "tgt_y", "tgt_z", "h_ref", "a_thrust",
               "touchdown", "takeoff"]
        )
        for t, s, a, e in zip(times, states, actions, events):
            w.writerow(
                [f"{t:.3f}", int(s[S_MODE]), int(s[S_GAIT])]
                + [repr(v) for v in s[S_COM:S_VEL + 3]]
                + [repr(v) for v in s[S_LF:S_LFV + 3]]
                + [repr(v) for v in s[S_RF:S_RFV + 3]]
                + [repr(s[S_PHASE])]
                + [repr(v) for v in a]
                + [int(e[E_TD]), int(e[E_TO])]
            )

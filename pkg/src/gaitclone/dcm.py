"""Divergent-component-of-motion math.

The DCM xi = c + cdot/omega is the unstable mode of the linear inverted
pendulum; step placement has to capture it. This module holds the closed
forms the planner is built on: DCM extraction, exponential propagation
during stance, linear drift during ballistic flight, and the periodic-gait
references (nominal footstep displacement and nominal end-of-step DCM
offset) for a commanded velocity and gait.

The nominal DCM offset is the fixed point of the exact step-to-step map,
including flight drift for running. Per axis the map on (dcm offset delta,
convergent offset gamma) relative to the stance foot is affine; the fixed
point of the two-step (left+right) composition is solved directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .plant import Gait, LEFT

__all__ = [
    "GaitParams",
    "NominalGait",
    "compute_dcm",
    "propagate_dcm",
    "flight_drift",
    "nominal_references",
    "stance_start_offsets",
]

# NominalGait.pack() layout, consumed by the planner kernels
G_TNOM, G_TF, G_TAUNOM = 0, 1, 2
G_BX, G_BY, G_DUX, G_DUY = 3, 4, 5, 6
G_TMIN, G_TMAX = 7, 8
G_ULOX, G_UHIX, G_ULOY, G_UHIY = 9, 10, 11, 12
G_BLOX, G_BHIX, G_BLOY, G_BHIY = 13, 14, 15, 16
G_DNOM = 17
N_GPACK = 18


@dataclass(frozen=True)
class GaitParams:
    """Nominal timing and bound settings shared by both gaits.

    None of these appear in any published table; they are Bolt-scale
    defaults and every one is configurable.
    """

    omega: float
    walk_t_nom: float = 0.30
    run_t_nom: float = 0.20
    run_t_f: float = 0.10
    step_width: float = 0.10
    t_min: float = 0.12
    t_max: float = 0.50
    u_limit_x: float = 0.55
    u_limit_y: float = 0.50
    b_halfwidth: float = 0.20

    def __post_init__(self):
        if self.omega <= 0.0:
            raise ValueError("omega must be > 0")
        if not (self.t_min <= self.walk_t_nom <= self.t_max):
            raise ValueError("walk_t_nom outside [t_min, t_max]")
        if not (self.t_min <= self.run_t_nom <= self.t_max):
            raise ValueError("run_t_nom outside [t_min, t_max]")


@dataclass(frozen=True)
class NominalGait:
    """Periodic-gait references for one (velocity, gait, stance side).

    ``u_nom_offset`` is the nominal displacement from the current stance
    foot to the next one; ``b_nom`` is the nominal DCM offset relative to
    the next foot at its touchdown. Boxes are centered on the nominals.
    """

    t_nom: float
    t_f: float
    tau_nom: float
    b_nom: np.ndarray
    u_nom_offset: np.ndarray
    t_min: float
    t_max: float
    u_lo: np.ndarray
    u_hi: np.ndarray
    b_lo: np.ndarray
    b_hi: np.ndarray

    @property
    def d_nom(self) -> float:
        return self.t_nom + self.t_f

    def pack(self) -> np.ndarray:
        g = np.empty(N_GPACK)
        g[G_TNOM] = self.t_nom
        g[G_TF] = self.t_f
        g[G_TAUNOM] = self.tau_nom
        g[G_BX], g[G_BY] = self.b_nom
        g[G_DUX], g[G_DUY] = self.u_nom_offset
        g[G_TMIN] = self.t_min
        g[G_TMAX] = self.t_max
        g[G_ULOX], g[G_UHIX] = self.u_lo[0], self.u_hi[0]
        g[G_ULOY], g[G_UHIY] = self.u_lo[1], self.u_hi[1]
        g[G_BLOX], g[G_BHIX] = self.b_lo[0], self.b_hi[0]
        g[G_BLOY], g[G_BHIY] = self.b_lo[1], self.b_hi[1]
        g[G_DNOM] = self.d_nom
        return g


def compute_dcm(com_pos, com_vel, omega: float) -> np.ndarray:
    """xi = c_xy + cdot_xy / omega."""
    if omega <= 0.0:
        raise ValueError("omega must be > 0")
    c = np.asarray(com_pos, dtype=float)
    cd = np.asarray(com_vel, dtype=float)
    return c[:2] + cd[:2] / omega


def propagate_dcm(xi0, u, omega: float, dt: float) -> np.ndarray:
    """Closed-form DCM flow over a stance interval: (xi0-u) e^{w dt} + u."""
    if dt < 0.0:
        raise ValueError("dt must be >= 0")
    xi0 = np.asarray(xi0, dtype=float)
    u = np.asarray(u, dtype=float)
    return (xi0 - u) * math.exp(omega * dt) + u


def flight_drift(xi, com_vel_xy, t_f: float) -> np.ndarray:
    """Ballistic DCM drift: horizontal velocity is constant in flight, so
    the DCM translates by v * t_f."""
    if t_f < 0.0:
        raise ValueError("t_f must be >= 0")
    return np.asarray(xi, dtype=float) + np.asarray(com_vel_xy, dtype=float) * t_f


def _step_matrix(a: float, k: float) -> np.ndarray:
    # One-step affine map on (delta, gamma) = (dcm, convergent) offsets
    # relative to the stance foot, with a = e^{w T} and k = w t_f / 2:
    #   delta' = a delta + k (a delta - gamma / a) - du
    #   gamma' = gamma / a + k (a delta - gamma / a) - du
    return np.array([[a * (1.0 + k), -k / a],
                     [k * a, (1.0 - k) / a]])


def _two_step_fixed_point(a: float, k: float, du1: float, du2: float) -> np.ndarray:
    m = _step_matrix(a, k)
    ones = np.ones(2)
    m2 = m @ m
    c2 = m @ (-du1 * ones) + (-du2 * ones)
    return np.linalg.solve(np.eye(2) - m2, c2)


def stance_start_offsets(v_d, gait: Gait, side: int,
                         params: GaitParams) -> tuple[np.ndarray, np.ndarray]:
    """Periodic-orbit (DCM, convergent-component) offsets relative to the
    stance foot at the touchdown that starts a stance on ``side``."""
    v = np.asarray(v_d, dtype=float).reshape(2)
    if gait == Gait.RUN:
        t_nom, t_f = params.run_t_nom, params.run_t_f
    else:
        t_nom, t_f = params.walk_t_nom, 0.0
    d_nom = t_nom + t_f
    a = math.exp(params.omega * t_nom)
    k = params.omega * t_f / 2.0
    lat = -params.step_width if side == LEFT else params.step_width
    du_here = np.array([v[0] * d_nom, v[1] * d_nom + lat])
    du_other = np.array([v[0] * d_nom, v[1] * d_nom - lat])
    delta = np.empty(2)
    gamma = np.empty(2)
    for axis in range(2):
        fp = _two_step_fixed_point(a, k, du_here[axis], du_other[axis])
        delta[axis], gamma[axis] = fp
    return delta, gamma


def nominal_references(v_d, gait: Gait, side: int, params: GaitParams) -> NominalGait:
    """Periodic-gait references for stance on ``side`` at velocity ``v_d``.

    ``b_nom`` is exact: applying the closed-form step map (stance
    propagation, flight drift, foot exchange) from it reproduces itself
    every two steps.
    """
    v = np.asarray(v_d, dtype=float).reshape(2)
    if gait == Gait.RUN:
        t_nom, t_f = params.run_t_nom, params.run_t_f
    else:
        t_nom, t_f = params.walk_t_nom, 0.0
    d_nom = t_nom + t_f
    w = params.step_width
    omega = params.omega
    a = math.exp(omega * t_nom)
    k = omega * t_f / 2.0

    # step displacements: command term plus alternating lateral +-w
    lat = -w if side == LEFT else w
    du_here = np.array([v[0] * d_nom, v[1] * d_nom + lat])
    du_other = np.array([v[0] * d_nom, v[1] * d_nom - lat])

    b_nom = np.empty(2)
    for axis in range(2):
        fp = _two_step_fixed_point(a, k, du_here[axis], du_other[axis])
        # offset at the start of the *next* stance = one step from the fixed point
        nxt = _step_matrix(a, k) @ fp - du_here[axis] * np.ones(2)
        b_nom[axis] = nxt[0]

    # the footstep box is a fixed reach box around the stance foot; braking
    # and recovery steps land on the opposite side of the nominal offset,
    # so the box must not follow the command
    lim = np.array([params.u_limit_x, params.u_limit_y])
    bh = params.b_halfwidth
    return NominalGait(
        t_nom=t_nom,
        t_f=t_f,
        tau_nom=math.exp(omega * t_nom),
        b_nom=b_nom,
        u_nom_offset=du_here,
        t_min=params.t_min,
        t_max=params.t_max,
        u_lo=-lim,
        u_hi=lim,
        b_lo=b_nom - bh,
        b_hi=b_nom + bh,
    )

"""Step-adaptation QP: next footstep location, step-time variable and DCM
offset, solved every control tick.

Decision variables are z = (tau, b_x, b_y) with tau = e^{omega T}; the
footstep u is eliminated through the per-axis DCM boundary condition

    u_a = alpha_a tau + u_cur_a + d_a - b_a,
    alpha_a = (xi_now_a - u_cur_a) e^{-omega t_elapsed},

where d is the ballistic DCM drift over the flight phase (running only),
predicted at the nominal takeoff. The objective penalizes deviation of
(u, tau, b) from the nominal gait references; constraints are boxes on tau,
b and u (u relative to the stance foot), ten inequalities total.

The solver is exact: if the unconstrained minimizer is feasible it is
returned directly, otherwise every working set of up to three constraints
is enumerated and the best KKT point wins, ties resolved toward fewer
active bounds. A brute-force grid oracle over the same feasible box is
provided for testing; it shares the problem data but none of the solve
path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dcm import (
    NominalGait,
    G_TNOM, G_TF, G_TAUNOM, G_BX, G_BY, G_DUX, G_DUY, G_TMIN, G_TMAX,
    G_ULOX, G_UHIX, G_ULOY, G_UHIY, G_BLOX, G_BHIX, G_BLOY, G_BHIY,
)
from .plant import Gait

__all__ = [
    "InfeasibleProblem",
    "StepQpProblem",
    "StepQpSolution",
    "solve",
    "grid_oracle",
    "BOUND_NAMES",
]

BOUND_NAMES = (
    "tau_lo", "tau_hi",
    "b_x_lo", "b_x_hi", "b_y_lo", "b_y_hi",
    "u_x_lo", "u_x_hi", "u_y_lo", "u_y_hi",
)

# packed solution layout shared with the expert kernel
Q_UX, Q_UY, Q_T, Q_BX, Q_BY, Q_TAU, Q_COST, Q_ACTIVE, Q_STATUS = range(9)
N_QSOL = 9

FEAS_TOL = 1e-9


class InfeasibleProblem(Exception):
    """The induced constraint set is empty."""


@njit(cache=True)
def qp_data(ucx, ucy, xix, xiy, t_el, omega, vx, vy, gait, gpack, dt, out):
    """Problem data derived from the measured state: out = [alpha_x,
    alpha_y, d_x, d_y, tau_lo, tau_hi]."""
    decay = math.exp(-omega * t_el)
    out[0] = (xix - ucx) * decay
    out[1] = (xiy - ucy) * decay
    out[2] = 0.0
    out[3] = 0.0
    if gait == 1 and gpack[G_TF] > 0.0:
        # predict the takeoff CoM velocity at the nominal stance end and
        # drift the DCM ballistically from there
        t_f = gpack[G_TF]
        rem = gpack[G_TNOM] - t_el
        if rem < 0.0:
            rem = 0.0
        grow = math.exp(omega * rem)
        xi_to_x = ucx + (xix - ucx) * grow
        xi_to_y = ucy + (xiy - ucy) * grow
        zex = xix - 2.0 * vx / omega
        zey = xiy - 2.0 * vy / omega
        ze_to_x = ucx + (zex - ucx) / grow
        ze_to_y = ucy + (zey - ucy) / grow
        out[2] = 0.5 * omega * (xi_to_x - ze_to_x) * t_f
        out[3] = 0.5 * omega * (xi_to_y - ze_to_y) * t_f
    t_lo = gpack[G_TMIN]
    floor = t_el + 2.0 * dt
    if floor > t_lo:
        t_lo = floor
    out[4] = math.exp(omega * t_lo)
    out[5] = math.exp(omega * gpack[G_TMAX])


@njit(cache=True, inline="always")
def _lin_solve(A, b, n):
    # in-place Gaussian elimination with partial pivoting; returns False
    # when the system is (near-)singular
    for col in range(n):
        piv = col
        big = abs(A[col, col])
        for r in range(col + 1, n):
            if abs(A[r, col]) > big:
                big = abs(A[r, col])
                piv = r
        if big < 1e-12:
            return False
        if piv != col:
            for c in range(n):
                tmp = A[col, c]
                A[col, c] = A[piv, c]
                A[piv, c] = tmp
            tmp = b[col]
            b[col] = b[piv]
            b[piv] = tmp
        inv = 1.0 / A[col, col]
        for r in range(col + 1, n):
            f = A[r, col] * inv
            if f != 0.0:
                for c in range(col, n):
                    A[r, c] -= f * A[col, c]
                b[r] -= f * b[col]
    for col in range(n - 1, -1, -1):
        s = b[col]
        for c in range(col + 1, n):
            s -= A[col, c] * b[c]
        b[col] = s / A[col, col]
    return True


@njit(cache=True, inline="always")
def _qp_cost(z, alx, aly, dx, dy, gpack, wu, wt, wb):
    urx = alx * z[0] + dx - z[1]
    ury = aly * z[0] + dy - z[2]
    c = wu * ((urx - gpack[G_DUX]) ** 2 + (ury - gpack[G_DUY]) ** 2)
    c += wt * (z[0] - gpack[G_TAUNOM]) ** 2
    c += wb * ((z[1] - gpack[G_BX]) ** 2 + (z[2] - gpack[G_BY]) ** 2)
    return c


@njit(cache=True)
def qp_solve(ucx, ucy, xix, xiy, t_el, omega, vx, vy, gait, gpack,
             wu, wt, wb, dt, sol):
    """Exact minimizer into ``sol``; sol[Q_STATUS] = 1 flags infeasibility."""
    data = np.empty(6)
    qp_data(ucx, ucy, xix, xiy, t_el, omega, vx, vy, gait, gpack, dt, data)
    alx, aly, dx, dy, tau_lo, tau_hi = data[0], data[1], data[2], data[3], data[4], data[5]
    sol[Q_STATUS] = 1.0
    if tau_lo > tau_hi + FEAS_TOL:
        return

    ex = dx - gpack[G_DUX]
    ey = dy - gpack[G_DUY]
    H = np.empty((3, 3))
    H[0, 0] = 2.0 * (wu * (alx * alx + aly * aly) + wt)
    H[1, 1] = 2.0 * (wu + wb)
    H[2, 2] = 2.0 * (wu + wb)
    H[0, 1] = -2.0 * wu * alx
    H[1, 0] = H[0, 1]
    H[0, 2] = -2.0 * wu * aly
    H[2, 0] = H[0, 2]
    H[1, 2] = 0.0
    H[2, 1] = 0.0
    g = np.empty(3)
    g[0] = 2.0 * wu * (alx * ex + aly * ey) - 2.0 * wt * gpack[G_TAUNOM]
    g[1] = -2.0 * wu * ex - 2.0 * wb * gpack[G_BX]
    g[2] = -2.0 * wu * ey - 2.0 * wb * gpack[G_BY]

    # ten inequality rows Gc z <= hc, indexed per BOUND_NAMES
    Gc = np.zeros((10, 3))
    hc = np.empty(10)
    Gc[0, 0] = -1.0
    hc[0] = -tau_lo
    Gc[1, 0] = 1.0
    hc[1] = tau_hi
    Gc[2, 1] = -1.0
    hc[2] = -gpack[G_BLOX]
    Gc[3, 1] = 1.0
    hc[3] = gpack[G_BHIX]
    Gc[4, 2] = -1.0
    hc[4] = -gpack[G_BLOY]
    Gc[5, 2] = 1.0
    hc[5] = gpack[G_BHIY]
    Gc[6, 0] = -alx
    Gc[6, 1] = 1.0
    hc[6] = dx - gpack[G_ULOX]
    Gc[7, 0] = alx
    Gc[7, 1] = -1.0
    hc[7] = gpack[G_UHIX] - dx
    Gc[8, 0] = -aly
    Gc[8, 2] = 1.0
    hc[8] = dy - gpack[G_ULOY]
    Gc[9, 0] = aly
    Gc[9, 2] = -1.0
    hc[9] = gpack[G_UHIY] - dy

    best_cost = np.inf
    best_z = np.zeros(3)
    best_mask = 0
    found = False

    # working sets of size 0..3, visited smallest first so equal-cost ties
    # keep the fewest active bounds
    work = np.empty((3,), dtype=np.int64)
    for size in range(4):
        if found and size > 0:
            # any larger working set can only match, never beat, an
            # already-found optimum of this convex problem
            break
        n_sets = 1
        if size == 1:
            n_sets = 10
        elif size == 2:
            n_sets = 45
        elif size == 3:
            n_sets = 120
        for combo in range(n_sets):
            if size == 0:
                pass
            elif size == 1:
                work[0] = combo
            elif size == 2:
                # unrank combination of 2
                a = 0
                rem = combo
                while rem >= 9 - a:
                    rem -= 9 - a
                    a += 1
                work[0] = a
                work[1] = a + 1 + rem
            else:
                # unrank combination of 3
                a = 0
                rem = combo
                while True:
                    cnt = (9 - a) * (8 - a) // 2
                    if rem < cnt:
                        break
                    rem -= cnt
                    a += 1
                b_ = a + 1
                while rem >= 9 - b_:
                    rem -= 9 - b_
                    b_ += 1
                work[0] = a
                work[1] = b_
                work[2] = b_ + 1 + rem
            m = size
            n = 3 + m
            A = np.zeros((n, n))
            rhs = np.empty(n)
            for r in range(3):
                for c in range(3):
                    A[r, c] = H[r, c]
                rhs[r] = -g[r]
            for i in range(m):
                ci = work[i]
                for c in range(3):
                    A[3 + i, c] = Gc[ci, c]
                    A[c, 3 + i] = Gc[ci, c]
                rhs[3 + i] = hc[ci]
            if not _lin_solve(A, rhs, n):
                continue
            z0, z1, z2 = rhs[0], rhs[1], rhs[2]
            ok = True
            for i in range(m):
                if rhs[3 + i] < -FEAS_TOL:
                    ok = False
                    break
            if ok:
                for ci in range(10):
                    v = Gc[ci, 0] * z0 + Gc[ci, 1] * z1 + Gc[ci, 2] * z2
                    if v > hc[ci] + FEAS_TOL:
                        ok = False
                        break
            if ok:
                z = np.array([z0, z1, z2])
                c = _qp_cost(z, alx, aly, dx, dy, gpack, wu, wt, wb)
                if c < best_cost - 1e-12:
                    best_cost = c
                    best_z[:] = z
                    mask = 0
                    for i in range(m):
                        mask |= 1 << work[i]
                    best_mask = mask
                    found = True

    if not found:
        return
    tau = best_z[0]
    sol[Q_UX] = alx * tau + ucx + dx - best_z[1]
    sol[Q_UY] = aly * tau + ucy + dy - best_z[2]
    sol[Q_T] = math.log(tau) / omega
    sol[Q_BX] = best_z[1]
    sol[Q_BY] = best_z[2]
    sol[Q_TAU] = tau
    sol[Q_COST] = best_cost
    sol[Q_ACTIVE] = float(best_mask)
    sol[Q_STATUS] = 0.0


@dataclass
class StepQpProblem:
    """One replanning instance, built fresh from the measured state."""

    u_cur: np.ndarray
    xi_now: np.ndarray
    t_elapsed: float
    omega: float
    nominal: NominalGait
    gait: Gait
    com_vel_xy: np.ndarray = field(default_factory=lambda: np.zeros(2))
    w_u: float = 1.0
    w_tau: float = 5.0
    w_b: float = 1000.0
    dt: float = 0.001

    def data(self) -> tuple[np.ndarray, np.ndarray, float, float]:
        """(alpha, drift, tau_lo, tau_hi) defining the reduced problem."""
        out = np.empty(6)
        qp_data(self.u_cur[0], self.u_cur[1], self.xi_now[0], self.xi_now[1],
                self.t_elapsed, self.omega, self.com_vel_xy[0],
                self.com_vel_xy[1], int(self.gait), self.nominal.pack(),
                self.dt, out)
        return out[0:2].copy(), out[2:4].copy(), float(out[4]), float(out[5])


@dataclass
class StepQpSolution:
    u_next: np.ndarray
    t_next: float
    b: np.ndarray
    tau: float
    cost: float
    active_bounds: frozenset[str]


def _mask_to_names(mask: int) -> frozenset[str]:
    return frozenset(n for i, n in enumerate(BOUND_NAMES) if mask & (1 << i))


def solve(p: StepQpProblem) -> StepQpSolution:
    """Exact minimizer of the step-adaptation QP."""
    sol = np.zeros(N_QSOL)
    qp_solve(p.u_cur[0], p.u_cur[1], p.xi_now[0], p.xi_now[1],
             p.t_elapsed, p.omega, p.com_vel_xy[0], p.com_vel_xy[1],
             int(p.gait), p.nominal.pack(), p.w_u, p.w_tau, p.w_b, p.dt, sol)
    if sol[Q_STATUS] != 0.0:
        raise InfeasibleProblem("step QP has an empty feasible set")
    return StepQpSolution(
        u_next=sol[Q_UX:Q_UY + 1].copy(),
        t_next=float(sol[Q_T]),
        b=sol[Q_BX:Q_BY + 1].copy(),
        tau=float(sol[Q_TAU]),
        cost=float(sol[Q_COST]),
        active_bounds=_mask_to_names(int(sol[Q_ACTIVE])),
    )


def grid_oracle(p: StepQpProblem, resolution: int = 200) -> StepQpSolution:
    """Exhaustive search over the (tau, b_x, b_y) box grid.

    Every grid point whose reconstructed footstep leaves its box is skipped;
    the best surviving point is returned. The full 3-D grid is scanned; the
    scan is factored per axis because, for a fixed tau, the cost and the
    feasibility of b_x and b_y are independent.
    """
    if resolution < 50:
        raise ValueError("grid oracle resolution must be >= 50")
    alpha, drift, tau_lo, tau_hi = p.data()
    if tau_lo > tau_hi + FEAS_TOL:
        raise InfeasibleProblem("step QP has an empty feasible set")
    nom = p.nominal
    taus = np.linspace(tau_lo, tau_hi, resolution)
    tau_cost = p.w_tau * (taus - nom.tau_nom) ** 2

    per_axis_min = np.zeros((2, resolution))
    per_axis_arg = np.zeros((2, resolution), dtype=np.int64)
    feasible_rows = np.ones(resolution, dtype=bool)
    for a in range(2):
        bs = np.linspace(nom.b_lo[a], nom.b_hi[a], resolution)
        u_rel = alpha[a] * taus[:, None] + drift[a] - bs[None, :]
        cost = (p.w_u * (u_rel - nom.u_nom_offset[a]) ** 2
                + p.w_b * (bs[None, :] - nom.b_nom[a]) ** 2)
        lo = nom.u_lo[a] - FEAS_TOL
        hi = nom.u_hi[a] + FEAS_TOL
        cost[(u_rel < lo) | (u_rel > hi)] = np.inf
        per_axis_arg[a] = np.argmin(cost, axis=1)
        per_axis_min[a] = cost[np.arange(resolution), per_axis_arg[a]]
        feasible_rows &= np.isfinite(per_axis_min[a])

    if not feasible_rows.any():
        raise InfeasibleProblem("every grid point reconstructs an infeasible footstep")

    total = tau_cost + per_axis_min[0] + per_axis_min[1]
    total[~feasible_rows] = np.inf
    i = int(np.argmin(total))
    tau = float(taus[i])
    b = np.array([
        np.linspace(nom.b_lo[0], nom.b_hi[0], resolution)[per_axis_arg[0, i]],
        np.linspace(nom.b_lo[1], nom.b_hi[1], resolution)[per_axis_arg[1, i]],
    ])
    u_next = alpha * tau + p.u_cur + drift - b
    active = []
    for name, val, bound in (
        ("tau_lo", tau, tau_lo), ("tau_hi", tau, tau_hi),
        ("b_x_lo", b[0], nom.b_lo[0]), ("b_x_hi", b[0], nom.b_hi[0]),
        ("b_y_lo", b[1], nom.b_lo[1]), ("b_y_hi", b[1], nom.b_hi[1]),
    ):
        if abs(val - bound) < 1e-12:
            active.append(name)
    return StepQpSolution(
        u_next=u_next,
        t_next=math.log(tau) / p.omega,
        b=b,
        tau=tau,
        cost=float(total[i]),
        active_bounds=frozenset(active),
    )

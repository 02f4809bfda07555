"""Closed-loop episode engine.

One jitted loop serves both data collection (expert actions) and policy
evaluation (network actions with the expert planner running alongside as
the online goal generator). Per tick it: advances the command schedule,
runs the expert tick (DCM, step QP, swing/vertical references, contact
plan), assembles the shared-state and goal features, picks the action,
steps the plant, and does the event bookkeeping that anchors swing
trajectories and goals.

Positions in features, goals and recorded actions are expressed relative
to the planner's stance anchor (the current or, in flight, most recent
stance foot); this one frame choice is applied identically to every goal
conditioning.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .net import mlp_forward_kernel
from .plant import (
    A_HREF, A_THR, A_TX, A_TY, A_TZ, N_ACTION, N_EVENT, N_STATE,
    E_ERR, E_TD, E_TD_SIDE, E_TD_X, E_TD_Y, E_TO,
    P_DT, P_DZ, P_G, P_HNOM, P_LMAX, P_OMEGA,
    S_COM, S_VEL, S_LF, S_RF, S_MODE, S_PHASE, S_STEPI, S_SWING, S_TPH, S_TPLAN,
    failure_code, plant_tick,
)
from .dcm import (
    G_BX, G_BY, G_DNOM, G_DUX, G_DUY, G_TF, G_TMAX, G_TMIN, G_TNOM,
    G_ULOX, G_UHIX, G_ULOY, G_UHIY,
)
from .stepqp import N_QSOL, Q_BX, Q_BY, Q_STATUS, Q_T, Q_UX, Q_UY, qp_data, qp_solve

# expert register layout
X_UNX, X_UNY = 0, 1        # planned next footstep, world frame
X_TNEXT = 2                # planned stance duration of the current step
X_TREM = 3                 # time remaining to the next touchdown
X_LIFTX, X_LIFTY, X_LIFTZ = 4, 5, 6   # active swing foot liftoff position
X_ANCHX, X_ANCHY = 7, 8    # stance anchor
X_AIR = 9                  # active swing foot air time
X_TLIFTX, X_TLIFTY, X_TLIFTZ = 10, 11, 12  # trailing foot liftoff capture
X_TAIR = 13
X_INFEAS = 14
X_BX, X_BY = 15, 16        # QP DCM offset of the current plan
X_TDBIAS = 17              # adaptive lead on the commit window
X_TOVER = 18               # time spent past the planned contact
X_GROUNDED = 19            # this step stays grounded (no thrust/flight plan)
N_EXP = 20

# expert config pack
(C_WU, C_WTAU, C_WB, C_ZAPEX, C_TWIN, C_TMARGIN, C_ZDRIVE, C_DLEAD,
 C_XYARRIVE, C_TGATE) = range(10)
N_ECON = 10

# feature row layout: shared state | goal_cc | goal_tcc | goal_vc | action
F_SHARED = 0
N_SHARED = 13
F_CC = 13
N_CC = 3
F_TCC = 16
N_TCC = 6
F_VC = 22
N_VC = 4
F_ACT = 26
N_FEAT = 31

# aux row layout
AUX_MODE, AUX_ANCHX, AUX_ANCHY, AUX_TD, AUX_TD_SIDE, AUX_TO, AUX_CMD, AUX_INFEAS = range(8)
N_AUX = 8

# step record layout (one row per touchdown)
ST_T, ST_SIDE, ST_AX, ST_AY, ST_PX, ST_PY, ST_COMX, ST_COMY, ST_CMD = range(9)
N_STEP = 9

POLICY_EXPERT, POLICY_CC, POLICY_TCC, POLICY_VC = 0, 1, 2, 3

FAIL_NONFINITE = -1


@njit(cache=True)
def expert_tick_kernel(s, exp, vdx, vdy, gait, gpacks, pp, econ, a, plan, sol):
    """One planner tick: replan during stance, hold the plan in flight,
    emit the action setpoints and the contact plan."""
    omega = pp[P_OMEGA]
    dt = pp[P_DT]
    mode = int(s[S_MODE])
    swing = int(s[S_SWING])

    lead = econ[C_DLEAD] + exp[X_TDBIAS]
    if lead < 0.005:
        lead = 0.005
    if mode != 2 and exp[X_TREM] <= lead:
        # commit window: the strike is imminent, hold the plan so the swing
        # foot converges on a static target instead of chasing replans
        gp = gpacks[mode]
        exp[X_ANCHX] = s[S_LF if mode == 0 else S_RF]
        exp[X_ANCHY] = s[(S_LF if mode == 0 else S_RF) + 1]
        t_rem = exp[X_TREM] - dt
        if t_rem <= 0.0:
            t_rem = 0.0
            exp[X_TOVER] += dt
        exp[X_TREM] = t_rem
        s[S_TPLAN] = exp[X_TNEXT]
    elif mode != 2:
        side = mode
        gp = gpacks[side]
        ub = S_LF if side == 0 else S_RF
        ucx = s[ub]
        ucy = s[ub + 1]
        exp[X_ANCHX] = ucx
        exp[X_ANCHY] = ucy
        xix = s[S_COM] + s[S_VEL] / omega
        xiy = s[S_COM + 1] + s[S_VEL + 1] / omega
        t_el = s[S_TPH]
        if exp[X_TREM] > 0.9:
            # first planning tick of this step: a running step only gets a
            # flight phase when the state is near the commanded orbit, else
            # it stays grounded and converges first
            dvx = s[S_VEL] - vdx
            dvy = s[S_VEL + 1] - vdy
            off_orbit = dvx * dvx + dvy * dvy > econ[C_TGATE] * econ[C_TGATE]
            exp[X_GROUNDED] = 1.0 if (gait == 1 and off_orbit) else 0.0
        if gait == 1 and exp[X_GROUNDED] > 0.0:
            gait = 0
        qp_solve(ucx, ucy, xix, xiy, t_el, omega, s[S_VEL], s[S_VEL + 1],
                 gait, gp, econ[C_WU], econ[C_WTAU], econ[C_WB], dt, sol)
        if sol[Q_STATUS] == 0.0:
            exp[X_UNX] = sol[Q_UX]
            exp[X_UNY] = sol[Q_UY]
            exp[X_TNEXT] = sol[Q_T]
            exp[X_BX] = sol[Q_BX]
            exp[X_BY] = sol[Q_BY]
        else:
            # empty feasible set: fall back to the capture-style placement
            # that satisfies the DCM boundary condition at nominal timing
            # and offset, clamped into the footstep box
            exp[X_INFEAS] += 1.0
            t_lo = gp[G_TMIN]
            if t_el + 2.0 * dt > t_lo:
                t_lo = t_el + 2.0 * dt
            t_n = gp[G_TNOM]
            if t_n < t_lo:
                t_n = t_lo
            if t_n > gp[G_TMAX]:
                t_n = gp[G_TMAX]
            data = np.empty(6)
            qp_data(ucx, ucy, xix, xiy, t_el, omega, s[S_VEL], s[S_VEL + 1],
                    gait, gp, dt, data)
            tau_n = math.exp(omega * t_n)
            dux = data[0] * tau_n + data[2] - gp[G_BX]
            duy = data[1] * tau_n + data[3] - gp[G_BY]
            dux = min(max(dux, gp[G_ULOX]), gp[G_UHIX])
            duy = min(max(duy, gp[G_ULOY]), gp[G_UHIY])
            exp[X_UNX] = ucx + dux
            exp[X_UNY] = ucy + duy
            exp[X_TNEXT] = t_n
            exp[X_BX] = gp[G_BX]
            exp[X_BY] = gp[G_BY]
        t_rem = exp[X_TNEXT] - t_el + (gp[G_TF] if gait == 1 else 0.0)
        if t_rem < 0.0:
            t_rem = 0.0
        exp[X_TREM] = t_rem
        s[S_TPLAN] = exp[X_TNEXT]
    else:
        gp = gpacks[swing]
        t_rem = exp[X_TREM] - dt
        if t_rem <= 0.0:
            t_rem = 0.0
            exp[X_TOVER] += dt
        exp[X_TREM] = t_rem
        s[S_TPLAN] = gp[G_TF] if gp[G_TF] > dt else dt
        # reachability guard: if the held footstep cannot be reached from
        # the ballistic CoM path, pull it toward the landing point so a
        # strike stays possible; the next stance replans from wherever the
        # foot actually lands
        land_x = s[S_COM] + s[S_VEL] * t_rem
        land_y = s[S_COM + 1] + s[S_VEL + 1] * t_rem
        rx = exp[X_UNX] - land_x
        ry = exp[X_UNY] - land_y
        r2 = rx * rx + ry * ry
        r_max = 0.75 * pp[P_LMAX]
        if r2 > r_max * r_max:
            k = r_max / math.sqrt(r2)
            exp[X_UNX] = land_x + rx * k
            exp[X_UNY] = land_y + ry * k

    # swing setpoint: quintic xy from liftoff to the planned footstep, sine
    # bump in z, parameterized by airborne fraction of the step
    air = exp[X_AIR]
    denom = air + exp[X_TREM]
    sfrac = 1.0 if denom <= 1e-9 else air / denom
    if sfrac < 0.0:
        sfrac = 0.0
    if sfrac > 1.0:
        sfrac = 1.0
    # the planar interpolant completes before the strike so the foot is
    # parked over the footstep when z reaches the ground
    sxy = sfrac / econ[C_XYARRIVE]
    if sxy > 1.0:
        sxy = 1.0
    sig = sxy * sxy * sxy * (10.0 - 15.0 * sxy + 6.0 * sxy * sxy)
    a[A_TX] = exp[X_LIFTX] + sig * (exp[X_UNX] - exp[X_LIFTX])
    a[A_TY] = exp[X_LIFTY] + sig * (exp[X_UNY] - exp[X_LIFTY])
    # close to the planned contact the vertical target parks below ground so
    # the strike is a fixed-target convergence timed at the plan; a pure
    # sine bump only reaches z = 0 asymptotically and the step never ends
    if exp[X_TREM] <= lead:
        a[A_TZ] = -econ[C_ZDRIVE]
    else:
        a[A_TZ] = econ[C_ZAPEX] * math.sin(math.pi * sfrac)
    a[A_HREF] = pp[P_HNOM]
    a[A_THR] = 0.0

    # running: half-sine thrust over the final window of stance, amplitude
    # sized so the vertical takeoff velocity is ~ g t_f / 2 after damping
    if gait == 1 and mode != 2:
        t_f = gp[G_TF]
        t_n = exp[X_TNEXT]
        t_w = econ[C_TWIN] if econ[C_TWIN] < t_n else t_n
        t0 = t_n - t_w
        t_el = s[S_TPH]
        if t_f > 0.0 and t_w > 1e-9 and t_el >= t0:
            om = math.pi / t_w
            beta = pp[P_DZ]
            v_to = econ[C_TMARGIN] * pp[P_G] * t_f / 2.0
            amp = v_to * (beta * beta + om * om) / (om * (1.0 + math.exp(-beta * t_w)))
            th = amp * math.sin(om * (t_el - t0))
            if th > 0.0:
                a[A_THR] = th

    plan[0] = exp[X_UNX]
    plan[1] = exp[X_UNY]
    plan[2] = exp[X_TREM]
    plan[3] = exp[X_UNX] + gpacks[swing][G_DUX]
    plan[4] = exp[X_UNY] + gpacks[swing][G_DUY]
    plan[5] = gpacks[swing][G_DNOM] + exp[X_TREM]


@njit(cache=True)
def post_step_update(s, exp, ev, pp, pre_mode):
    """Air-time accounting and liftoff captures, run after the plant tick."""
    dt = pp[P_DT]
    exp[X_AIR] += dt
    if pre_mode == 2:
        exp[X_TAIR] += dt
    if ev[E_TO] > 0.0:
        # the old stance foot just left the ground and trails during flight
        trail = 1 - int(s[S_SWING])
        tb = S_LF if trail == 0 else S_RF
        exp[X_TLIFTX] = s[tb]
        exp[X_TLIFTY] = s[tb + 1]
        exp[X_TLIFTZ] = s[tb + 2]
        exp[X_TAIR] = 0.0
    if ev[E_TD] > 0.0:
        exp[X_ANCHX] = ev[E_TD_X]
        exp[X_ANCHY] = ev[E_TD_Y]
        # strike-timing servo: late strikes widen the commit lead, early
        # strikes shrink it, keeping realized contact on the planned time
        err = exp[X_TOVER] - exp[X_TREM]
        exp[X_TDBIAS] += 0.5 * err
        if exp[X_TDBIAS] > 0.08:
            exp[X_TDBIAS] = 0.08
        if exp[X_TDBIAS] < -0.02:
            exp[X_TDBIAS] = -0.02
        exp[X_TOVER] = 0.0
        exp[X_TREM] = 1.0  # sentinel: force a fresh solve on the first tick
        new_swing = int(s[S_SWING])
        nb = S_LF if new_swing == 0 else S_RF
        if pre_mode == 2 or ev[E_TO] > 0.0:
            # landed out of flight: the trailing foot becomes the swing foot
            # and keeps the air time accumulated since its takeoff
            exp[X_LIFTX] = exp[X_TLIFTX]
            exp[X_LIFTY] = exp[X_TLIFTY]
            exp[X_LIFTZ] = exp[X_TLIFTZ]
            exp[X_AIR] = exp[X_TAIR]
        else:
            # walking exchange: the old stance foot lifts right now
            exp[X_LIFTX] = s[nb]
            exp[X_LIFTY] = s[nb + 1]
            exp[X_LIFTZ] = s[nb + 2]
            exp[X_AIR] = 0.0


@njit(cache=True)
def run_episode_kernel(s, exp, cmds, gpacks, pp, econ, policy_kind,
                       pol_params, pol_dims, pol_in_mean, pol_in_std,
                       pol_out_mean, pol_out_std,
                       feat, aux, steps, full_states, full_actions,
                       record_full, max_ticks):
    """Roll one episode; returns (ticks, n_steps, failure_code, fail_tick).

    failure_code: 0 none, 1 velocity, 2 height, -1 non-finite inputs (a bug,
    surfaced by the caller as a hard error).
    """
    dt = pp[P_DT]
    n_cmds = cmds.shape[0]
    cmd_idx = 0
    applied_idx = 0  # the planner adopts a new command at the next touchdown
    a = np.empty(N_ACTION)
    plan = np.empty(6)
    ev = np.empty(N_EVENT)
    sol = np.empty(N_QSOL)
    x = np.empty(N_SHARED + N_TCC)
    pol_out = np.empty(N_ACTION)
    n_steps = 0
    fail = 0
    fail_tick = -1
    tick = 0
    while tick < max_ticks:
        t = tick * dt
        while cmd_idx < n_cmds - 1 and t >= cmds[cmd_idx, 3] - 0.5 * dt:
            cmd_idx += 1
        vdx = cmds[cmd_idx, 0]
        vdy = cmds[cmd_idx, 1]
        gait = int(cmds[cmd_idx, 2])

        prev_px = exp[X_UNX]
        prev_py = exp[X_UNY]
        infeas0 = exp[X_INFEAS]
        expert_tick_kernel(s, exp, cmds[applied_idx, 0], cmds[applied_idx, 1],
                           int(cmds[applied_idx, 2]), gpacks[applied_idx],
                           pp, econ, a, plan, sol)
        anchx = exp[X_ANCHX]
        anchy = exp[X_ANCHY]

        # shared state, anchored at the stance foot
        row = feat[tick]
        row[0] = s[S_COM] - anchx
        row[1] = s[S_COM + 1] - anchy
        row[2] = s[S_COM + 2]
        row[3] = s[S_VEL]
        row[4] = s[S_VEL + 1]
        row[5] = s[S_VEL + 2]
        row[6] = s[S_LF] - anchx
        row[7] = s[S_LF + 1] - anchy
        row[8] = s[S_LF + 2]
        row[9] = s[S_RF] - anchx
        row[10] = s[S_RF + 1] - anchy
        row[11] = s[S_RF + 2]
        row[12] = s[S_PHASE]
        # goals, identical tick, three layouts
        row[F_CC] = plan[0] - anchx
        row[F_CC + 1] = plan[1] - anchy
        row[F_CC + 2] = plan[2]
        row[F_TCC] = plan[0] - anchx
        row[F_TCC + 1] = plan[1] - anchy
        row[F_TCC + 2] = plan[2]
        row[F_TCC + 3] = plan[3] - anchx
        row[F_TCC + 4] = plan[4] - anchy
        row[F_TCC + 5] = plan[5]
        row[F_VC] = vdx
        row[F_VC + 1] = vdy
        row[F_VC + 2] = 1.0 if gait == 0 else 0.0
        row[F_VC + 3] = 1.0 if gait == 1 else 0.0

        if policy_kind == POLICY_EXPERT:
            ax_w = a[A_TX]
            ay_w = a[A_TY]
        else:
            for i in range(N_SHARED):
                x[i] = row[i]
            if policy_kind == POLICY_CC:
                for i in range(N_CC):
                    x[N_SHARED + i] = row[F_CC + i]
            elif policy_kind == POLICY_TCC:
                for i in range(N_TCC):
                    x[N_SHARED + i] = row[F_TCC + i]
            else:
                for i in range(N_VC):
                    x[N_SHARED + i] = row[F_VC + i]
            mlp_forward_kernel(pol_params, pol_dims, pol_in_mean, pol_in_std,
                               pol_out_mean, pol_out_std, x, pol_out)
            ax_w = pol_out[0] + anchx
            ay_w = pol_out[1] + anchy
            a[A_TX] = ax_w
            a[A_TY] = ay_w
            a[A_TZ] = pol_out[2]
            a[A_HREF] = pol_out[3]
            a[A_THR] = pol_out[4]
        row[F_ACT] = ax_w - anchx
        row[F_ACT + 1] = ay_w - anchy
        row[F_ACT + 2] = a[A_TZ]
        row[F_ACT + 3] = a[A_HREF]
        row[F_ACT + 4] = a[A_THR]

        pre_mode = int(s[S_MODE])
        plant_tick(s, a, pp, ev)
        if ev[E_ERR] > 0.0:
            fail = FAIL_NONFINITE
            fail_tick = tick
            tick += 1
            break
        post_step_update(s, exp, ev, pp, pre_mode)
        if ev[E_TD] > 0.0:
            applied_idx = cmd_idx

        arow = aux[tick]
        arow[AUX_MODE] = s[S_MODE]
        arow[AUX_ANCHX] = anchx
        arow[AUX_ANCHY] = anchy
        arow[AUX_TD] = ev[E_TD]
        arow[AUX_TD_SIDE] = ev[E_TD_SIDE]
        arow[AUX_TO] = ev[E_TO]
        arow[AUX_CMD] = float(cmd_idx)
        arow[AUX_INFEAS] = exp[X_INFEAS] - infeas0

        if record_full == 1:
            for i in range(N_STATE):
                full_states[tick, i] = s[i]
            for i in range(N_ACTION):
                full_actions[tick, i] = a[i]

        if ev[E_TD] > 0.0 and n_steps < steps.shape[0]:
            st = steps[n_steps]
            st[ST_T] = t + dt
            st[ST_SIDE] = ev[E_TD_SIDE]
            st[ST_AX] = ev[E_TD_X]
            st[ST_AY] = ev[E_TD_Y]
            st[ST_PX] = prev_px
            st[ST_PY] = prev_py
            st[ST_COMX] = s[S_COM]
            st[ST_COMY] = s[S_COM + 1]
            st[ST_CMD] = float(cmd_idx)
            n_steps += 1

        code = failure_code(s)
        if code != 0:
            fail = code
            fail_tick = tick
            tick += 1
            break
        tick += 1
    return tick, n_steps, fail, fail_tick

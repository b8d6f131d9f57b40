"""JIT-compiled inner loops: plant dynamics and held-input RK4 integration.

The episode loop calls `rk4_hold` once per decision; it advances the state
through `nsub` fixed RK4 sub-steps with the control held constant, checks
termination bounds at every sub-step boundary, and accumulates the
left-rectangle integral of the squared state for the L2 norms.
"""

import math

import numpy as np
from numba import njit

PENDULUM = 0
CARTPOLE = 1
QUADROTOR2D = 2
QUADROTOR3D = 3

DIST_NONE = 0
DIST_CONSTANT = 1
DIST_PERIODIC = 2
DIST_IMPULSE = 3

STATUS_OK = 0
STATUS_BOUND = 1
STATUS_NONFINITE = 2

TWO_PI = 2.0 * math.pi


@njit(cache=True, nogil=True)
def eval_dynamics(pid, par, x, u, out):
    """State derivative for plant `pid` with packed parameters `par`."""
    if pid == PENDULUM:
        # par: m, l, g
        m = par[0]
        l = par[1]
        g = par[2]
        out[0] = x[1]
        out[1] = 1.5 * g / l * math.sin(x[0]) + 3.0 / (m * l * l) * u[0]
    elif pid == CARTPOLE:
        # par: m_cart, m_pole, half_length, g
        mc = par[0]
        mp = par[1]
        half = par[2]
        g = par[3]
        mt = mc + mp
        sth = math.sin(x[2])
        cth = math.cos(x[2])
        force = u[0]
        tmp = (force + mp * half * x[3] * x[3] * sth) / mt
        th_acc = (g * sth - cth * tmp) / (half * (4.0 / 3.0 - mp * cth * cth / mt))
        out[0] = x[1]
        out[1] = tmp - mp * half * th_acc * cth / mt
        out[2] = x[3]
        out[3] = th_acc
    elif pid == QUADROTOR2D:
        # par: m, inertia, g, m_feedforward; u = [thrust deviation, moment]
        m = par[0]
        inertia = par[1]
        g = par[2]
        thrust = par[3] * g + u[0]
        sth = math.sin(x[2])
        cth = math.cos(x[2])
        out[0] = x[3]
        out[1] = x[4]
        out[2] = x[5]
        out[3] = -thrust / m * sth
        out[4] = thrust / m * cth - g
        out[5] = u[1] / inertia
    else:
        # par: m, Ixx, Iyy, Izz, g, m_feedforward
        # x = [px, py, pz, roll, pitch, yaw, vx, vy, vz, p, q, r] (body-frame v, omega)
        m = par[0]
        ixx = par[1]
        iyy = par[2]
        izz = par[3]
        g = par[4]
        thrust = par[5] * g + u[0]
        cph = math.cos(x[3])
        sph = math.sin(x[3])
        cth = math.cos(x[4])
        sth = math.sin(x[4])
        cps = math.cos(x[5])
        sps = math.sin(x[5])
        vx = x[6]
        vy = x[7]
        vz = x[8]
        p = x[9]
        q = x[10]
        r = x[11]
        # body-to-inertial rotation, yaw-pitch-roll composition
        r00 = cps * cth
        r01 = cps * sth * sph - sps * cph
        r02 = cps * sth * cph + sps * sph
        r10 = sps * cth
        r11 = sps * sth * sph + cps * cph
        r12 = sps * sth * cph - cps * sph
        r20 = -sth
        r21 = cth * sph
        r22 = cth * cph
        out[0] = r00 * vx + r01 * vy + r02 * vz
        out[1] = r10 * vx + r11 * vy + r12 * vz
        out[2] = r20 * vx + r21 * vy + r22 * vz
        # Euler-angle rates from body rates
        tth = sth / cth
        out[3] = p + sph * tth * q + cph * tth * r
        out[4] = cph * q - sph * r
        out[5] = sph / cth * q + cph / cth * r
        # body-frame translational dynamics: R^T applied to inertial gravity (0, 0, -g)
        out[6] = -g * r20 - (q * vz - r * vy)
        out[7] = -g * r21 - (r * vx - p * vz)
        out[8] = -g * r22 + thrust / m - (p * vy - q * vx)
        # rigid-body rotational dynamics with diagonal inertia
        out[9] = (u[1] - (izz - iyy) * q * r) / ixx
        out[10] = (u[2] - (ixx - izz) * p * r) / iyy
        out[11] = (u[3] - (iyy - ixx) * p * q) / izz


@njit(cache=True, nogil=True)
def _violates(x, term_idx, term_bound):
    for k in range(term_idx.shape[0]):
        if abs(x[term_idx[k]]) > term_bound[k]:
            return True
    return False


@njit(cache=True, nogil=True)
def _all_finite(x):
    for j in range(x.shape[0]):
        if not math.isfinite(x[j]):
            return False
    return True


@njit(cache=True, nogil=True)
def rk4_hold(
    pid,
    par,
    x,
    u,
    dist_kind,
    dist_amp,
    dist_freq,
    dist_chan,
    dist_held,
    start_step,
    nsub,
    dt,
    term_idx,
    term_bound,
    sq,
    xs,
    record,
):
    """Integrate `nsub` RK4 sub-steps of size dt with u held constant.

    Mutates `x` in place and accumulates sum(x_i^2 * dt) over executed
    sub-steps into `sq` (left endpoints). Bounds are checked at every
    sub-step boundary, including entry. Returns (substeps_done, status).
    The disturbance is added onto input channel `dist_chan`; periodic
    disturbances are resampled per sub-step at the episode-global time
    (start_step + i) * dt, constant/impulse values are flat over the hold.
    """
    n = x.shape[0]
    m = u.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    xt = np.empty(n)
    u_eff = np.empty(m)
    for j in range(m):
        u_eff[j] = u[j]
    if dist_kind == DIST_CONSTANT:
        u_eff[dist_chan] = u[dist_chan] + dist_amp
    elif dist_kind == DIST_IMPULSE:
        u_eff[dist_chan] = u[dist_chan] + dist_held

    i = 0
    while True:
        if record:
            for j in range(n):
                xs[i, j] = x[j]
        if _violates(x, term_idx, term_bound):
            return i, STATUS_BOUND
        if i == nsub:
            return nsub, STATUS_OK
        for j in range(n):
            sq[j] += x[j] * x[j] * dt
        if dist_kind == DIST_PERIODIC:
            t = (start_step + i) * dt
            u_eff[dist_chan] = u[dist_chan] + dist_amp * math.sin(TWO_PI * dist_freq * t)

        eval_dynamics(pid, par, x, u_eff, k1)
        for j in range(n):
            xt[j] = x[j] + 0.5 * dt * k1[j]
        eval_dynamics(pid, par, xt, u_eff, k2)
        for j in range(n):
            xt[j] = x[j] + 0.5 * dt * k2[j]
        eval_dynamics(pid, par, xt, u_eff, k3)
        for j in range(n):
            xt[j] = x[j] + dt * k3[j]
        eval_dynamics(pid, par, xt, u_eff, k4)
        for j in range(n):
            x[j] = x[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])

        if not _all_finite(x):
            if record:
                for j in range(n):
                    xs[i + 1, j] = x[j]
            return i + 1, STATUS_NONFINITE
        i += 1

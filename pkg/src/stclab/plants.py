"""The four benchmark plants: nonlinear dynamics, RK4 hold integration,
equilibrium linearizations, disturbance injection, and initial sampling.

State conventions
-----------------
pendulum      [theta, theta_dot], upright equilibrium at theta = 0
cartpole      [x, x_dot, theta, theta_dot]
quadrotor2d   [x, z, theta, x_dot, z_dot, theta_dot], hover inputs
              [thrust deviation, pitch moment]
quadrotor3d   [px, py, pz, roll, pitch, yaw, vx, vy, vz, p, q, r] with
              body-frame velocities/rates, inputs [thrust deviation,
              roll torque, pitch torque, yaw torque]

`mass_scale` multiplies the inertial parameters (masses, and the
mass-proportional inertias of the quadrotors). The quadrotor thrust
inputs are deviations from the plant's own hover thrust m*g, so scaling
m rescales the feedforward with it; the mismatch shows up in the
response gains (accelerations per input unit), not as a weight offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from . import _kernels
from .errors import DomainError, IntegrationFault
from .riccati import LinearPlant

if TYPE_CHECKING:
    from .engine import RewardConfig, ShieldConfig

PLANT_IDS = ("pendulum", "cartpole", "quadrotor2d", "quadrotor3d")

_PID = {
    "pendulum": _kernels.PENDULUM,
    "cartpole": _kernels.CARTPOLE,
    "quadrotor2d": _kernels.QUADROTOR2D,
    "quadrotor3d": _kernels.QUADROTOR3D,
}

_DIMS = {
    "pendulum": (2, 1),
    "cartpole": (4, 1),
    "quadrotor2d": (6, 2),
    "quadrotor3d": (12, 4),
}

_DEFAULT_PARAMS = {
    "pendulum": {"m": 1.0, "l": 1.0, "g": 10.0},
    "cartpole": {"m_cart": 1.0, "m_pole": 0.1, "half_length": 0.5, "g": 9.8},
    "quadrotor2d": {"m": 1.0, "inertia": 0.05, "g": 9.81},
    "quadrotor3d": {"m": 1.0, "ixx": 0.02, "iyy": 0.02, "izz": 0.04, "g": 9.81},
}

_U_LIMITS = {
    "pendulum": (2.0,),
    "cartpole": (20.0,),
    "quadrotor2d": (5.0, 1.0),
    "quadrotor3d": (5.0, 1.0, 1.0, 0.5),
}

_ANGLE_ROWS = {
    "pendulum": (0,),
    "cartpole": (2,),
    "quadrotor2d": (2,),
    "quadrotor3d": (3, 4),
}

_DIST_KIND = {
    "none": _kernels.DIST_NONE,
    "constant": _kernels.DIST_CONSTANT,
    "periodic": _kernels.DIST_PERIODIC,
    "impulse": _kernels.DIST_IMPULSE,
}


@dataclass(frozen=True)
class PlantModel:
    """One plant instance: physical constants plus integrator settings."""

    id: str
    params: dict[str, float]
    u_limits: np.ndarray
    dt: float = 0.001
    mass_scale: float = 1.0

    def __post_init__(self):
        if self.id not in PLANT_IDS:
            raise DomainError(f"unknown plant id {self.id!r}")
        if self.dt <= 0.0:
            raise DomainError("dt must be positive")
        if self.mass_scale <= 0.0:
            raise DomainError("mass_scale must be positive")
        if len(self.u_limits) != _DIMS[self.id][1]:
            raise DomainError("u_limits length does not match input dimension")

    @property
    def n(self) -> int:
        return _DIMS[self.id][0]

    @property
    def m(self) -> int:
        return _DIMS[self.id][1]


def make_plant(plant_id: str, *, dt: float = 0.001, mass_scale: float = 1.0,
               param_overrides: dict[str, float] | None = None) -> PlantModel:
    """Build a plant with default parameters, optionally overridden by name."""
    if plant_id not in PLANT_IDS:
        raise DomainError(f"unknown plant id {plant_id!r}")
    params = dict(_DEFAULT_PARAMS[plant_id])
    if param_overrides:
        unknown = set(param_overrides) - set(params)
        if unknown:
            raise DomainError(f"unknown parameters for {plant_id}: {sorted(unknown)}")
        params.update({k: float(v) for k, v in param_overrides.items()})
    return PlantModel(
        id=plant_id,
        params=params,
        u_limits=np.array(_U_LIMITS[plant_id], dtype=float),
        dt=dt,
        mass_scale=mass_scale,
    )


def _packed_params(model: PlantModel) -> tuple[int, np.ndarray]:
    """Plant-id code and the 8-slot parameter vector consumed by the kernels."""
    p = model.params
    s = model.mass_scale
    par = np.zeros(8)
    if model.id == "pendulum":
        par[0] = p["m"] * s
        par[1] = p["l"]
        par[2] = p["g"]
    elif model.id == "cartpole":
        par[0] = p["m_cart"] * s
        par[1] = p["m_pole"] * s
        par[2] = p["half_length"]
        par[3] = p["g"]
    elif model.id == "quadrotor2d":
        par[0] = p["m"] * s
        par[1] = p["inertia"] * s
        par[2] = p["g"]
        # thrust input is defined as deviation from the plant's own hover
        par[3] = p["m"] * s
    else:
        par[0] = p["m"] * s
        par[1] = p["ixx"] * s
        par[2] = p["iyy"] * s
        par[3] = p["izz"] * s
        par[4] = p["g"]
        par[5] = p["m"] * s
    return _PID[model.id], par


def dynamics(model: PlantModel, x, u, d=None) -> np.ndarray:
    """Nonlinear state derivative with effective input u + d."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise IntegrationFault("non-finite state")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if d is not None:
        u = u + np.asarray(d, dtype=float)
    pid, par = _packed_params(model)
    out = np.empty(model.n)
    _kernels.eval_dynamics(pid, par, x, u, out)
    return out


@dataclass(frozen=True)
class DisturbanceSpec:
    """Additive input disturbance: none, constant, periodic, or impulse.

    Impulses fire per decision with probability `probability` and random
    sign, and are held flat over the whole inter-sample interval.
    """

    kind: str = "none"
    amplitude: float = 0.0
    frequency: float = 0.0
    probability: float = 0.05
    channel: int = 0

    def __post_init__(self):
        if self.kind not in _DIST_KIND:
            raise DomainError(f"unknown disturbance kind {self.kind!r}")
        if self.amplitude < 0.0:
            raise DomainError("amplitude must be non-negative")
        if not 0.0 <= self.probability <= 1.0:
            raise DomainError("probability must lie in [0, 1]")


@dataclass(frozen=True)
class HoldResult:
    """Outcome of integrating one held-input interval."""

    x_next: np.ndarray
    substeps: int
    t_elapsed: float
    early_stop: bool
    fault: bool
    sq_integral: np.ndarray
    substates: np.ndarray | None = None


def integrate_hold(
    model: PlantModel,
    x,
    u,
    tau: float,
    *,
    disturbance: DisturbanceSpec | None = None,
    held_impulse: float = 0.0,
    start_substeps: int = 0,
    term_indices=(),
    term_bounds=(),
    record_substates: bool = False,
) -> HoldResult:
    """RK4 sub-steps at dt with u held constant over [0, tau].

    Stops early when a termination bound is crossed at a sub-step boundary
    (entry included) or the state goes non-finite. `start_substeps` anchors
    the episode-global clock used by periodic disturbances; `held_impulse`
    is the (signed) impulse value for this decision, already drawn by the
    caller.
    """
    x = np.array(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float)).copy()
    nsub = int(round(tau / model.dt))
    if nsub < 1 or abs(nsub * model.dt - tau) > 1e-9:
        raise DomainError(f"tau={tau} is not a positive multiple of dt={model.dt}")

    dist = disturbance or DisturbanceSpec()
    pid, par = _packed_params(model)
    tidx = np.asarray(term_indices, dtype=np.int64)
    tbnd = np.asarray(term_bounds, dtype=float)
    sq = np.zeros(model.n)
    xs = np.zeros((nsub + 1 if record_substates else 1, model.n))
    done, status = _kernels.rk4_hold(
        pid, par, x, u,
        _DIST_KIND[dist.kind], dist.amplitude, dist.frequency, dist.channel,
        held_impulse, start_substeps, nsub, model.dt, tidx, tbnd, sq, xs,
        record_substates,
    )
    return HoldResult(
        x_next=x,
        substeps=int(done),
        t_elapsed=int(done) * model.dt,
        early_stop=status == _kernels.STATUS_BOUND,
        fault=status == _kernels.STATUS_NONFINITE,
        sq_integral=sq,
        substates=xs[: done + 1] if record_substates else None,
    )


def linearization(model: PlantModel) -> LinearPlant:
    """Equilibrium linearization with nominal (unscaled) parameters."""
    p = model.params
    if model.id == "pendulum":
        g, l, m = p["g"], p["l"], p["m"]
        a = np.array([[0.0, 1.0], [1.5 * g / l, 0.0]])
        b = np.array([[0.0], [3.0 / (m * l * l)]])
    elif model.id == "cartpole":
        mc, mp, half, g = p["m_cart"], p["m_pole"], p["half_length"], p["g"]
        mt = mc + mp
        denom = half * (4.0 / 3.0 - mp / mt)
        a = np.zeros((4, 4))
        a[0, 1] = 1.0
        a[1, 2] = -mp * half * g / (mt * denom)
        a[2, 3] = 1.0
        a[3, 2] = g / denom
        b = np.array([[0.0], [1.0 / mt + mp * half / (mt * mt * denom)], [0.0], [-1.0 / (mt * denom)]])
    elif model.id == "quadrotor2d":
        m, inertia, g = p["m"], p["inertia"], p["g"]
        a = np.zeros((6, 6))
        a[0, 3] = 1.0
        a[1, 4] = 1.0
        a[2, 5] = 1.0
        a[3, 2] = -g
        b = np.zeros((6, 2))
        b[4, 0] = 1.0 / m
        b[5, 1] = 1.0 / inertia
    else:
        m, ixx, iyy, izz, g = p["m"], p["ixx"], p["iyy"], p["izz"], p["g"]
        a = np.zeros((12, 12))
        for i in range(3):
            a[i, 6 + i] = 1.0  # position <- velocity
            a[3 + i, 9 + i] = 1.0  # attitude <- body rates
        a[6, 4] = g  # pitch tilts thrust into +x
        a[7, 3] = -g  # roll tilts thrust into -y
        b = np.zeros((12, 4))
        b[8, 0] = 1.0 / m
        b[9, 1] = 1.0 / ixx
        b[10, 2] = 1.0 / iyy
        b[11, 3] = 1.0 / izz
    return LinearPlant(
        a=a, b=b,
        u_max=np.array(_U_LIMITS[model.id], dtype=float),
        angle_rows=_ANGLE_ROWS[model.id],
    )


def rotation_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Body-to-inertial rotation, yaw-pitch-roll composition."""
    cph, sph = math.cos(roll), math.sin(roll)
    cth, sth = math.cos(pitch), math.sin(pitch)
    cps, sps = math.cos(yaw), math.sin(yaw)
    return np.array([
        [cps * cth, cps * sth * sph - sps * cph, cps * sth * cph + sps * sph],
        [sps * cth, sps * sth * sph + cps * cph, sps * sth * cph - cps * sph],
        [-sth, cth * sph, cth * cph],
    ])


@dataclass(frozen=True)
class EnvSpec:
    """Everything an episode needs besides the policy and the seed."""

    plant: PlantModel
    init_lo: np.ndarray
    init_hi: np.ndarray
    term_indices: tuple[int, ...]
    term_bounds: tuple[float, ...]
    t_max: float
    tau_min: float
    grid_size: int
    shield: ShieldConfig
    reward: RewardConfig
    disturbance: DisturbanceSpec = field(default_factory=DisturbanceSpec)
    domain_randomization: bool = False

    def __post_init__(self):
        if self.t_max <= 0.0:
            raise DomainError("t_max must be positive")
        if self.grid_size < 1:
            raise DomainError("trigger grid must be non-empty")

    @property
    def tau_max(self) -> float:
        return self.grid_size * self.tau_min


def sample_initial_state(spec: EnvSpec, rng: np.random.Generator) -> np.ndarray:
    """Independent uniform draw per state dimension; exact at zero width."""
    return rng.uniform(spec.init_lo, spec.init_hi)

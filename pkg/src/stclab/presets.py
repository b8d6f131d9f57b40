"""Benchmark configuration: design weights, shield thresholds, trigger
grids, termination boxes, and initial-state ranges for the four plants,
plus the factory that assembles a ready-to-run environment bundle.

Shield thresholds: pendulum and cartpole use fixed angles (0.15 rad and
12 deg); both quadrotors set theta_RTA at 80% of the computed saturation
angle of their attitude-torque channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .engine import RewardConfig, ShieldChannel, ShieldConfig, TriggerGrid
from .errors import DomainError
from .plants import DisturbanceSpec, EnvSpec, PlantModel, linearization, make_plant
from .riccati import CertReport, LinearPlant, RiccatiCert, certificate_report, solve_care

T_MAX = 50.0
MSI_WINDOW = 5
GRID_SIZE = 8


@dataclass(frozen=True)
class PlantConfig:
    q_diag: tuple[float, ...]
    r_diag: tuple[float, ...]
    tau_min: float
    # (input channel, angle row) defining the saturation angle
    sat_channel: int
    sat_angle_row: int
    theta_rta: float | None  # None -> 80% of the saturation angle
    position_triggers: tuple[tuple[int, float], ...]
    term_indices: tuple[int, ...]
    term_bounds: tuple[float, ...]
    init_lo: tuple[float, ...]
    init_hi: tuple[float, ...]
    l_delta: float
    tau_match: float  # fixed-rate comparison interval (grid value)
    # prediction form of the trigger baseline on this plant: the
    # single-input plants saturate their actuator in the regimes the
    # robustness suites probe, and their reference behavior corresponds
    # to predicting with the executed (clipped) input; the quadrotors'
    # reference behavior corresponds to the pure feedback map
    b3_saturated_prediction: bool = False


PLANT_CONFIGS: dict[str, PlantConfig] = {
    "pendulum": PlantConfig(
        q_diag=(10.0, 1.0),
        r_diag=(1.0,),
        tau_min=0.05,
        sat_channel=0,
        sat_angle_row=0,
        theta_rta=0.15,
        position_triggers=(),
        term_indices=(0,),
        term_bounds=(math.radians(60.0),),
        init_lo=(-0.1, -0.5),
        init_hi=(0.1, 0.5),
        l_delta=0.374,
        tau_match=0.40,
        b3_saturated_prediction=True,
    ),
    "cartpole": PlantConfig(
        q_diag=(6.0, 1.0, 11.5, 5.0),
        r_diag=(1.0,),
        tau_min=0.04,
        sat_channel=0,
        sat_angle_row=2,
        theta_rta=math.radians(12.0),
        position_triggers=((0, 1.92),),
        term_indices=(2, 0),
        term_bounds=(math.radians(12.0), 2.4),
        init_lo=(-0.05, -0.05, -0.05, -0.05),
        init_hi=(0.05, 0.05, 0.05, 0.05),
        l_delta=0.289,
        tau_match=0.32,
        b3_saturated_prediction=True,
    ),
    "quadrotor2d": PlantConfig(
        q_diag=(2.0, 2.0, 10.0, 1.0, 1.0, 5.0),
        r_diag=(0.1, 5.0),
        tau_min=0.04,
        sat_channel=1,
        sat_angle_row=2,
        theta_rta=None,
        position_triggers=((0, 2.0), (1, 2.0)),
        term_indices=(2, 0, 1),
        term_bounds=(math.radians(30.0), 2.5, 2.5),
        init_lo=(-0.3, -0.3, -0.1, -0.3, -0.3, -0.3),
        init_hi=(0.3, 0.3, 0.1, 0.3, 0.3, 0.3),
        l_delta=2.301,
        tau_match=0.28,
    ),
    "quadrotor3d": PlantConfig(
        q_diag=(2.0, 2.0, 2.0, 10.0, 10.0, 1.0, 1.0, 1.0, 1.0, 5.0, 5.0, 1.0),
        r_diag=(0.1, 5.0, 5.0, 10.0),
        tau_min=0.04,
        sat_channel=1,
        sat_angle_row=3,
        theta_rta=None,
        position_triggers=((0, 2.0), (1, 2.0), (2, 2.0)),
        term_indices=(3, 4, 5, 0, 1, 2),
        term_bounds=(
            math.radians(30.0), math.radians(30.0), math.radians(90.0),
            2.5, 2.5, 2.5,
        ),
        init_lo=(-0.3, -0.3, -0.3, -0.1, -0.1, -0.1, -0.3, -0.3, -0.3, -0.1, -0.1, -0.1),
        init_hi=(0.3, 0.3, 0.3, 0.1, 0.1, 0.1, 0.3, 0.3, 0.3, 0.1, 0.1, 0.1),
        l_delta=0.684,
        tau_match=0.32,
    ),
}


def design_weights(plant_id: str) -> tuple[np.ndarray, np.ndarray]:
    cfg = PLANT_CONFIGS[plant_id]
    return np.diag(cfg.q_diag), np.diag(cfg.r_diag)


def synthesize(plant_id: str, model: PlantModel | None = None) -> tuple[LinearPlant, RiccatiCert]:
    """Linearize and solve the CARE with the benchmark design weights."""
    model = model or make_plant(plant_id)
    lin = linearization(model)
    q, r = design_weights(plant_id)
    return lin, solve_care(lin.a, lin.b, q, r)


def shield_angles(plant_id: str, cert: RiccatiCert, lin: LinearPlant) -> tuple[float, float]:
    """(theta_RTA, theta_sat) in radians for the monitored angle channel."""
    from .riccati import saturation_angle

    cfg = PLANT_CONFIGS[plant_id]
    theta_sat = saturation_angle(cert, lin, cfg.sat_channel, cfg.sat_angle_row)
    theta_rta = cfg.theta_rta if cfg.theta_rta is not None else 0.8 * theta_sat
    if theta_rta >= theta_sat:
        raise DomainError("theta_RTA must lie strictly below the saturation angle")
    return theta_rta, theta_sat


@dataclass(frozen=True)
class PlantSetup:
    """Composition bundle: plant + certificate + environment spec."""

    plant_id: str
    model: PlantModel
    lin: LinearPlant
    cert: RiccatiCert
    spec: EnvSpec
    grid: TriggerGrid
    theta_rta: float
    theta_sat: float


def build_setup(
    plant_id: str,
    *,
    shield_mode: str = "hard",
    w_c: float = 1.0,
    mass_scale: float = 1.0,
    disturbance: DisturbanceSpec | None = None,
    domain_randomization: bool = False,
    dt: float = 0.001,
    param_overrides: dict[str, float] | None = None,
    tau_min: float | None = None,
    grid_size: int | None = None,
) -> PlantSetup:
    """Assemble the environment for one plant.

    The certificate, shield thresholds, and linearization are always
    nominal; `mass_scale` and `disturbance` perturb only the simulated
    plant, matching the robustness protocol.
    """
    if plant_id not in PLANT_CONFIGS:
        raise DomainError(f"unknown plant id {plant_id!r}")
    cfg = PLANT_CONFIGS[plant_id]
    model = make_plant(plant_id, dt=dt, mass_scale=mass_scale, param_overrides=param_overrides)
    lin, cert = synthesize(plant_id, replace(model, mass_scale=1.0))
    theta_rta, theta_sat = shield_angles(plant_id, cert, lin)
    channels = tuple(
        ShieldChannel(c=np.eye(model.n)[row], theta_rta=theta_rta)
        for row in lin.angle_rows
    )
    shield = ShieldConfig(
        mode=shield_mode,
        channels=channels,
        position_bounds=cfg.position_triggers,
        backup=cert,
    )
    grid = TriggerGrid(
        tau_min=cfg.tau_min if tau_min is None else tau_min,
        size=GRID_SIZE if grid_size is None else grid_size,
    )
    reward = RewardConfig(
        w_c=w_c,
        decay=cert.decay,
        v_scale=cert.v_scale,
        tau_min=grid.tau_min,
        tau_max=grid.tau_max,
    )
    spec = EnvSpec(
        plant=model,
        init_lo=np.array(cfg.init_lo),
        init_hi=np.array(cfg.init_hi),
        term_indices=cfg.term_indices,
        term_bounds=cfg.term_bounds,
        t_max=T_MAX,
        tau_min=grid.tau_min,
        grid_size=grid.size,
        shield=shield,
        reward=reward,
        disturbance=disturbance or DisturbanceSpec(),
        domain_randomization=domain_randomization,
    )
    return PlantSetup(
        plant_id=plant_id, model=model, lin=lin, cert=cert, spec=spec,
        grid=grid, theta_rta=theta_rta, theta_sat=theta_sat,
    )


def build_cert_report(plant_id: str) -> CertReport:
    """Certificate table for one plant (the `verify` payload)."""
    cfg = PLANT_CONFIGS[plant_id]
    lin, cert = synthesize(plant_id)
    theta_rta, _ = shield_angles(plant_id, cert, lin)
    return certificate_report(
        plant_id,
        cert,
        lin,
        l_delta=cfg.l_delta,
        theta_rta=theta_rta,
        tau_min=cfg.tau_min,
        tau_max=cfg.tau_min * GRID_SIZE,
        sat_channel=cfg.sat_channel,
        sat_angle_row=cfg.sat_angle_row,
    )

"""CARE synthesis and the Lyapunov certificate bundle.

Solves the continuous-time algebraic Riccati equation by the ordered Schur
decomposition of the 2n x 2n Hamiltonian, derives the LQR gain and decay
rate, and computes every certificate quantity reported by the `verify`
command: saturation/shield angles, the ZOH closed-loop map M(tau), the
discrete-decrease matrix P - M^T P M, the critical hold time, and the
conservative nonlinear stability radius.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ConditioningError, DomainError, SynthesisError
from .numerics import PSD_TOL, _phi_gamma, gen_eig_min, sym_eig_min, zoh_pair

CARE_RESIDUAL_RTOL = 1e-8


@dataclass(frozen=True)
class LinearPlant:
    """Equilibrium linearization plus actuator limits.

    `angle_rows` indexes the angle-like states monitored by the safety
    shield; `u_max` is the symmetric per-channel actuator bound.
    """

    a: np.ndarray
    b: np.ndarray
    u_max: np.ndarray
    angle_rows: tuple[int, ...]

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]


@dataclass(frozen=True)
class RiccatiCert:
    """Lyapunov certificate: V(x) = x^T P x with LQR gain K = R^-1 B^T P.

    `decay` is the minimum generalized eigenvalue of (M_Q, P) with
    M_Q = Q + K^T R K, giving V' <= -decay * V along the continuous
    closed loop; `v_scale` = tr(P)/n normalizes Lyapunov values.
    """

    p: np.ndarray
    k: np.ndarray
    q: np.ndarray
    r: np.ndarray
    decay: float
    v_scale: float
    m_q: np.ndarray

    def v(self, x) -> float:
        """Lyapunov value x^T P x."""
        x = np.asarray(x, dtype=float)
        return float(x @ self.p @ x)


def solve_care(a, b, q, r) -> RiccatiCert:
    """Solve A^T P + P A - P B R^-1 B^T P + Q = 0 for the stabilizing P.

    Method: real Schur form of the Hamiltonian [[A, -B R^-1 B^T], [-Q, -A^T]]
    ordered so the stable invariant subspace [U1; U2] leads; P = U2 U1^-1,
    symmetrized. Raises SynthesisError when fewer than n stable Hamiltonian
    eigenvalues exist or the closed loop is not Hurwitz, ConditioningError
    when U1 is near-singular or the residual check fails.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        b = b.reshape(-1, 1)
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    if r.ndim == 0:
        r = r.reshape(1, 1)
    n = a.shape[0]

    r_chol = np.linalg.cholesky(r)  # R must be PD
    del r_chol
    g = b @ np.linalg.solve(r, b.T)
    ham = np.block([[a, -g], [-q, -a.T]])
    _, z, sdim = sla.schur(ham, output="real", sort="lhp")
    if sdim != n:
        raise SynthesisError(
            f"no stabilizing solution: {sdim} stable Hamiltonian eigenvalues, expected {n}"
        )
    u1 = z[:n, :n]
    u2 = z[n:, :n]
    if np.linalg.cond(u1) > 1e12:
        raise ConditioningError("stable-subspace basis U1 is near-singular")
    p = np.linalg.solve(u1.T, u2.T).T
    asym = float(np.max(np.abs(p - p.T)))
    if asym > 1e-8 * max(1.0, float(np.max(np.abs(p)))):
        raise ConditioningError(f"P asymmetry {asym:.3e} exceeds tolerance")
    p = (p + p.T) / 2.0

    residual = a.T @ p + p @ a - p @ g @ p + q
    if np.linalg.norm(residual) > CARE_RESIDUAL_RTOL * np.linalg.norm(q):
        raise ConditioningError("CARE residual exceeds 1e-8 * ||Q||_F")

    k = np.linalg.solve(r, b.T @ p)
    a_cl = a - b @ k
    if np.max(np.linalg.eigvals(a_cl).real) >= 0.0:
        raise SynthesisError("closed loop A - BK is not Hurwitz")

    m_q = q + k.T @ r @ k
    m_q = (m_q + m_q.T) / 2.0
    decay = gen_eig_min(m_q, p)
    return RiccatiCert(
        p=p, k=k, q=q, r=r, decay=float(decay),
        v_scale=float(np.trace(p) / n), m_q=m_q,
    )


def zoh_closed_loop(cert: RiccatiCert, plant: LinearPlant, tau: float) -> np.ndarray:
    """ZOH closed-loop transition M(tau) = phi - gamma @ K."""
    pair = zoh_pair(plant.a, plant.b, tau)
    return pair.phi - pair.gamma @ cert.k


def _closed_loop_any(cert: RiccatiCert, plant: LinearPlant, tau: float) -> np.ndarray:
    # M(tau) extended to tau <= 0 for derivative probes at the origin.
    phi, gamma = _phi_gamma(plant.a, plant.b, tau)
    return phi - gamma @ cert.k


@dataclass(frozen=True)
class DecreaseCheck:
    lambda_min: float
    certified: bool


def check_discrete_decrease(cert: RiccatiCert, plant: LinearPlant, tau: float) -> DecreaseCheck:
    """PSD test of P - M(tau)^T P M(tau); certifies one-step Lyapunov decrease."""
    m = zoh_closed_loop(cert, plant, tau)
    m_disc = cert.p - m.T @ cert.p @ m
    lam = sym_eig_min(m_disc)
    return DecreaseCheck(lambda_min=lam, certified=lam >= -PSD_TOL)


def tau_critical(
    cert: RiccatiCert, plant: LinearPlant, tau_max: float, tol: float = 1e-4
) -> float | None:
    """Largest hold time with certified discrete decrease, by bisection.

    Returns None when the decrease certificate still holds at `tau_max`.
    A result below `tol` means the certificate already fails at the
    bisection resolution (degenerate case).
    """
    if tol <= 0.0:
        raise DomainError("tol must be positive")
    if check_discrete_decrease(cert, plant, tau_max).certified:
        return None
    lo, hi = 0.0, float(tau_max)  # lambda_min -> 0+ as tau -> 0
    while hi - lo > tol:
        mid = (lo + hi) / 2.0
        if check_discrete_decrease(cert, plant, mid).certified:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


def saturation_angle(cert: RiccatiCert, plant: LinearPlant, channel: int, angle_row: int) -> float:
    """Angle (rad) at which the backup's `channel` saturates: u_max / |K_theta|."""
    gain = float(cert.k[channel, angle_row])
    if gain == 0.0:
        raise DomainError(f"K[{channel}, {angle_row}] is zero")
    return float(plant.u_max[channel]) / abs(gain)


def stability_radius(cert: RiccatiCert, l_delta: float) -> float:
    """Conservative nonlinear stability radius lmin(M_Q) / (2 lmax(P) L_delta)."""
    if l_delta <= 0.0:
        raise DomainError("L_delta must be positive")
    lam_min_mq = sym_eig_min(cert.m_q)
    lam_max_p = float(np.linalg.eigvalsh(cert.p)[-1])
    return lam_min_mq / (2.0 * lam_max_p * l_delta)


def estimate_l_delta(model, cert: RiccatiCert, radius: float, samples: int, seed: int, f=None) -> float:
    """Sampled quadratic bound on the linearization residual.

    Draws `samples` points uniformly from the ball ||x|| <= radius and
    returns max ||f(x, -Kx) - (A - BK) x|| / ||x||^2, skipping ||x|| < 1e-6.
    This is a diagnostic; the shipped per-plant L_delta values are the
    source of record for reports. `f` overrides the plant dynamics
    (signature f(x, u) -> xdot), mainly for testing.
    """
    from . import plants  # deferred: plants depends on this module's types

    if radius <= 0.0:
        raise DomainError("radius must be positive")
    lin = plants.linearization(model)
    a_cl = lin.a - lin.b @ cert.k
    if f is None:
        f = lambda x, u: plants.dynamics(model, x, u)
    n = lin.n
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(int(samples)):
        direction = rng.standard_normal(n)
        direction /= np.linalg.norm(direction)
        x = direction * radius * rng.uniform() ** (1.0 / n)
        nx = float(np.linalg.norm(x))
        if nx < 1e-6:
            continue
        delta = f(x, -cert.k @ x) - a_cl @ x
        ratio = float(np.linalg.norm(delta)) / nx**2
        if ratio > best:
            best = ratio
    return best


def delta_v_derivative_check(
    cert: RiccatiCert, plant: LinearPlant, x, h: float = 1e-6
) -> dict[str, float]:
    """Central finite difference of dV(tau) = V(M(tau)x) - V(x) at tau = 0.

    Returns {'fd': ..., 'exact': ...} where exact = -x^T M_Q x; agreement
    validates both the closed-loop map and the CARE identity.
    """
    x = np.asarray(x, dtype=float)
    if not (1e-8 <= h <= 1e-4):
        raise DomainError("h must lie in [1e-8, 1e-4]")
    if float(np.linalg.norm(x)) == 0.0:
        raise DomainError("x must be nonzero")

    def dv(tau):
        xt = _closed_loop_any(cert, plant, tau) @ x
        return cert.v(xt) - cert.v(x)

    fd = (dv(h) - dv(-h)) / (2.0 * h)
    exact = -float(x @ cert.m_q @ x)
    return {"fd": fd, "exact": exact}


@dataclass(frozen=True)
class CertReport:
    """The per-plant certificate table emitted by `verify`."""

    plant_id: str
    k: np.ndarray
    decay: float
    v_scale: float
    lambda_min_mq: float
    lambda_max_p: float
    l_delta: float
    r_star: float
    theta_rta_deg: float
    theta_sat_deg: float
    lambda_min_mdisc: float
    certified: bool
    tau_critical: float | None
    spectral_radius_tau_min: float

    def to_dict(self) -> dict:
        return {
            "plant": self.plant_id,
            "k": self.k.tolist(),
            "decay": self.decay,
            "v_scale": self.v_scale,
            "lambda_min_mq": self.lambda_min_mq,
            "lambda_max_p": self.lambda_max_p,
            "l_delta": self.l_delta,
            "r_star": self.r_star,
            "theta_rta_deg": self.theta_rta_deg,
            "theta_sat_deg": self.theta_sat_deg,
            "lambda_min_mdisc": self.lambda_min_mdisc,
            "certified": self.certified,
            "tau_critical": self.tau_critical,
            "spectral_radius_tau_min": self.spectral_radius_tau_min,
        }


def certificate_report(
    plant_id: str,
    cert: RiccatiCert,
    plant: LinearPlant,
    *,
    l_delta: float,
    theta_rta: float,
    tau_min: float,
    tau_max: float,
    sat_channel: int,
    sat_angle_row: int,
) -> CertReport:
    """Assemble the full certificate table for one plant."""
    from .numerics import spectral_radius as rho

    check = check_discrete_decrease(cert, plant, tau_min)
    theta_sat = saturation_angle(cert, plant, sat_channel, sat_angle_row)
    if theta_rta >= theta_sat:
        raise DomainError("theta_RTA must lie strictly below the saturation angle")
    return CertReport(
        plant_id=plant_id,
        k=cert.k,
        decay=cert.decay,
        v_scale=cert.v_scale,
        lambda_min_mq=sym_eig_min(cert.m_q),
        lambda_max_p=float(np.linalg.eigvalsh(cert.p)[-1]),
        l_delta=l_delta,
        r_star=stability_radius(cert, l_delta),
        theta_rta_deg=float(np.degrees(theta_rta)),
        theta_sat_deg=float(np.degrees(theta_sat)),
        lambda_min_mdisc=check.lambda_min,
        certified=check.certified,
        tau_critical=tau_critical(cert, plant, tau_max),
        spectral_radius_tau_min=rho(zoh_closed_loop(cert, plant, tau_min)),
    )

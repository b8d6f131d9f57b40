"""Dense matrix kernels: exponentials, ZOH discretization, eigen checks.

Everything here operates on small dense float64 arrays (n <= 13); inputs
are never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, DomainError

# PSD verdicts use this eigenvalue floor throughout the package.
PSD_TOL = 1e-9


def _as_square(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} has non-finite entries")
    return a


def mat_exp(a, t: float) -> np.ndarray:
    """Matrix exponential e^(A*t) via scaling-and-squaring Pade."""
    a = _as_square(a, "A")
    return sla.expm(a * float(t))


@dataclass(frozen=True)
class ZohPair:
    """Exact zero-order-hold discretization of dx/dt = Ax + Bu.

    phi = e^(A*tau), gamma = (integral_0^tau e^(As) ds) B, so that holding
    u constant gives x(tau) = phi @ x0 + gamma @ u.
    """

    phi: np.ndarray
    gamma: np.ndarray
    tau: float


def zoh_pair(a, b, tau: float) -> ZohPair:
    """ZOH pair computed jointly from the exponential of [[A, B], [0, 0]]."""
    if tau <= 0.0:
        raise DomainError(f"tau must be positive, got {tau}")
    phi, gamma = _phi_gamma(a, b, tau)
    return ZohPair(phi=phi, gamma=gamma, tau=float(tau))


def _phi_gamma(a, b, tau: float) -> tuple[np.ndarray, np.ndarray]:
    # Internal variant without the tau > 0 guard; finite-difference probes
    # around tau = 0 need both signs.
    a = _as_square(a, "A")
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        b = b.reshape(-1, 1)
    n = a.shape[0]
    if b.shape[0] != n:
        raise DimensionError(f"B has {b.shape[0]} rows, expected {n}")
    m = b.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = a
    aug[:n, n:] = b
    e = sla.expm(aug * float(tau))
    return np.ascontiguousarray(e[:n, :n]), np.ascontiguousarray(e[:n, n:])


def sym_eig_min(s) -> float:
    """Smallest eigenvalue of a symmetric matrix.

    The input is symmetrized as (S + S^T)/2 after an asymmetry check;
    a PSD verdict is `sym_eig_min(S) >= -PSD_TOL`.
    """
    s = _as_square(s, "S")
    scale = max(1.0, float(np.max(np.abs(s))))
    if float(np.max(np.abs(s - s.T))) > 1e-9 * scale:
        raise DomainError("matrix is asymmetric beyond tolerance 1e-9")
    s = (s + s.T) / 2.0
    return float(np.linalg.eigvalsh(s)[0])


def gen_eig_min(a, bp) -> float:
    """Smallest generalized eigenvalue of (A, B) with B symmetric PD.

    Reduces via the Cholesky factor L of B to the standard symmetric
    problem for L^-1 A L^-T and defers to `sym_eig_min`, so
    `gen_eig_min(A, I)` follows the identical code path as
    `sym_eig_min(A)`.
    """
    a = _as_square(a, "A")
    bp = _as_square(bp, "B")
    try:
        l = np.linalg.cholesky(bp)
    except np.linalg.LinAlgError as exc:
        raise DomainError("B is not positive-definite") from exc
    tmp = sla.solve_triangular(l, a, lower=True)
    red = sla.solve_triangular(l, tmp.T, lower=True).T
    return sym_eig_min(red)


def spectral_radius(m) -> float:
    """Largest eigenvalue modulus over the (possibly complex) spectrum."""
    m = _as_square(m, "M")
    return float(np.max(np.abs(np.linalg.eigvals(m))))

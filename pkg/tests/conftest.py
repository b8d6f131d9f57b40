from __future__ import annotations

import numpy as np
import pytest

from stclab.presets import build_setup

PLANTS = ("pendulum", "cartpole", "quadrotor2d", "quadrotor3d")


@pytest.fixture(scope="session")
def setups():
    """One nominal hard-shield setup per plant (synthesized once)."""
    return {p: build_setup(p) for p in PLANTS}


@pytest.fixture(scope="session")
def soft_setups():
    return {p: build_setup(p, shield_mode="soft") for p in PLANTS}


def rk4_matrix_ode(a: np.ndarray, t: float, steps: int) -> np.ndarray:
    """Dense-integration oracle: RK4 on dX/dt = A X, X(0) = I."""
    n = a.shape[0]
    x = np.eye(n)
    h = t / steps
    for _ in range(steps):
        k1 = a @ x
        k2 = a @ (x + 0.5 * h * k1)
        k3 = a @ (x + 0.5 * h * k2)
        k4 = a @ (x + h * k3)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x

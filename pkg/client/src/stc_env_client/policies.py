"""Example client-side policies for the remote environment.

Both act on the served metadata alone; no plant knowledge lives here.
"""

from __future__ import annotations

import numpy as np

from .env import RemoteEnv


class RandomGridPolicy:
    """Uniform random inputs within the served limits, random grid index."""

    def __init__(self, env: RemoteEnv, rng: np.random.Generator):
        self.u_max = env.u_max
        self.n_taus = len(env.action_grid)
        self.rng = rng

    def act(self, obs: np.ndarray) -> tuple[np.ndarray, int]:
        u = self.rng.uniform(-self.u_max, self.u_max)
        return u, int(self.rng.integers(0, self.n_taus))


class LqrMirrorPolicy:
    """Clipped state feedback -Kx at the smallest interval, with K taken
    from the served metadata; mirrors the server's fixed-rate baseline."""

    def __init__(self, env: RemoteEnv):
        self.k = env.gain
        self.u_max = env.u_max
        self.state_dim = env.state_dim

    def act(self, obs: np.ndarray) -> tuple[np.ndarray, int]:
        x = obs[: self.state_dim]
        u = np.clip(-(self.k @ x), -self.u_max, self.u_max)
        return u, 0

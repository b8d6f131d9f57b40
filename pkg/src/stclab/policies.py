"""Policy contract and the non-learned controllers.

Policies map an Observation to (u, tau) with tau on the trigger grid.
`LqrPolicy` is the fixed-rate baseline (B1 at tau_min, B2 at the matched
interval), `ClassicalStcPolicy` the analytical Lyapunov-triggered baseline
(B3), `FixedTauPolicy` the fixed-interval ablation wrapper, and
`BridgePolicy` attaches an external agent over the JSON-lines bridge.
"""

from __future__ import annotations

import math

import numpy as np

from .bridge import ChildProcessTransport, SocketTransport
from .engine import Observation, TriggerGrid
from .errors import ConfigError, ProtocolFault
from .numerics import zoh_pair
from .riccati import LinearPlant, RiccatiCert


class Policy:
    """Base contract: produce (u within limits, tau on the grid)."""

    shareable = True  # stateless policies may serve parallel episodes

    def reset(self, episode: int = 0, seed: int | None = None) -> None:
        pass

    def act(self, obs: Observation) -> tuple[np.ndarray, float]:
        raise NotImplementedError

    def close(self) -> None:
        pass


class LqrPolicy(Policy):
    """Clipped state feedback -Kx at a fixed inter-sample interval."""

    def __init__(self, cert: RiccatiCert, lin: LinearPlant, tau_fixed: float, grid: TriggerGrid):
        grid.index_of(tau_fixed)  # membership check
        self.k = cert.k
        self.u_max = lin.u_max
        self.tau = float(tau_fixed)

    def act(self, obs: Observation) -> tuple[np.ndarray, float]:
        u = np.clip(-(self.k @ obs.x), -self.u_max, self.u_max)
        return u, self.tau


class ClassicalStcPolicy(Policy):
    """Greedy Lyapunov trigger: the largest grid interval whose linearized
    ZOH prediction M(tau) x still satisfies exponential decay.

    Falls back to tau_min when no grid value passes the test. With
    `saturate_prediction` the prediction is phi(tau) x + gamma(tau) u with
    the executed (clipped) input u = clip(-Kx) instead of the pure linear
    feedback; the two coincide wherever the feedback is unsaturated, but
    behave differently in saturated regimes (see the README's robustness
    notes).
    """

    def __init__(self, cert: RiccatiCert, lin: LinearPlant, grid: TriggerGrid,
                 saturate_prediction: bool = False):
        self.k = cert.k
        self.p = cert.p
        self.u_max = lin.u_max
        self.saturate_prediction = saturate_prediction
        self.taus = [float(t) for t in grid.values]
        pairs = [zoh_pair(lin.a, lin.b, t) for t in grid.values]
        self.phis = [pr.phi for pr in pairs]
        self.gammas = [pr.gamma for pr in pairs]
        self.maps = [pr.phi - pr.gamma @ cert.k for pr in pairs]
        self.decay_factors = [math.exp(-cert.decay * t) for t in grid.values]

    def act(self, obs: Observation) -> tuple[np.ndarray, float]:
        x = obs.x
        u = np.clip(-(self.k @ x), -self.u_max, self.u_max)
        v0 = float(x @ self.p @ x)
        for j in range(len(self.taus) - 1, -1, -1):
            if self.saturate_prediction:
                xp = self.phis[j] @ x + self.gammas[j] @ u
            else:
                xp = self.maps[j] @ x
            if float(xp @ self.p @ xp) <= v0 * self.decay_factors[j]:
                return u, self.taus[j]
        return u, self.taus[0]


class FixedTauPolicy(Policy):
    """Wrap a policy, overriding its interval output with a fixed grid value."""

    def __init__(self, inner: Policy, tau: float, grid: TriggerGrid):
        grid.index_of(tau)
        self.inner = inner
        self.tau = float(tau)

    @property
    def shareable(self):  # type: ignore[override]
        return self.inner.shareable

    def reset(self, episode: int = 0, seed: int | None = None) -> None:
        self.inner.reset(episode=episode, seed=seed)

    def act(self, obs: Observation) -> tuple[np.ndarray, float]:
        u, _ = self.inner.act(obs)
        return u, self.tau


class BridgePolicy(Policy):
    """External policy behind a line transport.

    Each decision round-trips one obs/act pair; reset and close lifecycle
    messages are forwarded. Any malformed reply, off-grid tau index, or
    timeout raises ProtocolFault, which aborts the episode with a distinct
    cause.
    """

    shareable = False  # exclusive transport ownership

    def __init__(self, transport, grid: TriggerGrid, meta: dict | None = None,
                 timeout: float = 10.0):
        self.transport = transport
        self.grid = grid
        self.timeout = timeout
        self.episode = 0
        self.k = 0
        if meta is not None:
            transport.send(meta)

    def reset(self, episode: int = 0, seed: int | None = None) -> None:
        self.episode = episode
        self.k = 0
        self.transport.send({"type": "reset", "ep": episode, "seed": 0 if seed is None else int(seed)})

    def act(self, obs: Observation) -> tuple[np.ndarray, float]:
        self.transport.send({
            "type": "obs",
            "ep": self.episode,
            "k": self.k,
            "x": [float(v) for v in obs.x],
            "msi": obs.msi,
            "b": obs.b,
        })
        msg = self.transport.recv(timeout=self.timeout)
        if msg is None:
            raise ProtocolFault("bridge peer closed the stream")
        if msg.get("type") != "act":
            raise ProtocolFault(f"expected act message, got {msg.get('type')!r}")
        try:
            u = np.asarray([float(v) for v in msg["u"]], dtype=float)
            tau_idx = int(msg["tau_idx"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolFault(f"malformed act message: {exc}") from exc
        if not 0 <= tau_idx < self.grid.size:
            raise ProtocolFault(f"tau index {tau_idx} outside the grid")
        self.k += 1
        return u, float(self.grid.values[tau_idx])

    def close(self) -> None:
        try:
            self.transport.send({"type": "close"})
        except (OSError, ValueError):
            pass
        self.transport.close()


def lqr_policy(cert: RiccatiCert, lin: LinearPlant, tau_fixed: float, grid: TriggerGrid) -> Policy:
    return LqrPolicy(cert, lin, tau_fixed, grid)


def classical_stc_policy(cert: RiccatiCert, lin: LinearPlant, grid: TriggerGrid,
                         saturate_prediction: bool = False) -> Policy:
    return ClassicalStcPolicy(cert, lin, grid, saturate_prediction=saturate_prediction)


def fixed_tau_policy(inner: Policy, tau: float, grid: TriggerGrid) -> Policy:
    return FixedTauPolicy(inner, tau, grid)


def bridge_policy(transport, grid: TriggerGrid, meta: dict | None = None,
                  timeout: float = 10.0) -> Policy:
    return BridgePolicy(transport, grid, meta=meta, timeout=timeout)


def make_policy(setup, policy_cfg: dict) -> Policy:
    """Build a policy from its config document.

    Kinds: b1 (LQR at tau_min), b2 (LQR at the plant's matched interval),
    lqr (LQR at an explicit tau), b3/classical_stc, fixed_tau (wrapping an
    inner policy), bridge (external peer over stdio or a socket).
    """
    from .bridge import make_meta
    from .presets import PLANT_CONFIGS

    kind = policy_cfg.get("kind")
    grid = setup.grid
    if kind == "b1":
        return lqr_policy(setup.cert, setup.lin, grid.tau_min, grid)
    if kind == "b2":
        return lqr_policy(setup.cert, setup.lin, PLANT_CONFIGS[setup.plant_id].tau_match, grid)
    if kind == "lqr":
        return lqr_policy(setup.cert, setup.lin, float(policy_cfg["tau"]), grid)
    if kind in ("b3", "classical_stc"):
        default_sat = PLANT_CONFIGS[setup.plant_id].b3_saturated_prediction
        return classical_stc_policy(
            setup.cert, setup.lin, grid,
            saturate_prediction=bool(policy_cfg.get("saturate_prediction", default_sat)),
        )
    if kind == "fixed_tau":
        inner = make_policy(setup, policy_cfg["inner"])
        tau = policy_cfg.get("tau")
        if tau is None:
            tau = PLANT_CONFIGS[setup.plant_id].tau_match
        return fixed_tau_policy(inner, float(tau), grid)
    if kind == "bridge":
        timeout = float(policy_cfg.get("timeout", 10.0))
        if "cmd" in policy_cfg:
            transport = ChildProcessTransport(list(policy_cfg["cmd"]))
        elif "connect" in policy_cfg:
            host, _, port = str(policy_cfg["connect"]).rpartition(":")
            transport = SocketTransport.connect(host or "127.0.0.1", int(port))
        else:
            raise ConfigError("bridge policy needs 'cmd' or 'connect'")
        return bridge_policy(transport, grid, meta=make_meta(setup), timeout=timeout)
    raise ConfigError(f"unknown policy kind {kind!r}")

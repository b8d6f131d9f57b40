"""Self-triggered episode engine.

One decision = observe (x, msi, b) -> policy proposes (u, tau) -> clip ->
safety shield (predict one step ahead, override in hard mode) -> hold-
integrate the plant -> reward -> record. `EpisodeSession` exposes this as
an explicit observation/step pair so the same code path serves in-process
policies (`run_episode`) and the external bridge (`serve-env`).

The shield always predicts with the *nominal* model and linearization;
mass scaling and disturbances perturb only the integrated plant.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .errors import DomainError, ProtocolFault
from .plants import (
    EnvSpec,
    PlantModel,
    _packed_params,
    integrate_hold,
    linearization,
    sample_initial_state,
)
from .riccati import LinearPlant, RiccatiCert


@dataclass(frozen=True)
class TriggerGrid:
    """Admissible inter-sample intervals {tau_min, 2 tau_min, ..., N tau_min}."""

    tau_min: float
    size: int = 8

    def __post_init__(self):
        if self.tau_min <= 0.0 or self.size < 1:
            raise DomainError("trigger grid requires tau_min > 0 and size >= 1")

    @property
    def values(self) -> np.ndarray:
        return self.tau_min * np.arange(1, self.size + 1)

    @property
    def tau_max(self) -> float:
        return self.size * self.tau_min

    def index_of(self, tau: float) -> int:
        """Grid index of tau; raises ProtocolFault for off-grid values."""
        idx = int(round(tau / self.tau_min)) - 1
        if not 0 <= idx < self.size or abs(tau - (idx + 1) * self.tau_min) > 1e-9:
            raise ProtocolFault(f"tau={tau} is not on the trigger grid")
        return idx


class MsiTracker:
    """Causal moving average of executed intervals, window n (default 5)."""

    def __init__(self, value: float, window: int = 5):
        self.window = window
        self.value = float(value)

    def update(self, tau: float) -> None:
        self.value = ((self.window - 1) * self.value + tau) / self.window


@dataclass(frozen=True)
class ShieldChannel:
    """One monitored scalar q = c^T x with its shield threshold (rad)."""

    c: np.ndarray
    theta_rta: float


@dataclass(frozen=True)
class ShieldConfig:
    """Run-time assurance contract.

    hard: predicate violations trigger the clipped backup at tau_min.
    soft: the predicate is evaluated and logged (and penalized in the
          reward) but never overrides the action.
    off:  the predicate is not evaluated at all.
    """

    mode: str
    channels: tuple[ShieldChannel, ...]
    position_bounds: tuple[tuple[int, float], ...]
    backup: RiccatiCert

    def __post_init__(self):
        if self.mode not in ("hard", "soft", "off"):
            raise DomainError(f"unknown shield mode {self.mode!r}")


@dataclass(frozen=True)
class RewardConfig:
    """Weights of the per-step reward; decay/v_scale come from the certificate."""

    w_c: float
    decay: float
    v_scale: float
    tau_min: float
    tau_max: float
    near_origin_guard: float = 0.25
    rta_penalty_scale: float = 100.0
    terminal_penalty: float = -1000.0

    def __post_init__(self):
        if self.w_c < 0.0:
            raise DomainError("w_c must be non-negative")


@dataclass(frozen=True)
class Observation:
    """What the policy sees: state, tracked MSI, previous-step override flag."""

    x: np.ndarray
    msi: float
    b: int

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x, [self.msi, float(self.b)]])


@dataclass(frozen=True)
class RewardTerms:
    total: float
    stability: float
    communication: float
    safety: float
    terminal: float


def compute_reward(
    rcfg: RewardConfig,
    cert: RiccatiCert,
    x_k,
    x_next,
    tau: float,
    msi_k: float,
    safety_event: bool,
    terminated_by_violation: bool,
) -> RewardTerms:
    """Per-step reward: stability + communication + safety terms.

    `msi_k` is the tracker value at decision time (pre-update), matching
    the observation the policy acted on. `safety_event` is the shield
    override in hard mode or the logged predicate violation in soft mode.
    """
    v_k = cert.v(x_k)
    v_next = cert.v(x_next)
    guard = v_k < rcfg.near_origin_guard * rcfg.v_scale
    r_stab = 1.0 if (v_next <= v_k * math.exp(-rcfg.decay * tau) or guard) else -1.0
    stability = r_stab + 1.0 - v_next / rcfg.v_scale
    frac = (msi_k - rcfg.tau_min) / (rcfg.tau_max - rcfg.tau_min)
    communication = rcfg.w_c * frac * frac
    safety = -rcfg.rta_penalty_scale if safety_event else 0.0
    terminal = rcfg.terminal_penalty if terminated_by_violation else 0.0
    return RewardTerms(
        total=stability + communication + safety + terminal,
        stability=stability,
        communication=communication,
        safety=safety,
        terminal=terminal,
    )


class _ShieldEval:
    """Precomputed one-step-ahead predicate evaluator.

    q_hat = q + tau q_dot + 0.5 tau^2 q_ddot_lin, with q_dot from the true
    nonlinear derivative on the nominal plant and q_ddot from the
    linearization (c^T A (A x + B u)).
    """

    def __init__(self, shield: ShieldConfig, lin: LinearPlant, nominal: PlantModel):
        self.shield = shield
        self.lin = lin
        self.pid, self.par = _packed_params(nominal)
        self.n = nominal.n
        self.cs = [np.asarray(ch.c, dtype=float) for ch in shield.channels]
        self.thresholds = [ch.theta_rta for ch in shield.channels]
        self.caa = [c @ lin.a @ lin.a for c in self.cs]
        self.cab = [c @ lin.a @ lin.b for c in self.cs]
        self._f = np.empty(self.n)

    def predict(self, x: np.ndarray, u: np.ndarray, tau: float) -> tuple[list[float], bool]:
        _kernels.eval_dynamics(self.pid, self.par, x, u, self._f)
        f = self._f
        violated = False
        q_hats = []
        for c, caa, cab, theta in zip(self.cs, self.caa, self.cab, self.thresholds):
            q = float(c @ x)
            q_dot = float(c @ f)
            q_ddot = float(caa @ x + cab @ u)
            q_hat = q + tau * q_dot + 0.5 * tau * tau * q_ddot
            q_hats.append(q_hat)
            if abs(q_hat) > theta:
                violated = True
        for idx, bound in self.shield.position_bounds:
            if abs(x[idx]) >= bound:
                violated = True
        return q_hats, violated


def predict_safety(
    shield: ShieldConfig,
    cert: RiccatiCert,
    lin: LinearPlant,
    nominal: PlantModel,
    x,
    u,
    tau: float,
) -> tuple[list[float], bool]:
    """One-step-ahead predictions per channel and the violation verdict.

    `u` must already be limit-clipped; the position-bound trigger is
    evaluated on the current state, not the prediction.
    """
    ev = _ShieldEval(shield, lin, nominal)
    return ev.predict(np.asarray(x, dtype=float), np.atleast_1d(np.asarray(u, dtype=float)), tau)


@dataclass(frozen=True)
class ShieldDecision:
    u_executed: np.ndarray
    tau_executed: float
    fired: bool
    predicate: bool
    q_hats: tuple[float, ...]


def shield_filter(
    shield: ShieldConfig,
    cert: RiccatiCert,
    lin: LinearPlant,
    nominal: PlantModel,
    x,
    proposed: tuple[np.ndarray, float],
    tau_min: float,
) -> ShieldDecision:
    """Apply the shield to a clipped proposal (u, tau).

    hard mode + violated predicate: execute the component-wise clipped
    backup -K x at tau_min. soft mode: log only. off: pass through with
    the predicate unevaluated.
    """
    u, tau = proposed
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if shield.mode == "off":
        return ShieldDecision(u, tau, fired=False, predicate=False, q_hats=())
    q_hats, violated = predict_safety(shield, cert, lin, nominal, x, u, tau)
    if shield.mode == "hard" and violated:
        backup = np.clip(-cert.k @ np.asarray(x, dtype=float), -lin.u_max, lin.u_max)
        return ShieldDecision(backup, tau_min, fired=True, predicate=True, q_hats=tuple(q_hats))
    return ShieldDecision(u, tau, fired=False, predicate=violated, q_hats=tuple(q_hats))


@dataclass(frozen=True)
class DecisionRecord:
    """One executed decision of an episode."""

    k: int
    t: float
    x: np.ndarray
    u_proposed: np.ndarray
    u_executed: np.ndarray
    tau_proposed: float
    tau_executed: float
    fired: bool
    predicate: bool
    hard_violation: bool
    reward: RewardTerms
    v_before: float
    v_after: float
    msi_at_decision: float
    sq_partial: np.ndarray
    substates: np.ndarray | None = None


CAUSE_TIME_LIMIT = "time_limit"
CAUSE_STATE_BOUND = "state_bound"
CAUSE_INTEGRATION_FAULT = "integration_fault"
CAUSE_PROTOCOL_FAULT = "protocol_fault"


@dataclass
class EpisodeTrace:
    """Per-decision records plus the episode summary."""

    plant_id: str
    records: list[DecisionRecord]
    sq_integral: np.ndarray
    length: float
    cause: str
    seed: int | None
    episode: int
    mass_scale: float
    final_msi: float
    final_state: np.ndarray

    def summary(self) -> dict:
        n_dec = len(self.records)
        if n_dec:
            msi_exec = float(np.mean([r.tau_executed for r in self.records]))
            rta = float(np.mean([r.fired for r in self.records]))
            pred = float(np.mean([r.predicate for r in self.records]))
            hard = float(np.mean([r.hard_violation for r in self.records]))
            reward = float(np.sum([r.reward.total for r in self.records]))
        else:
            msi_exec = rta = pred = hard = reward = 0.0
        return {
            "plant": self.plant_id,
            "episode": self.episode,
            "seed": self.seed,
            "decisions": n_dec,
            "length": self.length,
            "cause": self.cause,
            "msi_exec": msi_exec,
            "msi_tracker": self.final_msi,
            "rta_rate": rta,
            "predicate_rate": pred,
            "hard_violation_rate": hard,
            "reward_total": reward,
            "p_norms": [float(v) for v in np.sqrt(self.sq_integral)],
            "mass_scale": self.mass_scale,
        }


def state_norms(trace: EpisodeTrace) -> np.ndarray:
    """Per-dimension L2 norms sqrt(integral of s_i^2 dt) over the episode.

    The integral is the left-rectangle rule at sub-step (dt) resolution,
    re-accumulated from the per-decision partial sums in the trace.
    """
    n = trace.sq_integral.shape[0]
    total = np.zeros(n)
    for rec in trace.records:
        total += rec.sq_partial
    return np.sqrt(total)


class EpisodeSession:
    """Stepwise episode driver; `run_episode` and `serve-env` both use it."""

    def __init__(
        self,
        spec: EnvSpec,
        rng: np.random.Generator,
        *,
        episode: int = 0,
        seed: int | None = None,
        record_substates: bool = False,
    ):
        self.spec = spec
        self.rng = rng
        self.episode = episode
        self.seed = seed
        self.record_substates = record_substates

        model = spec.plant
        if spec.domain_randomization:
            model = replace(model, mass_scale=float(rng.uniform(0.6, 1.4)))
        self.model = model
        nominal = model if model.mass_scale == 1.0 else replace(model, mass_scale=1.0)
        self.nominal = nominal
        self.lin = linearization(model)
        self.grid = TriggerGrid(spec.tau_min, spec.grid_size)
        self.cert = spec.shield.backup
        self.msi = MsiTracker(value=spec.tau_min)
        self.x = sample_initial_state(spec, rng)
        self.b = 0
        self.substeps = 0
        self.max_substeps = round(spec.t_max / model.dt)
        self.records: list[DecisionRecord] = []
        self.sq_total = np.zeros(model.n)
        self.done = False
        self.cause: str | None = None
        self._shield_eval = (
            _ShieldEval(spec.shield, self.lin, nominal) if spec.shield.mode != "off" else None
        )
        # hard-violation metric needs the thresholds even in off mode
        self._monitor = [(np.asarray(ch.c, dtype=float), ch.theta_rta) for ch in spec.shield.channels]

    def observation(self) -> Observation:
        return Observation(x=self.x.copy(), msi=self.msi.value, b=self.b)

    def abort(self, reason: str) -> None:
        self.done = True
        self.cause = CAUSE_PROTOCOL_FAULT

    def step(self, u_prop, tau_prop: float) -> DecisionRecord:
        """Execute one decision; raises ProtocolFault on contract violations."""
        if self.done:
            raise ProtocolFault("episode already finished")
        idx = self.grid.index_of(tau_prop)
        tau_prop = float(self.grid.values[idx])
        u_prop = np.atleast_1d(np.asarray(u_prop, dtype=float))
        if u_prop.shape != (self.model.m,) or not np.all(np.isfinite(u_prop)):
            raise ProtocolFault("proposed input is malformed or non-finite")
        u_prop = np.clip(u_prop, -self.lin.u_max, self.lin.u_max)

        shield = self.spec.shield
        if self._shield_eval is None:
            fired, predicate, q_hats = False, False, ()
            u_exec, tau_exec = u_prop, tau_prop
        else:
            q_list, violated = self._shield_eval.predict(self.x, u_prop, tau_prop)
            q_hats = tuple(q_list)
            predicate = violated
            if shield.mode == "hard" and violated:
                u_exec = np.clip(-self.cert.k @ self.x, -self.lin.u_max, self.lin.u_max)
                tau_exec = self.grid.tau_min
                fired = True
            else:
                u_exec, tau_exec, fired = u_prop, tau_prop, False

        dist = self.spec.disturbance
        held = 0.0
        if dist.kind == "impulse":
            if self.rng.random() < dist.probability:
                held = dist.amplitude if self.rng.random() < 0.5 else -dist.amplitude

        res = integrate_hold(
            self.model,
            self.x,
            u_exec,
            tau_exec,
            disturbance=dist,
            held_impulse=held,
            start_substeps=self.substeps,
            term_indices=self.spec.term_indices,
            term_bounds=self.spec.term_bounds,
            record_substates=self.record_substates,
        )
        terminated = res.early_stop or res.fault
        safety_event = fired if shield.mode == "hard" else (predicate if shield.mode == "soft" else False)
        reward = compute_reward(
            self.spec.reward, self.cert, self.x, res.x_next, tau_exec,
            msi_k=self.msi.value, safety_event=safety_event,
            terminated_by_violation=terminated,
        )
        hard_violation = any(abs(float(c @ self.x)) > theta for c, theta in self._monitor)
        rec = DecisionRecord(
            k=len(self.records),
            t=self.substeps * self.model.dt,
            x=self.x.copy(),
            u_proposed=u_prop,
            u_executed=np.asarray(u_exec, dtype=float),
            tau_proposed=tau_prop,
            tau_executed=tau_exec,
            fired=fired,
            predicate=predicate,
            hard_violation=hard_violation,
            reward=reward,
            v_before=self.cert.v(self.x),
            v_after=self.cert.v(res.x_next) if not res.fault else float("nan"),
            msi_at_decision=self.msi.value,
            sq_partial=res.sq_integral,
            substates=res.substates,
        )
        self.records.append(rec)
        self.sq_total += res.sq_integral
        # executed tau counts toward MSI even when the interval truncates
        self.msi.update(tau_exec)
        self.b = int(fired)
        self.substeps += res.substeps
        self.x = res.x_next
        if res.fault:
            self.done, self.cause = True, CAUSE_INTEGRATION_FAULT
        elif res.early_stop:
            self.done, self.cause = True, CAUSE_STATE_BOUND
        elif self.substeps >= self.max_substeps:
            self.done, self.cause = True, CAUSE_TIME_LIMIT
        return rec

    def finalize(self) -> EpisodeTrace:
        return EpisodeTrace(
            plant_id=self.model.id,
            records=self.records,
            sq_integral=self.sq_total,
            length=self.substeps * self.model.dt,
            cause=self.cause or CAUSE_TIME_LIMIT,
            seed=self.seed,
            episode=self.episode,
            mass_scale=self.model.mass_scale,
            final_msi=self.msi.value,
            final_state=self.x.copy(),
        )


def run_episode(
    spec: EnvSpec,
    policy,
    rng: np.random.Generator,
    *,
    episode: int = 0,
    seed: int | None = None,
    record_substates: bool = False,
) -> EpisodeTrace:
    """Run one full episode of `policy` on `spec`.

    Terminates on a state-bound violation (terminal penalty applied), the
    time horizon, or a policy protocol fault (recorded as a distinct
    cause; the episode is aborted, not raised).
    """
    session = EpisodeSession(
        spec, rng, episode=episode, seed=seed, record_substates=record_substates
    )
    reset = getattr(policy, "reset", None)
    if reset is not None:
        reset(episode=episode, seed=seed)
    while not session.done:
        obs = session.observation()
        try:
            u, tau = policy.act(obs)
            session.step(u, tau)
        except ProtocolFault as exc:
            session.abort(str(exc))
    return session.finalize()


TRACE_CSV_PREFIX = ["k", "t"]
TRACE_CSV_SUFFIX = [
    "tau_proposed", "tau_executed", "shield_fired", "predicate_violated",
    "hard_violation", "reward_total", "reward_stability",
    "reward_communication", "reward_safety", "reward_terminal",
    "v_before", "v_after", "msi_at_decision",
]


def trace_csv_header(n: int, m: int) -> list[str]:
    cols = list(TRACE_CSV_PREFIX)
    cols += [f"x{i}" for i in range(n)]
    cols += [f"u_prop{i}" for i in range(m)]
    cols += [f"u_exec{i}" for i in range(m)]
    cols += TRACE_CSV_SUFFIX
    return cols


def write_trace_csv(trace: EpisodeTrace, path) -> None:
    """One row per decision; header documented in the README."""
    if trace.records:
        n = trace.records[0].x.shape[0]
        m = trace.records[0].u_executed.shape[0]
    else:
        n = trace.sq_integral.shape[0]
        m = 1
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(trace_csv_header(n, m))
        for r in trace.records:
            row = [r.k, repr(float(r.t))]
            row += [repr(float(v)) for v in r.x]
            row += [repr(float(v)) for v in r.u_proposed]
            row += [repr(float(v)) for v in r.u_executed]
            row += [
                repr(float(r.tau_proposed)), repr(float(r.tau_executed)),
                int(r.fired), int(r.predicate), int(r.hard_violation),
                repr(float(r.reward.total)), repr(float(r.reward.stability)),
                repr(float(r.reward.communication)), repr(float(r.reward.safety)),
                repr(float(r.reward.terminal)), repr(float(r.v_before)),
                repr(float(r.v_after)), repr(float(r.msi_at_decision)),
            ]
            writer.writerow(row)

"""Seeded multi-episode evaluation, the experiment suites, and the
regression gate against the shipped reference-values document.

Episode i of an evaluation always uses seed base_seed + i, so reports are
reproducible byte-for-byte and independent of the worker-pool size.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .engine import EpisodeTrace, run_episode
from .errors import ConfigError
from .plants import PLANT_IDS, DisturbanceSpec
from .policies import Policy, make_policy
from .presets import PlantSetup, build_cert_report, build_setup

SUITE_IDS = (
    "verify",
    "baselines",
    "ablation_a",
    "ablation_b",
    "robustness_mass",
    "robustness_disturbance",
)

# Table-style disturbance grid: two constant, two periodic (1 Hz / 2 Hz),
# two impulse (p = 0.05, random sign) amplitudes per plant, channel 0.
DISTURBANCE_GRID: dict[str, list[tuple[str, DisturbanceSpec]]] = {
    plant: [
        ("none", DisturbanceSpec()),
        ("const_1", DisturbanceSpec(kind="constant", amplitude=c1)),
        ("const_2", DisturbanceSpec(kind="constant", amplitude=c2)),
        ("per_1", DisturbanceSpec(kind="periodic", amplitude=p1, frequency=1.0)),
        ("per_2", DisturbanceSpec(kind="periodic", amplitude=p2, frequency=2.0)),
        ("imp_1", DisturbanceSpec(kind="impulse", amplitude=i1)),
        ("imp_2", DisturbanceSpec(kind="impulse", amplitude=i2)),
    ]
    for plant, (c1, c2, p1, p2, i1, i2) in {
        "pendulum": (0.2, 0.5, 0.3, 0.5, 0.5, 1.0),
        "cartpole": (1.0, 2.0, 1.5, 2.5, 2.0, 4.0),
        "quadrotor2d": (0.5, 1.0, 0.8, 1.5, 1.0, 2.0),
        "quadrotor3d": (0.5, 1.0, 0.8, 1.5, 1.0, 2.0),
    }.items()
}


@dataclass(frozen=True)
class EvalConfig:
    setup: PlantSetup
    policy: Policy
    n_eval: int = 100
    base_seed: int = 0
    parallelism: int = 1
    traces: str = "none"  # none | summary | full

    def __post_init__(self):
        if self.n_eval < 1:
            raise ConfigError("n_eval must be >= 1")
        if self.traces not in ("none", "summary", "full"):
            raise ConfigError(f"unknown trace retention {self.traces!r}")


@dataclass
class MetricsSummary:
    """Aggregate over an evaluation's episodes.

    Stds are population stds over per-episode means; `degraded` counts
    episodes aborted by a policy protocol fault (excluded from the
    aggregates).
    """

    n_eval: int
    degraded: int
    msi_mean: float
    msi_std: float
    msi_tracker_mean: float
    rta_pct_mean: float
    rta_pct_std: float
    predicate_pct_mean: float
    hard_violation_pct: float
    p_norm_means: list[float]
    mean_length: float
    min_length: float
    reward_mean: float
    causes: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_eval": self.n_eval,
            "degraded": self.degraded,
            "msi_mean": self.msi_mean,
            "msi_std": self.msi_std,
            "msi_tracker_mean": self.msi_tracker_mean,
            "rta_pct_mean": self.rta_pct_mean,
            "rta_pct_std": self.rta_pct_std,
            "predicate_pct_mean": self.predicate_pct_mean,
            "hard_violation_pct": self.hard_violation_pct,
            "p_norm_means": self.p_norm_means,
            "mean_length": self.mean_length,
            "min_length": self.min_length,
            "reward_mean": self.reward_mean,
            "causes": self.causes,
        }


def aggregate_summaries(episode_summaries: list[dict]) -> MetricsSummary:
    """Fold per-episode summaries into a MetricsSummary.

    Exposed so that externally collected episodes (e.g. through the
    bridge) aggregate identically to in-process evaluation.
    """
    degraded = sum(1 for s in episode_summaries if s["cause"] == "protocol_fault")
    ok = [s for s in episode_summaries if s["cause"] != "protocol_fault"]
    causes: dict[str, int] = {}
    for s in episode_summaries:
        causes[s["cause"]] = causes.get(s["cause"], 0) + 1
    if not ok:
        return MetricsSummary(
            n_eval=len(episode_summaries), degraded=degraded,
            msi_mean=0.0, msi_std=0.0, msi_tracker_mean=0.0,
            rta_pct_mean=0.0, rta_pct_std=0.0, predicate_pct_mean=0.0,
            hard_violation_pct=0.0, p_norm_means=[], mean_length=0.0,
            min_length=0.0, reward_mean=0.0, causes=causes,
        )
    msis = [s["msi_exec"] for s in ok]
    rtas = [100.0 * s["rta_rate"] for s in ok]
    return MetricsSummary(
        n_eval=len(episode_summaries),
        degraded=degraded,
        msi_mean=float(np.mean(msis)),
        msi_std=float(np.std(msis)),
        msi_tracker_mean=float(np.mean([s["msi_tracker"] for s in ok])),
        rta_pct_mean=float(np.mean(rtas)),
        rta_pct_std=float(np.std(rtas)),
        predicate_pct_mean=float(np.mean([100.0 * s["predicate_rate"] for s in ok])),
        hard_violation_pct=float(np.mean([100.0 * s["hard_violation_rate"] for s in ok])),
        p_norm_means=[float(v) for v in np.mean([s["p_norms"] for s in ok], axis=0)],
        mean_length=float(np.mean([s["length"] for s in ok])),
        min_length=float(np.min([s["length"] for s in ok])),
        reward_mean=float(np.mean([s["reward_total"] for s in ok])),
        causes=causes,
    )


@dataclass
class EvalResult:
    summary: MetricsSummary
    episode_summaries: list[dict]
    traces: list[EpisodeTrace] | None


def evaluate(cfg: EvalConfig) -> EvalResult:
    """Run n_eval seeded episodes and aggregate their metrics."""
    keep_traces = cfg.traces == "full"

    def one(i: int) -> EpisodeTrace:
        seed = cfg.base_seed + i
        return run_episode(
            cfg.setup.spec, cfg.policy, np.random.default_rng(seed),
            episode=i, seed=seed, record_substates=keep_traces,
        )

    workers = max(1, cfg.parallelism)
    if workers > 1 and cfg.policy.shareable:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(one, range(cfg.n_eval)))
    else:
        traces = [one(i) for i in range(cfg.n_eval)]
    summaries = [t.summary() for t in traces]
    return EvalResult(
        summary=aggregate_summaries(summaries),
        episode_summaries=summaries,
        traces=traces if keep_traces else None,
    )


@dataclass(frozen=True)
class SuiteSpec:
    suite: str
    plants: tuple[str, ...] = PLANT_IDS
    n_eval: int = 100
    base_seed: int = 0
    parallelism: int = 1
    mass_scales: tuple[float, ...] = (0.7, 1.0, 1.3)
    domain_randomization: bool = False

    def __post_init__(self):
        if self.suite not in SUITE_IDS:
            raise ConfigError(f"unknown suite {self.suite!r}")
        for p in self.plants:
            if p not in PLANT_IDS:
                raise ConfigError(f"unknown plant {p!r}")


def _eval_cell(setup: PlantSetup, policy_cfg: dict, spec: SuiteSpec) -> dict:
    policy = make_policy(setup, policy_cfg)
    try:
        res = evaluate(EvalConfig(
            setup=setup, policy=policy, n_eval=spec.n_eval,
            base_seed=spec.base_seed, parallelism=spec.parallelism,
        ))
    finally:
        policy.close()
    return res.summary.to_dict()


def run_suite(spec: SuiteSpec) -> dict:
    """Run one experiment suite and return its structured report.

    Certificates are synthesized once per plant; robustness suites keep
    the certificate, gain, and shield thresholds nominal while perturbing
    only the simulated plant. Per-cell failures (e.g. all episodes
    crashing) are still valid cells; only configuration errors raise.
    """
    results: dict = {}
    if spec.suite == "verify":
        for plant in spec.plants:
            results[plant] = build_cert_report(plant).to_dict()
    elif spec.suite == "baselines":
        # baselines run unshielded; soft mode logs the predicate without
        # touching the trajectory
        for plant in spec.plants:
            setup = build_setup(plant, shield_mode="soft")
            results[plant] = {
                kind: _eval_cell(setup, {"kind": kind}, spec)
                for kind in ("b1", "b2", "b3")
            }
    elif spec.suite == "ablation_a":
        # shield contribution on a policy that stresses it: fixed-rate LQR
        # at the matched interval, with and without the hard override
        for plant in spec.plants:
            results[plant] = {}
            for mode in ("hard", "off"):
                setup = build_setup(plant, shield_mode=mode)
                cfg = {"kind": "fixed_tau", "inner": {"kind": "b1"}}
                results[plant][f"shield_{mode}"] = _eval_cell(setup, cfg, spec)
    elif spec.suite == "ablation_b":
        for plant in spec.plants:
            setup = build_setup(plant, shield_mode="hard")
            cfg = {"kind": "fixed_tau", "inner": {"kind": "b1"}}
            results[plant] = {"fixed_tau_hard": _eval_cell(setup, cfg, spec)}
    elif spec.suite == "robustness_mass":
        for plant in spec.plants:
            results[plant] = {}
            for kind in ("b2", "b3"):
                cell: dict = {}
                for scale in spec.mass_scales:
                    setup = build_setup(plant, shield_mode="soft", mass_scale=scale)
                    cell[f"{scale:g}"] = _eval_cell(setup, {"kind": kind}, spec)
                if spec.domain_randomization:
                    setup = build_setup(plant, shield_mode="soft", domain_randomization=True)
                    cell["dr"] = _eval_cell(setup, {"kind": kind}, spec)
                results[plant][kind] = cell
    elif spec.suite == "robustness_disturbance":
        for plant in spec.plants:
            cell = {}
            for name, dist in DISTURBANCE_GRID[plant]:
                setup = build_setup(plant, shield_mode="soft", disturbance=dist)
                cell[name] = _eval_cell(setup, {"kind": "b3"}, spec)
            results[plant] = {"b3": cell}
    return {"suite": spec.suite, "n_eval": spec.n_eval, "base_seed": spec.base_seed,
            "results": results}


def flatten_report(report: dict) -> list[tuple[str, object]]:
    """Flatten a suite report's results to (path, leaf-value) rows."""
    rows: list[tuple[str, object]] = []

    def walk(node, prefix):
        if isinstance(node, dict):
            for key in sorted(node):
                walk(node[key], f"{prefix}/{key}" if prefix else str(key))
        elif isinstance(node, list):
            for i, item in enumerate(node):
                walk(item, f"{prefix}/{i}")
        else:
            rows.append((prefix, node))

    walk(report.get("results", {}), "")
    return rows


def load_reference() -> dict:
    """The reference-values document shipped with the package."""
    text = resources.files("stclab").joinpath("data/reference_values.json").read_text()
    return json.loads(text)


def _lookup(report: dict, path: str):
    node = report
    for part in path.split("/"):
        if isinstance(node, list):
            try:
                node = node[int(part)]
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"missing metric key {path!r}") from exc
        elif isinstance(node, dict) and part in node:
            node = node[part]
        else:
            raise ConfigError(f"missing metric key {path!r}")
    return node


def compare_report(reports: dict[str, dict], reference: dict) -> tuple[list[dict], bool]:
    """Gate suite reports against the reference document.

    `reports` maps suite id -> report; only entries whose suite is present
    are checked. Returns (rows, all_passed); a malformed entry or a
    missing metric key raises ConfigError.
    """
    rows: list[dict] = []
    ok = True
    for entry in reference.get("entries", []):
        try:
            suite = entry["suite"]
            eid = entry["id"]
            kind = entry["kind"]
            path = entry["path"]
            expected = entry["expected"]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed reference entry: {entry!r}") from exc
        if suite not in reports:
            continue
        observed = _lookup(reports[suite]["results"], path)
        tol = entry.get("tol", 0.0)
        if kind == "abs":
            passed = abs(observed - expected) <= tol
        elif kind == "rel":
            passed = abs(observed - expected) <= tol * abs(expected)
        elif kind == "max":
            passed = observed <= expected
        elif kind == "min":
            passed = observed >= expected
        elif kind == "range":
            passed = expected[0] <= observed <= expected[1]
        elif kind == "equals":
            passed = observed == expected
        else:
            raise ConfigError(f"unknown comparison kind {kind!r}")
        ok = ok and passed
        rows.append({
            "id": eid, "suite": suite, "path": path, "kind": kind,
            "expected": expected, "tol": tol, "observed": observed,
            "pass": bool(passed), "provenance": entry.get("provenance", ""),
        })
    return rows, ok

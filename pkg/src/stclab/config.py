"""Experiment configuration documents: strict parsing and normalization.

Unknown keys are rejected anywhere in the document; `normalize` returns
the fully-defaulted dict form, and normalization is idempotent (parsing a
normalized document and re-serializing reproduces it exactly).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .errors import ConfigError
from .plants import PLANT_IDS, DisturbanceSpec

_POLICY_KEYS = {
    "b1": set(),
    "b2": set(),
    "lqr": {"tau"},
    "b3": {"saturate_prediction"},
    "classical_stc": {"saturate_prediction"},
    "fixed_tau": {"inner", "tau"},
    "bridge": {"cmd", "connect", "timeout"},
}

_TOP_KEYS = {
    "plant", "policy", "shield", "w_c", "trigger", "mass_scale",
    "domain_randomization", "disturbance", "plant_params", "seed",
    "n_eval", "parallelism", "traces", "out",
}

_DIST_KEYS = {"kind", "amplitude", "frequency", "probability", "channel"}


def _check_keys(d: dict, allowed: set, where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def validate_policy_cfg(cfg) -> dict:
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ConfigError("policy must be an object with a 'kind'")
    kind = cfg["kind"]
    if kind not in _POLICY_KEYS:
        raise ConfigError(f"unknown policy kind {kind!r}")
    _check_keys({k: v for k, v in cfg.items() if k != "kind"}, _POLICY_KEYS[kind],
                f"policy {kind!r}")
    out = dict(cfg)
    if kind == "lqr":
        if "tau" not in cfg:
            raise ConfigError("lqr policy requires 'tau'")
        out["tau"] = float(cfg["tau"])
    if kind == "fixed_tau":
        if "inner" not in cfg:
            raise ConfigError("fixed_tau policy requires 'inner'")
        out["inner"] = validate_policy_cfg(cfg["inner"])
        if "tau" in cfg:
            out["tau"] = float(cfg["tau"])
    if kind == "bridge":
        if ("cmd" in cfg) == ("connect" in cfg):
            raise ConfigError("bridge policy needs exactly one of 'cmd'/'connect'")
        if "cmd" in cfg and not (isinstance(cfg["cmd"], list) and cfg["cmd"]):
            raise ConfigError("bridge 'cmd' must be a non-empty list")
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    plant: str
    policy: dict
    shield: str = "hard"
    w_c: float = 1.0
    trigger: dict | None = None
    mass_scale: float = 1.0
    domain_randomization: bool = False
    disturbance: dict = field(default_factory=lambda: {"kind": "none"})
    plant_params: dict = field(default_factory=dict)
    seed: int = 0
    n_eval: int = 100
    parallelism: int = 1
    traces: str = "none"
    out: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        _check_keys(d, _TOP_KEYS, "config")
        if "plant" not in d or "policy" not in d:
            raise ConfigError("config requires 'plant' and 'policy'")
        if d["plant"] not in PLANT_IDS:
            raise ConfigError(f"unknown plant {d['plant']!r}")
        policy = validate_policy_cfg(d["policy"])
        shield = d.get("shield", "hard")
        if shield not in ("hard", "soft", "off"):
            raise ConfigError(f"unknown shield mode {shield!r}")
        trigger = d.get("trigger")
        if trigger is not None:
            _check_keys(trigger, {"tau_min", "size"}, "trigger")
            trigger = {"tau_min": float(trigger["tau_min"]), "size": int(trigger["size"])}
        dist = dict(d.get("disturbance", {"kind": "none"}))
        _check_keys(dist, _DIST_KEYS, "disturbance")
        dist.setdefault("kind", "none")
        # range validation happens in the dataclass constructor
        DisturbanceSpec(**dist)
        traces = d.get("traces", "none")
        if traces not in ("none", "summary", "full"):
            raise ConfigError(f"unknown traces level {traces!r}")
        cfg = cls(
            plant=d["plant"],
            policy=policy,
            shield=shield,
            w_c=float(d.get("w_c", 1.0)),
            trigger=trigger,
            mass_scale=float(d.get("mass_scale", 1.0)),
            domain_randomization=bool(d.get("domain_randomization", False)),
            disturbance=dist,
            plant_params=dict(d.get("plant_params", {})),
            seed=int(d.get("seed", 0)),
            n_eval=int(d.get("n_eval", 100)),
            parallelism=int(d.get("parallelism", 1)),
            traces=traces,
            out=d.get("out"),
        )
        if cfg.w_c < 0:
            raise ConfigError("w_c must be non-negative")
        if cfg.n_eval < 1:
            raise ConfigError("n_eval must be >= 1")
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    def build_setup(self):
        from .presets import build_setup

        kwargs = {}
        if self.trigger is not None:
            kwargs["tau_min"] = self.trigger["tau_min"]
            kwargs["grid_size"] = self.trigger["size"]
        return build_setup(
            self.plant,
            shield_mode=self.shield,
            w_c=self.w_c,
            mass_scale=self.mass_scale,
            disturbance=DisturbanceSpec(**self.disturbance),
            domain_randomization=self.domain_randomization,
            param_overrides=self.plant_params or None,
            **kwargs,
        )

"""Self-triggered control laboratory.

LQR backup synthesis with CARE-based Lyapunov certificates, four
benchmark plants, a run-time-assurance safety shield with one-step-ahead
prediction, classical baselines, robustness suites, and a JSON-lines
bridge for external (learned) policies.
"""

from .engine import (
    EpisodeSession,
    EpisodeTrace,
    MsiTracker,
    Observation,
    RewardConfig,
    ShieldChannel,
    ShieldConfig,
    TriggerGrid,
    compute_reward,
    predict_safety,
    run_episode,
    shield_filter,
    state_norms,
)
from .errors import (
    ConditioningError,
    ConfigError,
    DimensionError,
    DomainError,
    IntegrationFault,
    ProtocolFault,
    SynthesisError,
)
from .harness import EvalConfig, MetricsSummary, SuiteSpec, compare_report, evaluate, run_suite
from .plants import DisturbanceSpec, EnvSpec, PlantModel, dynamics, integrate_hold, linearization
from .policies import (
    Policy,
    bridge_policy,
    classical_stc_policy,
    fixed_tau_policy,
    lqr_policy,
)
from .presets import PlantSetup, build_cert_report, build_setup
from .riccati import CertReport, LinearPlant, RiccatiCert, solve_care

__version__ = "0.1.0"

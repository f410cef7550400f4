"""Gated residual control for frozen nominal controllers under plant shifts."""
__version__ = "0.1.0"

from .config import load_config, parse_config
from .harness import ablation_suite, build, run_episode, run_many, severity_sweep
from .metrics import EpisodeTrace, RecoveryMetrics, compute_metrics
from .plant import ConfigError, NumericalBlowup, make_plant
from .residual import DualTimescaleReadout, RandomTanhExpansion
from .sag import GateParams, GateState, apply_gate

__all__ = [
    "__version__",
    "load_config",
    "parse_config",
    "build",
    "run_episode",
    "run_many",
    "severity_sweep",
    "ablation_suite",
    "EpisodeTrace",
    "RecoveryMetrics",
    "compute_metrics",
    "ConfigError",
    "NumericalBlowup",
    "make_plant",
    "RandomTanhExpansion",
    "DualTimescaleReadout",
    "GateParams",
    "GateState",
    "apply_gate",
]

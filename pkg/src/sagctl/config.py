"""Experiment configuration: per-plant defaults, YAML loading, validation
and a stable content hash."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .plant import SHIFT_FAMILIES, ConfigError

__all__ = [
    "METHODS",
    "ABLATIONS",
    "PLANT_DEFAULTS",
    "default_config",
    "merge",
    "validate",
    "load_config",
    "parse_config",
    "config_hash",
    "canonical_json",
    "SweepSpec",
    "parse_sweep",
    "load_sweep",
    "SEVERITY_GRIDS",
]

METHODS = ("frozen", "residual-full", "residual-unconstrained")

# name -> overrides of the ``ablation`` block
ABLATIONS = {
    "full": {},
    "no-dual-head": {"dual_head": False},
    "no-dir-align": {"directional": False},
    "no-temporal-filter": {"temporal_filter": False},
    "no-nuclei-gate": {"adaptive_gain": False},
    "no-boost": {"boost": False},
}

# the 1.0 entry of each grid doubles as the no-fault baseline
SEVERITY_GRIDS = {
    "actuator": (1.0, 0.9, 0.8, 0.76, 0.7, 0.6),
    "mass": (1.0, 1.05, 1.1, 1.15, 1.25, 1.5),
    "friction": (1.0, 1.4, 1.8, 2.1, 2.5, 3.0),
}

_COMMON = {
    "residual": {
        "n_features": 64,
        "scale": 1.0,
        "alpha_E": 0.2,
        "alpha_I": 0.05,
        "eta_fast": 5e-3,
        "eta_slow": 5e-4,
        "lambda_fast": 1e-3,
        "lambda_slow": 1e-5,
        "w_max": 50.0,
        "seed": 0,
    },
    "gate": {
        "eps_frac": 0.3,
        "eps_j_frac": 0.5,
        "kappa": 0.2,
        "xi": 1e-8,
        "gamma_min": 0.0,
        "gamma_max": 1.0,
        "k_gamma": 1.0,
        "beta_min": 0.5,
        "beta_max": 2.0,
        "k_beta": 0.05,
        "e_bar": 0.1,
        "b_max": 4.0,
        "rho_b": 0.99,
        "alpha_b": 0.1,
        "eps_bar": 0.1,
        "alpha_J": 0.02,
        "act_drop": 0.1,
        "act_steps": 20,
        "gamma_clip_zero": False,
        "beta_decay": False,
    },
    "ablation": {
        "dual_head": True,
        "directional": True,
        "temporal_filter": True,
        "adaptive_gain": True,
        "boost": True,
    },
    "shift": None,
    "protocol": {
        "horizon": 3000,
        "fault_step": 500,
        "calibration": [250, 500],
        "delta": 0.05,
        "ttr_frac": 0.5,
        "ssr_window": 0.1,
        "seeds": list(range(20)),
        "method": "residual-full",
        "init_noise": 0.02,
    },
}

PLANT_DEFAULTS = {
    "pendulum": {
        "plant": {
            "name": "pendulum",
            "dt": 0.01,
            "constants": {"mass": 1.0, "length": 1.0, "gravity": 9.81, "friction": 0.1},
            "reference": {"offset": [0.0], "amplitude": [0.2], "period": 2.0},
            "reward": {"position_weight": [10.0], "velocity_weight": [1.0132], "action_cost": 0.0},
        },
        "nominal": {"kind": "PD", "kp": [[40.0]], "kd": [[6.0]], "action_limits": [20.0]},
        "tracking": {"Lambda": [6.0], "task_weights": [1.0], "error_map": [[1.0]]},
        "bounds": {"B_nom": 1.0},
    },
    "cartpole": {
        "plant": {
            "name": "cartpole",
            "dt": 0.01,
            "constants": {"cart_mass": 1.0, "pole_mass": 0.1, "length": 0.5, "gravity": 9.81, "friction": 0.1},
            "reference": {"offset": [0.0, 0.0], "amplitude": [0.2, 0.0], "period": 2.0},
            "reward": {"position_weight": [5.0, 5.0], "velocity_weight": [0.5066, 0.5066], "action_cost": 0.0},
        },
        "nominal": {"kind": "LQR", "Q": [1.0, 10.0, 1.0, 1.0], "R": [0.1], "action_limits": [30.0],
                    "iters": 10000, "tol": 1e-10},
        "tracking": {"Lambda": "from_gains", "task_weights": [1.0, 1.0], "error_map": "from_gains"},
        "bounds": {"B_nom": 2.0},
    },
    "wheeled": {
        "plant": {
            "name": "wheeled",
            "dt": 0.01,
            "constants": {"mass": 4.0, "inertia": 0.5, "friction": 2.0},
            "reference": {"offset": [0.5, 0.0], "amplitude": [0.2, 0.5], "period": 4.0},
            "reward": {"position_weight": [0.0, 0.0], "velocity_weight": [4.0, 1.0], "action_cost": 0.0},
        },
        "nominal": {"kind": "PD", "kp": [[0.0, 0.0], [0.0, 0.0]], "kd": [[20.0, 0.0], [0.0, 4.0]],
                    "action_limits": [20.0, 5.0]},
        "tracking": {"Lambda": [0.0, 0.0], "task_weights": [1.0, 1.0], "error_map": [[1.0, 0.0], [0.0, 1.0]]},
        "bounds": {"B_nom": 2.0},
    },
}


def merge(base, override):
    """Recursive dict merge; ``override`` wins, lists are replaced wholesale."""
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def default_config(plant="pendulum"):
    if plant not in PLANT_DEFAULTS:
        raise ConfigError(f"plant.name: unknown plant {plant!r}; expected one of {sorted(PLANT_DEFAULTS)}")
    return merge(_COMMON, PLANT_DEFAULTS[plant])


_KNOWN_KEYS = set(_COMMON) | {"plant", "nominal", "tracking", "bounds", "sweep"}


def validate(cfg):
    """Check cross-field invariants; raises ``ConfigError`` naming the field."""
    unknown = set(cfg) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    r = cfg["residual"]
    if not 0 < r["alpha_I"] < r["alpha_E"] < 1:
        raise ConfigError(
            f"residual.alpha_I/alpha_E: violates 0 < α_I < α_E < 1 (alpha_I={r['alpha_I']}, alpha_E={r['alpha_E']})"
        )
    if not r["eta_fast"] > r["eta_slow"] > 0:
        raise ConfigError("residual.eta_fast/eta_slow: violates η_f⁰ > η_s > 0 (larger rate on the fast head)")
    if not 1 > r["lambda_fast"] > r["lambda_slow"] >= 0:
        raise ConfigError("residual.lambda_fast/lambda_slow: violates λ_f > λ_s ≥ 0")
    if r.get("seed") is None:
        raise ConfigError("residual.seed: a seed is required")
    if int(r["n_features"]) < 1:
        raise ConfigError("residual.n_features: must be >= 1")
    if r["w_max"] <= 0:
        raise ConfigError("residual.w_max: must be > 0")

    g = cfg["gate"]
    for key, ok, rule in [
        ("eps_frac", g.get("eps", 1.0) > 0 and g["eps_frac"] > 0, "ε > 0"),
        ("eps_j_frac", g["eps_j_frac"] > 0, "ε_j > 0"),
        ("kappa", 0 <= g["kappa"] < 1, "0 ≤ κ < 1"),
        ("xi", g["xi"] > 0, "ξ > 0"),
        ("gamma_min", 0 <= g["gamma_min"] <= g["gamma_max"], "0 ≤ γ_min ≤ γ_max"),
        ("beta_min", g["beta_min"] <= g["beta_max"], "β_min ≤ β_max"),
        ("rho_b", 0 < g["rho_b"] < 1, "0 < ρ_b < 1"),
        ("b_max", g["b_max"] >= 0, "b_max ≥ 0"),
        ("alpha_J", 0 < g["alpha_J"] <= 1, "0 < α_J ≤ 1"),
        ("act_steps", int(g["act_steps"]) >= 1, "act_steps ≥ 1"),
    ]:
        if not ok:
            raise ConfigError(f"gate.{key}: violates {rule}")

    p = cfg["protocol"]
    start, end = p["calibration"]
    if not 0 <= start < end:
        raise ConfigError(f"protocol.calibration: empty or negative window [{start}, {end})")
    if not end <= p["fault_step"]:
        raise ConfigError("protocol.calibration: window must end at or before the fault step")
    if not p["horizon"] > p["fault_step"]:
        raise ConfigError("protocol.horizon: must exceed fault_step")
    if not p["seeds"]:
        raise ConfigError("protocol.seeds: at least one seed is required")
    if p["method"] not in METHODS:
        raise ConfigError(f"protocol.method: {p['method']!r} not in {METHODS}")
    if p["delta"] <= 0:
        raise ConfigError("protocol.delta: must be > 0")
    if not 0 < p["ssr_window"] < 1:
        raise ConfigError("protocol.ssr_window: must be in (0, 1)")

    s = cfg.get("shift")
    if s is not None:
        if s.get("family") not in SHIFT_FAMILIES:
            raise ConfigError(f"shift.family: {s.get('family')!r} not in {SHIFT_FAMILIES}")
        if not s.get("severity", 0) > 0:
            raise ConfigError("shift.severity: must be > 0")

    unknown_abl = set(cfg["ablation"]) - set(_COMMON["ablation"])
    if unknown_abl:
        raise ConfigError(f"ablation: unknown flags {sorted(unknown_abl)}")
    if cfg["plant"]["dt"] <= 0:
        raise ConfigError("plant.dt: must be > 0")
    return cfg


def parse_config(data):
    """Fill defaults for the named plant under ``data`` and validate."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    plant = (data.get("plant") or {}).get("name", "pendulum")
    cfg = merge(default_config(plant), data)
    return validate(cfg)


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return parse_config(data)


def canonical_json(cfg):
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(cfg):
    return hashlib.sha256(canonical_json(cfg).encode("ascii")).hexdigest()


@dataclass(frozen=True)
class SweepSpec:
    family: str
    severities: tuple
    trials: int
    channel: int = 0

    def __post_init__(self):
        if self.family not in SHIFT_FAMILIES:
            raise ConfigError(f"sweep.family: {self.family!r} not in {SHIFT_FAMILIES}")
        if not self.severities:
            raise ConfigError("sweep.severities: at least one severity is required")
        if any(not s > 0 for s in self.severities):
            raise ConfigError(f"sweep.severities: all severities must be > 0, got {list(self.severities)}")
        if self.trials < 1:
            raise ConfigError(f"sweep.trials: must be >= 1, got {self.trials}")


def parse_sweep(data):
    if not isinstance(data, dict):
        raise ConfigError("sweep root must be a mapping")
    missing = {"family", "severities"} - set(data)
    if missing:
        raise ConfigError(f"sweep: missing keys {sorted(missing)}")
    unknown = set(data) - {"family", "severities", "trials", "channel"}
    if unknown:
        raise ConfigError(f"sweep: unknown keys {sorted(unknown)}")
    try:
        sev = tuple(float(x) for x in data["severities"])
        trials = int(data.get("trials", 1))
        channel = int(data.get("channel", 0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sweep: {exc}") from exc
    return SweepSpec(data["family"], sev, trials, channel)


def load_sweep(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"sweep file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed sweep file {path}: {exc}") from exc
    return parse_sweep(data)

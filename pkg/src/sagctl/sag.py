"""Stability alignment gate.

Bounds, aligns, activates and scales the residual before it is added to the
nominal action, and drives the learning-rate boost of the fast head.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .plant import ConfigError

__all__ = [
    "GateParams",
    "GateState",
    "GateDiagnostics",
    "smooth_performance",
    "update_activation",
    "cosine_alignment",
    "directional_gate",
    "authority_gain",
    "per_joint_gain_update",
    "boost_update",
    "effective_learning_rate",
    "clip_authority",
    "apply_gate",
]


@dataclass(frozen=True)
class GateParams:
    eps: float
    eps_j: np.ndarray
    kappa: float = 0.2
    xi: float = 1e-8
    gamma_min: float = 0.0
    gamma_max: float = 1.0
    k_gamma: float = 1.0
    beta_min: float = 0.5
    beta_max: float = 2.0
    k_beta: float = 0.05
    e_bar: np.ndarray = 0.1
    b_max: float = 4.0
    rho_b: float = 0.99
    alpha_b: float = 0.1
    eps_bar: float = 0.1
    alpha_J: float = 0.02
    act_drop: float = 0.1
    act_steps: int = 20
    # lower clip of the authority gain: gamma_min, or 0 when True
    gamma_clip_zero: bool = False
    # relax beta towards beta_min by k_beta on channels below threshold
    beta_decay: bool = False
    # ablation / baseline switches
    directional: bool = True
    adaptive_gain: bool = True
    boost: bool = True
    clip: bool = True

    def __post_init__(self):
        eps_j = np.atleast_1d(np.asarray(self.eps_j, dtype=float))
        e_bar = np.atleast_1d(np.asarray(self.e_bar, dtype=float))
        object.__setattr__(self, "eps_j", eps_j)
        object.__setattr__(self, "e_bar", e_bar)
        checks = [
            (self.eps > 0, "eps > 0"),
            (np.all(eps_j > 0), "eps_j > 0"),
            (0 <= self.kappa < 1, "0 <= kappa < 1"),
            (self.xi > 0, "xi > 0"),
            (0 <= self.gamma_min <= self.gamma_max, "0 <= gamma_min <= gamma_max"),
            (self.beta_min <= self.beta_max, "beta_min <= beta_max"),
            (0 < self.rho_b < 1, "0 < rho_b < 1"),
            (self.b_max >= 0, "b_max >= 0"),
            (0 < self.alpha_J <= 1, "0 < alpha_J <= 1"),
            (self.act_steps >= 1, "act_steps >= 1"),
            (self.act_drop >= 0, "act_drop >= 0"),
        ]
        for ok, rule in checks:
            if not ok:
                raise ConfigError(f"gate parameters violate {rule}")


@dataclass
class GateState:
    gamma: float
    beta: np.ndarray
    b: float = 0.0
    J_bar: float = 0.0
    J_star: float = math.nan
    J_min: float = math.inf
    active: bool = False
    drop_counter: int = 0

    @classmethod
    def initial(cls, params: GateParams, n_u, J_bar=0.0):
        beta = np.ones(n_u) if params.beta_min <= 1.0 <= params.beta_max else np.full(n_u, params.beta_min)
        return cls(gamma=params.gamma_min, beta=beta, J_bar=J_bar)


@dataclass(frozen=True)
class GateDiagnostics:
    c: float
    gamma: float
    u_norm: float
    active: bool


def smooth_performance(J_bar, r, alpha_J):
    return (1.0 - alpha_J) * J_bar + alpha_J * r


def update_activation(gs: GateState, params: GateParams) -> GateState:
    """Advance the drop counter and latch activation after a sustained drop.

    The drop threshold is ``J* - act_drop * |J*|``. ``J_min`` is seeded at
    the activation instant and tracks the running minimum afterwards.
    """
    threshold = gs.J_star - params.act_drop * abs(gs.J_star)
    counter = gs.drop_counter + 1 if gs.J_bar < threshold else 0
    active, J_min = gs.active, gs.J_min
    if not active and counter >= params.act_steps:
        active, J_min = True, gs.J_bar
    elif active:
        J_min = min(J_min, gs.J_bar)
    return dataclasses.replace(gs, drop_counter=counter, active=active, J_min=J_min)


def cosine_alignment(a_nom, a_res, xi):
    num = float(np.dot(a_nom, a_res))
    return num / (float(np.linalg.norm(a_nom)) * float(np.linalg.norm(a_res)) + xi)


def directional_gate(u, c, kappa):
    return u if c >= 0 else kappa * u


def authority_gain(gs: GateState, params: GateParams):
    if not gs.active:
        return params.gamma_min
    if not params.adaptive_gain:
        return params.gamma_max
    raw = params.gamma_min + params.k_gamma * (gs.J_star - gs.J_bar) / (gs.J_star - gs.J_min + params.xi)
    lo = 0.0 if params.gamma_clip_zero else params.gamma_min
    return min(max(raw, lo), params.gamma_max)


def per_joint_gain_update(beta, e, params: GateParams):
    over = np.abs(e) > params.e_bar
    step = params.k_beta * over
    if params.beta_decay:
        step = np.where(over, step, -params.k_beta)
    return np.clip(beta + step, params.beta_min, params.beta_max)


def boost_update(b, eps_t, params: GateParams):
    return min(max(params.rho_b * b + params.alpha_b * (eps_t > params.eps_bar), 0.0), params.b_max)


def effective_learning_rate(eta_f0, b):
    if b < 0:
        raise ConfigError(f"boost must be >= 0, got {b}")
    return eta_f0 * (1.0 + b)


def clip_authority(u, params: GateParams):
    """Clamp each channel to ``eps_j``, then project onto the ``eps`` ball."""
    u = np.clip(u, -params.eps_j, params.eps_j)
    n = float(np.linalg.norm(u))
    if n > params.eps:
        u = u * (params.eps / n)
        # guard the last ulp so the bound holds exactly after rounding
        while float(np.linalg.norm(u)) > params.eps:
            u = np.nextafter(u, 0.0)
    return u


def apply_gate(a_nom, a_res, gs: GateState, params: GateParams):
    """Scale, align and clip one residual action.

    Returns ``(u, gs', diagnostics)``. Only ``gamma`` changes in the state;
    performance, gain and boost updates happen after the plant step.
    """
    gamma = authority_gain(gs, params)
    gs = dataclasses.replace(gs, gamma=gamma)
    if not gs.active:
        return np.zeros_like(a_res), gs, GateDiagnostics(0.0, gamma, 0.0, False)
    beta = gs.beta if params.adaptive_gain else np.ones_like(gs.beta)
    u = gamma * (beta * a_res)
    c = cosine_alignment(a_nom, u, params.xi)
    if params.directional and params.clip:
        u = directional_gate(u, c, params.kappa)
    if params.clip:
        u = clip_authority(u, params)
    return u, gs, GateDiagnostics(c, gamma, float(np.linalg.norm(u)), True)

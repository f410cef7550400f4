"""Frozen nominal controllers: PD and discrete-time LQR."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .plant import ConfigError, NumericalBlowup, Plant, PlantParams, PlantState, ReferenceSignal

__all__ = [
    "DAREDivergence",
    "LinearModel",
    "NominalController",
    "lqr_gain",
    "riccati_map",
    "linearize",
    "nominal_action",
    "make_pd",
    "make_lqr",
]


class DAREDivergence(ArithmeticError):
    """Riccati recursion did not reach its fixed point."""


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LinearModel:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A, B, Q, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (self.A, self.B, self.Q, self.R))
        n, d = B.shape
        if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (d, d):
            raise ConfigError(f"inconsistent LQR dimensions A{A.shape} B{B.shape} Q{Q.shape} R{R.shape}")
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ConfigError("Q must be symmetric positive semidefinite")
        if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0:
            raise ConfigError("R must be symmetric positive definite")
        for name, m in zip("ABQR", (A, B, Q, R)):
            object.__setattr__(self, name, m)


def riccati_map(P, model: LinearModel):
    A, B, Q, R = model.A, model.B, model.Q, model.R
    BtP = B.T @ P
    return Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A)


def lqr_gain(model: LinearModel, iters=10000, tol=1e-10):
    """Discrete LQR gain by iterating the Riccati map from ``P = Q``.

    Returns ``(K, P)`` with ``K = (R + B'PB)^-1 B'PA``; the feedback law is
    ``u = -K s``.
    """
    if not tol > 0:
        raise ConfigError(f"tol must be > 0, got {tol}")
    P = model.Q.copy()
    for _ in range(int(iters)):
        P_next = riccati_map(P, model)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            break
        if np.max(np.abs(P_next - P)) <= tol:
            P = P_next
            # fixed point must also satisfy the residual bound
            if np.max(np.abs(P - riccati_map(P, model))) <= tol:
                B = model.B
                K = np.linalg.solve(model.R + B.T @ P @ B, B.T @ P @ model.A)
                return K, P
        P = P_next
    raise DAREDivergence(f"DARE divergence: no fixed point within {iters} iterations (tol={tol})")


def linearize(plant: Plant, params: PlantParams, dt: float, eps=1e-6):
    """Central-difference Jacobians of one ``plant.step`` about equilibrium."""
    eq = plant.equilibrium()
    n = plant.n_q
    s0 = eq.as_vector()

    def f(s, a):
        nxt = plant.step(PlantState(s[:n].copy(), s[n:].copy(), 0), a, params, dt)
        return nxt.as_vector()

    a0 = np.zeros(plant.n_u)
    A = np.empty((s0.size, s0.size))
    B = np.empty((s0.size, plant.n_u))
    for i in range(s0.size):
        d = np.zeros(s0.size)
        d[i] = eps
        A[:, i] = (f(s0 + d, a0) - f(s0 - d, a0)) / (2 * eps)
    for j in range(plant.n_u):
        d = np.zeros(plant.n_u)
        d[j] = eps
        B[:, j] = (f(s0, a0 + d) - f(s0, a0 - d)) / (2 * eps)
    return A, B


@dataclass(frozen=True)
class NominalController:
    """Stateless feedback law on the tracked coordinates.

    ``kind == "PD"``: ``a = Kp (q_ref - q) + Kd (qdot_ref - qdot)`` with
    ``Kp``, ``Kd`` of shape (n_u, n_tracked).
    ``kind == "LQR"``: ``a = K (s_ref - s)`` with ``s = (q, qdot)``.
    Gains are stored read-only.
    """

    kind: str
    gains: np.ndarray
    action_limits: np.ndarray

    def __post_init__(self):
        if self.kind not in ("PD", "LQR"):
            raise ConfigError(f"unknown controller kind {self.kind!r}")
        object.__setattr__(self, "gains", _frozen(np.atleast_2d(self.gains)))
        object.__setattr__(self, "action_limits", _frozen(np.atleast_1d(self.action_limits)))
        if np.any(self.action_limits <= 0):
            raise ConfigError("action limits must be positive")

    @property
    def n_u(self):
        return self.gains.shape[0]

    def fingerprint(self):
        return hashlib.sha256(self.gains.tobytes() + self.action_limits.tobytes()).hexdigest()


def make_pd(kp, kd, action_limits):
    kp, kd = np.atleast_2d(kp), np.atleast_2d(kd)
    if kp.shape != kd.shape:
        raise ConfigError(f"PD gain shapes differ: {kp.shape} vs {kd.shape}")
    return NominalController("PD", np.hstack([kp, kd]), action_limits)


def make_lqr(plant: Plant, params: PlantParams, dt, Q, R, action_limits, iters=10000, tol=1e-10):
    A, B = linearize(plant, params, dt)
    K, _ = lqr_gain(LinearModel(A, B, np.asarray(Q, float), np.asarray(R, float)), iters, tol)
    return NominalController("LQR", K, action_limits)


def nominal_action(ctrl: NominalController, q, qdot, ref: ReferenceSignal):
    """Saturated nominal action for tracked positions ``q`` and velocities ``qdot``."""
    err = np.concatenate([ref.q_ref - q, ref.qdot_ref - qdot])
    if not np.all(np.isfinite(err)):
        raise NumericalBlowup("non-finite state in nominal controller")
    a = ctrl.gains @ err
    return np.clip(a, -ctrl.action_limits, ctrl.action_limits)

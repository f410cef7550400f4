"""Residual generator: fixed random expansion, band-pass traces and
dual-timescale linear heads trained online from tracking error.

The free functions are the per-step primitives. ``RandomTanhExpansion`` and
``DualTimescaleReadout`` wrap them as scikit-learn estimators so the basis
and the readout can be configured, cloned and inspected with the usual
``get_params``/``set_params`` machinery.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_is_fitted

from .plant import ConfigError, NumericalBlowup

__all__ = [
    "TracePair",
    "TrackingWeights",
    "encode",
    "update_traces",
    "residual_output",
    "tracking_error",
    "task_error",
    "plasticity_update",
    "cap_norm",
    "peak_step",
    "RandomTanhExpansion",
    "DualTimescaleReadout",
]


def encode(V, x):
    V = np.asarray(V)
    x = np.asarray(x, dtype=float)
    if x.shape != (V.shape[1],):
        raise ConfigError(f"expansion expects input of length {V.shape[1]}, got shape {x.shape}")
    return np.tanh(V @ x)


@dataclass
class TracePair:
    phi_E: np.ndarray
    phi_I: np.ndarray
    alpha_E: float = 0.2
    alpha_I: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.alpha_I < self.alpha_E < 1.0:
            raise ConfigError(
                f"trace rates violate 0 < alpha_I < alpha_E < 1 (alpha_I={self.alpha_I}, alpha_E={self.alpha_E})"
            )

    @classmethod
    def zeros(cls, p, alpha_E=0.2, alpha_I=0.05):
        return cls(np.zeros(p), np.zeros(p), alpha_E, alpha_I)


def update_traces(traces: TracePair, h):
    """Advance both exponential traces by one step; returns the new pair and
    their difference ``phi = phi_E - phi_I``."""
    aE, aI = traces.alpha_E, traces.alpha_I
    phi_E = (1.0 - aE) * traces.phi_E + aE * h
    phi_I = (1.0 - aI) * traces.phi_I + aI * h
    return TracePair(phi_E, phi_I, aE, aI), phi_E - phi_I


def peak_step(alpha_E, alpha_I):
    """Steps after a unit step in ``h`` at which ``phi`` is largest.

    ``phi_t = (1-aI)^t - (1-aE)^t`` is maximised at
    ``log(aE/aI) / log((1-aI)/(1-aE))`` (continuous relaxation).
    """
    return int(np.ceil(np.log(alpha_E / alpha_I) / np.log((1 - alpha_I) / (1 - alpha_E))))


def residual_output(W_fast, W_slow, phi):
    return W_fast @ phi + W_slow @ phi


@dataclass(frozen=True)
class TrackingWeights:
    """Per-DOF tracking gains and task-error weights.

    ``Lambda`` holds the diagonal of the position-error gain. ``error_map``
    (n_u x n_dof) projects the per-DOF error onto the input channels; it is
    the identity for fully actuated plants.
    """

    Lambda: np.ndarray
    task_weights: np.ndarray
    error_map: np.ndarray

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.Lambda, dtype=float))
        tw = np.atleast_1d(np.asarray(self.task_weights, dtype=float))
        em = np.atleast_2d(np.asarray(self.error_map, dtype=float))
        if np.any(lam < 0):
            raise ConfigError("Lambda must be diagonal with nonnegative entries")
        if np.any(tw < 0):
            raise ConfigError("task weights must be nonnegative")
        if tw.shape != lam.shape or em.shape[1] != lam.size:
            raise ConfigError(
                f"tracking weight shapes disagree: Lambda{lam.shape} task_weights{tw.shape} error_map{em.shape}"
            )
        object.__setattr__(self, "Lambda", lam)
        object.__setattr__(self, "task_weights", tw)
        object.__setattr__(self, "error_map", em)


def tracking_error(q, qdot, q_ref, qdot_ref, Lambda):
    """Per-DOF error ``(qdot_ref - qdot) + Lambda (q_ref - q)``."""
    return (qdot_ref - qdot) + Lambda * (q_ref - q)


def task_error(e, task_weights):
    return float(np.dot(task_weights, np.abs(e)))


def plasticity_update(W, e, phi, eta, lam, step=None):
    """``W' = (1 - lam) W + eta e phi^T``; decay first, then the outer-product term."""
    if eta < 0 or not 0.0 <= lam < 1.0:
        raise ConfigError(f"plasticity needs eta >= 0 and 0 <= lambda < 1 (eta={eta}, lambda={lam})")
    W_new = (1.0 - lam) * W + eta * np.outer(e, phi)
    if not np.all(np.isfinite(W_new)):
        raise NumericalBlowup("plasticity blowup", step)
    return W_new


def cap_norm(W, w_max):
    """Rescale ``W`` so its Frobenius norm does not exceed ``w_max``."""
    n = np.linalg.norm(W)
    if n > w_max:
        return W * (w_max / n)
    return W


class RandomTanhExpansion(TransformerMixin, BaseEstimator):
    """Fixed random feature map ``h = tanh(V x)``.

    ``V`` has i.i.d. Gaussian entries with standard deviation
    ``scale / sqrt(n_inputs)`` and is drawn once in ``fit``.

    Parameters
    ----------
    n_features : int
        Number of expanded features ``p``.
    scale : float
        Multiplier on the ``1/sqrt(m)`` entry scale.
    random_state : int, sequence of int, Generator or None
    """

    def __init__(self, n_features=64, scale=1.0, random_state=None):
        self.n_features = n_features
        self.scale = scale
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1)
        m = X.shape[1]
        rng = self.random_state
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        V = rng.standard_normal((self.n_features, m)) * (self.scale / np.sqrt(m))
        V.setflags(write=False)
        self.components_ = V
        self.n_features_in_ = m
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_array(X)
        return np.tanh(X @ self.components_.T)


class DualTimescaleReadout(RegressorMixin, BaseEstimator):
    """Two linear heads ``W_fast``, ``W_slow`` trained by ``partial_fit``.

    Each ``partial_fit(phi, e)`` call applies one decayed outer-product step
    to both heads. ``eta_fast`` can be overridden per call (boosted rate).
    """

    def __init__(self, n_outputs=1, eta_fast=5e-3, eta_slow=5e-4, lambda_fast=1e-3,
                 lambda_slow=1e-5, w_max=50.0, dual_head=True):
        self.n_outputs = n_outputs
        self.eta_fast = eta_fast
        self.eta_slow = eta_slow
        self.lambda_fast = lambda_fast
        self.lambda_slow = lambda_slow
        self.w_max = w_max
        self.dual_head = dual_head

    def _validate_rates(self):
        if not self.eta_fast > self.eta_slow > 0:
            raise ConfigError(
                f"learning rates need eta_f0 > eta_s > 0 (eta_fast={self.eta_fast}, eta_slow={self.eta_slow})"
            )
        if not 1.0 > self.lambda_fast > self.lambda_slow >= 0:
            raise ConfigError(
                f"decay rates need lambda_f > lambda_s >= 0 (lambda_fast={self.lambda_fast}, lambda_slow={self.lambda_slow})"
            )

    def initialize(self, n_features):
        self._validate_rates()
        self.W_fast_ = np.zeros((self.n_outputs, n_features))
        self.W_slow_ = np.zeros((self.n_outputs, n_features))
        self.n_features_in_ = n_features
        return self

    def partial_fit(self, phi, e, eta_fast=None, step=None):
        phi = np.asarray(phi, dtype=float)
        if not hasattr(self, "W_fast_"):
            self.initialize(phi.shape[-1])
        eta_f = self.eta_fast if eta_fast is None else eta_fast
        self.W_fast_ = cap_norm(plasticity_update(self.W_fast_, e, phi, eta_f, self.lambda_fast, step), self.w_max)
        if self.dual_head:
            self.W_slow_ = cap_norm(
                plasticity_update(self.W_slow_, e, phi, self.eta_slow, self.lambda_slow, step), self.w_max
            )
        return self

    def fit(self, X, y):
        """Replay rows of ``(phi, e)`` through ``partial_fit`` from zero weights."""
        X = check_array(X)
        y = np.asarray(y, dtype=float).reshape(len(X), -1)
        self.initialize(X.shape[1])
        for t, (phi, e) in enumerate(zip(X, y)):
            self.partial_fit(phi, e, step=t)
        return self

    def predict(self, phi):
        if not hasattr(self, "W_fast_"):
            raise NotFittedError("call initialize, fit or partial_fit before predict")
        phi = np.asarray(phi, dtype=float)
        if phi.ndim == 1:
            return residual_output(self.W_fast_, self.W_slow_, phi)
        return phi @ (self.W_fast_ + self.W_slow_).T

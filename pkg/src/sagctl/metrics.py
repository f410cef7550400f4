"""Recovery metrics over a smoothed reward trace.

All step counts are reported relative to the fault step ``tau`` and are
censored at ``horizon - tau`` when the threshold is never reached.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .plant import ConfigError

__all__ = [
    "EpisodeTrace",
    "RecoveryMetrics",
    "recovery_time",
    "ttr_fraction",
    "recovery_auc",
    "steady_state_ratio",
    "total_return",
    "compute_metrics",
    "aggregate",
    "METRIC_NAMES",
]

METRIC_NAMES = ("ttr50", "T_delta", "auc", "ssr", "total_return")


@dataclass
class EpisodeTrace:
    """Per-step record of one closed-loop episode.

    ``diagnostics`` maps column name to a per-step array (``u_norm``, ``c``,
    ``gamma``, ``b``, ``eta_f``, ``active``, ``dist_to_ref``).
    """

    rewards: np.ndarray
    J_bar: np.ndarray
    tau: int
    horizon: int
    J_star: float = math.nan
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.J_bar = np.asarray(self.J_bar, dtype=float)
        if len(self.rewards) != self.horizon or len(self.J_bar) != self.horizon:
            raise ConfigError(
                f"trace length mismatch: rewards={len(self.rewards)} J_bar={len(self.J_bar)} horizon={self.horizon}"
            )
        if not 0 <= self.tau < self.horizon:
            raise ConfigError(f"fault step {self.tau} outside [0, {self.horizon})")


@dataclass(frozen=True)
class RecoveryMetrics:
    T_delta: int
    T_delta_censored: bool
    ttr50: int
    ttr50_censored: bool
    auc: float
    ssr: float
    total_return: float

    def as_dict(self):
        return asdict(self)


def recovery_time(trace: EpisodeTrace, J_star, delta):
    """First ``t >= tau`` with ``J_bar_t >= J* - delta``; returns ``(steps, censored)``."""
    if not delta > 0:
        raise ConfigError(f"delta must be > 0, got {delta}")
    post = trace.J_bar[trace.tau:]
    hits = np.flatnonzero(post >= J_star - delta)
    if hits.size == 0:
        return trace.horizon - trace.tau, True
    return int(hits[0]), False


def ttr_fraction(trace: EpisodeTrace, J_star, frac=0.5):
    """Steps to win back ``frac`` of the post-fault drop.

    The drop ``D = J* - min J_bar`` uses the global post-fault minimum; the
    crossing is searched from the (first) argmin onward.
    """
    if not 0 < frac <= 1:
        raise ConfigError(f"frac must be in (0, 1], got {frac}")
    post = trace.J_bar[trace.tau:]
    i_min = int(np.argmin(post))
    drop = J_star - post[i_min]
    if drop <= 0:
        return 0, False
    target = J_star - (1.0 - frac) * drop
    hits = np.flatnonzero(post[i_min:] >= target)
    if hits.size == 0:
        return trace.horizon - trace.tau, True
    return i_min + int(hits[0]), False


def _mean(values):
    return math.fsum(values) / len(values)


def recovery_auc(trace: EpisodeTrace, J_star):
    if not J_star > 0:
        raise ConfigError(f"J_star must be > 0 for normalized metrics, got {J_star}")
    return _mean(trace.J_bar[trace.tau:]) / J_star


def ssr_window(horizon, window_frac):
    if not 0 < window_frac < 1:
        raise ConfigError(f"window_frac must be in (0, 1), got {window_frac}")
    return max(1, int(round(window_frac * horizon)))


def steady_state_ratio(trace: EpisodeTrace, J_star, window_frac=0.1):
    if not J_star > 0:
        raise ConfigError(f"J_star must be > 0 for normalized metrics, got {J_star}")
    n = ssr_window(trace.horizon, window_frac)
    return _mean(trace.J_bar[-n:]) / J_star


def total_return(trace: EpisodeTrace):
    return math.fsum(trace.rewards)


def compute_metrics(trace: EpisodeTrace, J_star, delta=0.05, frac=0.5, window_frac=0.1) -> RecoveryMetrics:
    T, T_c = recovery_time(trace, J_star, delta)
    ttr, ttr_c = ttr_fraction(trace, J_star, frac)
    return RecoveryMetrics(
        T_delta=T,
        T_delta_censored=T_c,
        ttr50=ttr,
        ttr50_censored=ttr_c,
        auc=recovery_auc(trace, J_star),
        ssr=steady_state_ratio(trace, J_star, window_frac),
        total_return=total_return(trace),
    )


def aggregate(metrics):
    """Mean, sample std, median and censoring count for each metric."""
    metrics = list(metrics)
    if not metrics:
        raise ConfigError("cannot aggregate an empty metrics list")
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([float(getattr(m, name)) for m in metrics])
        if name == "ttr50":
            censored = sum(m.ttr50_censored for m in metrics)
        elif name == "T_delta":
            censored = sum(m.T_delta_censored for m in metrics)
        else:
            censored = 0
        out[name] = {
            "mean": float(np.mean(vals)),
            "std": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
            "median": float(np.median(vals)),
            "censored": int(censored),
            "n": len(vals),
        }
    return out

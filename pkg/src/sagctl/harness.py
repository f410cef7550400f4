"""Episode orchestration: calibration, fault injection, closed-loop stepping,
severity sweeps and ablations."""
from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import config as cfgmod
from .metrics import EpisodeTrace, RecoveryMetrics, aggregate, compute_metrics
from .nominal import NominalController, make_lqr, make_pd, nominal_action
from .plant import (
    ConfigError,
    NumericalBlowup,
    Plant,
    PlantParams,
    PlantState,
    ReferenceConfig,
    ShiftSpec,
    apply_shift,
    make_plant,
    reference,
    reward,
)
from .residual import (
    DualTimescaleReadout,
    RandomTanhExpansion,
    TracePair,
    TrackingWeights,
    encode,
    task_error,
    tracking_error,
    update_traces,
)
from .sag import (
    GateParams,
    GateState,
    apply_gate,
    boost_update,
    effective_learning_rate,
    per_joint_gain_update,
    smooth_performance,
    update_activation,
)

__all__ = [
    "Setup",
    "EpisodeResult",
    "build",
    "calibrate_nominal_level",
    "run_episode",
    "run_many",
    "severity_sweep",
    "ablation_suite",
    "TRACE_COLUMNS",
]

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("u_norm", "c", "gamma", "b", "eta_f", "active", "dist_to_ref")


@dataclass(frozen=True)
class Setup:
    """Everything one episode needs, built once from a validated config."""

    cfg: dict
    plant: Plant
    params: PlantParams
    dt: float
    ref_cfg: ReferenceConfig
    reward_weights: np.ndarray
    action_cost: float
    controller: NominalController
    tracking: TrackingWeights
    gate: GateParams
    shift: ShiftSpec | None


@dataclass
class EpisodeResult:
    seed: int
    method: str
    trace: EpisodeTrace
    metrics: RecoveryMetrics
    states: np.ndarray | None = None
    # per-step injected residual, shape (horizon, n_u); only with record_states
    residuals: np.ndarray | None = None


def _controller(cfg, plant, params, dt):
    n = cfg["nominal"]
    limits = np.asarray(n["action_limits"], dtype=float)
    if n["kind"] == "PD":
        return make_pd(n["kp"], n["kd"], limits)
    if n["kind"] == "LQR":
        Q = np.diag(n["Q"]) if np.ndim(n["Q"]) == 1 else np.asarray(n["Q"], float)
        R = np.diag(n["R"]) if np.ndim(n["R"]) == 1 else np.asarray(n["R"], float)
        return make_lqr(plant, params, dt, Q, R, limits, n.get("iters", 10000), n.get("tol", 1e-10))
    raise ConfigError(f"nominal.kind: unknown controller {n['kind']!r}")


def _tracking(cfg, ctrl: NominalController, n_tracked):
    t = cfg["tracking"]
    kq, kqd = ctrl.gains[:, :n_tracked], ctrl.gains[:, n_tracked:]
    lam = t["Lambda"]
    if lam == "from_gains":
        # ratio of position to velocity gain on the dominant channel
        lam = np.abs(kq[0]) / np.maximum(np.abs(kqd[0]), 1e-12)
    emap = t["error_map"]
    if emap == "from_gains":
        emap = kqd / np.max(np.abs(kqd))
    return TrackingWeights(lam, t["task_weights"], emap)


def build(cfg) -> Setup:
    p = cfg["plant"]
    plant = make_plant(p["name"], **p.get("constants", {}))
    params = plant.nominal_params()
    dt = float(p["dt"])
    ctrl = _controller(cfg, plant, params, dt)
    if ctrl.n_u != plant.n_u:
        raise ConfigError(f"nominal: controller has {ctrl.n_u} outputs, plant needs {plant.n_u}")
    r = p["reference"]
    ref_cfg = ReferenceConfig(tuple(r.get("offset", ())), tuple(r.get("amplitude", ())), r.get("period"), dt)
    rw = p["reward"]
    weights = np.concatenate([np.asarray(rw["position_weight"], float), np.asarray(rw["velocity_weight"], float)])
    tracking = _tracking(cfg, ctrl, plant.n_tracked)

    g = dict(cfg["gate"])
    limits = ctrl.action_limits
    eps = g.pop("eps", None)
    eps_j = g.pop("eps_j", None)
    eps = float(g["eps_frac"] * np.linalg.norm(limits)) if eps is None else float(eps)
    eps_j = g["eps_j_frac"] * limits if eps_j is None else np.broadcast_to(np.asarray(eps_j, float), limits.shape)
    g.pop("eps_frac"), g.pop("eps_j_frac")
    ab = cfg["ablation"]
    method = cfg["protocol"]["method"]
    gate = GateParams(
        eps=eps,
        eps_j=eps_j,
        e_bar=np.broadcast_to(np.asarray(g.pop("e_bar"), float), limits.shape),
        directional=bool(ab["directional"]),
        adaptive_gain=bool(ab["adaptive_gain"]),
        boost=bool(ab["boost"]),
        clip=method != "residual-unconstrained",
        **g,
    )
    s = cfg.get("shift")
    shift = None
    if s is not None:
        shift = ShiftSpec(s["family"], float(s["severity"]), int(cfg["protocol"]["fault_step"]), int(s.get("channel", 0)))
    return Setup(cfg, plant, params, dt, ref_cfg, weights, float(rw.get("action_cost", 0.0)), ctrl, tracking, gate, shift)


def calibrate_nominal_level(J_bar, window):
    """Mean of the smoothed reward over ``[start, end)``."""
    start, end = window
    seg = np.asarray(J_bar[start:end], dtype=float)
    if seg.size == 0 or end <= start:
        raise ConfigError(f"protocol.calibration: empty calibration window [{start}, {end})")
    return math.fsum(seg) / seg.size


def _initial_state(setup: Setup, seed):
    plant = setup.plant
    rng = np.random.default_rng([0x5A6, int(seed)])
    noise = float(setup.cfg["protocol"]["init_noise"])
    ref0 = reference(0, setup.ref_cfg, plant.n_tracked, plant.velocity_reference)
    eq = plant.equilibrium()
    q = eq.q.copy()
    qdot = eq.qdot.copy()
    if plant.velocity_reference:
        qdot = qdot + ref0.qdot_ref
    else:
        q = q + ref0.q_ref
        qdot = qdot + ref0.qdot_ref
    q = q + noise * rng.standard_normal(q.shape)
    qdot = qdot + noise * rng.standard_normal(qdot.shape)
    return PlantState(q, qdot, 0)


def run_episode(setup: Setup, seed, method=None, record_states=False) -> EpisodeResult:
    cfg = setup.cfg
    proto = cfg["protocol"]
    method = method or proto["method"]
    if method not in cfgmod.METHODS:
        raise ConfigError(f"unknown method {method!r}")
    gate = setup.gate
    if (method == "residual-unconstrained") == gate.clip:
        gate = dataclasses.replace(gate, clip=method != "residual-unconstrained")
    use_residual = method != "frozen"

    plant, dt, ctrl, tw = setup.plant, setup.dt, setup.controller, setup.tracking
    H, tau = int(proto["horizon"]), int(proto["fault_step"])
    cal = tuple(proto["calibration"])
    cal_end = int(cal[1])
    n_u, n_tr = plant.n_u, plant.n_tracked
    res_cfg, ab = cfg["residual"], cfg["ablation"]

    state = _initial_state(setup, seed)
    params = setup.params

    if use_residual:
        basis = RandomTanhExpansion(
            n_features=int(res_cfg["n_features"]),
            scale=float(res_cfg["scale"]),
            random_state=np.random.default_rng([int(res_cfg["seed"]), int(seed)]),
        ).fit(np.zeros((1, 3 * n_tr)))
        V = basis.components_
        readout = DualTimescaleReadout(
            n_outputs=n_u,
            eta_fast=float(res_cfg["eta_fast"]),
            eta_slow=float(res_cfg["eta_slow"]),
            lambda_fast=float(res_cfg["lambda_fast"]),
            lambda_slow=float(res_cfg["lambda_slow"]),
            w_max=float(res_cfg["w_max"]),
            dual_head=bool(ab["dual_head"]),
        ).initialize(V.shape[0])
        traces = TracePair.zeros(V.shape[0], float(res_cfg["alpha_E"]), float(res_cfg["alpha_I"]))
        temporal = bool(ab["temporal_filter"])
    gs = GateState.initial(gate, n_u)

    rewards = np.empty(H)
    J_hist = np.empty(H)
    diag = {k: np.zeros(H) for k in TRACE_COLUMNS}
    states = np.empty((H, state.q.size + state.qdot.size)) if record_states else None
    residuals = np.zeros((H, n_u)) if record_states else None
    zeros_u = np.zeros(n_u)
    J_bar = 0.0
    J_star = math.nan
    phi = None
    b = 0.0

    t = 0
    try:
        for t in range(H):
            if setup.shift is not None and t == tau:
                params = apply_shift(params, setup.shift)
            if t == cal_end:
                J_star = calibrate_nominal_level(J_hist, cal)
                gs.J_star = J_star
            ref = reference(t, setup.ref_cfg, n_tr, plant.velocity_reference)
            q_tr, qd_tr = plant.tracked(state)
            q_err = ref.q_ref - q_tr
            qd_err = ref.qdot_ref - qd_tr
            a_nom = nominal_action(ctrl, q_tr, qd_tr, ref)

            u = zeros_u
            if use_residual:
                x = np.concatenate([q_err, qd_err, ref.qdot_ref])
                h = encode(V, x)
                if temporal:
                    traces, phi = update_traces(traces, h)
                else:
                    phi = h
                a_res = readout.predict(phi)
                u, gs, gd = apply_gate(a_nom, a_res, gs, gate)
                diag["c"][t] = gd.c
                diag["gamma"][t] = gd.gamma
                diag["u_norm"][t] = gd.u_norm
                diag["active"][t] = gd.active
            action = a_nom + u

            err = np.concatenate([q_err, qd_err])
            r = reward(err, action, setup.reward_weights, setup.action_cost)
            diag["dist_to_ref"][t] = float(np.linalg.norm(err))
            if record_states:
                states[t] = np.concatenate([state.q, state.qdot])
                residuals[t] = u
            state = plant.step(state, action, params, dt)

            J_bar = r if t == 0 else smooth_performance(J_bar, r, gate.alpha_J)
            rewards[t] = r
            J_hist[t] = J_bar

            if use_residual and t >= cal_end:
                gs.J_bar = J_bar
                gs = update_activation(gs, gate)
                if gs.active:
                    e = tracking_error(q_tr, qd_tr, ref.q_ref, ref.qdot_ref, tw.Lambda)
                    e_act = tw.error_map @ e
                    eta_f = effective_learning_rate(readout.eta_fast, b)
                    readout.partial_fit(phi, e_act, eta_fast=eta_f, step=t)
                    gs.beta = per_joint_gain_update(gs.beta, e_act, gate)
                    if gate.boost:
                        b = boost_update(b, task_error(e, tw.task_weights), gate)
                    gs.b = b
                    diag["eta_f"][t] = eta_f
                    diag["b"][t] = b
            elif use_residual:
                gs.J_bar = J_bar
    except NumericalBlowup as exc:
        # keep the finite part of the record for post-mortem dumps
        if exc.step is None:
            exc.step = t
        exc.prefix = {"reward": rewards[:t].copy(), "J_bar": J_hist[:t].copy(),
                      **{k: v[:t].copy() for k, v in diag.items()}}
        raise

    trace = EpisodeTrace(rewards, J_hist, tau, H, J_star, diag)
    m = compute_metrics(
        trace, J_star, delta=float(proto["delta"]), frac=float(proto["ttr_frac"]),
        window_frac=float(proto["ssr_window"]),
    )
    return EpisodeResult(int(seed), method, trace, m, states, residuals)


def _run_job(job):
    cfg, seed, method, record = job
    return run_episode(build(cfg), seed, method, record)


def run_many(cfg, seeds, methods, n_jobs=1, record_states=False):
    """Run every (method, seed) pair; results come back in input order."""
    jobs = [(cfg, int(s), m, record_states) for m in methods for s in seeds]
    if n_jobs == 1 or len(jobs) == 1:
        setup = build(cfg)
        return [run_episode(setup, s, m, record_states) for _, s, m, _ in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(_run_job, jobs))


def severity_sweep(cfg, family, severities, seeds=None, methods=("frozen", "residual-full"), n_jobs=1,
                   channel=0, keep_traces=False):
    """Run each severity x method x seed cell.

    Returns ``(rows, aggregated)``: ``rows`` is a list of dicts keyed by
    family/severity/method/seed with the episode metrics (and the result
    object when ``keep_traces``), ``aggregated`` maps
    ``(family, severity, method)`` to :func:`aggregate` output.
    """
    seeds = list(cfg["protocol"]["seeds"] if seeds is None else seeds)
    rows, agg = [], {}
    for sev in severities:
        if not sev > 0:
            raise ConfigError(f"sweep severity must be > 0, got {sev}")
        cell_cfg = cfgmod.merge(cfg, {"shift": {"family": family, "severity": float(sev), "channel": channel}})
        results = run_many(cell_cfg, seeds, methods, n_jobs)
        for method in methods:
            cell = [r for r in results if r.method == method]
            agg[(family, float(sev), method)] = aggregate([r.metrics for r in cell])
            for r in cell:
                row = {"family": family, "severity": float(sev), "method": method, "seed": r.seed,
                       "metrics": r.metrics}
                if keep_traces:
                    row["result"] = r
                rows.append(row)
    return rows, agg


def ablation_suite(cfg, seeds=None, variants=None, n_jobs=1):
    """Residual-full plus each single-mechanism ablation on shared seeds."""
    seeds = list(cfg["protocol"]["seeds"] if seeds is None else seeds)
    variants = list(cfgmod.ABLATIONS if variants is None else variants)
    out = {}
    for name in variants:
        vcfg = cfgmod.merge(cfg, {"ablation": cfgmod.ABLATIONS[name]})
        out[name] = run_many(vcfg, seeds, ["residual-full"], n_jobs)
    return out

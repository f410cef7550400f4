import dataclasses
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sagctl.plant import ConfigError
from sagctl.sag import (
    GateParams,
    GateState,
    apply_gate,
    authority_gain,
    boost_update,
    clip_authority,
    cosine_alignment,
    directional_gate,
    effective_learning_rate,
    per_joint_gain_update,
    smooth_performance,
    update_activation,
)

vec = arrays(float, 3, elements=st.floats(-1e6, 1e6))


def params(**kw):
    base = dict(eps=1.0, eps_j=np.full(3, 0.7))
    base.update(kw)
    return GateParams(**base)


def active_state(p, n=3, J_star=1.0, J_bar=0.5, J_min=0.5):
    gs = GateState.initial(p, n)
    return dataclasses.replace(gs, active=True, J_star=J_star, J_bar=J_bar, J_min=J_min)


def test_smooth_performance_examples():
    assert smooth_performance(0.3, 0.3, 0.02) == 0.3
    assert smooth_performance(0.0, 1.0, 0.1) == pytest.approx(0.1)
    J = 0.0
    for t in range(1, 200):
        J = smooth_performance(J, 1.0, 0.1)
        assert 1.0 - J == pytest.approx(0.9**t, rel=1e-9)


def test_activation_never_when_above_threshold():
    p = params(act_steps=5)
    gs = dataclasses.replace(GateState.initial(p, 3), J_star=1.0)
    for J in np.linspace(0.95, 1.2, 200):
        gs = update_activation(dataclasses.replace(gs, J_bar=float(J)), p)
        assert not gs.active
        assert authority_gain(gs, p) == p.gamma_min


def test_activation_latches_after_exactly_act_steps():
    p = params(act_steps=20, act_drop=0.1)
    gs = dataclasses.replace(GateState.initial(p, 3), J_star=1.0)
    for k in range(1, 21):
        gs = update_activation(dataclasses.replace(gs, J_bar=0.85), p)
        assert gs.active == (k == 20)
        assert gs.drop_counter == k


def test_counter_resets_on_recovery():
    p = params(act_steps=3)
    gs = dataclasses.replace(GateState.initial(p, 3), J_star=1.0)
    for J in (0.5, 0.5, 0.95, 0.5, 0.5):
        gs = update_activation(dataclasses.replace(gs, J_bar=J), p)
    assert not gs.active and gs.drop_counter == 2


def test_running_minimum_matches_trace_scan():
    p = params(act_steps=3)
    rng = np.random.default_rng(0)
    trace = np.concatenate([np.full(5, 1.0), 0.6 + 0.2 * rng.random(200)])
    gs = dataclasses.replace(GateState.initial(p, 3), J_star=1.0)
    t_act = None
    for t, J in enumerate(trace):
        gs = update_activation(dataclasses.replace(gs, J_bar=float(J)), p)
        if gs.active and t_act is None:
            t_act = t
    assert gs.J_min == min(trace[t_act:])


def test_cosine_examples():
    assert cosine_alignment(np.array([1.0, 0.0]), np.array([2.0, 0.0]), 1e-8) == pytest.approx(1.0)
    assert cosine_alignment(np.array([1.0, 0.0]), np.array([-1.0, 0.0]), 1e-8) == pytest.approx(-1.0)
    assert cosine_alignment(np.array([1.0, 0.0]), np.zeros(2), 1e-8) == 0.0


@given(vec, vec)
def test_cosine_in_unit_interval(a, b):
    c = cosine_alignment(a, b, 1e-8)
    assert -1.0 - 1e-12 <= c <= 1.0 + 1e-12


def test_directional_gate_examples():
    u = np.array([1.0, -1.0])
    assert directional_gate(u, 0.5, 0.2) is u
    np.testing.assert_allclose(directional_gate(u, -0.3, 0.2), [0.2, -0.2])
    assert np.all(directional_gate(u, -0.1, 0.0) == 0.0)


def test_authority_gain_examples():
    p = params()
    assert authority_gain(active_state(p, J_bar=1.0), p) == p.gamma_min
    assert authority_gain(active_state(p, J_bar=0.5, J_min=0.5), p) == pytest.approx(1.0)
    assert authority_gain(active_state(p, J_bar=0.75, J_min=0.5), p) == pytest.approx(0.5)
    p_low = params(gamma_max=0.6)
    assert authority_gain(active_state(p_low, J_bar=0.5, J_min=0.5), p_low) == 0.6


def test_gamma_lower_clip_switch():
    p = params(gamma_min=0.3)
    above = active_state(p, J_bar=1.5, J_min=0.5)
    assert authority_gain(above, p) == 0.3
    pz = params(gamma_min=0.3, gamma_clip_zero=True)
    # raw value 0.3 - 0.5 / 0.5 < 0 is clipped at zero instead of gamma_min
    assert authority_gain(dataclasses.replace(above, J_bar=1.5), pz) == 0.0


def test_fixed_gain_ablation():
    p = params(adaptive_gain=False)
    assert authority_gain(active_state(p, J_bar=0.99), p) == p.gamma_max


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 3), st.floats(0.0, 0.5))
def test_authority_gain_nonincreasing_in_performance(j1, j2, k_gamma, gamma_min):
    p = params(k_gamma=k_gamma, gamma_min=gamma_min)
    lo, hi = sorted((j1, j2))
    g_lo = authority_gain(active_state(p, J_star=1.0, J_bar=lo, J_min=0.2), p)
    g_hi = authority_gain(active_state(p, J_star=1.0, J_bar=hi, J_min=0.2), p)
    assert g_hi <= g_lo
    assert p.gamma_min <= g_hi <= p.gamma_max


def test_per_joint_gain_examples():
    p = params(e_bar=np.full(3, 0.1), k_beta=0.05)
    beta = np.array([1.0, 2.0, 1.0])
    np.testing.assert_array_equal(per_joint_gain_update(beta, np.array([0.05, -0.1, 0.0]), p), beta)
    out = per_joint_gain_update(beta, np.array([0.2, 0.2, 0.0]), p)
    assert out[0] == pytest.approx(1.05) and out[1] == 2.0 and out[2] == 1.0


def test_beta_decay_switch():
    p = params(e_bar=np.full(3, 0.1), beta_decay=True)
    out = per_joint_gain_update(np.array([1.0, 0.5, 1.0]), np.array([0.0, 0.0, 1.0]), p)
    np.testing.assert_allclose(out, [0.95, 0.5, 1.05])


def test_boost_examples():
    p = params(alpha_b=0.1, eps_bar=0.1, rho_b=0.99)
    assert boost_update(0.0, 0.05, p) == 0.0
    assert boost_update(0.0, 0.5, p) == pytest.approx(0.1)
    b = 2.0
    for t in range(1, 1000):
        b = boost_update(b, 0.0, p)
        assert b == pytest.approx(2.0 * 0.99**t, rel=1e-12)
    assert boost_update(p.b_max, 1.0, p) == p.b_max


def test_effective_learning_rate():
    assert effective_learning_rate(5e-3, 0.0) == 5e-3
    assert effective_learning_rate(5e-3, 1.0) == 1e-2
    assert effective_learning_rate(5e-3, 4.0) == pytest.approx(2.5e-2)
    with pytest.raises(ConfigError):
        effective_learning_rate(5e-3, -0.1)


def test_clip_examples():
    p = GateParams(eps=2.5, eps_j=np.full(2, 10.0))
    np.testing.assert_allclose(clip_authority(np.array([3.0, 4.0]), p), [1.5, 2.0])
    p = GateParams(eps=1.0, eps_j=np.ones(2))
    np.testing.assert_array_equal(clip_authority(np.array([0.1, 0.1]), p), [0.1, 0.1])
    p = GateParams(eps=10.0, eps_j=np.ones(2))
    np.testing.assert_array_equal(clip_authority(np.array([5.0, 0.0]), p), [1.0, 0.0])


@given(vec, st.floats(1e-3, 100), arrays(float, 3, elements=st.floats(1e-3, 100)))
def test_clip_bounds_hold_exactly(u, eps, eps_j):
    p = GateParams(eps=eps, eps_j=eps_j)
    out = clip_authority(u, p)
    assert float(np.linalg.norm(out)) <= eps
    assert np.all(np.abs(out) <= eps_j)


def test_inactive_gate_injects_nothing():
    p = params()
    gs = GateState.initial(p, 3)
    a_nom = np.array([0.3, -1.0, 2.0])
    u, gs2, diag = apply_gate(a_nom, np.array([5.0, 5.0, 5.0]), gs, p)
    assert np.all(u == 0.0) and not diag.active
    assert (a_nom + u).tobytes() == a_nom.tobytes()


def test_antiparallel_residual_fully_suppressed():
    p = params(kappa=0.0)
    gs = active_state(p)
    u, _, diag = apply_gate(np.array([1.0, 0.0, 0.0]), np.array([-0.5, 0.0, 0.0]), gs, p)
    assert diag.c < 0 and np.all(u == 0.0)


@given(vec, vec, st.floats(0.0, 1.0), st.floats(0.0, 0.99))
def test_gate_output_respects_bounds(a_nom, a_res, j_bar, kappa):
    p = params(kappa=kappa)
    gs = active_state(p, J_bar=j_bar, J_min=min(j_bar, 0.5))
    u, gs2, diag = apply_gate(a_nom, a_res, gs, p)
    assert float(np.linalg.norm(u)) <= p.eps
    assert np.all(np.abs(u) <= p.eps_j)
    assert diag.u_norm == float(np.linalg.norm(u))


@given(vec, vec, st.floats(0.0, 0.99))
def test_opposition_attenuated(a_nom, a_res, kappa):
    p = params(kappa=kappa, eps=1e9, eps_j=np.full(3, 1e9))
    gs = active_state(p, J_bar=0.5, J_min=0.5)
    u, gs2, diag = apply_gate(a_nom, a_res, gs, p)
    assume(diag.c < 0)
    before = authority_gain(gs, p) * gs.beta * a_res
    assert np.linalg.norm(u) <= kappa * np.linalg.norm(before) * (1 + 1e-12) + 1e-300


def test_unconstrained_mode_skips_alignment_and_clip():
    p = params(clip=False, kappa=0.0)
    gs = active_state(p)
    a_res = np.array([-100.0, 0.0, 0.0])
    u, _, _ = apply_gate(np.array([1.0, 0.0, 0.0]), a_res, gs, p)
    np.testing.assert_array_equal(u, authority_gain(gs, p) * a_res)


@pytest.mark.parametrize(
    "kw",
    [dict(eps=0.0), dict(eps_j=np.array([0.0, 1.0, 1.0])), dict(kappa=1.0), dict(xi=0.0),
     dict(gamma_min=2.0), dict(beta_min=3.0), dict(rho_b=1.0), dict(b_max=-1.0)],
)
def test_gate_parameter_validation(kw):
    with pytest.raises(ConfigError):
        params(**kw)


def test_range_invariants_under_random_updates():
    rng = np.random.default_rng(1)
    p = params(e_bar=np.full(3, 0.1))
    beta, b = np.ones(3), 0.0
    for _ in range(5000):
        beta = per_joint_gain_update(beta, rng.normal(0, 0.2, 3), p)
        b = boost_update(b, abs(rng.normal(0, 0.2)), p)
        gs = active_state(p, J_bar=float(rng.normal(0.5, 1.0)), J_min=float(rng.normal(0.3, 0.5)))
        g = authority_gain(gs, p)
        assert p.gamma_min <= g <= p.gamma_max
        assert np.all((p.beta_min <= beta) & (beta <= p.beta_max))
        assert 0.0 <= b <= p.b_max
    assert math.isfinite(b)

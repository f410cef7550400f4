import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sagctl.plant import ConfigError, NumericalBlowup
from sagctl.residual import (
    DualTimescaleReadout,
    RandomTanhExpansion,
    TracePair,
    TrackingWeights,
    cap_norm,
    encode,
    peak_step,
    plasticity_update,
    residual_output,
    task_error,
    tracking_error,
    update_traces,
)

finite = st.floats(-10, 10, allow_nan=False)


def test_encode_zero_input_gives_zero_features():
    V = np.random.default_rng(0).standard_normal((8, 3))
    assert np.all(encode(V, np.zeros(3)) == 0.0)


def test_encode_identity_basis():
    assert encode(np.eye(1), np.array([1.0]))[0] == pytest.approx(0.76159, abs=1e-5)


def test_encode_rejects_wrong_dimension():
    with pytest.raises(ConfigError, match="expects input of length 3"):
        encode(np.zeros((4, 3)), np.zeros(2))


def test_seeded_expansion_matches_recomputation():
    basis = RandomTanhExpansion(n_features=16, random_state=[7, 3]).fit(np.zeros((1, 3)))
    rng = np.random.default_rng([7, 3])
    V = rng.standard_normal((16, 3)) * (1.0 / math.sqrt(3))
    x = np.array([0.3, -1.2, 0.5])
    np.testing.assert_array_equal(basis.components_, V)
    expected = np.array([math.tanh(sum(V[i, k] * x[k] for k in range(3))) for i in range(16)])
    np.testing.assert_allclose(encode(basis.components_, x), expected, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(basis.transform(x[None, :])[0], encode(basis.components_, x))


@given(arrays(float, 5, elements=st.floats(-1e3, 1e3)))
def test_features_bounded(x):
    V = RandomTanhExpansion(n_features=32, random_state=1).fit(np.zeros((1, 5))).components_
    h = encode(V, x)
    assert h.shape == (32,)
    assert np.all(np.abs(h) <= 1.0)


def test_basis_is_immutable_and_estimator_api():
    est = RandomTanhExpansion(n_features=8, scale=0.5, random_state=2)
    assert est.get_params() == {"n_features": 8, "scale": 0.5, "random_state": 2}
    est.fit(np.zeros((1, 4)))
    before = est.components_.tobytes()
    with pytest.raises(ValueError):
        est.components_[0, 0] = 1.0
    est.transform(np.ones((3, 4)))
    assert est.components_.tobytes() == before
    assert clone(est).get_params() == est.get_params()


def test_trace_one_step_arithmetic():
    tr, phi = update_traces(TracePair.zeros(1, 0.2, 0.05), np.array([1.0]))
    assert tr.phi_E[0] == pytest.approx(0.2)
    assert tr.phi_I[0] == pytest.approx(0.05)
    assert phi[0] == pytest.approx(0.15)


def test_trace_impulse_second_step():
    tr, _ = update_traces(TracePair.zeros(1), np.array([1.0]))
    _, phi = update_traces(tr, np.array([0.0]))
    assert phi[0] == pytest.approx(0.8 * 0.2 - 0.95 * 0.05)
    assert phi[0] == pytest.approx(0.1125)


def test_trace_constant_input_closed_form():
    h = np.array([0.7, -0.3])
    tr = TracePair.zeros(2)
    for t in range(1, 301):
        tr, phi = update_traces(tr, h)
        closed = h * ((1 - 0.05) ** t - (1 - 0.2) ** t)
        np.testing.assert_allclose(phi, closed, rtol=1e-12, atol=1e-15)
    assert np.max(np.abs(phi)) < 1e-6


def rounding_slack(hmax, aE, aI):
    # each trace converges to h, so phi is a difference of two numbers of
    # size |h|; per-step rounding of a contraction with rate a accumulates to
    # at most ulp(|h|) / a
    return float(np.spacing(hmax)) * (1.0 / aE + 1.0 / aI)


@given(st.floats(0.01, 0.98), st.floats(0.01, 0.98), arrays(float, 4, elements=finite))
def test_band_pass_bound(a, b, h):
    aI, aE = sorted((a, b))
    if aI == aE:
        return
    tr = TracePair.zeros(4, aE, aI)
    hmax = float(np.max(np.abs(h)))
    for t in range(1, 200):
        tr, phi = update_traces(tr, h)
        assert np.max(np.abs(phi)) <= hmax * (1 - aI) ** t + rounding_slack(hmax, aE, aI)


def test_transient_peak_and_unimodal_decay():
    aE, aI = 0.2, 0.05
    k_peak = peak_step(aE, aI)
    expected = math.ceil(math.log(aE / aI) / math.log((1 - aI) / (1 - aE)))
    assert k_peak == expected
    tr = TracePair.zeros(1, aE, aI)
    # steady at zero, then a unit step at k = 0
    phis = []
    for _ in range(400):
        tr, phi = update_traces(tr, np.array([1.0]))
        phis.append(phi[0])
    phis = np.array(phis)
    argmax = int(np.argmax(phis)) + 1  # steps since the input changed
    assert argmax <= k_peak
    after = phis[argmax - 1:]
    assert np.all(np.diff(after) <= 0)


@pytest.mark.parametrize("aE,aI", [(0.05, 0.2), (0.2, 0.2), (1.0, 0.5), (0.2, 0.0)])
def test_trace_rate_ordering_enforced(aE, aI):
    with pytest.raises(ConfigError, match="0 < alpha_I < alpha_E < 1"):
        TracePair.zeros(2, aE, aI)


def test_residual_output_examples():
    phi = np.array([0.5, 0.25])
    assert residual_output(np.zeros((1, 2)), np.zeros((1, 2)), phi).tolist() == [0.0]
    assert residual_output(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), phi).tolist() == [0.75]


def test_heads_equal_single_linear_map():
    rng = np.random.default_rng(5)
    Wf, Ws, phi = rng.standard_normal((3, 10)), rng.standard_normal((3, 10)), rng.standard_normal(10)
    np.testing.assert_allclose(residual_output(Wf, Ws, phi), (Wf + Ws) @ phi, rtol=1e-14, atol=1e-14)


@given(arrays(float, 6, elements=finite), arrays(float, 6, elements=finite), st.floats(-3, 3))
def test_output_superposition(p1, p2, s):
    rng = np.random.default_rng(11)
    Wf, Ws = rng.standard_normal((2, 6)), rng.standard_normal((2, 6))
    lhs = residual_output(Wf, Ws, p1 + s * p2)
    rhs = residual_output(Wf, Ws, p1) + s * residual_output(Wf, Ws, p2)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(
        residual_output(Wf, Ws, p1), residual_output(Wf, 0 * Ws, p1) + residual_output(0 * Wf, Ws, p1),
        rtol=1e-12, atol=1e-12,
    )


def test_tracking_error_examples():
    z = np.zeros(1)
    assert tracking_error(z + 1, z + 2, z + 1, z + 2, np.array([3.0])).tolist() == [0.0]
    e = tracking_error(np.array([0.0]), np.array([0.05]), np.array([0.1]), np.array([0.0]), np.array([2.0]))
    assert e[0] == pytest.approx(0.15)
    e0 = tracking_error(np.array([5.0]), np.array([0.2]), np.array([-1.0]), np.array([0.5]), np.array([0.0]))
    assert e0[0] == pytest.approx(0.3)


def test_task_error_examples():
    assert task_error(np.zeros(3), np.array([1.0, 2.0, 3.0])) == 0.0
    assert task_error(np.array([0.2]), np.array([2.0])) == pytest.approx(0.4)
    e, w = np.array([0.1, -0.4, 0.25]), np.array([1.0, 0.5, 2.0])
    assert task_error(e, w) == pytest.approx(0.1 * 1.0 + 0.4 * 0.5 + 0.25 * 2.0)


def test_tracking_weights_validation():
    with pytest.raises(ConfigError):
        TrackingWeights([-1.0], [1.0], [[1.0]])
    with pytest.raises(ConfigError):
        TrackingWeights([1.0], [-1.0], [[1.0]])
    with pytest.raises(ConfigError):
        TrackingWeights([1.0, 2.0], [1.0], [[1.0, 0.0]])


def test_plasticity_examples():
    W = plasticity_update(np.zeros((1, 2)), np.array([1.0]), np.array([1.0, 0.0]), 0.01, 0.0)
    assert W.tolist() == [[0.01, 0.0]]
    W = plasticity_update(np.array([[1.0, 0.0]]), np.zeros(1), np.array([1.0, 1.0]), 0.01, 0.1)
    assert W.tolist() == [[0.9, 0.0]]
    W0 = np.array([[0.3, -2.0]])
    assert plasticity_update(W0, np.zeros(1), np.array([4.0, 5.0]), 0.5, 0.0).tolist() == W0.tolist()


def test_plasticity_blowup_carries_step():
    with pytest.raises(NumericalBlowup, match="plasticity blowup at step 42"):
        plasticity_update(np.zeros((1, 1)), np.array([np.inf]), np.array([1.0]), 0.1, 0.0, step=42)


def test_plasticity_rejects_bad_rates():
    with pytest.raises(ConfigError):
        plasticity_update(np.zeros((1, 1)), np.zeros(1), np.zeros(1), -0.1, 0.0)
    with pytest.raises(ConfigError):
        plasticity_update(np.zeros((1, 1)), np.zeros(1), np.zeros(1), 0.1, 1.0)


def test_decay_contraction():
    W = np.random.default_rng(3).standard_normal((2, 5))
    n0, lam = np.linalg.norm(W), 0.01
    for t in range(1, 500):
        W = plasticity_update(W, np.zeros(2), np.ones(5), 0.1, lam)
        assert np.linalg.norm(W) == pytest.approx((1 - lam) ** t * n0, rel=1e-12)


def test_cap_norm():
    W = np.array([[3.0, 4.0]])
    assert cap_norm(W, 10.0) is W
    assert np.linalg.norm(cap_norm(W, 2.5)) == pytest.approx(2.5)


def test_fast_head_contribution_falls_below_slow():
    ro = DualTimescaleReadout(n_outputs=1, eta_fast=5e-3, eta_slow=5e-4, lambda_fast=1e-3, lambda_slow=1e-5)
    ro.initialize(3)
    phi = np.array([0.2, -0.1, 0.4])
    ro.partial_fit(phi, np.array([1.0]))
    crossover = None
    for t in range(1, 20000):
        ro.partial_fit(phi, np.zeros(1))
        if abs(ro.W_fast_ @ phi)[0] < abs(ro.W_slow_ @ phi)[0]:
            crossover = t
            break
    assert crossover is not None
    # (eta_f / eta_s) (1 - lam_f)^t = (1 - lam_s)^t
    predicted = math.log(10.0) / (math.log(1 - 1e-5) - math.log(1 - 1e-3))
    assert abs(crossover - predicted) <= 2


def test_readout_partial_fit_matches_primitives():
    ro = DualTimescaleReadout(n_outputs=2).initialize(3)
    phi, e = np.array([0.1, 0.2, -0.3]), np.array([0.5, -1.0])
    ro.partial_fit(phi, e, eta_fast=0.01)
    np.testing.assert_array_equal(ro.W_fast_, plasticity_update(np.zeros((2, 3)), e, phi, 0.01, 1e-3))
    np.testing.assert_array_equal(ro.W_slow_, plasticity_update(np.zeros((2, 3)), e, phi, 5e-4, 1e-5))
    np.testing.assert_array_equal(ro.predict(phi), residual_output(ro.W_fast_, ro.W_slow_, phi))


def test_single_head_leaves_slow_weights_at_zero():
    ro = DualTimescaleReadout(n_outputs=1, dual_head=False).initialize(2)
    for _ in range(10):
        ro.partial_fit(np.array([1.0, 0.5]), np.array([1.0]))
    assert np.all(ro.W_slow_ == 0.0) and np.any(ro.W_fast_ != 0.0)


def test_readout_fit_replays_rows_and_caps_norm():
    X = np.ones((50, 4))
    y = np.full(50, 1e3)
    ro = DualTimescaleReadout(n_outputs=1, w_max=2.0).fit(X, y)
    assert np.linalg.norm(ro.W_fast_) <= 2.0 + 1e-12
    assert ro.predict(X).shape == (50, 1)
    assert ro.score(X, ro.predict(X)[:, 0]) == 1.0


def test_readout_rate_ordering_enforced():
    with pytest.raises(ConfigError, match="eta_f0 > eta_s > 0"):
        DualTimescaleReadout(eta_fast=1e-4, eta_slow=1e-3).initialize(2)
    with pytest.raises(ConfigError, match="lambda_f > lambda_s"):
        DualTimescaleReadout(lambda_fast=1e-5, lambda_slow=1e-3).initialize(2)


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        DualTimescaleReadout().predict(np.zeros(3))

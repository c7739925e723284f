import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctmdp.lyapunov import check_drift
from ctmdp.model import cost_vector, induced_generator, validate
from ctmdp.models import (
    IDLE,
    SERVE_1,
    SERVE_2,
    UnstableParamsError,
    UpgradeQueueParams,
    build_mm1,
    build_upgrade_queue,
    geometric_drift_constants,
    mm1_lyapunov,
    ps_policy,
    threshold_policy,
    upgrade_queue_lyapunov,
    upgrade_queue_untruncated_drift,
)

rate = st.floats(0.05, 3.0)


@st.composite
def stable_params(draw, N=st.integers(2, 8)):
    mu1, mu2 = draw(rate), draw(rate)
    cap = min(mu1, mu2)
    l1 = draw(st.floats(0.01, 0.45)) * cap
    l2 = draw(st.floats(0.01, 0.45)) * cap
    return UpgradeQueueParams(
        lambda1=l1, lambda2=l2, mu1=mu1, mu2=mu2, lambdaT=draw(rate),
        h1=draw(st.floats(0, 5)), h2=draw(st.floats(0, 5)), c_transfer=draw(st.floats(0, 5)),
        N=draw(N),
    )


def test_default_model_shape(uq):
    assert uq.n_states == 31 * 31
    assert uq.truncation_meta["boundary_rule"] == "arrival-blocking"
    assert uq.actions[0] == (IDLE,)
    assert set(uq.actions[uq.index_of((3, 4))]) == {SERVE_1, SERVE_2}


def test_interior_exit_rate_serving_queue_two(uq):
    p = UpgradeQueueParams()
    for q1, q2 in [(1, 1), (5, 7), (29, 29)]:
        row = uq.gen[(uq.index_of((q1, q2)), SERVE_2)]
        assert row.exit_rate == math.fsum([p.mu2, p.lambda1, p.lambda2, q1 * p.lambdaT])


def test_empty_state_has_arrivals_only(uq):
    row = uq.gen[(0, IDLE)]
    dest = {uq.state_of(j): r for j, r in zip(row.targets, row.rates)}
    assert dest == {(1, 0): 0.3, (0, 1): 0.3}


def test_arrivals_blocked_at_box_edge(uq):
    i = uq.index_of((30, 30))
    dest = {uq.state_of(j) for j in uq.gen[(i, SERVE_1)].targets}
    assert dest == {(29, 30)}  # the upgrade target (29, 31) leaves the box as well


def test_cost_rate_folds_transfer_charge(uq):
    i = uq.index_of((4, 3))
    assert uq.cost[(i, SERVE_1)] == 4 * 1.0 + 3 * 2.0 + 1.0 * 0.2 * 4


def test_ps_policy_priorities(uq, ps):
    assert ps[uq.index_of((0, 0))] == IDLE
    assert ps[uq.index_of((3, 0))] == SERVE_1
    assert ps[uq.index_of((3, 1))] == SERVE_2
    uq.check_policy(ps)


@pytest.mark.parametrize("favour", [SERVE_1, SERVE_2])
@pytest.mark.parametrize("threshold", [1, 3, 10])
def test_threshold_policies_feasible(uq, favour, threshold):
    uq.check_policy(threshold_policy(uq, threshold, favour))


def test_params_validation():
    with pytest.raises(ValueError):
        UpgradeQueueParams(mu1=0.0)
    with pytest.raises(ValueError):
        UpgradeQueueParams(h1=-1.0)
    with pytest.raises(ValueError):
        UpgradeQueueParams(N=1)


def test_default_lyapunov_constants():
    spec = upgrade_queue_lyapunov(UpgradeQueueParams())
    r1, delta, K = spec.params["r1"], spec.params["delta"], spec.params["K"]
    assert r1 == pytest.approx((1 + 1 / 0.6) / 2)
    assert delta == pytest.approx((1 / r1 - 0.6) * (r1 - 1))
    assert 1 < r1 < 1 / 0.6 and delta > 0
    assert K * (r1 - 1) > max(1 + 1 * 0.2, 2)
    assert spec.values[0] == pytest.approx(K)


def test_unstable_params_raise():
    with pytest.raises(UnstableParamsError, match="stability hypothesis violated"):
        upgrade_queue_lyapunov(UpgradeQueueParams(lambda1=0.6, lambda2=0.5))
    with pytest.raises(UnstableParamsError):
        geometric_drift_constants(2.0, 1.0, 1.0)


def test_untruncated_drift_matches_truncated_in_interior(uq, ps):
    p = UpgradeQueueParams()
    spec = upgrade_queue_lyapunov(p)
    Q = induced_generator(uq, ps)
    D = cost_vector(uq, ps) + Q @ spec.values
    for q in [(1, 1), (5, 2), (10, 20)]:
        i = uq.index_of(q)
        assert upgrade_queue_untruncated_drift(p, spec, q, ps[i]) == pytest.approx(D[i], rel=1e-12, abs=1e-9)


def test_mm1_structure():
    m = build_mm1(1.0, 2.0, 1.0, 5)
    assert m.n_states == 6 and validate(m) == []
    assert m.gen[(0, 0)].targets.tolist() == [1]
    assert m.gen[(5, 0)].targets.tolist() == [4]
    assert [m.cost[(i, 0)] for i in range(6)] == [0, 1, 2, 3, 4, 5]


def test_mm1_lyapunov_passes():
    m = build_mm1(1.0, 2.0, 1.0, 40)
    spec = mm1_lyapunov(1.0, 2.0, 1.0, 40)
    pol = ps_policy.__globals__["StationaryPolicy"]([0] * m.n_states)
    cert = check_drift(induced_generator(m, pol), cost_vector(m, pol), spec, 0, m, pol)
    assert cert.passed


@settings(max_examples=40, deadline=None)
@given(stable_params())
def test_builder_always_valid(p):
    model = build_upgrade_queue(p)
    assert validate(model) == []
    model.check_policy(ps_policy(model))
    inner = [(q1, q2) for q1 in range(1, p.N) for q2 in range(1, p.N)]
    for q in inner[:5]:
        row = model.gen[(model.index_of(q), SERVE_2)]
        assert row.exit_rate == math.fsum([p.mu2, p.lambda1, p.lambda2, q[0] * p.lambdaT])


@settings(max_examples=25, deadline=None)
@given(stable_params(N=st.integers(2, 12)))
def test_auto_lyapunov_drift_holds_off_origin(p):
    model = build_upgrade_queue(p)
    pol = ps_policy(model)
    spec = upgrade_queue_lyapunov(p)
    cert = check_drift(induced_generator(model, pol), cost_vector(model, pol), spec, 0)
    assert cert.passed, cert.violations[:3]
    assert math.isfinite(spec.params["K"])

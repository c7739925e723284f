import math

import numpy as np
import pytest

from ctmdp.chain import first_passage
from ctmdp.lyapunov import _drift_direct, _drift_log, certify_cost_bound, check_drift
from ctmdp.model import StationaryPolicy, cost_vector, induced_generator
from ctmdp.models import LyapunovSpec, UpgradeQueueParams, mm1_lyapunov, upgrade_queue_lyapunov


@pytest.fixture(scope="module")
def spec():
    return upgrade_queue_lyapunov(UpgradeQueueParams())


def test_default_certificate_and_bound(uq, ps, spec):
    rep = certify_cost_bound(uq, ps, spec, 0)
    assert rep.certificate.passed and rep.certificate.violations == []
    assert rep.holds and rep.standard and rep.r_monotone
    r = spec.values
    ok = rep.report.cost[1:] <= r[1:] + 1e-6 * (1 + r[1:])
    assert ok.all()


def test_drift_linear_in_values(uq, ps, spec):
    Q = induced_generator(uq, ps)
    zero = np.zeros(uq.n_states)
    d1 = check_drift(Q, zero, spec).drift
    d2 = check_drift(Q, zero, spec.scaled(2.0)).drift
    np.testing.assert_allclose(d2, 2 * d1, rtol=1e-12)


def test_unit_cost_certificate_bounds_passage_time(uq, ps, spec):
    Q = induced_generator(uq, ps)
    ones = np.ones(uq.n_states)
    cert = check_drift(Q, ones, spec)
    assert cert.passed
    m = first_passage(Q, ones, 0).m
    assert np.all(m[1:] <= spec.values[1:])


def test_mm1_unit_cost_bound(mm1):
    pol = StationaryPolicy([0] * mm1.n_states)
    Q = induced_generator(mm1, pol)
    spec = mm1_lyapunov(1.0, 2.0, 1.0, 60)
    assert check_drift(Q, np.ones(mm1.n_states), spec).passed
    m = first_passage(Q, np.ones(mm1.n_states), 0).m
    assert np.all(m[1:] <= spec.values[1:])


def test_too_small_function_reports_violations(uq, ps, spec):
    weak = spec.scaled(1e-3)
    rep = certify_cost_bound(uq, ps, weak, 0)
    cert = rep.certificate
    assert not cert.passed and cert.violations
    assert all(d > 0 for _, d in cert.violations)
    assert rep.note


def test_log_path_matches_direct(uq, ps, spec):
    Q = induced_generator(uq, ps)
    c = cost_vector(uq, ps)
    D1, ok1 = _drift_direct(Q, c, spec.values)
    D2, ok2 = _drift_log(Q, c, spec.log_values)
    np.testing.assert_allclose(D2, D1, rtol=1e-9, atol=1e-9 * np.abs(D1).max())
    assert np.array_equal(ok1, ok2)


def test_huge_function_handled_in_log_space(uq, ps, spec):
    big = spec.scaled(math.exp(700.0))
    assert not np.all(np.isfinite(big.values))
    cert = check_drift(induced_generator(uq, ps), cost_vector(uq, ps), big)
    assert cert.passed


def test_boundary_note_lists_edge_states(uq, ps, spec):
    cert = check_drift(induced_generator(uq, ps), cost_vector(uq, ps), spec, 0, uq, ps)
    note = cert.boundary_note
    assert len(note["edge_states"]) == 61
    assert len(note["untruncated_drift"]) == 61
    # blocking arrivals can only lower the drift of an increasing function
    assert np.all(np.array(note["truncated_drift"]) <= np.array(note["untruncated_drift"]) + 1e-6)


def test_exceptional_set_drift_feeds_F():
    # two-state chain: r = (0, 5) with H* = {0, 1} and i0 = 0
    import scipy.sparse as sp

    Q = sp.csr_matrix(np.array([[-1.0, 1.0], [1.0, -1.0]]))
    spec = LyapunovSpec.from_values([1.0, 5.0], {0, 1})
    cert = check_drift(Q, np.array([1.0, 1.0]), spec, 0)
    assert cert.F == 0.0
    spec = LyapunovSpec.from_values([5.0, 1.0], {0, 1})
    cert = check_drift(Q, np.array([1.0, 1.0]), spec, 0)
    assert cert.F == pytest.approx(5.0)


def test_dimension_mismatch(uq, ps, spec):
    with pytest.raises(ValueError, match="dimension"):
        check_drift(induced_generator(uq, ps), np.ones(3), spec)

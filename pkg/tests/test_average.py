import numpy as np
import pytest

from ctmdp.average import (
    VanishingDiscountError,
    acoi_residuals,
    check_acoe_conditions,
    check_assumptions,
    dynkin_residuals,
    first_passage_bound,
    interior_mask,
    vanishing_discount,
)
from ctmdp.chain import long_run_cost
from ctmdp.discounted import check_monotone
from ctmdp.model import StationaryPolicy, cost_vector, induced_generator
from ctmdp.models import SERVE_1, SERVE_2, threshold_policy

from conftest import explicit_model

PROBES = [(0, 0), (1, 0), (0, 1), (3, 2), (6, 5)]


def J_R(model, pol):
    return long_run_cost(induced_generator(model, pol), cost_vector(model, pol)).J_R


def test_converges_with_default_schedule(uq_avg):
    assert uq_avg.steps <= 40
    assert uq_avg.alpha_seq[0] == 1.0
    assert all(b == a / 2 for a, b in zip(uq_avg.alpha_seq, uq_avg.alpha_seq[1:]))
    assert [s.policy_changes for s in uq_avg.per_alpha[-3:]] == [0, 0, 0]


def test_relative_values_anchored_and_increasing(uq, uq_avg):
    assert uq_avg.h_star[0] == 0.0
    assert check_monotone(uq, uq_avg.h_star, tol=1e-9) == []


def test_last_alpha_values_near_limit(uq_avg):
    assert abs(uq_avg.g_last - uq_avg.g_star) <= 1e-4 * (1 + uq_avg.g_star)


def test_limit_mode_last(mm1):
    sol = vanishing_discount(mm1, limit="last")
    assert sol.limit == "last" and sol.g_star == sol.g_last


def test_mm1_gain_and_bias(mm1_avg):
    assert mm1_avg.g_star == pytest.approx(1.0, abs=1e-8)
    n = np.arange(15)
    np.testing.assert_allclose(mm1_avg.h_star[:15], n * (n + 1) / 2, atol=1e-6)


def test_gain_beats_checked_policies(uq, ps, uq_avg):
    pols = [ps] + [threshold_policy(uq, k, f) for k, f in [(2, SERVE_1), (5, SERVE_1), (3, SERVE_2)]]
    for pol in pols:
        assert uq_avg.g_star <= J_R(uq, pol) + 1e-4
    assert uq_avg.g_star == pytest.approx(J_R(uq, uq_avg.f_star), rel=1e-12)


def test_assumptions_hold(uq, ps, uq_avg):
    ev = check_assumptions(uq, uq_avg, ps, 0)
    assert ev.all_hold and ev.standard
    assert ev.A1.detail["stated_bound_holds"]
    assert ev.A1.detail["max_offset"] <= ev.A1.detail["J_R_over_pi_i0"]
    assert ev.A3.detail["L"] == 0.0 and ev.A3.detail["monotone"]
    for s in uq_avg.per_alpha:
        assert np.all(s.h <= ev.H + 1e-6 * (1 + ev.H))


def test_nonmonotone_relative_values_use_empirical_L():
    # the middle state is expensive, so h is not increasing along the line
    line = [[[(1, 1.0)]], [[(0, 1.0), (2, 1.0)]], [[(1, 1.0)]]]
    model = explicit_model(line, [[0.0], [5.0], [1.0]])
    sol = vanishing_discount(model)
    ev = check_assumptions(model, sol, StationaryPolicy([0, 0, 0]))
    assert ev.A3.detail["monotone"] is False
    assert ev.A3.detail["flag"] == "empirical L"


def test_optimality_inequality_and_equation(uq, uq_avg):
    rep = acoi_residuals(uq, uq_avg)
    g = uq_avg.g_star
    assert rep.acoi_holds and rep.argmin_matches
    assert np.all(rep.phi >= -1e-6 * (1 + g))
    assert np.all(rep.phi[rep.interior] <= 1e-4 * (1 + g))


def test_acoe_certified_by_finite_bound(uq, ps, uq_avg):
    H = check_assumptions(uq, uq_avg, ps).H
    cert = check_acoe_conditions(uq, uq_avg, None, 0, H, report=acoi_residuals(uq, uq_avg))
    assert cert.all_certified and cert.phi_ok
    assert cert.conditions["iv"].all()
    assert set(cert.fired) == {"iv"}


def test_acoe_falls_back_without_H(uq, uq_avg):
    cert = check_acoe_conditions(uq, uq_avg, G=[0])
    assert set(cert.fired) == {"ii"}
    assert cert.conditions["i"].all() and cert.conditions["iii"].all()


@pytest.mark.parametrize("which", ["ps", "f_star"])
def test_first_passage_bound(uq, ps, uq_avg, which):
    theta = ps if which == "ps" else uq_avg.f_star
    for q in PROBES:
        ev = first_passage_bound(uq, uq_avg, theta, uq.index_of(q), 0)
        assert ev.holds, (q, ev)


def test_dynkin_identity_interior(uq, uq_avg):
    res = dynkin_residuals(uq, uq_avg, None, 0)
    inner = interior_mask(uq)
    assert np.all(np.abs(res[inner]) <= 1e-5 * (1 + np.abs(uq_avg.h_star[inner])))


def test_interior_mask(uq):
    mask = interior_mask(uq)
    assert mask[uq.index_of((2, 2))] and mask[uq.index_of((28, 28))]
    assert not mask[uq.index_of((1, 5))] and not mask[uq.index_of((29, 5))]
    assert mask.sum() == 27 * 27


def test_schedule_exhaustion(uq):
    with pytest.raises(VanishingDiscountError) as info:
        vanishing_discount(uq, max_steps=2)
    assert len(info.value.trace) == 2


def test_bad_schedule(mm1):
    with pytest.raises(ValueError):
        vanishing_discount(mm1, ratio=1.0)
    with pytest.raises(ValueError):
        vanishing_discount(mm1, limit="median")

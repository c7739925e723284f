import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctmdp.discounted import (
    ConvergenceError,
    bellman_residual,
    check_monotone,
    evaluate_policy,
    evaluate_policy_relative,
    policy_residual,
    solve_optimal,
)
from ctmdp.chain import long_run_cost
from ctmdp.model import StationaryPolicy, cost_vector, induced_generator
from ctmdp.models import SERVE_1, SERVE_2, UpgradeQueueParams, build_upgrade_queue, ps_policy, threshold_policy

from conftest import explicit_model

ALPHAS = (1.0, 0.1, 0.01)


def mm1_discounted(n, lam, mu, h, alpha):
    """Closed form of the M/M/1 discounted holding cost on the infinite line."""
    z = ((alpha + lam + mu) - np.sqrt((alpha + lam + mu) ** 2 - 4 * lam * mu)) / (2 * lam)
    A = h / alpha
    B = (lam - mu) * h / alpha**2
    C = mu * h / (alpha * (alpha + lam * (1 - z)))
    return A * n + B + C * z**n


@pytest.mark.parametrize("alpha", ALPHAS)
def test_policy_equation_residual(uq, ps, alpha):
    J = evaluate_policy(uq, ps, alpha)
    c = cost_vector(uq, ps)
    assert policy_residual(uq, ps, alpha, J) <= 1e-8 * (1 + np.abs(c).max())


@pytest.mark.parametrize("alpha", [2.0, 0.5, 0.05])
def test_mm1_closed_form(mm1, alpha):
    J = evaluate_policy(mm1, StationaryPolicy([0] * mm1.n_states), alpha)
    n = np.arange(11)
    expect = mm1_discounted(n, 1.0, 2.0, 1.0, alpha)
    np.testing.assert_allclose(J[:11], expect, rtol=1e-8)


def test_two_state_closed_form():
    # 0 -> 1 at rate a, 1 -> 0 at rate b, cost 1 in state 1 only
    a, b, alpha = 0.7, 1.9, 0.3
    model = explicit_model([[[(1, a)]], [[(0, b)]]], [[0.0], [1.0]])
    J = evaluate_policy(model, StationaryPolicy([0, 0]), alpha)
    J1 = (alpha + a) / (alpha * (alpha + a + b))
    J0 = a / (alpha * (alpha + a + b))
    np.testing.assert_allclose(J, [J0, J1], rtol=1e-13)


@pytest.mark.parametrize("alpha", ALPHAS)
def test_optimal_fixed_point(uq, alpha):
    sol = solve_optimal(uq, alpha)
    assert sol.residual <= 1e-9
    assert bellman_residual(uq, sol.values, alpha) <= 1e-9
    J = evaluate_policy(uq, sol.greedy, alpha)
    assert np.abs(J - sol.values).max() <= 1e-8


@pytest.mark.parametrize("alpha", ALPHAS)
def test_optimal_below_every_checked_policy(uq, ps, alpha):
    sol = solve_optimal(uq, alpha)
    policies = [ps] + [threshold_policy(uq, k, f) for k in (1, 4) for f in (SERVE_1, SERVE_2)]
    for pol in policies:
        assert np.all(sol.values <= evaluate_policy(uq, pol, alpha) + 10 * sol.tol)


@pytest.mark.parametrize("alpha", ALPHAS)
def test_optimal_values_monotone(uq, alpha):
    assert check_monotone(uq, solve_optimal(uq, alpha).values) == []


def test_value_iteration_agrees_and_rises_from_zero():
    model = build_upgrade_queue(UpgradeQueueParams(N=8))
    seen = []
    vi = solve_optimal(model, 0.5, method="value_iteration", callback=lambda k, J: seen.append(J))
    acc = solve_optimal(model, 0.5)
    assert np.abs(vi.values - acc.values).max() <= 1e-8
    assert vi.greedy == acc.greedy
    prev = np.zeros(model.n_states)
    for J in seen:
        assert np.all(J >= prev)
        prev = J


def test_value_iteration_exhaustion_raises():
    model = build_upgrade_queue(UpgradeQueueParams(N=5))
    with pytest.raises(ConvergenceError) as info:
        solve_optimal(model, 0.01, method="value_iteration", max_iter=3)
    assert info.value.best_residual > 0


def test_ties_go_to_lowest_action():
    # two actions with identical rows and costs at state 0
    row = [(1, 1.0)]
    model = explicit_model([[row, row], [[(0, 1.0)]]], [[1.0, 1.0], [0.0]])
    for method in ("accelerated", "value_iteration"):
        assert solve_optimal(model, 0.3, method=method).greedy.tolist() == [0, 0]


def test_bad_arguments(uq):
    with pytest.raises(ValueError):
        solve_optimal(uq, 0.0)
    with pytest.raises(ValueError):
        solve_optimal(uq, 1.0, method="nope")
    with pytest.raises(ValueError):
        evaluate_policy(uq, ps_policy(uq), -1.0)


def test_relative_form_limits(uq, ps):
    g, h = evaluate_policy_relative(uq, ps, 0.0)
    J_R = long_run_cost(induced_generator(uq, ps), cost_vector(uq, ps)).J_R
    assert h[0] == 0.0
    assert g == pytest.approx(J_R, rel=1e-10)
    g1, h1 = evaluate_policy_relative(uq, ps, 0.1)
    J = evaluate_policy(uq, ps, 0.1)
    np.testing.assert_allclose(g1 / 0.1 + h1, J, rtol=1e-10)


@st.composite
def small_mdp(draw):
    n = draw(st.integers(2, 4))
    rates, costs = [], []
    for i in range(n):
        acts = draw(st.integers(1, 2))
        rows, cs = [], []
        for _ in range(acts):
            others = [j for j in range(n) if j != i]
            vals = draw(st.lists(st.floats(0.0, 5.0), min_size=len(others), max_size=len(others)))
            rows.append(list(zip(others, vals)))
            cs.append(draw(st.floats(0.0, 10.0)))
        rates.append(rows)
        costs.append(cs)
    return rates, costs


@settings(max_examples=60, deadline=None)
@given(small_mdp(), st.sampled_from([2.0, 0.5, 0.1]))
def test_brute_force_policy_enumeration(mdp, alpha):
    model = explicit_model(*mdp)
    best = np.full(model.n_states, np.inf)
    for choice in itertools.product(*model.actions):
        best = np.minimum(best, evaluate_policy(model, StationaryPolicy(choice), alpha))
    scale = 1 + np.abs(best).max()
    for method in ("accelerated", "value_iteration"):
        sol = solve_optimal(model, alpha, method=method)
        assert np.abs(sol.values - best).max() <= 1e-8 * scale
        J = evaluate_policy(model, sol.greedy, alpha)
        assert np.abs(J - best).max() <= 1e-8 * scale

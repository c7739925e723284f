"""Discounted-cost evaluation and optimisation on a truncated model.

Two solvers share one fixed-point contract. ``value_iteration`` is the plain
uniformised contraction started from ``J = 0``; it is monotone but needs on the
order of ``Lambda / alpha`` sweeps. ``accelerated`` interleaves exact policy
evaluations (modified policy iteration) and works in the relative coordinates
``(alpha * J(0), J - J(0))``, which stay well conditioned as ``alpha -> 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._linalg import solve
from .model import CtmdpModel, StationaryPolicy, cost_vector, induced_generator

__all__ = [
    "DiscountedSolution",
    "ConvergenceError",
    "evaluate_policy",
    "evaluate_policy_relative",
    "policy_residual",
    "bellman_residual",
    "solve_optimal",
    "check_monotone",
]

_EPS = np.finfo(np.float64).eps


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, best_residual: float):
        self.best_residual = best_residual
        super().__init__(f"{message} (best residual {best_residual:.3e})")


@dataclass(frozen=True)
class DiscountedSolution:
    """Optimal discounted values ``J*_alpha`` and a greedy policy.

    ``offset`` is ``alpha * J(0)`` and ``relative`` is ``J - J(0)``; both are
    computed directly rather than from ``values``.
    """

    alpha: float
    values: np.ndarray
    greedy: StationaryPolicy
    residual: float
    iterations: int
    offset: float
    relative: np.ndarray
    method: str
    uniformization_rate: float
    tol: float


def evaluate_policy(model: CtmdpModel, policy: StationaryPolicy, alpha: float) -> np.ndarray:
    """Solve ``(alpha I - Q_f) J = c_f``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    Q = induced_generator(model, policy)
    c = cost_vector(model, policy)
    A = alpha * sp.identity(model.n_states, format="csr") - Q
    return solve(A, c)


def policy_residual(model: CtmdpModel, policy: StationaryPolicy, alpha: float, J: np.ndarray) -> float:
    """``||alpha J - c_f - Q_f J||_inf``."""
    Q = induced_generator(model, policy)
    c = cost_vector(model, policy)
    return float(np.abs(alpha * J - c - Q @ J).max(initial=0.0))


def evaluate_policy_relative(model: CtmdpModel, policy: StationaryPolicy, alpha: float) -> tuple[float, np.ndarray]:
    """Return ``(alpha * J(0), J - J(0))`` for the policy; ``alpha = 0`` gives the Poisson solution.

    Solves ``g + alpha h - Q_f h = c_f`` with ``h(0) = 0``. For ``alpha = 0``
    the chain must be unichain.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    Q = induced_generator(model, policy)
    c = cost_vector(model, policy)
    return _relative_solve(Q, c, alpha)


def _relative_solve(Q: sp.csr_matrix, c: np.ndarray, alpha: float) -> tuple[float, np.ndarray]:
    n = Q.shape[0]
    A = sp.lil_matrix(alpha * sp.identity(n, format="csr") - Q)
    A[:, 0] = np.ones((n, 1))
    x = solve(sp.csc_matrix(A), c)
    h = x.copy()
    g = float(x[0])
    h[0] = 0.0
    return g, h


def _pair_values(model: CtmdpModel, h: np.ndarray) -> np.ndarray:
    """``c(i,a) + sum_j q(j|i,a) h(j)`` for every feasible pair."""
    P = model.pairs
    return P.cost + P.off @ h - P.exit_rate * h[P.state]


def _tie(model: CtmdpModel, h: np.ndarray, alpha: float) -> float:
    P = model.pairs
    scale = np.abs(P.cost).max(initial=0.0) + (model.max_exit_rate + alpha) * np.abs(h).max(initial=0.0)
    return 64 * _EPS * (1.0 + scale)


def bellman_residual(model: CtmdpModel, values: np.ndarray, alpha: float) -> float:
    """``max_i |alpha J(i) - min_a {c(i,a) + sum_j q(j|i,a) J(j)}|``."""
    vals = _pair_values(model, values)
    return float(np.abs(alpha * values - model.pairs.state_min(vals)).max(initial=0.0))


def _relative_residual(model, g, h, alpha) -> tuple[float, np.ndarray, np.ndarray]:
    vals = _pair_values(model, h)
    mins = model.pairs.state_min(vals)
    return float(np.abs(g + alpha * h - mins).max(initial=0.0)), vals, mins


def _greedy(model, vals, mins, tie) -> StationaryPolicy:
    P = model.pairs
    return StationaryPolicy(P.action[P.first_within(vals, mins, tie)])


def solve_optimal(
    model: CtmdpModel,
    alpha: float,
    tol: float = 1e-9,
    max_iter: int = 1_000_000,
    method: str = "accelerated",
    initial_policy: StationaryPolicy | None = None,
    callback=None,
) -> DiscountedSolution:
    """Solve ``alpha J = min_a {c(i,a) + sum_j q(j|i,a) J(j)}`` on the truncation.

    ``tol`` bounds the sup-norm residual of that equation. Ties in the greedy
    policy go to the lowest action id. Raises :class:`ConvergenceError` after
    ``max_iter`` sweeps (value iteration) or improvement steps (accelerated).
    With value iteration, ``callback(sweep, J)`` sees every iterate (a copy).
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if method == "value_iteration":
        return _value_iteration(model, alpha, tol, max_iter, callback)
    if method == "accelerated":
        return _accelerated(model, alpha, tol, max_iter, initial_policy)
    raise ValueError(f"unknown method {method!r}")


def _value_iteration(model, alpha, tol, max_iter, callback=None) -> DiscountedSolution:
    P = model.pairs
    lam = model.max_exit_rate
    denom = alpha + lam
    stay = lam - P.exit_rate
    J = np.zeros(model.n_states)
    best = np.inf
    for it in range(1, max_iter + 1):
        vals = (P.cost + P.off @ J + stay * J[P.state]) / denom
        TJ = P.state_min(vals)
        res = denom * float(np.abs(TJ - J).max(initial=0.0))
        best = min(best, res)
        J = TJ
        if callback is not None:
            callback(it, J.copy())
        if res <= tol:
            break
    else:
        raise ConvergenceError(f"value iteration did not converge in {max_iter} sweeps", best)
    res, vals, mins = _relative_residual(model, alpha * J[0], J - J[0], alpha)
    tie = _tie(model, J - J[0], alpha)
    return DiscountedSolution(
        alpha, J, _greedy(model, vals, mins, tie), bellman_residual(model, J, alpha), it,
        float(alpha * J[0]), J - J[0], "value_iteration", lam, tol,
    )


def _accelerated(model, alpha, tol, max_iter, initial_policy) -> DiscountedSolution:
    P = model.pairs
    if initial_policy is None:
        # greedy with respect to J = 0
        mins = P.state_min(P.cost)
        f = StationaryPolicy(P.action[P.first_within(P.cost, mins, 0.0)])
    else:
        model.check_policy(initial_policy)
        f = initial_policy
    best = np.inf
    for it in range(1, max_iter + 1):
        k = P.pair_index(f)
        Q = induced_generator(model, f)
        g, h = _relative_solve(Q, P.cost[k], alpha)
        res, vals, mins = _relative_residual(model, g, h, alpha)
        best = min(best, res)
        tie = _tie(model, h, alpha)
        improve = vals[k] > mins + tie
        if not improve.any():
            break
        choice = f.choice.copy()
        choice[improve] = P.action[P.first_within(vals, mins, tie)][improve]
        f = StationaryPolicy(choice)
    else:
        raise ConvergenceError(f"policy improvement did not settle in {max_iter} steps", best)
    floor = 4 * tie
    if res > max(tol, floor):
        raise ConvergenceError("fixed point not reached to tolerance", res)
    return DiscountedSolution(
        alpha, g / alpha + h, _greedy(model, vals, mins, tie), res, it, g, h,
        "accelerated", model.max_exit_rate, max(tol, floor),
    )


def check_monotone(model: CtmdpModel, values: np.ndarray, tol: float = 1e-9) -> list[tuple[int, int]]:
    """Pairs ``(q, q + e_k)`` inside the box where ``values`` drops by more than ``tol``."""
    values = np.asarray(values)
    out = []
    for k in range(model.dim):
        for i, s in enumerate(model.states):
            up = list(s)
            up[k] += 1
            j = model.index.get(tuple(int(x) for x in up))
            if j is not None and values[j] < values[i] - tol:
                out.append((i, j))
    return out

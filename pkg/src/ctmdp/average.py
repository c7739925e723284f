"""Average-cost optimality via the vanishing-discount method.

The pipeline: solve the discounted problem along a geometric sequence of
discount factors, read off ``g = alpha J*(0)``, ``h = J* - J*(0)`` and the
greedy policy until all three settle, then check the boundedness assumptions
against a reference policy, the optimality inequality residuals, and the
per-state conditions that upgrade the inequality to an equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chain import (
    absorption_probabilities,
    closed_classes,
    first_passage,
    long_run_cost,
)
from .discounted import (
    _pair_values,
    _tie,
    check_monotone,
    evaluate_policy_relative,
    solve_optimal,
)
from .model import CtmdpModel, StationaryPolicy, cost_vector, induced_generator

__all__ = [
    "AlphaStep",
    "AverageSolution",
    "VanishingDiscountError",
    "Evidence",
    "AssumptionEvidence",
    "AcoeReport",
    "AcoeCertification",
    "BoundEvidence",
    "vanishing_discount",
    "check_assumptions",
    "interior_mask",
    "acoi_residuals",
    "check_acoe_conditions",
    "first_passage_bound",
    "dynkin_residuals",
]

STABLE_STEPS = 3


@dataclass(frozen=True)
class AlphaStep:
    alpha: float
    offset: float
    h: np.ndarray
    policy: StationaryPolicy
    policy_changes: int
    residual: float
    iterations: int
    spread: float

    @property
    def h_sup(self) -> float:
        return float(np.abs(self.h).max(initial=0.0))


@dataclass(frozen=True)
class AverageSolution:
    """Optimal average cost ``g_star``, relative values ``h_star`` (zero at state 0) and policy ``f_star``.

    With ``limit == "poisson"`` the pair ``(g_star, h_star)`` is the exact
    ``alpha -> 0`` limit along the settled greedy policy; ``g_last``/``h_last``
    always hold the values at the smallest discount factor used.
    """

    g_star: float
    h_star: np.ndarray
    f_star: StationaryPolicy
    alpha_seq: list[float]
    per_alpha: list[AlphaStep]
    g_last: float
    h_last: np.ndarray
    limit: str

    @property
    def steps(self) -> int:
        return len(self.per_alpha)


class VanishingDiscountError(RuntimeError):
    def __init__(self, message: str, trace: list[AlphaStep]):
        self.trace = trace
        super().__init__(message)


def vanishing_discount(
    model: CtmdpModel,
    alpha0: float = 1.0,
    ratio: float = 0.5,
    max_steps: int = 40,
    tol: float = 1e-6,
    inner_tol: float = 1e-9,
    limit: str = "poisson",
) -> AverageSolution:
    """Run ``alpha_n = alpha0 * ratio**n`` until policy, offset and relative values settle.

    Stops once the greedy policy has been unchanged for three consecutive
    steps and both ``|g_n - g_{n+1}| <= tol (1 + g_n)`` and
    ``||h_n - h_{n+1}|| <= tol (1 + ||h_n||)``. ``limit="last"`` returns the
    values at the final discount factor instead of the exact limit.
    """
    if not alpha0 > 0:
        raise ValueError("alpha0 must be positive")
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    if limit not in ("poisson", "last"):
        raise ValueError(f"unknown limit mode {limit!r}")
    trace: list[AlphaStep] = []
    stable = 0
    prev_policy = None
    for n in range(max_steps):
        alpha = alpha0 * ratio**n
        sol = solve_optimal(model, alpha, tol=inner_tol, initial_policy=prev_policy)
        changes = 0 if prev_policy is None else int(np.count_nonzero(sol.greedy.choice != prev_policy.choice))
        spread = float(np.ptp(sol.offset + alpha * sol.relative))
        step = AlphaStep(alpha, sol.offset, sol.relative, sol.greedy, changes, sol.residual, sol.iterations, spread)
        if trace:
            stable = stable + 1 if changes == 0 else 0
            last = trace[-1]
            g_ok = abs(last.offset - step.offset) <= tol * (1.0 + abs(last.offset))
            h_ok = np.abs(last.h - step.h).max(initial=0.0) <= tol * (1.0 + last.h_sup)
            trace.append(step)
            if stable >= STABLE_STEPS and g_ok and h_ok:
                break
        else:
            trace.append(step)
        prev_policy = sol.greedy
    else:
        raise VanishingDiscountError(f"no stabilisation within {max_steps} discount factors", trace)
    last = trace[-1]
    f_star = last.policy
    if limit == "poisson":
        g_star, h_star = evaluate_policy_relative(model, f_star, 0.0)
    else:
        g_star, h_star = last.offset, last.h.copy()
    return AverageSolution(
        g_star, h_star, f_star, [s.alpha for s in trace], trace, last.offset, last.h.copy(), limit
    )


@dataclass(frozen=True)
class Evidence:
    holds: bool
    detail: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AssumptionEvidence:
    A1: Evidence
    A2: Evidence
    A3: Evidence
    H: np.ndarray
    standard: bool

    @property
    def all_hold(self) -> bool:
        return self.A1.holds and self.A2.holds and self.A3.holds


def check_assumptions(
    model: CtmdpModel,
    solution: AverageSolution,
    d: StationaryPolicy,
    i0: int = 0,
    tol: float = 1e-6,
    a3_tol: float = 1e-9,
) -> AssumptionEvidence:
    """Boundedness evidence for the discount sequence, using a reference policy ``d``.

    A1 compares ``alpha_n J*(i0)`` with the cycle cost ``c_{i0,i0}(d)`` and with
    ``J_R(d) / pi_i0(d)``; A2 compares ``h_n(i)`` with ``H(i) = c_{i,i0}(d)``;
    A3 takes ``L = 0`` when every ``h_n`` is coordinate-wise nondecreasing and
    falls back to the empirical ``L`` otherwise.
    """
    Q = induced_generator(model, d)
    c = cost_vector(model, d)
    rep = first_passage(Q, c, i0)
    standard = rep.all_finite
    H = rep.cost.copy()
    H[i0] = 0.0
    c00 = float(rep.cost[i0])
    offsets = np.array([s.offset for s in solution.per_alpha])
    if standard:
        summary = long_run_cost(Q, c)
        cycle_bound = summary.J_R / summary.pi[i0]
    else:
        cycle_bound = np.inf
    a1 = Evidence(
        bool(np.all(offsets <= cycle_bound + tol)),
        {
            "max_offset": float(offsets.max()),
            "c_i0i0": c00,
            "stated_bound_holds": bool(np.all(offsets <= c00 + tol)),
            "J_R_over_pi_i0": float(cycle_bound),
        },
    )
    worst, worst_at = -np.inf, None
    for n, s in enumerate(solution.per_alpha):
        gap = (s.h - H) / (1.0 + H)
        k = int(np.argmax(gap))
        if gap[k] > worst:
            worst, worst_at = float(gap[k]), (n, k)
    a2 = Evidence(bool(standard and worst <= tol), {"max_scaled_excess": worst, "at": worst_at})
    monotone = all(not check_monotone(model, s.h) for s in solution.per_alpha)
    min_h = float(min(s.h.min() for s in solution.per_alpha))
    if monotone:
        a3 = Evidence(min_h >= -a3_tol, {"L": 0.0, "min_h": min_h, "monotone": True})
    else:
        a3 = Evidence(True, {"L": max(0.0, -min_h), "min_h": min_h, "monotone": False, "flag": "empirical L"})
    return AssumptionEvidence(a1, a2, a3, H, standard)


def interior_mask(model: CtmdpModel, margin: int = 2) -> np.ndarray:
    """States at L-infinity distance at least ``margin`` from every face of the box."""
    box = model.truncation_meta.get("box")
    if box is None:
        return np.ones(model.n_states, dtype=bool)
    box = np.asarray(box)
    dist = np.minimum(model.states, box - model.states).min(axis=1)
    return dist >= margin


@dataclass(frozen=True)
class AcoeReport:
    phi: np.ndarray
    max_abs_phi: float
    acoi_holds: bool
    argmin_matches: bool
    interior: np.ndarray
    max_abs_phi_interior: float
    tol: float


def acoi_residuals(model: CtmdpModel, solution: AverageSolution, tol: float = 1e-6) -> AcoeReport:
    """Discrepancy ``phi(i) = g - min_a {c(i,a) + sum_j q(j|i,a) h(j)}``."""
    g, h = solution.g_star, solution.h_star
    P = model.pairs
    vals = _pair_values(model, h)
    mins = P.state_min(vals)
    phi = g - mins
    k = P.pair_index(solution.f_star)
    tie = max(_tie(model, h, 0.0), 1e-9 * (1.0 + abs(g)))
    argmin_ok = bool(np.all(vals[k] <= mins + tie))
    interior = interior_mask(model)
    thr = tol * (1.0 + g)
    return AcoeReport(
        phi,
        float(np.abs(phi).max(initial=0.0)),
        bool(np.all(phi >= -thr)),
        argmin_ok,
        interior,
        float(np.abs(phi[interior]).max(initial=0.0)),
        thr,
    )


@dataclass(frozen=True)
class AcoeCertification:
    conditions: dict
    certified: np.ndarray
    fired: list
    phi_ok: bool | None

    @property
    def all_certified(self) -> bool:
        return bool(self.certified.all())


# order in which conditions are tried; the first that holds is recorded
CONDITION_ORDER = ("iv", "ii", "iii", "i")


def check_acoe_conditions(
    model: CtmdpModel,
    solution: AverageSolution,
    e: StationaryPolicy | None = None,
    i0: int = 0,
    H: np.ndarray | None = None,
    G=None,
    report: AcoeReport | None = None,
    phi_tol: float = 1e-4,
) -> AcoeCertification:
    """Per-state sufficient conditions for the optimality equation.

    ``iv``: every row's support has finite ``H``; ``ii``: ``i0`` is reached in
    finite mean time under ``e``; ``iii``: ``i`` is positive recurrent under
    ``e``; ``i``: a user set ``G`` is reached in finite mean time with finite
    ``H``-weighted entry law. When ``report`` is supplied, ``phi_ok`` says
    whether ``|phi| <= phi_tol (1 + g)`` at every certified interior state.
    """
    e = solution.f_star if e is None else e
    n = model.n_states
    Q = induced_generator(model, e)
    c = cost_vector(model, e)
    conds = {}
    if H is not None:
        H = np.asarray(H, dtype=float)
        finite = np.isfinite(H)
        ok = np.empty(n, dtype=bool)
        for i, acts in enumerate(model.actions):
            ok[i] = finite[i] and all(finite[model.gen[(i, a)].targets].all() for a in acts)
        conds["iv"] = ok
    else:
        conds["iv"] = np.zeros(n, dtype=bool)
    conds["ii"] = first_passage(Q, c, i0).reachable
    rec = np.zeros(n, dtype=bool)
    for cls in closed_classes(Q):
        rec[cls] = True
    conds["iii"] = rec
    if G is not None:
        targets, reached, U = absorption_probabilities(Q, G)
        mG = first_passage(Q, c, G).m
        Hg = np.zeros(targets.size) if H is None else H[targets]
        with np.errstate(invalid="ignore"):
            weighted = np.where(U > 0, U * Hg, 0.0).sum(axis=1)
        conds["i"] = reached & np.isfinite(mG) & np.isfinite(weighted)
    else:
        conds["i"] = np.zeros(n, dtype=bool)
    fired = []
    for i in range(n):
        fired.append(next((name for name in CONDITION_ORDER if conds[name][i]), None))
    certified = np.array([f is not None for f in fired])
    phi_ok = None
    if report is not None:
        sel = certified & report.interior
        phi_ok = bool(np.all(np.abs(report.phi[sel]) <= phi_tol * (1.0 + solution.g_star)))
    return AcoeCertification(conds, certified, fired, phi_ok)


@dataclass(frozen=True)
class BoundEvidence:
    state: int
    lhs: float
    rhs: float
    cost: float
    time: float
    entry_value: float
    holds: bool
    weighted_H: float | None

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


def first_passage_bound(
    model: CtmdpModel,
    solution: AverageSolution,
    theta: StationaryPolicy,
    i: int,
    G,
    H: np.ndarray | None = None,
    rtol: float = 1e-6,
) -> BoundEvidence:
    """Check ``h(i) <= c_{i,G}(theta) - g m_{i,G}(theta) + E[h(x(T))]`` for first entry ``T`` into ``G``."""
    Q = induced_generator(model, theta)
    c = cost_vector(model, theta)
    rep = first_passage(Q, c, G)
    if not rep.reachable[i]:
        raise ValueError(f"G is not reached in finite mean time from state {i} under theta")
    targets, reached, U = absorption_probabilities(Q, G)
    law = U[i]
    weighted = None
    if H is not None:
        weighted = float(law @ np.asarray(H)[targets])
        if not np.isfinite(weighted):
            raise ValueError("H-weighted entry law is infinite")
    h, g = solution.h_star, solution.g_star
    entry = float(law @ h[targets])
    rhs = float(rep.cost[i] - g * rep.m[i] + entry)
    lhs = float(h[i])
    return BoundEvidence(
        int(i), lhs, rhs, float(rep.cost[i]), float(rep.m[i]), entry,
        lhs <= rhs + rtol * (1.0 + abs(lhs)), weighted,
    )


def dynkin_residuals(model: CtmdpModel, solution: AverageSolution, e: StationaryPolicy | None = None, G=0) -> np.ndarray:
    """``c_{i,G}(e) - g m_{i,G}(e) + E[h(x(T))] - h(i)`` for every state (``inf`` where unreachable)."""
    e = solution.f_star if e is None else e
    Q = induced_generator(model, e)
    c = cost_vector(model, e)
    rep = first_passage(Q, c, G)
    targets, reached, U = absorption_probabilities(Q, G)
    h, g = solution.h_star, solution.g_star
    with np.errstate(invalid="ignore"):
        out = rep.cost - g * rep.m + U @ h[targets] - h
    out[~(rep.reachable & reached)] = np.inf
    return out

"""Foster-Lyapunov drift checks and the first-passage cost bound they imply."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from .chain import FirstPassageReport, check_standard
from .discounted import check_monotone
from .model import CtmdpModel, StationaryPolicy, cost_vector, induced_generator
from .models import LyapunovSpec, upgrade_queue_untruncated_drift, UpgradeQueueParams

__all__ = ["LyapunovCertificate", "CostBoundReport", "check_drift", "certify_cost_bound"]

# beyond this exponent r is handled in log space
LOG_SWITCH = 600.0
DRIFT_RTOL = 1e-9
BOUND_RTOL = 1e-6


@dataclass(frozen=True)
class LyapunovCertificate:
    passed: bool
    violations: list[tuple[int, float]]
    F: float
    drift: np.ndarray
    hstar_finite: bool
    boundary_note: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CostBoundReport:
    holds: bool
    failures: list[tuple[int, float, float]]
    certificate: LyapunovCertificate
    report: FirstPassageReport
    bound: np.ndarray
    standard: bool
    r_monotone: bool
    note: str = ""


def _drift_direct(Q: sp.csr_matrix, c: np.ndarray, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    D = c + Q @ r
    ok = D <= DRIFT_RTOL * (1.0 + np.abs(D))
    return D, ok


def _drift_log(Q: sp.csr_matrix, c: np.ndarray, logr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Signed log-sum-exp evaluation of ``c + Q r`` for very steep ``r``."""
    n = Q.shape[0]
    D = np.empty(n)
    ok = np.empty(n, dtype=bool)
    with np.errstate(divide="ignore"):
        logc = np.log(c)
    for i in range(n):
        lo, hi = Q.indptr[i], Q.indptr[i + 1]
        cols, rates = Q.indices[lo:hi], Q.data[lo:hi]
        diag = cols == i
        lam = -rates[diag].sum()
        off = ~diag & (rates > 0)
        with np.errstate(divide="ignore"):
            pos_terms = np.concatenate([[logc[i]], np.log(rates[off]) + logr[cols[off]]])
            log_pos = logsumexp(pos_terms) if np.isfinite(pos_terms).any() else -np.inf
            log_neg = math.log(lam) + logr[i] if lam > 0 and np.isfinite(logr[i]) else -np.inf
        if log_pos == -np.inf and log_neg == -np.inf:
            D[i], ok[i] = 0.0, True
            continue
        top = max(log_pos, log_neg)
        # D = exp(top) * (exp(log_pos - top) - exp(log_neg - top))
        core = math.exp(log_pos - top) - math.exp(log_neg - top)
        ok[i] = core <= DRIFT_RTOL * (math.exp(-top) + abs(core))
        with np.errstate(over="ignore"):
            D[i] = core * np.exp(top) if core != 0 else 0.0
    return D, ok


def check_drift(
    Q: sp.spmatrix,
    c: np.ndarray,
    spec: LyapunovSpec,
    i0: int = 0,
    model: CtmdpModel | None = None,
    policy: StationaryPolicy | None = None,
) -> LyapunovCertificate:
    """Evaluate ``D(i) = c(i) + sum_j q(j|i) r(j)`` and test ``D <= 0`` off the exceptional set.

    With ``model`` and ``policy`` given, states on the upper edge of the box are
    listed in ``boundary_note`` together with the drift the same state would
    have without truncation (built-in models only).
    """
    Q = sp.csr_matrix(Q, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    n = Q.shape[0]
    if c.shape != (n,) or spec.log_values.shape != (n,):
        raise ValueError(
            f"dimension mismatch: generator {n}, cost {c.shape}, Lyapunov {spec.log_values.shape}"
        )
    if spec.log_values.max(initial=-np.inf) <= LOG_SWITCH:
        D, ok = _drift_direct(Q, c, spec.values)
    else:
        D, ok = _drift_log(Q, c, spec.log_values)
    outside = np.ones(n, dtype=bool)
    outside[list(spec.hstar)] = False
    bad = np.flatnonzero(outside & ~ok)
    violations = [(int(i), float(D[i])) for i in bad]
    inner = [i for i in spec.hstar if i != i0]
    F = max(0.0, max((float(D[i]) for i in inner), default=0.0))
    hstar_finite = bool(np.all(np.isfinite(D[list(spec.hstar)])))
    note = _boundary_note(model, policy, spec, D) if model is not None else {}
    return LyapunovCertificate(not violations and hstar_finite, violations, F, D, hstar_finite, note)


def _boundary_note(model, policy, spec, D) -> dict:
    box = model.truncation_meta.get("box")
    if box is None:
        return {}
    edge = np.flatnonzero(np.any(model.states >= np.asarray(box), axis=1))
    note = {"edge_states": edge.tolist(), "truncated_drift": D[edge].tolist()}
    kind = model.truncation_meta.get("kind")
    if policy is not None and spec.params and kind == "upgrade-queue":
        params = UpgradeQueueParams(**model.truncation_meta["params"])
        note["untruncated_drift"] = [
            upgrade_queue_untruncated_drift(params, spec, model.states[i], policy[i]) for i in edge
        ]
    elif spec.params and kind == "mm1":
        pr = model.truncation_meta["params"]
        K, r = spec.params["K"], spec.params["r1"]
        note["untruncated_drift"] = [
            pr["h"] * int(n) + K * r ** int(n) * (pr["lambda"] * (r - 1) + pr["mu"] * (1 / r - 1))
            for n in model.states[edge, 0]
        ]
    return note


def certify_cost_bound(
    model: CtmdpModel, policy: StationaryPolicy, spec: LyapunovSpec, i0: int = 0
) -> CostBoundReport:
    """Check ``c_{i,i0} <= r(i) - r(i0) + F m_{i,i0}`` at every ``i != i0``.

    The first-passage costs ``c_{i,i0}`` come from the exact linear systems;
    failures are listed as ``(state, cost, bound)``.
    """
    Q = induced_generator(model, policy)
    c = cost_vector(model, policy)
    cert = check_drift(Q, c, spec, i0, model, policy)
    std = check_standard(model, policy, i0)
    rep = std.report
    r = spec.values
    bound = r - r[i0] + cert.F * rep.m
    slack = BOUND_RTOL * (1.0 + r)
    failures = []
    for i in range(model.n_states):
        if i == i0:
            continue
        if not rep.cost[i] <= bound[i] + slack[i]:
            failures.append((i, float(rep.cost[i]), float(bound[i])))
    r_monotone = not check_monotone(model, spec.log_values, tol=0.0)
    note = "" if cert.passed else "drift condition fails; the bound is not implied"
    return CostBoundReport(not failures, failures, cert, rep, bound, std.verdict, r_monotone, note)

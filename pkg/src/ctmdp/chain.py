"""Analysis of the Markov chain induced by a stationary policy.

First-passage quantities use the "at least one transition" convention: for a
start state inside the target set the clock runs until the chain *returns*.
Entries that are infinite on the truncation are reported as ``np.inf``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from ._linalg import solve
from .model import CtmdpModel, StationaryPolicy, cost_vector, induced_generator

__all__ = [
    "ChainSummary",
    "FirstPassageReport",
    "HittingDistribution",
    "StandardCheck",
    "RenewalReport",
    "MultipleClosedClassesError",
    "UnreachableTargetError",
    "closed_classes",
    "stationary_distribution",
    "long_run_cost",
    "first_passage",
    "absorption_probabilities",
    "hitting_distribution",
    "check_standard",
    "renewal_identities",
]


class MultipleClosedClassesError(ValueError):
    def __init__(self, classes):
        self.classes = classes
        super().__init__(f"chain has {len(classes)} closed classes: {[c.tolist() for c in classes]}")


class UnreachableTargetError(ValueError):
    pass


@dataclass(frozen=True)
class ChainSummary:
    pi: np.ndarray
    recurrent: np.ndarray
    irreducible: bool
    residual: float
    J_R: float | None = None


@dataclass(frozen=True)
class FirstPassageReport:
    target: tuple[int, ...]
    m: np.ndarray
    cost: np.ndarray
    reachable: np.ndarray

    @property
    def all_finite(self) -> bool:
        return bool(self.reachable.all())


@dataclass(frozen=True)
class HittingDistribution:
    targets: np.ndarray
    probs: np.ndarray

    def expect(self, f: np.ndarray) -> float:
        return float(self.probs @ np.asarray(f)[self.targets])


@dataclass(frozen=True)
class StandardCheck:
    verdict: bool
    i0: int
    report: FirstPassageReport


@dataclass(frozen=True)
class RenewalReport:
    J_R: float
    tol: float
    ratio_errors: dict = field(default_factory=dict)
    discount_errors: dict = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        errs = list(self.ratio_errors.values()) + list(self.discount_errors.values())
        return all(e <= self.tol for e in errs)


def _adjacency(Q: sp.spmatrix) -> sp.csr_matrix:
    Q = sp.csr_matrix(Q)
    A = Q.copy()
    A.setdiag(0)
    A.eliminate_zeros()
    A.data = (A.data > 0).astype(np.int8)
    A.eliminate_zeros()
    return A


def closed_classes(Q: sp.spmatrix) -> list[np.ndarray]:
    """Closed communicating classes of the chain, ordered by smallest member."""
    A = _adjacency(Q)
    ncomp, labels = connected_components(A, directed=True, connection="strong")
    coo = A.tocoo()
    leaves = labels[coo.row] != labels[coo.col]
    open_ = np.zeros(ncomp, dtype=bool)
    open_[labels[coo.row[leaves]]] = True
    out = [np.flatnonzero(labels == k) for k in range(ncomp) if not open_[k]]
    return sorted(out, key=lambda c: c[0])


def stationary_distribution(Q: sp.spmatrix) -> ChainSummary:
    """Stationary law ``pi Q = 0``, ``sum(pi) = 1`` of a chain with one closed class."""
    Q = sp.csr_matrix(Q, dtype=np.float64)
    n = Q.shape[0]
    classes = closed_classes(Q)
    if len(classes) != 1:
        raise MultipleClosedClassesError(classes)
    R = classes[0]
    QR = Q[R][:, R]
    A = sp.lil_matrix(QR.T)
    A[0, :] = np.ones(R.size)
    rhs = np.zeros(R.size)
    rhs[0] = 1.0
    piR = solve(sp.csc_matrix(A), rhs)
    piR = np.clip(piR, 0.0, None)
    piR /= piR.sum()
    pi = np.zeros(n)
    pi[R] = piR
    residual = float(np.abs(Q.T @ pi).max(initial=0.0))
    return ChainSummary(pi, R, R.size == n, residual)


def long_run_cost(Q: sp.spmatrix, c: np.ndarray) -> ChainSummary:
    s = stationary_distribution(Q)
    return ChainSummary(s.pi, s.recurrent, s.irreducible, s.residual, float(s.pi @ np.asarray(c)))


def _backward_reach(A_T: sp.csr_matrix, seeds: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Nodes in ``allowed`` with a path (through ``allowed``) into ``seeds``."""
    n = allowed.size
    seen = np.zeros(n, dtype=bool)
    queue = deque(int(s) for s in seeds)
    indptr, indices = A_T.indptr, A_T.indices
    while queue:
        v = queue.popleft()
        for u in indices[indptr[v]:indptr[v + 1]]:
            if allowed[u] and not seen[u]:
                seen[u] = True
                queue.append(u)
    return seen


def _target_mask(n: int, target) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    idx = np.atleast_1d(np.asarray(list(target) if isinstance(target, (set, frozenset)) else target, dtype=np.int64))
    if idx.size == 0:
        raise ValueError("target set must be nonempty")
    mask[idx] = True
    return mask


def _finite_set(Q: sp.csr_matrix, G: np.ndarray) -> np.ndarray:
    """States outside ``G`` that hit ``G`` with probability one."""
    A_T = sp.csr_matrix(_adjacency(Q).T)
    nonG = ~G
    reach = _backward_reach(A_T, np.flatnonzero(G), nonG)
    doomed = nonG & ~reach
    spoiled = _backward_reach(A_T, np.flatnonzero(doomed), nonG) | doomed
    return nonG & ~spoiled


def first_passage(Q: sp.spmatrix, c: np.ndarray, target) -> FirstPassageReport:
    """Expected first-passage time and cost into ``target`` (an index or a set)."""
    Q = sp.csr_matrix(Q, dtype=np.float64)
    n = Q.shape[0]
    c = np.asarray(c, dtype=np.float64)
    G = _target_mask(n, target)
    F = _finite_set(Q, G)
    m = np.full(n, np.inf)
    cost = np.full(n, np.inf)
    m[G] = 0.0
    cost[G] = 0.0
    fidx = np.flatnonzero(F)
    if fidx.size:
        QFF = Q[fidx][:, fidx]
        x = solve(-QFF, np.column_stack([np.ones(fidx.size), c[fidx]]))
        m[fidx] = x[:, 0]
        cost[fidx] = x[:, 1]
    # return convention at target states
    m_ret = np.full(n, np.inf)
    c_ret = np.full(n, np.inf)
    for i in np.flatnonzero(G):
        lo, hi = Q.indptr[i], Q.indptr[i + 1]
        cols, rates = Q.indices[lo:hi], Q.data[lo:hi]
        off = (cols != i) & (rates > 0)
        cols, rates = cols[off], rates[off]
        lam = rates.sum()
        if lam <= 0:
            continue
        p = rates / lam
        out = ~G[cols]
        m_ret[i] = 1.0 / lam + p[out] @ m[cols[out]] if out.any() else 1.0 / lam
        c_ret[i] = c[i] / lam + p[out] @ cost[cols[out]] if out.any() else c[i] / lam
    m[G] = m_ret[G]
    cost[G] = c_ret[G]
    reachable = np.isfinite(m) & np.isfinite(cost)
    m[~reachable] = np.inf
    cost[~reachable] = np.inf
    return FirstPassageReport(tuple(np.flatnonzero(G).tolist()), m, cost, reachable)


def absorption_probabilities(Q: sp.spmatrix, G) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Entry laws into ``G`` from every state at once.

    Returns ``(targets, reached, U)`` where ``U[i]`` is the distribution over
    ``targets`` of the first entrance into ``G`` from ``i`` (after at least one
    transition) and ``reached[i]`` says whether ``G`` is hit with probability
    one. Rows with ``reached == False`` are zero.
    """
    Q = sp.csr_matrix(Q, dtype=np.float64)
    n = Q.shape[0]
    Gm = _target_mask(n, G)
    targets = np.flatnonzero(Gm)
    F = _finite_set(Q, Gm)
    fidx = np.flatnonzero(F)
    U = np.zeros((n, targets.size))
    if fidx.size:
        U[fidx] = solve(-Q[fidx][:, fidx], Q[fidx][:, targets].toarray())
    reached = F.copy()
    tpos = np.full(n, -1)
    tpos[targets] = np.arange(targets.size)
    for i in targets:
        lo, hi = Q.indptr[i], Q.indptr[i + 1]
        cols, rates = Q.indices[lo:hi], Q.data[lo:hi]
        keep = (cols != i) & (rates > 0)
        cols, rates = cols[keep], rates[keep]
        if rates.sum() <= 0 or not np.all(Gm[cols] | F[cols]):
            continue
        p = rates / rates.sum()
        row = p[~Gm[cols]] @ U[cols[~Gm[cols]]]
        np.add.at(row, tpos[cols[Gm[cols]]], p[Gm[cols]])
        U[i] = row
        reached[i] = True
    return targets, reached, U


def hitting_distribution(Q: sp.spmatrix, start: int, G) -> HittingDistribution:
    """Law of the state in which the chain started at ``start`` first enters ``G``.

    At least one transition is taken, so a start inside ``G`` looks at the
    first return.
    """
    targets, reached, U = absorption_probabilities(Q, G)
    if not reached[start]:
        raise UnreachableTargetError(f"G is not reached with probability one from state {start}")
    return HittingDistribution(targets, U[start])


def check_standard(model: CtmdpModel, policy: StationaryPolicy, i0: int = 0) -> StandardCheck:
    """Does every state reach ``i0`` in finite expected time and at finite expected cost?"""
    Q = induced_generator(model, policy)
    rep = first_passage(Q, cost_vector(model, policy), i0)
    return StandardCheck(rep.all_finite, i0, rep)


def renewal_identities(
    model: CtmdpModel,
    policy: StationaryPolicy,
    i0: int = 0,
    alphas: Iterable[float] = (1.0, 0.1, 0.01),
    probes: Sequence[int] | None = None,
    rtol: float = 1e-6,
) -> RenewalReport:
    """Compare the long-run average cost with cycle ratios and discounted averages.

    Checks ``J_R = c_ii / m_ii`` at each probe state and
    ``J_R = alpha * sum_i pi_i J_alpha(i)`` for each discount factor. The
    default probes are ``i0`` and the two other states with the largest
    stationary mass.
    """
    from .discounted import evaluate_policy

    Q = induced_generator(model, policy)
    c = cost_vector(model, policy)
    summary = long_run_cost(Q, c)
    J_R = summary.J_R
    if probes is None:
        # the most visited states: return times of rare states are ill-conditioned
        order = [int(i) for i in np.argsort(-summary.pi, kind="stable") if i != i0]
        probes = [int(i0)] + order[:2]
    ratio_errors = {}
    for i in probes:
        rep = first_passage(Q, c, int(i))
        ratio_errors[int(i)] = abs(J_R - rep.cost[i] / rep.m[i])
    discount_errors = {}
    for alpha in alphas:
        J = evaluate_policy(model, policy, alpha)
        discount_errors[float(alpha)] = abs(J_R - alpha * float(summary.pi @ J))
    return RenewalReport(J_R, rtol * (1.0 + J_R), ratio_errors, discount_errors)

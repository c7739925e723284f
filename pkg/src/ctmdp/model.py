"""Truncated continuous-time MDP: states, action sets, generator rows, cost rates."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "GeneratorRow",
    "LumpCosts",
    "CtmdpModel",
    "StationaryPolicy",
    "Violation",
    "InfeasiblePolicyError",
    "box_states",
    "validate",
    "induced_generator",
    "cost_vector",
]


class InfeasiblePolicyError(ValueError):
    """A policy picks an action outside A(i) at some state."""

    def __init__(self, state: int, action: int, allowed: Sequence[int]):
        self.state = state
        self.action = action
        super().__init__(
            f"action {action} is not feasible at state index {state} (allowed {list(allowed)})"
        )


@dataclass(frozen=True)
class GeneratorRow:
    """Off-diagonal transition rates of one (state, action) pair.

    The diagonal is always derived as the negated off-diagonal sum. A row read
    from an external table may also carry ``declared_diagonal``; it is never used
    for computation, only compared against the derived value by :func:`validate`.
    """

    targets: np.ndarray
    rates: np.ndarray
    declared_diagonal: float | None = None

    def __post_init__(self):
        targets = np.asarray(self.targets, dtype=np.int64).reshape(-1)
        rates = np.asarray(self.rates, dtype=np.float64).reshape(-1)
        if targets.shape != rates.shape:
            raise ValueError("targets and rates must have the same length")
        targets.setflags(write=False)
        rates.setflags(write=False)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "rates", rates)

    @classmethod
    def from_entries(cls, source: int, entries: Iterable[tuple[int, float]]) -> "GeneratorRow":
        """Build a row from ``(target, rate)`` pairs.

        Duplicate targets are summed; an entry with ``target == source`` is kept
        as the declared diagonal.
        """
        acc: dict[int, float] = {}
        declared = None
        for j, rate in entries:
            j = int(j)
            if j == source:
                declared = (declared or 0.0) + float(rate)
                continue
            acc[j] = acc.get(j, 0.0) + float(rate)
        keys = sorted(acc)
        return cls(np.array(keys, dtype=np.int64), np.array([acc[k] for k in keys]), declared)

    @property
    def exit_rate(self) -> float:
        # correctly rounded, so independent of target order
        return math.fsum(self.rates)

    @property
    def diagonal(self) -> float:
        return -self.exit_rate


@dataclass(frozen=True)
class LumpCosts:
    """Alternative cost accounting: a running rate plus a lump charge per jump.

    ``jump[(i, a)]`` is aligned with ``model.gen[(i, a)].targets``.
    """

    running: Mapping[tuple[int, int], float]
    jump: Mapping[tuple[int, int], np.ndarray]


@dataclass(frozen=True)
class StationaryPolicy:
    """Deterministic stationary policy, one action id per state index."""

    choice: np.ndarray

    def __post_init__(self):
        choice = np.array(self.choice, dtype=np.int64).reshape(-1)
        choice.setflags(write=False)
        object.__setattr__(self, "choice", choice)

    def __len__(self) -> int:
        return self.choice.shape[0]

    def __getitem__(self, i: int) -> int:
        return int(self.choice[i])

    def __eq__(self, other) -> bool:
        if not isinstance(other, StationaryPolicy):
            return NotImplemented
        return np.array_equal(self.choice, other.choice)

    def __hash__(self) -> int:
        return hash(self.choice.tobytes())

    def tolist(self) -> list[int]:
        return self.choice.tolist()


@dataclass(frozen=True)
class Violation:
    state: int | None
    action: int | None
    kind: str
    detail: str


@dataclass(frozen=True, eq=False)
class CtmdpModel:
    """Finite truncation of a CTMDP.

    Parameters
    ----------
    states : (n, d) int array
        Enumerated state vectors; row 0 is the reference state.
    actions : sequence of sequences
        ``actions[i]`` lists the feasible action ids at state ``i``.
    gen : mapping
        ``(i, a) -> GeneratorRow``.
    cost : mapping
        ``(i, a) -> cost rate``.
    truncation_meta : mapping
        Description of the bounding box and boundary rule, plus builder info.
    """

    states: np.ndarray
    actions: tuple[tuple[int, ...], ...]
    gen: Mapping[tuple[int, int], GeneratorRow]
    cost: Mapping[tuple[int, int], float]
    truncation_meta: Mapping = field(default_factory=dict)
    lump_costs: LumpCosts | None = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int64)
        if states.ndim == 1:
            states = states.reshape(-1, 1)
        states.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", tuple(tuple(int(a) for a in acts) for acts in self.actions))
        if len(self.actions) != states.shape[0]:
            raise ValueError("one action list per state is required")

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @cached_property
    def index(self) -> dict[tuple[int, ...], int]:
        return {tuple(int(x) for x in s): i for i, s in enumerate(self.states)}

    def state_of(self, i: int) -> tuple[int, ...]:
        return tuple(int(x) for x in self.states[i])

    def index_of(self, state: Sequence[int]) -> int:
        return self.index[tuple(int(x) for x in state)]

    @cached_property
    def pairs(self) -> "PairTable":
        return PairTable.from_model(self)

    @cached_property
    def max_exit_rate(self) -> float:
        return float(self.pairs.exit_rate.max(initial=0.0))

    def check_policy(self, policy: StationaryPolicy) -> None:
        if len(policy) != self.n_states:
            raise ValueError(f"policy has {len(policy)} entries for {self.n_states} states")
        for i, a in enumerate(policy.choice):
            if int(a) not in self.actions[i]:
                raise InfeasiblePolicyError(i, int(a), self.actions[i])


@dataclass(frozen=True)
class PairTable:
    """All feasible (state, action) pairs stacked for vectorised Bellman operators.

    Pairs are sorted by state, then by action id, so the first minimiser found
    in a state's block is the lowest action id.
    """

    state: np.ndarray
    action: np.ndarray
    ptr: np.ndarray
    off: sp.csr_matrix
    exit_rate: np.ndarray
    cost: np.ndarray

    @classmethod
    def from_model(cls, model: CtmdpModel) -> "PairTable":
        st, ac, rows, cols, vals, exits, costs = [], [], [], [], [], [], []
        ptr = [0]
        k = 0
        for i, acts in enumerate(model.actions):
            for a in sorted(acts):
                row = model.gen[(i, a)]
                st.append(i)
                ac.append(a)
                rows.extend([k] * row.targets.size)
                cols.extend(row.targets.tolist())
                vals.extend(row.rates.tolist())
                exits.append(row.exit_rate)
                costs.append(float(model.cost[(i, a)]))
                k += 1
            ptr.append(k)
        off = sp.csr_matrix((vals, (rows, cols)), shape=(k, model.n_states))
        return cls(
            state=np.array(st, dtype=np.int64),
            action=np.array(ac, dtype=np.int64),
            ptr=np.array(ptr, dtype=np.int64),
            off=off,
            exit_rate=np.array(exits),
            cost=np.array(costs),
        )

    def state_min(self, values: np.ndarray) -> np.ndarray:
        return np.minimum.reduceat(values, self.ptr[:-1])

    def first_within(self, values: np.ndarray, mins: np.ndarray, tie: float) -> np.ndarray:
        """Pair index of the lowest action id within ``tie`` of the state minimum."""
        ok = values <= mins[self.state] + tie
        key = np.where(ok, np.arange(values.size), values.size)
        return np.minimum.reduceat(key, self.ptr[:-1])

    def pair_index(self, policy: StationaryPolicy) -> np.ndarray:
        out = np.empty(len(policy), dtype=np.int64)
        for i in range(len(policy)):
            lo, hi = self.ptr[i], self.ptr[i + 1]
            hit = np.flatnonzero(self.action[lo:hi] == policy.choice[i])
            if hit.size == 0:
                raise InfeasiblePolicyError(i, int(policy.choice[i]), self.action[lo:hi].tolist())
            out[i] = lo + hit[0]
        return out


def box_states(bounds: Sequence[int]) -> np.ndarray:
    """All integer vectors ``0 <= x_k <= bounds[k]`` in row-major order (all-zeros first)."""
    return np.array(list(itertools.product(*[range(b + 1) for b in bounds])), dtype=np.int64)


def validate(model: CtmdpModel) -> list[Violation]:
    """List every violated model invariant; an empty list means the model is valid."""
    out: list[Violation] = []
    n = model.n_states
    if np.any(model.states < 0):
        bad = np.flatnonzero(np.any(model.states < 0, axis=1))
        for i in bad:
            out.append(Violation(int(i), None, "negative-coordinate", f"state {model.state_of(i)}"))
    if len(model.index) != n:
        out.append(Violation(None, None, "duplicate-state", "state vectors are not unique"))
    for i, acts in enumerate(model.actions):
        if not acts:
            out.append(Violation(i, None, "empty-action-set", "A(i) is empty"))
        for a in acts:
            row = model.gen.get((i, a))
            if row is None:
                out.append(Violation(i, a, "missing-row", "no generator row"))
            else:
                if np.any((row.targets < 0) | (row.targets >= n)):
                    out.append(Violation(i, a, "target-out-of-range", f"targets {row.targets.tolist()}"))
                if np.any(row.targets == i):
                    out.append(Violation(i, a, "self-loop", "off-diagonal entry targets its own state"))
                if np.any(row.rates < 0) or not np.all(np.isfinite(row.rates)):
                    out.append(Violation(i, a, "negative-rate", f"rates {row.rates.tolist()}"))
                if row.declared_diagonal is not None:
                    total = row.declared_diagonal + row.exit_rate
                    if abs(total) > 1e-12 * max(1.0, row.exit_rate):
                        out.append(Violation(i, a, "non-conservative-row", f"row sums to {total:.6g}"))
            c = model.cost.get((i, a))
            if c is None:
                out.append(Violation(i, a, "missing-cost", "no cost rate"))
            elif not np.isfinite(c) or c < 0:
                out.append(Violation(i, a, "negative-cost", f"cost {c!r}"))
    return out


def induced_generator(model: CtmdpModel, policy: StationaryPolicy) -> sp.csr_matrix:
    """Generator matrix ``Q_f`` whose row ``i`` is ``gen[(i, policy(i))]``."""
    model.check_policy(policy)
    rows, cols, vals = [], [], []
    for i, a in enumerate(policy.choice):
        row = model.gen[(i, int(a))]
        rows.extend([i] * row.targets.size)
        cols.extend(row.targets.tolist())
        vals.extend(row.rates.tolist())
        rows.append(i)
        cols.append(i)
        vals.append(row.diagonal)
    n = model.n_states
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def cost_vector(model: CtmdpModel, policy: StationaryPolicy) -> np.ndarray:
    model.check_policy(policy)
    return np.array([float(model.cost[(i, int(a))]) for i, a in enumerate(policy.choice)])

"""Event-driven Monte Carlo of the policy-induced chain.

Each replication gets its own Philox stream: key = seed, high counter word =
replication index. Results are therefore identical whatever the number of
workers, and the reduction is always done in replication order.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np

from .model import CtmdpModel, StationaryPolicy

__all__ = [
    "SimulationEstimate",
    "FirstPassageEstimate",
    "simulate_average_cost",
    "simulate_discounted_cost",
    "simulate_first_passage",
]

Z95 = 1.959963984540054
DISCOUNT_CUTOFF = 1e-12
EVENT_CAP = 10**8
_BATCH = 4096


@dataclass(frozen=True)
class SimulationEstimate:
    mean: float
    half_width_95: float
    n_reps: int
    rng_seed: int
    samples: np.ndarray
    horizon: float | None = None
    discarded: int = 0

    def agrees_with(self, value: float, widths: float = 3.0) -> bool:
        return abs(self.mean - value) <= widths * self.half_width_95

    @classmethod
    def from_samples(cls, samples, seed, horizon=None, discarded=0) -> "SimulationEstimate":
        x = np.asarray(samples, dtype=np.float64)
        n = x.size
        if n == 0:
            return cls(math.nan, math.inf, 0, seed, x, horizon, discarded)
        mean = math.fsum(x) / n
        hw = Z95 * float(np.std(x, ddof=1)) / math.sqrt(n) if n > 1 else math.inf
        return cls(mean, hw, n, seed, x, horizon, discarded)


@dataclass(frozen=True)
class FirstPassageEstimate:
    time: SimulationEstimate
    cost: SimulationEstimate
    discarded: int


class _Jumps:
    """Jump-chain tables of a fixed policy, as plain Python lists for the event loop."""

    def __init__(self, model: CtmdpModel, policy: StationaryPolicy, accounting: str):
        model.check_policy(policy)
        if accounting not in ("folded", "lump"):
            raise ValueError(f"unknown accounting {accounting!r}")
        if accounting == "lump" and model.lump_costs is None:
            raise ValueError("model carries no lump-cost description")
        self.exit, self.cum, self.targets, self.cost, self.lump = [], [], [], [], []
        for i, a in enumerate(policy.choice):
            key = (i, int(a))
            row = model.gen[key]
            keep = row.rates > 0
            rates = row.rates[keep]
            self.exit.append(float(rates.sum()))
            self.cum.append(np.cumsum(rates).tolist())
            self.targets.append(row.targets[keep].tolist())
            if accounting == "folded":
                self.cost.append(float(model.cost[key]))
                self.lump.append(None)
            else:
                self.cost.append(float(model.lump_costs.running[key]))
                lump = np.asarray(model.lump_costs.jump[key])[keep]
                self.lump.append(lump.tolist() if np.any(lump) else None)


class _Stream:
    def __init__(self, seed: int, rep: int):
        bitgen = np.random.Philox(key=int(seed), counter=[0, 0, 0, int(rep)])
        self.rng = np.random.Generator(bitgen)
        self._e, self._u, self._k = [], [], _BATCH

    def next(self) -> tuple[float, float]:
        if self._k >= _BATCH:
            self._e = self.rng.standard_exponential(_BATCH).tolist()
            self._u = self.rng.random(_BATCH).tolist()
            self._k = 0
        k = self._k
        self._k += 1
        return self._e[k], self._u[k]


def _jump(ch: _Jumps, x: int, u: float) -> tuple[int, float]:
    cum = ch.cum[x]
    k = min(bisect_right(cum, u * cum[-1]), len(cum) - 1)
    lump = ch.lump[x]
    return ch.targets[x][k], (lump[k] if lump is not None else 0.0)


def _average_rep(rep: int, ch: _Jumps, start: int, horizon: float, seed: int) -> float:
    s = _Stream(seed, rep)
    t, x, total = 0.0, start, 0.0
    while True:
        e, u = s.next()
        lam = ch.exit[x]
        hold = e / lam if lam > 0 else math.inf
        if t + hold >= horizon:
            total += ch.cost[x] * (horizon - t)
            return total / horizon
        total += ch.cost[x] * hold
        t += hold
        x, lump = _jump(ch, x, u)
        total += lump


def _discounted_rep(rep: int, ch: _Jumps, start: int, alpha: float, seed: int) -> float:
    s = _Stream(seed, rep)
    t_end = -math.log(DISCOUNT_CUTOFF) / alpha
    t, x, total = 0.0, start, 0.0
    while True:
        e, u = s.next()
        lam = ch.exit[x]
        w0 = math.exp(-alpha * t)
        if lam <= 0:
            return total + ch.cost[x] / alpha * w0
        hold = e / lam
        t_next = t + hold
        total += ch.cost[x] / alpha * (w0 - math.exp(-alpha * t_next))
        t = t_next
        if t >= t_end:
            return total
        x, lump = _jump(ch, x, u)
        if lump:
            total += lump * math.exp(-alpha * t)


def _passage_rep(rep: int, ch: _Jumps, start: int, target: frozenset, seed: int, cap: int):
    s = _Stream(seed, rep)
    t, x, cost = 0.0, start, 0.0
    for _ in range(cap):
        e, u = s.next()
        lam = ch.exit[x]
        if lam <= 0:
            return None
        hold = e / lam
        t += hold
        cost += ch.cost[x] * hold
        x, lump = _jump(ch, x, u)
        cost += lump
        if x in target:
            return t, cost
    return None


def _run(fn, n_reps: int, workers: int) -> list:
    if workers <= 1:
        return [fn(r) for r in range(n_reps)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_reps), chunksize=max(1, n_reps // (4 * workers))))


def simulate_average_cost(
    model: CtmdpModel,
    policy: StationaryPolicy,
    horizon: float,
    n_reps: int,
    seed: int,
    start: int = 0,
    accounting: str = "folded",
    workers: int = 1,
) -> SimulationEstimate:
    """Time-average cost ``(1/T) int_0^T c(x(t)) dt`` over independent replications."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    ch = _Jumps(model, policy, accounting)
    out = _run(partial(_average_rep, ch=ch, start=start, horizon=float(horizon), seed=seed), n_reps, workers)
    return SimulationEstimate.from_samples(out, seed, horizon=float(horizon))


def simulate_discounted_cost(
    model: CtmdpModel,
    policy: StationaryPolicy,
    alpha: float,
    n_reps: int,
    seed: int,
    start: int = 0,
    accounting: str = "folded",
    workers: int = 1,
) -> SimulationEstimate:
    """Discounted cost from ``start``, integrated exactly over each sojourn."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    ch = _Jumps(model, policy, accounting)
    out = _run(partial(_discounted_rep, ch=ch, start=start, alpha=float(alpha), seed=seed), n_reps, workers)
    return SimulationEstimate.from_samples(out, seed)


def simulate_first_passage(
    model: CtmdpModel,
    policy: StationaryPolicy,
    start: int,
    target,
    n_reps: int,
    seed: int,
    accounting: str = "folded",
    event_cap: int = EVENT_CAP,
    workers: int = 1,
) -> FirstPassageEstimate:
    """Time and cost until ``target`` is entered, after at least one transition.

    Replications that hit an absorbing state or exceed ``event_cap`` jumps are
    dropped and counted in ``discarded``.
    """
    ch = _Jumps(model, policy, accounting)
    tgt = frozenset([int(target)] if np.isscalar(target) else (int(t) for t in target))
    out = _run(partial(_passage_rep, ch=ch, start=start, target=tgt, seed=seed, cap=event_cap), n_reps, workers)
    kept = [o for o in out if o is not None]
    dropped = len(out) - len(kept)
    times = SimulationEstimate.from_samples([o[0] for o in kept], seed, discarded=dropped)
    costs = SimulationEstimate.from_samples([o[1] for o in kept], seed, discarded=dropped)
    return FirstPassageEstimate(times, costs, dropped)

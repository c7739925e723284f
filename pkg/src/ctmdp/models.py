"""Built-in models: the two-buffer upgrade queue, M/M/1 oracles, and geometric Lyapunov functions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import CtmdpModel, GeneratorRow, LumpCosts, StationaryPolicy, box_states

__all__ = [
    "IDLE",
    "SERVE_1",
    "SERVE_2",
    "UpgradeQueueParams",
    "LyapunovSpec",
    "UnstableParamsError",
    "build_upgrade_queue",
    "ps_policy",
    "threshold_policy",
    "upgrade_queue_lyapunov",
    "upgrade_queue_untruncated_drift",
    "build_mm1",
    "mm1_lyapunov",
    "geometric_drift_constants",
]

IDLE, SERVE_1, SERVE_2 = 0, 1, 2

# applied to the smallest admissible scale constant
K_SAFETY = 1.05


class UnstableParamsError(ValueError):
    pass


@dataclass(frozen=True)
class UpgradeQueueParams:
    """Single server, two queues; waiting type-1 customers upgrade to type 2.

    Rates are per unit time; ``h1``, ``h2`` are holding costs per customer per
    unit time and ``c_transfer`` is charged per upgrade. ``N`` bounds each queue.
    """

    lambda1: float = 0.3
    lambda2: float = 0.3
    mu1: float = 1.0
    mu2: float = 1.0
    lambdaT: float = 0.2
    h1: float = 1.0
    h2: float = 2.0
    c_transfer: float = 1.0
    N: int = 30

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "mu1", "mu2", "lambdaT"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive rate, got {v!r}")
        for name in ("h1", "h2", "c_transfer"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be a nonnegative cost, got {v!r}")
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"N must be an integer >= 2, got {self.N!r}")

    @property
    def stable(self) -> bool:
        return self.lambda1 + self.lambda2 < min(self.mu1, self.mu2)

    def cost_rate(self, q1: int, q2: int) -> float:
        return self.h1 * q1 + self.h2 * q2 + self.c_transfer * self.lambdaT * q1


@dataclass(frozen=True)
class LyapunovSpec:
    """Candidate drift function ``r`` with its exceptional finite set.

    ``log_values`` holds ``log r`` (``-inf`` where ``r == 0``) so that very
    steep geometric functions stay representable; ``values`` overflows to
    ``inf`` there.
    """

    log_values: np.ndarray
    hstar: frozenset[int]
    params: dict | None = None

    def __post_init__(self):
        lv = np.asarray(self.log_values, dtype=np.float64).reshape(-1)
        if np.any(np.isnan(lv)) or np.any(lv == np.inf):
            raise ValueError("Lyapunov values must be finite and nonnegative")
        lv.setflags(write=False)
        object.__setattr__(self, "log_values", lv)
        object.__setattr__(self, "hstar", frozenset(int(i) for i in self.hstar))
        if not self.hstar:
            raise ValueError("the exceptional set must be nonempty")

    @classmethod
    def from_values(cls, values, hstar, params=None) -> "LyapunovSpec":
        values = np.asarray(values, dtype=np.float64)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("Lyapunov values must be finite and nonnegative")
        with np.errstate(divide="ignore"):
            return cls(np.log(values), hstar, params)

    @property
    def values(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_values)

    def scaled(self, factor: float) -> "LyapunovSpec":
        return LyapunovSpec(self.log_values + math.log(factor), self.hstar, self.params)


def build_upgrade_queue(params: UpgradeQueueParams) -> CtmdpModel:
    """Truncated upgrade-queue CTMDP on ``{0..N}^2`` with arrival blocking.

    Arrivals keep coming while the server idles at the empty state. Any event
    whose target leaves the box is dropped and the diagonal recomputed.
    """
    p = params
    N = int(p.N)
    states = box_states((N, N))
    index = {(int(a), int(b)): i for i, (a, b) in enumerate(states)}
    actions, gen, cost = [], {}, {}
    running, jump = {}, {}
    for i, (q1, q2) in enumerate(states):
        q1, q2 = int(q1), int(q2)
        if q1 == 0 and q2 == 0:
            acts = (IDLE,)
        elif q2 == 0:
            acts = (SERVE_1,)
        elif q1 == 0:
            acts = (SERVE_2,)
        else:
            acts = (SERVE_1, SERVE_2)
        actions.append(acts)
        for a in acts:
            events = [((q1 + 1, q2), p.lambda1, 0.0), ((q1, q2 + 1), p.lambda2, 0.0)]
            if a == SERVE_1:
                events.append(((q1 - 1, q2), p.mu1, 0.0))
            elif a == SERVE_2:
                events.append(((q1, q2 - 1), p.mu2, 0.0))
            if q1 >= 1:
                events.append(((q1 - 1, q2 + 1), q1 * p.lambdaT, p.c_transfer))
            kept = [(index[t], r, lump) for t, r, lump in events if t in index and r > 0]
            kept.sort()
            gen[(i, a)] = GeneratorRow(
                np.array([k[0] for k in kept], dtype=np.int64), np.array([k[1] for k in kept])
            )
            cost[(i, a)] = p.cost_rate(q1, q2)
            running[(i, a)] = p.h1 * q1 + p.h2 * q2
            jump[(i, a)] = np.array([k[2] for k in kept])
    meta = {
        "kind": "upgrade-queue",
        "box": [N, N],
        "boundary_rule": "arrival-blocking",
        "params": dict(p.__dict__),
    }
    return CtmdpModel(states, actions, gen, cost, meta, LumpCosts(running, jump))


def _require_kind(model: CtmdpModel, kind: str) -> None:
    if model.truncation_meta.get("kind") != kind:
        raise ValueError(f"expected a model built as {kind!r}, got {model.truncation_meta.get('kind')!r}")


def ps_policy(model: CtmdpModel) -> StationaryPolicy:
    """Priority to queue 2: serve it when nonempty, else queue 1, else idle."""
    _require_kind(model, "upgrade-queue")
    q1, q2 = model.states[:, 0], model.states[:, 1]
    choice = np.where(q2 > 0, SERVE_2, np.where(q1 > 0, SERVE_1, IDLE))
    return StationaryPolicy(choice)


def threshold_policy(model: CtmdpModel, threshold: int, favour: int = SERVE_1) -> StationaryPolicy:
    """Serve queue ``favour`` once it holds at least ``threshold`` customers.

    Otherwise the other queue is served if nonempty. Empty queues are never
    served and the server idles only at the empty state.
    """
    _require_kind(model, "upgrade-queue")
    q1, q2 = model.states[:, 0], model.states[:, 1]
    threshold = max(int(threshold), 1)
    if favour == SERVE_1:
        serve1 = (q1 >= threshold) | ((q2 == 0) & (q1 > 0))
        choice = np.where(serve1, SERVE_1, np.where(q2 > 0, SERVE_2, IDLE))
    elif favour == SERVE_2:
        serve2 = (q2 >= threshold) | ((q1 == 0) & (q2 > 0))
        choice = np.where(serve2, SERVE_2, np.where(q1 > 0, SERVE_1, IDLE))
    else:
        raise ValueError(f"favour must be {SERVE_1} or {SERVE_2}")
    return StationaryPolicy(choice)


def geometric_drift_constants(arrival: float, service: float, slope: float, ratio: float | None = None):
    """Parameters of ``r(x) = K * ratio**|x|`` dominating a linear cost.

    ``arrival`` is the total arrival rate, ``service`` the slowest service rate
    and ``slope`` the largest per-customer cost rate. Returns ``(ratio, delta, K)``
    where ``delta = (service / ratio - arrival) * (ratio - 1)`` is the geometric
    decay factor of the drift.
    """
    if not arrival < service:
        raise UnstableParamsError(
            f"load condition violated: arrival rate {arrival} >= service rate {service}"
        )
    upper = service / arrival
    if ratio is None:
        ratio = 0.5 * (1.0 + upper)
    if not 1.0 < ratio < upper:
        raise ValueError(f"ratio must lie in (1, {upper}), got {ratio}")
    delta = (service / ratio - arrival) * (ratio - 1.0)
    # ratio**s >= 1 + s (ratio - 1) > s (ratio - 1), so K (ratio-1) delta >= slope
    # dominates the linear cost; K (ratio-1) > slope is required separately.
    k_min = max(slope / ((ratio - 1.0) * delta), slope / (ratio - 1.0))
    K = K_SAFETY * k_min if k_min > 0 else 1.0
    return ratio, delta, K


def upgrade_queue_lyapunov(params: UpgradeQueueParams, ratio: float | None = None) -> LyapunovSpec:
    """``r(q) = K * r1**(q1 + q2)`` with exceptional set ``{(0, 0)}``."""
    p = params
    if not p.stable:
        raise UnstableParamsError(
            "stability hypothesis violated: lambda1 + lambda2 must be below min(mu1, mu2)"
        )
    slope = max(p.h1 + p.c_transfer * p.lambdaT, p.h2)
    r1, delta, K = geometric_drift_constants(p.lambda1 + p.lambda2, min(p.mu1, p.mu2), slope, ratio)
    states = box_states((int(p.N), int(p.N)))
    logs = math.log(K) + states.sum(axis=1) * math.log(r1)
    return LyapunovSpec(logs, {0}, {"K": K, "r1": r1, "r2": r1, "delta": delta})


def upgrade_queue_untruncated_drift(params: UpgradeQueueParams, spec: LyapunovSpec, state, action: int) -> float:
    """Drift ``c(q) + sum_j q(j|q,a) r(j)`` of ``r = K r1^q1 r2^q2`` on the infinite box."""
    p = params
    K, r1, r2 = spec.params["K"], spec.params["r1"], spec.params["r2"]
    q1, q2 = int(state[0]), int(state[1])
    bracket = p.lambda1 * (r1 - 1.0) + p.lambda2 * (r2 - 1.0) + q1 * p.lambdaT * (r2 / r1 - 1.0)
    if action == SERVE_1:
        bracket += p.mu1 * (1.0 / r1 - 1.0)
    elif action == SERVE_2:
        bracket += p.mu2 * (1.0 / r2 - 1.0)
    return p.cost_rate(q1, q2) + K * r1**q1 * r2**q2 * bracket


def build_mm1(lam: float, mu: float, h: float = 1.0, N: int = 60) -> CtmdpModel:
    """Birth-death chain on ``{0..N}`` with one action and cost ``h * n``."""
    if not (lam > 0 and mu > 0):
        raise ValueError("rates must be positive")
    states = np.arange(N + 1).reshape(-1, 1)
    gen, cost = {}, {}
    for n in range(N + 1):
        targets, rates = [], []
        if n > 0:
            targets.append(n - 1)
            rates.append(mu)
        if n < N:
            targets.append(n + 1)
            rates.append(lam)
        gen[(n, 0)] = GeneratorRow(np.array(targets, dtype=np.int64), np.array(rates, dtype=float))
        cost[(n, 0)] = h * n
    meta = {"kind": "mm1", "box": [N], "boundary_rule": "arrival-blocking",
            "params": {"lambda": lam, "mu": mu, "h": h, "N": N}}
    return CtmdpModel(states, [(0,)] * (N + 1), gen, cost, meta)


def mm1_lyapunov(lam: float, mu: float, h: float, N: int, ratio: float | None = None) -> LyapunovSpec:
    """One-dimensional analogue of the upgrade-queue construction."""
    r, delta, K = geometric_drift_constants(lam, mu, h, ratio)
    logs = math.log(K) + np.arange(N + 1) * math.log(r)
    return LyapunovSpec(logs, {0}, {"K": K, "r1": r, "delta": delta})

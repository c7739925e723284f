"""A geometric Lyapunov function certifies finite passage costs back to the empty system.

Run:  python3 demos/02_lyapunov_certificate.py
"""
import numpy as np

from ctmdp import UpgradeQueueParams, build_upgrade_queue, ps_policy, upgrade_queue_lyapunov
from ctmdp.lyapunov import certify_cost_bound
from ctmdp.models import UnstableParamsError

params = UpgradeQueueParams()
model = build_upgrade_queue(params)
spec = upgrade_queue_lyapunov(params)
K, r1, delta = spec.params["K"], spec.params["r1"], spec.params["delta"]
print(f"r(q) = K r1^(q1+q2) with K={K:.3f}, r1={r1:.4f}, drift margin delta={delta:.4f}")

rep = certify_cost_bound(model, ps_policy(model), spec, 0)
cert = rep.certificate
print(f"drift condition: {'holds' if cert.passed else 'fails'} off the origin, F = {cert.F}")
print(f"passage-cost bound c(q -> 0) <= r(q): {'holds' if rep.holds else 'fails'} at every state")

# How loose is the bound? Compare near the origin.
for q in [(1, 0), (0, 1), (3, 3), (8, 2)]:
    i = model.index_of(q)
    print(f"  q={q}:  cost {rep.report.cost[i]:9.3f}   bound {spec.values[i]:12.3f}")

# Edge states: blocked arrivals lower the drift of an increasing function.
note = cert.boundary_note
gap = np.array(note["untruncated_drift"]) - np.array(note["truncated_drift"])
print(f"\n{len(note['edge_states'])} edge states; untruncated drift exceeds truncated by up to {gap.max():.3e}")

# With arrivals faster than the slower server no such function is offered.
try:
    upgrade_queue_lyapunov(UpgradeQueueParams(lambda1=0.6, lambda2=0.5))
except UnstableParamsError as exc:
    print("unstable parameters:", exc)

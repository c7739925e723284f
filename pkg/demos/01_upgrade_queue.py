"""Walk through the average-cost solution of the two-queue upgrade model.

Run:  python3 demos/01_upgrade_queue.py
"""
import numpy as np

from ctmdp import UpgradeQueueParams, build_upgrade_queue, ps_policy, solve_optimal, vanishing_discount
from ctmdp.chain import long_run_cost
from ctmdp.model import cost_vector, induced_generator
from ctmdp.models import IDLE, SERVE_1, SERVE_2

params = UpgradeQueueParams()  # lambda1 = lambda2 = 0.3, mu = 1, lambdaT = 0.2, N = 30
model = build_upgrade_queue(params)
print(f"{model.n_states} states, largest exit rate {model.max_exit_rate:.2f}")

# Discounted problems first. alpha * J(0) creeps towards the average cost.
for alpha in (1.0, 0.1, 0.01, 0.001):
    sol = solve_optimal(model, alpha)
    print(f"alpha={alpha:<6} alpha*J(0)={sol.offset:.6f}  residual={sol.residual:.1e}  steps={sol.iterations}")

# Vanishing discount: halve alpha until the greedy policy and the relative values settle.
avg = vanishing_discount(model)
print(f"\ng* = {avg.g_star:.10f} after {avg.steps} discount factors (last alpha {avg.alpha_seq[-1]:.2e})")

ps = ps_policy(model)
J_ps = long_run_cost(induced_generator(model, ps), cost_vector(model, ps)).J_R
print(f"priority-to-queue-2 policy costs {J_ps:.10f}")

# What does the optimal policy look like near the origin?
glyph = {IDLE: ".", SERVE_1: "1", SERVE_2: "2"}
print("\nserved queue, rows q1 = 0..12, columns q2 = 0..12")
for q1 in range(13):
    print("".join(glyph[avg.f_star[model.index_of((q1, q2))]] for q2 in range(13)))

# The relative values grow roughly quadratically.
h = avg.h_star
print("\nh*(q, 0):", np.round([h[model.index_of((q, 0))] for q in range(0, 11, 2)], 3))
print("h*(0, q):", np.round([h[model.index_of((0, q))] for q in range(0, 11, 2)], 3))

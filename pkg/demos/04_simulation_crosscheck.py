"""Monte Carlo estimates against the exact linear-algebra answers.

Run:  python3 demos/04_simulation_crosscheck.py
"""
from ctmdp import UpgradeQueueParams, build_upgrade_queue, evaluate_policy, ps_policy
from ctmdp.chain import first_passage, long_run_cost
from ctmdp.model import cost_vector, induced_generator
from ctmdp.simulate import simulate_average_cost, simulate_discounted_cost, simulate_first_passage

model = build_upgrade_queue(UpgradeQueueParams())
ps = ps_policy(model)
Q, c = induced_generator(model, ps), cost_vector(model, ps)

J_R = long_run_cost(Q, c).J_R
est = simulate_average_cost(model, ps, horizon=20000.0, n_reps=10, seed=0)
print(f"average cost     {est.mean:.4f} ± {est.half_width_95:.4f}   exact {J_R:.4f}")

J = evaluate_policy(model, ps, 0.1)[0]
for acc in ("folded", "lump"):
    est = simulate_discounted_cost(model, ps, 0.1, n_reps=2000, seed=1, accounting=acc)
    print(f"discounted {acc:<7}{est.mean:.3f} ± {est.half_width_95:.3f}   exact {J:.3f}")

fp = first_passage(Q, c, 0)
for q in [(0, 0), (2, 1), (5, 5)]:
    i = model.index_of(q)
    est = simulate_first_passage(model, ps, i, 0, n_reps=2000, seed=2)
    print(f"passage {q} -> 0: time {est.time.mean:7.3f} ± {est.time.half_width_95:.3f} (exact {fp.m[i]:7.3f}),"
          f" cost {est.cost.mean:8.3f} ± {est.cost.half_width_95:.3f} (exact {fp.cost[i]:8.3f})")

# Same seed, same numbers; the worker count does not matter.
a = simulate_discounted_cost(model, ps, 0.5, 200, seed=9)
b = simulate_discounted_cost(model, ps, 0.5, 200, seed=9, workers=2)
print("\nbit-identical across worker counts:", (a.samples == b.samples).all())

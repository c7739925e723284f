"""The M/M/1 queue as a closed-form oracle for every solver in the package.

Run:  python3 demos/03_mm1_oracles.py
"""
import numpy as np

from ctmdp import build_mm1, evaluate_policy, vanishing_discount
from ctmdp.chain import first_passage, stationary_distribution
from ctmdp.model import StationaryPolicy, cost_vector, induced_generator

lam, mu = 1.0, 2.0
model = build_mm1(lam, mu, h=1.0, N=60)
pol = StationaryPolicy([0] * model.n_states)
Q = induced_generator(model, pol)

pi = stationary_distribution(Q).pi
rho = lam / mu
print("pi[:5]        ", np.round(pi[:5], 10))
print("(1-rho) rho^n ", np.round((1 - rho) * rho ** np.arange(5), 10))

rep = first_passage(Q, cost_vector(model, pol), 0)
print(f"\nm(1 -> 0) = {rep.m[1]:.10f}   (1/(mu-lambda) = {1 / (mu - lam)})")
print(f"m(0 -> 0) = {rep.m[0]:.10f}   (1/lambda + 1/(mu-lambda) = {1 / lam + 1 / (mu - lam)})")

avg = vanishing_discount(model)
n = np.arange(6)
print(f"\ng* = {avg.g_star:.10f}   (rho/(1-rho) = {rho / (1 - rho)})")
print("h*[:6]            ", np.round(avg.h_star[:6], 8))
print("n(n+1)/(2(mu-lam))", n * (n + 1) / (2 * (mu - lam)))

alpha = 0.5
J = evaluate_policy(model, pol, alpha)
z = ((alpha + lam + mu) - np.sqrt((alpha + lam + mu) ** 2 - 4 * lam * mu)) / (2 * lam)
closed = n / alpha + (lam - mu) / alpha**2 + mu / (alpha * (alpha + lam * (1 - z))) * z**n
print(f"\ndiscounted, alpha={alpha}: max |J - closed form| over n<6 = {np.abs(J[:6] - closed).max():.2e}")

"""
Hartmann channel flow
=====================

Pressure-driven flow between two walls under a transverse magnetic field.
Starting from rest, the scheme is run until the step increments of u and H
drop below 1e-6, then the profiles across the channel at x = 5 are compared
with the closed-form solution.

``python 03_hartmann.py 12`` uses h = 1/12 (a few minutes); the default
h = 1/6 finishes in well under a minute.
"""

# %%
import sys

from cnlf_mhd.cli import hartmann_slice, slice_errors
from cnlf_mhd.problems import hartmann_problem
from cnlf_mhd.stepper import CNLFSolver, SchemeConfig

n = int(sys.argv[1]) if len(sys.argv) > 1 else 6
dt = 1.0 / (9 * n)
config = SchemeConfig(n=n, dt=dt, T=round(200 / dt) * dt, steady_tol=1e-6)
solver = CNLFSolver(hartmann_problem(nu=1.0, mu=1.0, sigma=1.0, G=1.0), config)

# %% [markdown]
# The slowest transient is the diffusion of the induced field across the
# channel, so reaching the tolerance takes several thousand steps.

# %%
result = solver.run()
print(f"steady={result.steady} after {result.steps} steps, t={result.state.t:.1f}, "
      f"{result.wall_time:.0f}s, {result.factorizations} factorizations")

# %%
y, u1, u1_exact, h1, h1_exact = hartmann_slice(solver, result.state)
print(f"{'y':>6} {'u1_h':>10} {'u1':>10} {'H1_h':>10} {'H1':>10}")
for row in zip(y, u1, u1_exact, h1, h1_exact):
    print(" ".join(f"{v:10.5f}" for v in row))
eu, eh = slice_errors(y, u1, u1_exact, h1, h1_exact)
print(f"max relative slice error: u1 {100 * eu:.2f}%, H1 {100 * eh:.2f}%")

"""
Refinement study on the manufactured solution
=============================================

Runs the scheme with dt = h/10 up to T = 1 on a sequence of meshes and
prints the error table with observed orders.  Pass resolutions on the
command line, e.g. ``python 02_convergence.py 8 16 24 32`` (a few minutes);
the default is a quick two-mesh study.
"""

# %%
import sys

from cnlf_mhd.problems import ERROR_HEADER, ORDER_HEADER, convergence_study
from cnlf_mhd.stepper import SchemeConfig

resolutions = [int(a) for a in sys.argv[1:]] or [8, 16]
nu, mu, sigma = 1.0, 1.0, 1.0

# %%
config = SchemeConfig(nu=nu, mu=mu, sigma=sigma, dt=0.1 / resolutions[0], T=1.0, dt_over_h=0.1)
table = convergence_study(config, resolutions)

# %% [markdown]
# Velocity and magnetic L2 errors should fall like h^2, gradients like h.

# %%
print("  ".join(f"{h:>18}" for h in ERROR_HEADER))
for n, e in zip(table.resolutions, table.errors):
    print("  ".join([f"{n:>18}"] + [f"{v:>18.6e}" for v in e.as_tuple()]))
print("  ".join(f"{h:>18}" for h in ORDER_HEADER))
for n, o in zip(table.resolutions[1:], table.orders):
    print("  ".join([f"{n:>18}"] + [f"{v:>18.4f}" for v in o]))

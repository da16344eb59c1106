"""
Discretisation building blocks
===============================

Meshes, Mini-element spaces and the two algebraic identities that the time
scheme leans on: skew-symmetric convection and the cancellation between the
Lorentz force and the induction term.
"""

# %%
import numpy as np

from cnlf_mhd import forms
from cnlf_mhd.mesh import BoundaryTag, build_rect_mesh, mesh_statistics
from cnlf_mhd.spaces import BasisKind, build_dofmap

mesh = build_rect_mesh(8, 8)
print(mesh_statistics(mesh))

# %% [markdown]
# Velocity uses P1 plus a cubic bubble per triangle, pressure is P1 and the
# magnetic field defaults to the same enriched space as the velocity.

# %%
walls = frozenset(BoundaryTag)
vel = build_dofmap(mesh, "velocity", BasisKind.P1_BUBBLE, 2, walls)
pre = build_dofmap(mesh, "pressure", BasisKind.P1)
mag = build_dofmap(mesh, "magnetic", BasisKind.P1_BUBBLE, 2, walls)
ctx = forms.FormContext(mesh, vel, pre, mag)
print("dofs: u", vel.num_global, "p", pre.num_global, "H", mag.num_global)

# %% [markdown]
# With the divergence correction, the convection operator is skew on
# velocities that vanish on the boundary, whatever the advecting field.

# %%
rng = np.random.default_rng(0)
w = rng.standard_normal(vel.num_global)
x = np.where(vel.dirichlet_mask, 0.0, rng.standard_normal(vel.num_global))
N = forms.assemble_convection(ctx, w).matrix
print("x^T N(w) x =", x @ (N @ x), " vs |w||x|^2 =", np.linalg.norm(w) * np.linalg.norm(x) ** 2)

# %% [markdown]
# The Lorentz operator and the induction operator assembled from the same
# frozen field are negative transposes of each other, so the coupling
# exchanges energy between the fluid and the field without creating any.

# %%
H = rng.standard_normal(mag.num_global)
L = forms.assemble_lorentz(ctx, H).matrix
C = forms.assemble_induction(ctx, H).matrix
print("max |L + C^T| =", abs(L + C.T).max(), " max |L| =", abs(L).max())

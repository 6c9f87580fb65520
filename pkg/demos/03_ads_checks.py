# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: "1.3"
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Anti-de Sitter checks
#
# The Poincare patch inside global AdS, the half-space support lemma,
# the conformal potential of a Fefferman-Graham metric and the
# null-convexity margin of boundary data.

# %%
import numpy as np

from beamcert.aads import (conjugate_operator, gncc_check, halton_region, omega_d_from_planar,
                           omega_d_of, pure_to_planar, support_in_half_space, verify_embedding)
from beamcert.geometry import FGMetric

eps = 0.3
S = halton_region(200, eps)
P = pure_to_planar(S, eps)
print("pullback deviation", verify_embedding(S, eps))
print("round trip", np.max(np.abs(omega_d_from_planar(P[:, 0], P[:, 1], P[:, 2:]) - omega_d_of(S))))
print("flipped sign", verify_embedding(S[:20], eps, sign=-1.0))

# %% [markdown]
# ## Support in the half space
#
# A thin tube around a trapped ray stays where omega^d < 0. Widening the tube
# far enough pushes it across.

# %%
for delta in (0.01, 0.1, 1.0, 10.0):
    v = support_in_half_space(eps, delta, 0.01, nsample=4000)
    print(delta, v.passed, f"max omega^d = {v.max_omega_d:.4f}")

# %% [markdown]
# ## Potential of an FG metric
#
# For gfrak = g0 + rho^2 g2 the extracted V agrees with (d-1)/2 tr(gfrak^-1 g2).

# %%
g0 = np.diag([-1.0, 1.0, 1.0])
g2 = np.array([[0.3, 0.1, 0.0], [0.1, 0.2, 0.05], [0.0, 0.05, -0.1]])
op = conjugate_operator(0.3, 3, FGMetric({0: g0, 2: g2}, 3))
X = np.array([[rho, 0.1, 0.2, -0.3] for rho in (0.02, 0.05, 0.1, 0.2)])
V = op.V(X)
ref = [op.b * np.trace(np.linalg.solve(g0 + x[0] ** 2 * g2, g2)) for x in X]
np.c_[X[:, 0], V, ref]

# %% [markdown]
# ## Null convexity margin
#
# Flat boundary data with linear eta sits exactly on the edge (margin 0).
# A convex eta gives a positive margin.

# %%
m = 64
ax = [np.linspace(-1, 1, m)] * 2
T, Xs = np.meshgrid(*ax, indexing="ij")
flat = np.broadcast_to(np.diag([-1.0, 1.0]), (m, m, 2, 2)).copy()
zero = np.zeros_like(flat)
print(gncc_check(flat, zero, 1 + 0.3 * T + 0.2 * Xs, ax).margin)
print(gncc_check(flat, zero, 1 + 0.5 * (T**2 + Xs**2), ax).margin)

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
# # A small planar run
#
# Four bands (n = 12..15) on a reduced grid. This is enough to see every
# stage: the transport ladder per band, the interference surfaces between
# neighbours, the correction and the glued field with its decay table.
# The reference configuration does the same at full resolution for n = 12..20.

# %%
import tempfile

import numpy as np

from beamcert.io import emit_reports
from beamcert.pipeline import RunConfig, run_pipeline

out = tempfile.mkdtemp(prefix="beamcert-demo-")
cfg = RunConfig(resolution=(65, 17, 129), n0=12, nmax=15, n_interior=20, n_near=6, out=out)
res = run_pipeline(cfg, stages=("eikonal", "bands", "surfaces", "correction", "assembly"))
{k: round(v, 2) for k, v in res.timings.items()}

# %% [markdown]
# Each check lands in `res.verdicts` with its measured value and tolerance.
# On this small grid the certification verdicts fail only on probe counts,
# since fewer interior nodes are admissible than the 500 a full run collects.

# %%
for name, v in res.verdicts.items():
    print(f"{name:28s} {'pass' if v['pass'] else 'FAIL':5s} {v['value']}")

# %% [markdown]
# ## Residual ladder
#
# For every truncation depth J the measured conjugated residual is compared
# with the predicted one, and each extra transport term shrinks it.

# %%
for row in res.bands[13]["ladder"]:
    print(row["J"], f"{row['measured']:.3e}", f"{row['predicted']:.3e}", row["factor"])

# %% [markdown]
# ## Interference surfaces
#
# Where |v_n| = |v_{n+1}|. On the flat chart the surface is a constant
# sitting exactly on the rational balance root.

# %%
for n, s in res.surfaces.items():
    st = s.stats
    print(n, f"{s.sfrak.mean():.10f}", f"C_n={st['C_n']:.3f}",
          f"closed-form dev={st['closed_form_dev']:.1e}")

# %% [markdown]
# ## Decay of u
#
# log sup|u| on the slices sigma = 1/n against sigma^-2; the slope is -q.

# %%
dec = res.decay
x = np.array(dec.sigma0) ** -2.0
print("q =", dec.q)
print(np.c_[dec.sigma0, dec.log_sup_u[0]])

# %% [markdown]
# The growth of a is recorded, not hidden: `decay_a` lists every step that
# failed to shrink by a decade.

# %%
print(res.verdicts["decay_a"])
print(np.c_[dec.sigma0, dec.log_sup_a[0]])

# %% [markdown]
# ## Reports

# %%
paths = emit_reports(res, out)
sorted(p.split("/")[-1] for p in paths)

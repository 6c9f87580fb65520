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
# # Interference surfaces against the balance root
#
# With unit envelopes the surface position is the root of f_n = f_{n+1}.
# Both cutoffs are on their plateaus there once n is large enough, and the root
# is rational. Below n = 12 it slides off the plateau of band n, and for very
# small n the overlap holds no sign change at all.

# %%
from types import SimpleNamespace

import numpy as np

from beamcert.bands import amplitude_f, band_domain, plateau_endpoints
from beamcert.errors import RootOutsideOverlap
from beamcert.geometry import DomainSpec
from beamcert.interference import closed_form_root, locate_surface, surface_guess


class UnitChi:
    def __call__(self, sigma, nderiv=0):
        one = np.ones_like(np.asarray(sigma, float))
        return one if nderiv == 0 else [one] + [0 * one] * nderiv


def flat_beam(n):
    band = band_domain(n, DomainSpec(sigma0=0.3), (65, 3, 5))
    shape = (band.z.size, 3, 5)
    env = SimpleNamespace(band=band, values=np.ones(shape, complex))
    return SimpleNamespace(n=n, f=amplitude_f(n), envelope=env, chi=UnitChi(),
                           c0_unit=None, rest=np.zeros(shape, complex))


# %%
print(closed_form_root(10), float(closed_form_root(10)))
s10 = locate_surface(10, flat_beam(10), flat_beam(11), require_plateau=False)
print(s10.sfrak.flat[0], s10.stats["closed_form_dev"])

# %% [markdown]
# The scaled offset from the leading guess 1/n - 2/(3n^2) stays bounded.

# %%
for n in range(12, 21):
    r = float(closed_form_root(n))
    print(n, f"{r:.10f}", f"{(r - surface_guess(n)) * n**3:+.4f}",
          f"plateau end {plateau_endpoints(n)[1]:.6f}")

# %%
try:
    locate_surface(6, flat_beam(6), flat_beam(7))
except RootOutsideOverlap as exc:
    print(exc)

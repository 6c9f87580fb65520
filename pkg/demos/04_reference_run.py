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
# # Reference run
#
# The shipped configuration at full resolution, bands 12..20, all stages,
# with binary dumps of the envelopes. Expect about five minutes and a little
# over 2 GB of memory.

# %%
import json
import tempfile

from beamcert import data_path
from beamcert.io import emit_reports, read_grid
from beamcert.pipeline import RunConfig, run_pipeline

cfg = RunConfig.load(data_path("reference_config.json"))
cfg.out = tempfile.mkdtemp(prefix="beamcert-ref-")
cfg.dump_fields = ("envelope",)
res = run_pipeline(cfg)
print(json.dumps({k: round(v, 1) for k, v in res.timings.items()}))

# %%
for name, v in res.verdicts.items():
    print(f"{name:28s} {'pass' if v['pass'] else 'FAIL':5s} {v['value']}")

# %%
print(json.dumps(res.certification.summary(), indent=1))

# %%
paths = emit_reports(res, formats=("json", "csv", "grid"))
g = read_grid([p for p in paths if p.endswith("envelope_13.bcgrid")][0])
g.data.shape, g.attrs

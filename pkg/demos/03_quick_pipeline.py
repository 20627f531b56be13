"""Reduced-size end-to-end run: data, FNN, identification, RNN, scenarios.

Artifacts go to ``runs/demo``; a second run reuses every cached stage.
"""
# %%
import json
import time
from pathlib import Path

from dieselempc.config import load_config
from dieselempc.pipeline import QUICK_OVERRIDES, run_pipeline

out = Path("runs/demo")
cfg = load_config().with_overrides(QUICK_OVERRIDES)

# %% First run trains everything
t0 = time.perf_counter()
res = run_pipeline(cfg, out)
print(f"first run: {time.perf_counter() - t0:.1f} s, cache hits {res.cache_hits}")

# %% Model quality of the small networks
fnn_eval = json.loads((res.stage_dirs["fnn"] / "fnn_eval.json").read_text())
print(f"FNN test split: NOx MAE {fnn_eval['nox_mae']:.1f} ppm, Soot MAE {fnn_eval['soot_mae']:.3f} %")
for name, rep in json.loads((res.stage_dirs["rnn"] / "rnn_validation.json").read_text()).items():
    if isinstance(rep, dict):
        print(f"RNN {name}: NOx MAE {rep['nox_mae']:.1f} ppm over a {rep['nox_range']:.0f} ppm range")

# %% Relative changes against the lookup-table baseline
for table in res.tables.values():
    print()
    print(table.to_text())

# %% Second run: every stage is served from the cache
t0 = time.perf_counter()
again = run_pipeline(cfg, out)
print(f"\nsecond run: {time.perf_counter() - t0:.1f} s, cache hits {again.cache_hits}")

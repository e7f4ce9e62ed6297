"""Simulate the default 1650-point grid with the drift-diffusion backend.

Writes ``tests/data/grid_drift_diffusion.csv`` (plus its ``.meta.json``),
the cache read by the dataset-dependent tests. Takes about ten minutes on
one core.
"""

import sys
import time
from pathlib import Path

from cellopt.pipeline import GridSpec, generate_dataset

out = Path(__file__).resolve().parents[1] / "tests" / "data" / "grid_drift_diffusion.csv"
threads = int(sys.argv[1]) if len(sys.argv) > 1 else 1
t0 = time.perf_counter()


def progress(k):
    if k % 50 == 0:
        print(f"{k:5d} rows  {time.perf_counter() - t0:6.0f} s", flush=True)


ds = generate_dataset(GridSpec.default(), "drift_diffusion", threads=threads, seed=42,
                      progress=progress)
out.parent.mkdir(parents=True, exist_ok=True)
ds.save(out)
print(f"{len(ds)} rows, {len(ds.metadata['failed'])} failed -> {out}")

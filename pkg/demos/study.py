"""End-to-end study on the cached drift-diffusion dataset.

Fits quartic surrogates, optimizes them, validates the optimum with the
simulator and trains the Superior/Inferior classifier.
"""

import json
from pathlib import Path

from cellopt.pipeline import StudyConfig, end_to_end_study

data = Path(__file__).resolve().parents[1] / "tests" / "data" / "grid_drift_diffusion.csv"
report = end_to_end_study(StudyConfig(dataset=str(data)), log=print)
st = report["stages"]
print(json.dumps({k: st[k] for k in ("fit", "optimize", "validate")}, indent=2))
c = st["classify"]
print(f"Superior rows {c['superior_rows']}, test accuracy {c['test']['accuracy']:.4f}, "
      f"optimum classified {c['optimum_class']}")

"""J-V curve of the default device and one-at-a-time feature sweeps."""

import numpy as np

from cellopt.drift_diffusion import build_device, default_device, simulate_jv
from cellopt.features import FEATURE_NAMES, TABLE1_RANGES, FeatureVector
from cellopt.pipeline import Axis

res = simulate_jv(default_device())
m = res.metrics
print(f"default device: J_SC = {m.j_sc:.3f} mA/cm2  V_OC = {m.v_oc:.4f} V  "
      f"FF = {m.ff:.2f} %  eta = {m.eta:.3f} %")
for v, j in zip(res.v[::5], res.j[::5]):
    print(f"  V = {v:7.4f} V   J = {j:8.3f} mA/cm2")

axes = [Axis(*TABLE1_RANGES[n]).values() for n in FEATURE_NAMES]
center = [a[len(a) // 2] for a in axes]
for k, name in enumerate(FEATURE_NAMES):
    print(f"\nsweep of {name} (others at the grid centre):")
    for value in axes[k]:
        p = list(center)
        p[k] = value
        mk = simulate_jv(build_device(FeatureVector(*p))).metrics
        print(f"  {value:10.4g}  J_SC {mk.j_sc:7.3f}  V_OC {mk.v_oc:.4f}  "
              f"FF {mk.ff:6.2f}  eta {mk.eta:6.3f}")

"""Recover single-diode parameters from (J_SC, V_OC, FF) and redraw the curve."""

from cellopt.diode import (
    DiodeParams, characteristic_curves, curve_rmse, extract_metrics, reconstruct_parameters,
)

truth = DiodeParams(j_ph=21.0, j_0=3e-11, n=1.45, r_s=2.0, r_sh=1500.0)
m = extract_metrics(truth)
print(f"metrics: J_SC {m.j_sc:.4f}  V_OC {m.v_oc:.5f}  FF {m.ff:.3f}")
rec = reconstruct_parameters(m, r_s=truth.r_s, r_sh=truth.r_sh)
p = rec.params
print(f"recovered J_ph {p.j_ph:.6f}  J_0 {p.j_0:.4e}  n {p.n:.6f} "
      f"in {rec.iterations} iterations")
print("curve RMSE (J, P):", curve_rmse(p, truth, m.v_oc))
c = characteristic_curves(p, m.v_oc, 11)
for v, j in zip(c.v, c.j):
    print(f"  {v:.3f} V  {j:8.4f} mA/cm2")

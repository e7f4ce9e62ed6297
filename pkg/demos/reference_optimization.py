"""Optimize the published quartic surrogates and sweep the objective weights."""

from cellopt.optimizer import ObjectiveWeights, optimize_cell, weight_sweep
from cellopt.surrogate import calibrate_normalization, load_appendix_coefficients

best, table = calibrate_normalization()
print("normalization candidates (efficiency at the reference optimum):")
for row in table:
    mark = "*" if row["convention"] == best else " "
    print(f" {mark} {row['convention']:<14} eta = {row['eta']:.6f}  |err| = {row['error']:.6f}")

eta_s, delta_s = load_appendix_coefficients(best)
r = optimize_cell(eta_s, delta_s, ObjectiveWeights(0.5, 0.5))
print("\nequal weights:")
for name, value in r.x_star.to_dict().items():
    print(f"  {name:<6} = {value:.6g}")
print(f"  eta = {r.eta_pct:.3f} %   delta = {r.delta_pct:.4f} %   converged = {r.converged}")

print("\nweight sweep:")
for row in weight_sweep(eta_s, delta_s):
    print(f"  w_eta = {row['w_eta']:.2f}  eta = {row['eta_pct']:.3f} %  "
          f"delta = {row['delta_pct']:.4f} %")

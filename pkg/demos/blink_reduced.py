"""Blinking eigenvalues in the one-dimensional reduced model.

As the blunting size eps shrinks, eigenvalues of the reduced problem keep
falling and new ones keep arriving from above.  A fixed level lambda* is
crossed again and again, and the crossings are evenly spaced in |ln eps|
with spacing pi/mu0.  This script finds those crossings from inertia
counts alone, then compares them with the closed-form prediction seeded by
the first one.

    python demos/blink_reduced.py
"""
import math

from robincusp.asymptotics import CuspParams, blinking_epsilons, blunting_phase, classify_regime
from robincusp.sweep import ReducedModel, scan_blinking

c = classify_regime(CuspParams.planar(halfwidth=1.0, robin_a=0.5, d=1.0))
print(f"regime {c.regime}, mu0 = {c.mu0}, period pi/mu0 = {c.period:.6f}")

model = ReducedModel(c, nodes_per_period=96)
rep = scan_blinking(model, lambda_star=0.0, eps_hi=0.05, eps_lo=1e-14)

print("\ncrossings of lambda* = 0 (bisection on the count of eigenvalues below 0):")
for e in rep.crossings:
    print(f"  eps = {e:.6e}   |ln eps| = {abs(math.log(e)):8.4f}")
print(f"mean spacing {rep.mean_spacing:.5f}, expected {rep.expected_spacing:.5f} "
      f"({100 * rep.rel_error:.2f}% off)")

# The extension parameter at the first crossing predicts all later ones.
e0 = rep.crossings[0]
theta = blunting_phase(e0, c).theta
pred = blinking_epsilons(theta, c, e0 * math.exp(-0.5 * c.period), len(rep.crossings) - 1)
print("\nprediction from the first crossing:")
for e_obs, e_pred in zip(rep.crossings[1:], pred):
    err = abs(math.log(e_obs) - math.log(e_pred)) / abs(math.log(e_pred))
    print(f"  observed {e_obs:.4e}  predicted {e_pred:.4e}  relative ln error {err:.2e}")

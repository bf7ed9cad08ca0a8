"""Tail phase of 2-D eigenfunctions against ln eps.

Near the tip, the cross-sectional mean of an eigenfunction behaves like
C z^(-1/2) cos(mu0 ln z + phi).  Every time an eigenvalue crosses one of
several levels we fit phi on the finite-element solution.  Taken together,
the fitted phases drift linearly in ln eps with slope -mu0.

Deep eps values need the uncapped anisotropic mesh.  The layer-mean basis
keeps it accurate.  Runs in about half a minute.

    python demos/phase_law_2d.py
"""
import math

from robincusp.asymptotics import CuspParams, classify_regime
from robincusp.sweep import FemModel, phase_law

c = classify_regime(CuspParams.planar(1.0, 0.5, 1.0))
model = FemModel(c, ny=5, layers_per_period=96, max_aspect=None, min_angle_floor=0.0)

rep = phase_law(model, levels=range(-20, 21, 2), eps_hi=0.05, periods=3.0)
good = rep.accepted
print(f"{len(rep.fits)} crossings fitted, {len(good)} accepted")
print(f"{'eps':>12} {'lambda':>8} {'C':>8} {'phi':>8} {'rel rmse':>9}")
for f in good[:: max(1, len(good) // 12)]:
    print(f"{f.eps:12.4e} {f.lam:8.3f} {f.C:8.4f} {f.phi:8.4f} {f.relative_rmse:9.2e}")
print(f"\nslope d phi / d ln eps = {rep.slope:.5f}  (expected {-c.mu0}, "
      f"{100 * rep.rel_error:.2f}% off)")
print(f"implied blink period pi/|slope| = {math.pi / abs(rep.slope):.4f}")

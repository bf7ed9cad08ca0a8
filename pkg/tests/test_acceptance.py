"""Acceptance criteria, one test each, at their stated tolerances."""
import math
import time

import numpy as np
import pytest

from robincusp.asymptotics import (CuspParams, blinking_epsilons, blunting_phase, centered,
                                   classify_regime)
from robincusp.eigsolve import dense_oracle, eigs_window
from robincusp.fem2d import assemble_fem
from robincusp.mesh2d import rectangle_mesh
from robincusp.sweep import (C_TEST, FemModel, ReducedModel, compare_stable, half_domain_reference,
                             hausdorff,
                             periodicity_check, phase_law, run_sweep, scan_blinking, spectra_csv,
                             track_branches, verify_recurrence)

from conftest import log_space

PHASE_LEVELS = list(range(-20, 21, 2))


@pytest.fixture(scope="module")
def canon():
    return classify_regime(CuspParams.planar(1.0, 0.5, 1.0))


@pytest.fixture(scope="module")
def fem_deep(canon):
    """Uncapped layered mesh for runs far below eps = 1e-4."""
    return FemModel(canon, ny=5, layers_per_period=96, max_aspect=None, min_angle_floor=0.0)


@pytest.fixture(scope="module")
def canonical_sweep(canon):
    t0 = time.perf_counter()
    r = run_sweep(model=FemModel(canon), eps=log_space(0.1, 1e-3, 25), window=(-10.0, 10.0))
    return r, track_branches(r), time.perf_counter() - t0


def test_c01_closed_form_layer(canon, verdict):
    t0 = time.perf_counter()
    exact = (canon.a_dagger == 0.25 and canon.mu0 == 0.5 and canon.w0 == math.sqrt(2.0))
    eps = log_space(1e-6, 1e-1, 100)
    unimod = max(abs(abs(blunting_phase(e, canon).B) - 1.0) for e in eps)
    resub = 0.0
    for theta in np.linspace(0.0, 2 * math.pi, 9)[:-1]:
        for e in blinking_epsilons(float(theta), canon, 0.1, 4):
            resub = max(resub, abs(centered(blunting_phase(e, canon).theta - theta)))
    dt = time.perf_counter() - t0
    ok = exact and unimod <= 1e-12 and resub <= 1e-10 and dt < 1.0
    verdict("1 closed-form layer", ok,
            f"a_dagger/mu0/w0 exact={exact}, max||B|-1|={unimod:.1e}, resub={resub:.1e}, {dt:.2f}s")
    assert ok


def test_c02_threshold_law(verdict):
    t0 = time.perf_counter()
    c = classify_regime(CuspParams.planar(1.0, 0.25, 1.0))
    worst = max(abs(centered(blunting_phase(e, c).theta)) * abs(math.log(e))
                for e in log_space(1e-6, 1e-2, 200))
    dt = time.perf_counter() - t0
    ok = worst <= 4.0 and dt < 1.0
    verdict("2 threshold law", ok, f"max |T|·|ln eps| = {worst:.4f} (bound 4), {dt:.2f}s")
    assert ok


def test_c03_reduced_log_periodicity(canon, verdict):
    t0 = time.perf_counter()
    model = ReducedModel(canon)
    reps = [periodicity_check(model, e, Lambda=10.0) for e in (1e-2, 1e-3)]
    # diagnostic: the same comparison without restricting to [-10, 10]
    wide = [hausdorff(model.solve(r.eps, -11.0, 11.0).spectrum.values,
                      model.solve(r.eps_shifted, -11.0, 11.0).spectrum.values) for r in reps]
    dt = time.perf_counter() - t0
    ok = all(r.passed for r in reps) and dt < 30.0
    verdict("3 reduced log-periodicity", ok,
            ", ".join(f"eps={r.eps:g}: d_H={r.distance:.3g} <= {r.bound:.3g} "
                      f"(over [-11, 11]: {w:.3g})" for r, w in zip(reps, wide))
            + f", {dt:.1f}s")
    assert ok


def test_c04_blinking_rate(canon, verdict):
    t0 = time.perf_counter()
    rep = scan_blinking(ReducedModel(canon), 0.0, 0.05, 1e-14)
    dt = time.perf_counter() - t0
    ok = len(rep.crossings) >= 4 and rep.rel_error <= 0.1 and dt < 60.0
    verdict("4 blinking rate", ok,
            f"{len(rep.crossings)} crossings, mean spacing {rep.mean_spacing:.4f} vs 2pi "
            f"({100 * rep.rel_error:.2f}%), {dt:.1f}s")
    assert ok


def test_c05_phase_law(canon, fem_deep, verdict):
    t0 = time.perf_counter()
    red = phase_law(ReducedModel(canon), PHASE_LEVELS)
    t1 = time.perf_counter()
    fem = phase_law(fem_deep, PHASE_LEVELS)
    t2 = time.perf_counter()
    ok = red.rel_error <= 0.05 and fem.rel_error <= 0.10 and t2 - t1 < 600.0
    verdict("5 phase law", ok,
            f"reduced slope {red.slope:.5f} ({100 * red.rel_error:.2f}%, {len(red.accepted)} fits, "
            f"{t1 - t0:.1f}s); 2-D slope {fem.slope:.5f} ({100 * fem.rel_error:.2f}%, "
            f"{len(fem.accepted)} fits, {t2 - t1:.1f}s); expected -0.5")
    assert ok


def test_c06_recurrence(canon, fem_deep, verdict):
    t0 = time.perf_counter()
    reports = {"reduced": verify_recurrence(ReducedModel(canon), 0.0),
               "2-D": verify_recurrence(fem_deep, 0.0)}
    dt = time.perf_counter() - t0
    ok = all(r.passed and len(r.steps) == 2 for r in reports.values()) and dt < 600.0
    parts = []
    for name, r in reports.items():
        steps = "; ".join(f"k={s.k} eps={s.eps_pred:.3e} dev={s.deviation:.2e} "
                          f"norm={s.normalized:.3g}" for s in r.steps)
        parts.append(f"{name}: {steps}")
    verdict("6 recurrence", ok, f"C_test={C_TEST:g}; " + " | ".join(parts) + f"; {dt:.1f}s")
    assert ok


def test_c07_stable_vs_plummeting(canon, canonical_sweep, verdict):
    r, table, dt = canonical_sweep
    t0 = time.perf_counter()
    ref = half_domain_reference(FemModel(canon), 1e-2, *r.window).values
    rep = compare_stable(table, ref, match_tol=1e-6)
    dt += time.perf_counter() - t0
    ok = rep.passed and len(ref) > 0 and dt < 900.0
    drifts = ", ".join(f"{m.reference:.6f}->drift {m.drift:.1e}" if m.drift is not None
                       else f"{m.reference:.6f} unmatched" for m in rep.matches)
    verdict("7 stable vs plummeting", ok,
            f"{drifts}; smallest plummet drop per period {rep.smallest_drop:.3f}, {dt:.1f}s")
    assert ok


def test_c08_monotone_plummet(canonical_sweep, verdict):
    _, table, _ = canonical_sweep
    n = len(table.by_class("plummeting"))
    v = table.monotonicity_violations()
    ok = n > 0 and v == 0
    verdict("8 monotone plummet", ok, f"{n} plummeting branches, {v} violations")
    assert ok


def test_c09_solver_certification(canon, canonical_sweep, verdict):
    r, _, _ = canonical_sweep
    windows_ok = all(len(s) == s.inertia_hi - s.inertia_lo and s.certified for s in r.spectra)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for n in (10, 50, 100, 150, 200):
        A = rng.standard_normal((n, n))
        S = 0.5 * (A + A.T)
        B = rng.standard_normal((n, n))
        M = B @ B.T / n + np.eye(n)
        spec = eigs_window(S, M, -1.5, 1.5)
        ref = dense_oracle(S, M, -1.5, 1.5)
        windows_ok = windows_ok and len(spec) == spec.inertia_hi - spec.inertia_lo == ref.size
        worst = max(worst, float(np.max(np.abs(spec.values - ref) / np.maximum(np.abs(ref), 1e-300))))
    exact = (math.pi / 2) ** 2
    errs = []
    for n in (4, 8, 16):
        p = assemble_fem(rectangle_mesh(1.0, 2.0, n, 2 * n), 0.0)
        errs.append(eigs_window(p.S, p.M, 1.0, 4.0).values[0] - exact)
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    ok = windows_ok and worst <= 1e-8 and all(1.8 <= o <= 2.2 for o in orders)
    verdict("9 solver certification", ok,
            f"counts==inertia: {windows_ok}, oracle rel err {worst:.1e}, "
            f"rectangle orders {orders[0]:.3f}, {orders[1]:.3f}")
    assert ok


def test_c10_determinism(canon, canonical_sweep, verdict):
    r1, t1, _ = canonical_sweep
    r2 = run_sweep(model=FemModel(canon), eps=log_space(0.1, 1e-3, 25), window=(-10.0, 10.0))
    a = spectra_csv(r1, t1, "canonical")
    b = spectra_csv(r2, track_branches(r2), "canonical")
    ok = a.encode() == b.encode()
    verdict("10 determinism", ok, f"two canonical sweeps, {len(a.encode())} CSV bytes, identical={ok}")
    assert ok

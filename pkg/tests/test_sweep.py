import math

import numpy as np
import pytest

from robincusp.asymptotics import RegimeError
from robincusp.eigsolve import Spectrum
from robincusp.sweep import (C_TEST, PLUMMETING, STABLE, FemModel, ReducedModel, SweepResult,
                             calibrate_c_test, detect_blinking, fit_tail_phase, half_domain_reference,
                             hausdorff, periodicity_check, phase_slope, read_hash, run_sweep,
                             scan_blinking, spectra_csv, tail_window, track_branches, track_values,
                             verify_recurrence)

from conftest import log_space


def fake_spectrum(values, window, below=0):
    v = np.sort(np.asarray(values, float))
    n = v.size
    return Spectrum(v, np.zeros((1, n)), np.zeros(n), window, below, below + n, np.zeros(n), {})


# ---------------------------------------------------------------- tracking


def test_tracking_constant_and_falling_families():
    eps = log_space(0.1, 1e-3, 20)
    values = [np.array([2.0, 5.0 + 2.0 * math.log(e)]) for e in eps]
    t = track_values(eps, values)
    assert len(t.branches) == 2
    stable, = t.by_class(STABLE)
    plum, = t.by_class(PLUMMETING)
    assert np.allclose(stable.values, 2.0) and len(stable) == 20
    assert plum.slope == pytest.approx(2.0)
    assert plum.monotonicity_violations() == 0
    assert plum.per_period_drop(2 * math.pi) == pytest.approx(4 * math.pi)


def test_tracking_through_a_crossing():
    eps = log_space(0.1, 1e-3, 30)
    values = [np.array([0.3, 3.0 + 1.5 * math.log(e)]) for e in eps]
    t = track_values(eps, values)
    stable = t.by_class(STABLE)
    assert len(stable) == 1 and len(stable[0]) == 30
    assert sum(len(b) for b in t.by_class(PLUMMETING)) == 30


def test_tracking_needs_three_points():
    with pytest.raises(ValueError):
        track_values([0.1, 0.01], [np.array([1.0])] * 2)


def test_threshold_sweep_has_no_plummeting_branch(threshold):
    r = run_sweep(model=FemModel(threshold), eps=log_space(0.1, 1e-3, 25), window=(-10.0, 10.0))
    t = track_branches(r)
    assert t.by_class(PLUMMETING) == []
    assert max(abs(b.slope) for b in t.branches) < 0.25


@pytest.mark.parametrize("decade", [(1e-2, 1e-3), (1e-3, 1e-4), (1e-4, 1e-6)])
def test_reduced_threshold_drift_is_slow(canon, threshold, decade):
    def rates(c):
        r = run_sweep(model=ReducedModel(c), eps=log_space(*decade, 15), window=(-10.0, 10.0))
        return track_branches(r).branches

    thr = max(abs(b.slope) for b in rates(threshold) if len(b) >= 3)
    plum = min(b.slope for b in rates(canon) if b.cls == PLUMMETING)
    assert thr * 10 <= plum
    # O(1/|ln eps|): rate times |ln eps| stays bounded
    assert thr * abs(math.log(decade[0])) < 1.5


def test_canonical_reduced_has_plummeting_branches(canon):
    r = run_sweep(model=ReducedModel(canon), eps=log_space(0.1, 1e-4, 25), window=(-10.0, 10.0))
    t = track_branches(r)
    assert len(t.by_class(PLUMMETING)) >= 2
    assert t.monotonicity_violations() == 0


# ---------------------------------------------------------------- blinking


def comb_sweep(constants, eps, slope=2.0):
    """Branches lam_j = slope (ln eps + 2 pi j): zero crossings every 2 pi."""
    spectra = []
    for e in eps:
        allv = np.array([slope * (math.log(e) + 2 * math.pi * j) for j in range(-5, 12)])
        inside = allv[(allv > -10) & (allv < 10)]
        spectra.append(fake_spectrum(inside, (-10.0, 10.0), int(np.sum(allv <= -10))))
    return SweepResult(list(eps), spectra, [np.zeros(len(s)) for s in spectra], (-10.0, 10.0),
                       constants)


def test_blink_spacing_synthetic(canon):
    eps = log_space(0.5, 1e-12, 200)
    rep = detect_blinking(comb_sweep(canon, eps), 0.0)
    assert rep.status == "ok" and len(rep.crossings) == 4
    assert rep.mean_spacing == pytest.approx(2 * math.pi, rel=1e-9)
    np.testing.assert_allclose(np.log(rep.crossings), [-2 * math.pi * j for j in range(1, 5)],
                               rtol=1e-12)


def test_blink_insufficient_data(canon):
    rep = detect_blinking(comb_sweep(canon, [0.5]), 0.0)
    assert rep.status == "insufficient-data"


def test_blinking_needs_supercritical(subcritical, threshold):
    for c in (subcritical, threshold):
        with pytest.raises(RegimeError):
            detect_blinking(comb_sweep(c, [0.1, 0.01]), 0.0)
        with pytest.raises(RegimeError):
            scan_blinking(ReducedModel(c), 0.0, 0.05, 1e-4)


def test_reduced_blink_spacing(canon):
    rep = scan_blinking(ReducedModel(canon), 0.0, 0.05, 1e-14)
    assert rep.status == "ok" and len(rep.crossings) >= 4
    assert rep.rel_error < 0.02
    r = run_sweep(model=ReducedModel(canon), eps=log_space(0.05, 1e-8, 12), window=(-10.0, 10.0))
    via_sweep = detect_blinking(r, 0.0)
    np.testing.assert_allclose(via_sweep.crossings, rep.crossings[:len(via_sweep.crossings)],
                               rtol=1e-6)


# ---------------------------------------------------------------- tail phase


def synthetic_profile(c, C, phi, noise=0.0, rng=None):
    def f(z):
        y = C * np.cos(c.mu0 * np.log(z) + phi)
        if noise:
            y = y + noise * C * rng.standard_normal(z.shape)
        return y / z ** (c.n - 1.5)
    return f


@pytest.mark.parametrize("phi", [0.0, 0.4, 1.5, 2.9, 3.1])
def test_fit_exact_phase(canon, phi):
    f = fit_tail_phase(synthetic_profile(canon, 2.0, phi), canon, (1e-3, 0.3))
    assert f.accepted and f.basis == "oscillatory"
    assert f.C == pytest.approx(2.0)
    assert abs(((f.phi - phi) + math.pi / 2) % math.pi - math.pi / 2) < 1e-10
    assert f.rmse < 1e-12


def test_fit_phase_with_noise(canon):
    rng = np.random.default_rng(0)
    errs = []
    for _ in range(200):
        phi = rng.uniform(0, math.pi)
        f = fit_tail_phase(synthetic_profile(canon, 1.0, phi, 0.01, rng), canon, (1e-3, 0.3))
        errs.append(abs(((f.phi - phi) + math.pi / 2) % math.pi - math.pi / 2))
        assert f.accepted
    assert max(errs) < 0.02


def test_fit_threshold_basis(threshold):
    alpha, beta = 0.7, -1.3
    f = fit_tail_phase(lambda z: (alpha * np.log(z) + beta) / np.sqrt(z), threshold, (1e-3, 0.3))
    assert f.basis == "logarithmic" and f.accepted
    assert f.phi == pytest.approx(math.atan2(alpha, beta) % math.pi)


def test_fit_rejections(canon, subcritical):
    with pytest.raises(RegimeError):
        fit_tail_phase(lambda z: z, subcritical, (1e-3, 0.3))
    with pytest.raises(ValueError):
        fit_tail_phase(lambda z: z, canon, (0.3, 1e-3))
    rough = fit_tail_phase(lambda z: np.sign(np.sin(40 * np.log(z))), canon, (1e-3, 0.3))
    assert not rough.accepted


def test_tail_window():
    assert tail_window(1e-3, 0.0, 1.0) == (3e-3, 0.5)
    assert tail_window(1e-3, 9.0, 1.0, 0.3) == pytest.approx((3e-3, 0.1))


def test_odd_mode_fit_is_rejected(canon):
    sol = FemModel(canon).solve(1e-3, -10.0, 10.0)
    k = 1  # stable mode, odd in y
    assert sol.spectrum.values[k] == pytest.approx(0.91370437, abs=1e-6)
    win = tail_window(1e-3, float(sol.spectrum.values[k]), 1.0)
    from robincusp.sweep import MIN_AMPLITUDE
    f = fit_tail_phase(sol.profile(k), canon, win, min_amplitude=MIN_AMPLITUDE)
    assert not f.accepted
    g = fit_tail_phase(sol.profile(0), canon, tail_window(1e-3, float(sol.spectrum.values[0]), 1.0),
                       min_amplitude=MIN_AMPLITUDE)
    assert g.accepted


def test_phase_slope_needs_three_fits(canon):
    f = fit_tail_phase(synthetic_profile(canon, 1.0, 0.3), canon, (1e-3, 0.3), eps=0.01)
    s, g = phase_slope([f, f])
    assert math.isnan(s) and math.isnan(g)


# ---------------------------------------------------------------- recurrence


def test_reduced_recurrence_locates_crossings(canon):
    rep = verify_recurrence(ReducedModel(canon, nodes_per_period=96), 0.0, locate=True)
    assert rep.status == "ok" and rep.passed
    assert len(rep.steps) == 2
    for s in rep.steps:
        assert s.eps_observed is not None
        assert s.ln_error < 0.1
    assert abs(abs(rep.theta_offset) - math.pi) < 0.1  # tail phase convention differs by pi


@pytest.mark.slow
def test_c_test_calibration_is_tight(canon):
    cal = calibrate_c_test(canon)
    assert C_TEST / 10 <= cal["max_normalized"] <= C_TEST


# ---------------------------------------------------------------- references


def test_hausdorff():
    assert hausdorff([0.0, 1.0], [0.0, 1.5]) == 0.5
    assert hausdorff([], []) == 0.0
    assert hausdorff([1.0], []) == math.inf
    # a point near the edge may match outside the restricted set
    assert hausdorff([9.9], [], [9.9], [10.05]) == pytest.approx(0.15)


def test_periodicity_reduced(canon):
    rep = periodicity_check(ReducedModel(canon), 1e-2)
    assert rep.passed
    assert rep.eps_shifted == pytest.approx(1e-2 * math.exp(-2 * math.pi))


def test_half_domain_reference_above_ground_state():
    from robincusp.asymptotics import CuspParams, classify_regime
    flat = classify_regime(CuspParams.planar(1.0, 0.0, 1.0))
    m = FemModel(flat)
    full = m.solve(0.01, -1.0, 5.0).spectrum.values
    half = half_domain_reference(m, 0.01, -1.0, 5.0).values
    assert full[0] == pytest.approx(0.0, abs=1e-9)
    assert half[0] > full[0] + 0.1


def test_half_domain_reference_is_eps_stable(canon):
    m = FemModel(canon)
    a = half_domain_reference(m, 1e-2, -10.0, 10.0).values
    b = half_domain_reference(m, 5e-3, -10.0, 10.0).values
    np.testing.assert_allclose(a, b, atol=1e-8)


# ---------------------------------------------------------------- sweep runner


def test_run_sweep_single_and_empty(canon):
    m = ReducedModel(canon)
    r = run_sweep(model=m, eps=[0.01], window=(-10.0, 10.0))
    assert len(r) == 1 and r.certified and not r.failures
    assert run_sweep(model=m, eps=[], window=(-10.0, 10.0)).eps == []
    with pytest.raises(ValueError):
        run_sweep(model=m, eps=[0.01, 0.1], window=(-10.0, 10.0))


def test_run_sweep_isolates_failures(canon):
    m = FemModel(canon, max_aspect=None, min_angle_floor=5.0)
    r = run_sweep(model=m, eps=[0.05, 1e-5], window=(-10.0, 10.0))
    assert r.eps == [0.05]
    f, = r.failures
    assert f.eps == 1e-5 and f.stage == "mesh" and f.error == "MeshQualityError"


def test_run_sweep_threads_match_serial(canon):
    m = FemModel(canon, ny=5)
    eps = log_space(0.1, 0.01, 4)
    a = run_sweep(model=m, eps=eps, window=(-10.0, 10.0))
    b = run_sweep(model=FemModel(canon, ny=5), eps=eps, window=(-10.0, 10.0), threads=3)
    for sa, sb in zip(a.spectra, b.spectra):
        np.testing.assert_array_equal(sa.values, sb.values)


def test_spectra_csv_deterministic(canon):
    eps = log_space(0.1, 0.01, 5)
    texts = []
    for _ in range(2):
        r = run_sweep(model=FemModel(canon, ny=5), eps=eps, window=(-10.0, 10.0))
        texts.append(spectra_csv(r, track_branches(r), "abc123"))
    assert texts[0] == texts[1]
    assert read_hash(texts[0]) == "abc123"
    assert texts[0].splitlines()[1] == "eps,index,lambda,residual,tip_mass_fraction,branch_id,class"

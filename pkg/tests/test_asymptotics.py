import math
import cmath

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robincusp.asymptotics import (SUBCRITICAL, SUPERCRITICAL, THRESHOLD, ConsistencyError,
                                   CuspParams, DomainError, RegimeError, T0_limit,
                                   blinking_epsilons, blunting_phase, branch_slope, centered,
                                   classify_regime, cross_profile_W0, indicial_exponents,
                                   phase_to_theta, wave)

from conftest import log_space


# ---------------------------------------------------------------- constants


def test_canonical_constants(canon):
    assert canon.A == 0.5
    assert canon.a_dagger == 0.25
    assert canon.regime == SUPERCRITICAL
    assert canon.mu0 == 0.5
    assert canon.w0 == math.sqrt(2.0)
    assert canon.period == 2 * math.pi


def test_threshold_constants(threshold):
    assert threshold.regime == THRESHOLD
    assert threshold.mu0 == 0.0
    assert threshold.w0 == 2.0


def test_subcritical_constants(subcritical):
    assert subcritical.regime == SUBCRITICAL
    assert subcritical.mu0 is None
    with pytest.raises(RegimeError):
        subcritical.period


def test_invalid_params():
    with pytest.raises(DomainError):
        CuspParams(1, 1.0, 2.0, 0.5)
    with pytest.raises(DomainError):
        CuspParams(2, 2.0, 3.0, 0.5)
    with pytest.raises(DomainError):
        CuspParams.planar(1.0, 0.5, d=0.0)


@given(st.floats(0.05, 5.0), st.floats(-2.0, 5.0))
def test_regime_invariants(halfwidth, a):
    c = classify_regime(CuspParams.planar(halfwidth, a))
    h = 2 * halfwidth
    assert math.isclose(c.A, a * 2 / h, rel_tol=1e-14, abs_tol=1e-300)
    assert math.isclose(c.a_dagger, 0.25 * h / 2, rel_tol=1e-14)
    if c.regime == SUPERCRITICAL:
        assert a > c.a_dagger
        assert math.isclose(c.mu0**2, c.A - 0.25, rel_tol=1e-12)
        assert math.isclose(c.w0, math.sqrt(2 * c.mu0 * h), rel_tol=1e-14)
    elif c.regime == SUBCRITICAL:
        assert a < c.a_dagger


# ---------------------------------------------------------------- waves


def test_wave_examples(canon, threshold):
    assert wave(1.0, "plus", canon) == pytest.approx(math.sqrt(2))
    z = math.exp(math.pi)
    expect = 1j * math.sqrt(2) * math.exp(-math.pi / 2)
    assert abs(wave(z, "plus", canon) - expect) < 1e-15
    assert wave(1.0, "minus", threshold) == pytest.approx(2j)


def test_wave_rejects_subcritical(subcritical):
    with pytest.raises(RegimeError):
        wave(0.5, "plus", subcritical)


@given(st.floats(0.1, 3.0), st.floats(0.3, 3.0))
def test_indicial_identity(halfwidth, a):
    c = classify_regime(CuspParams.planar(halfwidth, a))
    if c.regime != SUPERCRITICAL:
        return
    for mu in indicial_exponents(c):
        assert abs(mu * mu + mu + c.A) < 1e-12 * max(1.0, c.A)


# ---------------------------------------------------------------- cross profile


def test_cross_profile_canonical(canon):
    mu = complex(-0.5, 0.5)
    p = cross_profile_W0(canon, mu)
    k = 0.5 - 1j  # mu(mu - 1)
    assert abs(mu * (mu - 1) - k) < 1e-15
    assert abs(p.alpha - (-k * math.sqrt(2) / 2)) < 1e-15
    assert abs(p.gamma - k * math.sqrt(2) / 6) < 1e-15
    assert p.boundary_residual < 1e-14
    assert abs(p.mean()) < 1e-15


def test_cross_profile_zero():
    c = classify_regime(CuspParams.planar(1.0, 0.0))
    p = cross_profile_W0(c, mu=0.0, w0=1.0)
    assert p.alpha == 0 and p.gamma == 0


def test_cross_profile_not_indicial(canon):
    with pytest.raises(ConsistencyError):
        cross_profile_W0(canon, mu=complex(-0.5, 0.7))


def test_cross_profile_unsupported_dimension():
    c = classify_regime(CuspParams(3, 1.0, 4.0, 2.0))
    with pytest.raises(NotImplementedError):
        cross_profile_W0(c)


@given(st.floats(0.3, 3.0), st.floats(0.5, 4.0), st.sampled_from(["plus", "minus"]))
def test_cross_profile_mean_zero(halfwidth, a, branch):
    c = classify_regime(CuspParams.planar(halfwidth, a))
    if c.regime != SUPERCRITICAL:
        return
    p = cross_profile_W0(c, branch=branch)
    eta = np.linspace(-halfwidth, halfwidth, 2001)
    assert abs(np.trapezoid(p(eta), eta)) < 1e-5 * (abs(p.alpha) + abs(p.gamma)) * halfwidth
    assert abs(p.mean()) < 1e-13 * (abs(p.alpha) * halfwidth**2 + abs(p.gamma))


# ---------------------------------------------------------------- blunting phase


def _mp_phase(eps, a=0.5, mu0=0.5, n=2):
    """Independent extended-precision evaluation of the blunting coefficient."""
    mpmath.mp.dps = 40
    e = mpmath.mpf(eps)
    q = e * a - n + mpmath.mpf(3) / 2 + 1j * mu0
    B = mpmath.conj(q) / q * mpmath.exp(-2j * mu0 * mpmath.log(e))
    return B, float(-2 * mpmath.arg(q) + 2 * mpmath.arg(-0.5 + 0.5j) + mpmath.pi / 2)


def test_T0_limit(canon):
    prefactor = complex(-0.5, -0.5) / complex(-0.5, 0.5)
    assert abs(prefactor - 1j) < 1e-15
    assert T0_limit(canon) == pytest.approx(math.pi / 2, abs=1e-15)


def test_blunting_phase_example(canon):
    ph = blunting_phase(0.01, canon)
    B, T0 = _mp_phase(0.01)
    assert ph.T0 == pytest.approx(1.5808, abs=5e-5)
    assert ph.theta == pytest.approx(6.1860, abs=5e-5)
    assert ph.T0 == pytest.approx(T0, abs=1e-13)
    assert abs(ph.B - complex(B)) < 1e-13
    assert cmath.phase(ph.B) % (2 * math.pi) == pytest.approx(ph.theta, abs=1e-12)


def test_threshold_phase_example(threshold):
    eps = 1e-3
    x = math.log(eps) - 2 / (1 - eps * 0.25)
    assert x == pytest.approx(-8.9083, abs=5e-5)
    ph = blunting_phase(eps, threshold)
    oracle = float(2 * (mpmath.pi - mpmath.atan(1 / mpmath.mpf(-x) )))
    assert ph.theta == pytest.approx(oracle, abs=1e-12)
    assert ph.theta == pytest.approx(6.059610431, abs=1e-9)
    assert ph.theta == pytest.approx(6.0595, abs=2e-4)  # quoted value, rounded
    assert abs(ph.theta - 2 * math.pi) == pytest.approx(2 / abs(x), rel=0.01)


def test_blunting_phase_errors(canon, subcritical):
    with pytest.raises(RegimeError):
        blunting_phase(0.01, subcritical)
    with pytest.raises(DomainError):
        blunting_phase(1.0, canon)


@settings(max_examples=60)
@given(st.floats(-14.0, -0.7))
def test_unimodular_and_exact_phase_law(canon, t):
    eps = math.exp(t)
    ph = blunting_phase(eps, canon)
    assert abs(abs(ph.B) - 1) < 1e-12
    assert ph.T_unwrapped + 2 * canon.mu0 * math.log(eps) == pytest.approx(ph.T0, abs=1e-12)
    assert abs(centered(ph.T_unwrapped - ph.theta)) < 1e-12


@settings(max_examples=60)
@given(st.floats(-14.0, -0.7))
def test_threshold_unimodular(threshold, t):
    ph = blunting_phase(math.exp(t), threshold)
    assert abs(abs(ph.B) - 1) < 1e-12


def test_T0_slow_variation(canon):
    e = np.array(log_space(1e-8, 0.5, 400))
    T0 = np.array([blunting_phase(x, canon).T0 for x in e])
    slope = np.abs(np.diff(T0) / np.diff(e))
    assert slope.max() < 2.0


def test_threshold_decay(threshold):
    for eps in log_space(1e-12, 1e-2, 200):
        ph = blunting_phase(eps, threshold)
        assert abs(centered(ph.T_unwrapped)) <= 4 / abs(math.log(eps))


# ---------------------------------------------------------------- blinking epsilons

# Newton on the exact phase; independent bisection below confirms it.
EPS1_THETA0 = 9.06547268536772e-03


def test_blinking_example(canon):
    e = blinking_epsilons(0.0, canon, 0.05, 2)
    assert e[0] == pytest.approx(EPS1_THETA0, rel=1e-12)
    T0 = [blunting_phase(x, canon).T0 for x in e]
    gap = math.log(e[0]) - math.log(e[1])
    assert gap == pytest.approx((2 * math.pi + T0[0] - T0[1]) / (2 * canon.mu0), abs=1e-10)
    assert gap == pytest.approx(2 * math.pi, abs=1e-2)
    for x in e:
        assert abs(centered(blunting_phase(x, canon).theta)) < 1e-10


def test_blinking_independent_root(canon):
    # bisection on theta(eps) = 0 (mod 2 pi) between ln eps = -5 and -4.5
    def g(t):
        return centered(blunting_phase(math.exp(t), canon).theta)

    root = mpmath.findroot(lambda t: g(float(t)), (-4.9, -4.6), solver="bisect", tol=1e-14)
    assert math.exp(float(root)) == pytest.approx(EPS1_THETA0, rel=1e-10)


def test_blinking_empty(canon):
    assert blinking_epsilons(0.3, canon, 0.05, 0) == []


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 2 * math.pi), st.floats(1e-4, 0.5))
def test_blinking_resubstitution(canon, Theta, eps_max):
    e = blinking_epsilons(Theta, canon, eps_max, 4)
    assert len(e) == 4
    assert all(x < eps_max for x in e)
    assert all(b < a for a, b in zip(e, e[1:]))
    for x in e:
        assert abs(centered(blunting_phase(x, canon).theta - Theta)) < 1e-10
    gaps = [math.log(a) - math.log(b) for a, b in zip(e, e[1:])]
    assert gaps[-1] == pytest.approx(2 * math.pi, abs=1e-2)


def test_blinking_threshold_at_most_one(threshold):
    e = blinking_epsilons(6.0, threshold, 0.5, 3)
    assert len(e) <= 1
    for x in e:
        assert abs(centered(blunting_phase(x, threshold).theta - 6.0)) < 1e-10


# ---------------------------------------------------------------- conventions


@pytest.mark.parametrize("phi,theta", [(1.0, 2.0), (math.pi, 0.0), (-0.3, 2 * math.pi - 0.6)])
def test_phase_to_theta(phi, theta):
    assert phase_to_theta(phi) == pytest.approx(theta, abs=1e-12)


@given(st.floats(-20, 20))
def test_phase_to_theta_pi_invariant(phi):
    a, b = phase_to_theta(phi), phase_to_theta(phi + math.pi)
    assert 0 <= a < 2 * math.pi
    assert abs(centered(a - b)) < 1e-9


def test_branch_slope(canon, threshold):
    assert branch_slope(canon, 1.0) == -1.0
    assert branch_slope(canon, 4.0) == -0.25
    with pytest.raises(DomainError):
        branch_slope(canon, 0.0)
    with pytest.raises(RegimeError):
        branch_slope(threshold, 1.0)

"""Closed-form layer: model constants, tip waves, blunting phase and its roots.

Everything here is exact arithmetic on the model parameters of a quadratic
cusp ``{(y, z): 0 < z < d, y / z**2 in omega}`` with Robin coefficient ``a``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

SUBCRITICAL = "subcritical"
THRESHOLD = "threshold"
SUPERCRITICAL = "supercritical"


class RegimeError(ValueError):
    """Operation is meaningless for the regime of the given constants."""


class DomainError(ValueError):
    """Argument outside the domain of an operation."""


class ConsistencyError(ValueError):
    """A closed-form identity failed beyond tolerance."""


class RootSolveError(RuntimeError):
    """Root iteration did not converge; ``trace`` holds the iterates."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class CuspParams:
    n: int
    omega_measure: float
    boundary_measure: float
    robin_a: float
    d: float = 1.0
    omega_halfwidth: float | None = None

    def __post_init__(self):
        if self.n < 2:
            raise DomainError(f"dimension n={self.n} must be >= 2")
        if self.omega_measure <= 0 or self.boundary_measure <= 0:
            raise DomainError("cross-section measures must be positive")
        if self.d <= 0:
            raise DomainError("cusp length d must be positive")
        if self.n == 2:
            if self.omega_halfwidth is None:
                object.__setattr__(self, "omega_halfwidth", 0.5 * self.omega_measure)
            if not math.isclose(self.omega_measure, 2.0 * self.omega_halfwidth, rel_tol=1e-14):
                raise DomainError("n=2 requires |omega| = 2 * halfwidth")
            if not math.isclose(self.boundary_measure, 2.0, rel_tol=1e-14):
                raise DomainError("n=2 requires |boundary omega| = 2")

    @classmethod
    def planar(cls, halfwidth: float, robin_a: float, d: float = 1.0) -> "CuspParams":
        """Two-dimensional cusp with cross-section ``(-halfwidth, halfwidth)``."""
        return cls(2, 2.0 * halfwidth, 2.0, robin_a, d, halfwidth)


@dataclass(frozen=True)
class ModelConstants:
    params: CuspParams
    A: float
    a_dagger: float
    mu0: float | None
    w0: float | None
    regime: str

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def robin_a(self) -> float:
        return self.params.robin_a

    @property
    def period(self) -> float:
        """Blink period ``pi / mu0`` in ``|ln eps|``."""
        if self.regime != SUPERCRITICAL:
            raise RegimeError("blink period exists only above the threshold")
        return math.pi / self.mu0

    def as_dict(self) -> dict:
        p = self.params
        return {
            "n": p.n,
            "omega_measure": p.omega_measure,
            "boundary_measure": p.boundary_measure,
            "omega_halfwidth": p.omega_halfwidth,
            "robin_a": p.robin_a,
            "d": p.d,
            "A": self.A,
            "a_dagger": self.a_dagger,
            "mu0": self.mu0,
            "w0": self.w0,
            "regime": self.regime,
        }


@dataclass(frozen=True)
class BluntingPhase:
    eps: float
    theta: float
    T_unwrapped: float
    T0: float | None
    B: complex = field(repr=False)


def classify_regime(p: CuspParams, rel_tol: float = 1e-12) -> ModelConstants:
    """Reduced coefficient, critical coefficient and regime of ``p``."""
    s = p.n - 1.5
    A = p.robin_a * p.boundary_measure / p.omega_measure
    a_dagger = s * s * p.omega_measure / p.boundary_measure
    gap = A - s * s
    if abs(p.robin_a - a_dagger) <= rel_tol * max(abs(a_dagger), 1e-300):
        return ModelConstants(p, A, a_dagger, 0.0, math.sqrt(2.0 * p.omega_measure), THRESHOLD)
    if gap > 0:
        mu0 = math.sqrt(gap)
        return ModelConstants(p, A, a_dagger, mu0, math.sqrt(2.0 * mu0 * p.omega_measure),
                              SUPERCRITICAL)
    return ModelConstants(p, A, a_dagger, None, None, SUBCRITICAL)


def _require_oscillatory(c: ModelConstants):
    if c.regime == SUBCRITICAL:
        raise RegimeError("operation requires a >= a_dagger (constants are subcritical)")


def wave(z, branch: str, c: ModelConstants):
    """Normalized tip waves ``w+`` / ``w-`` evaluated at ``z > 0``."""
    _require_oscillatory(c)
    if branch not in ("plus", "minus"):
        raise ValueError(f"branch must be 'plus' or 'minus', got {branch!r}")
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise DomainError("waves are defined for z > 0")
    sgn = 1.0 if branch == "plus" else -1.0
    power = -c.n + 1.5
    if c.regime == SUPERCRITICAL:
        out = c.w0 * np.exp((sgn * 1j * c.mu0 + power) * np.log(z))
    else:
        out = c.w0 * z**power * (np.log(z) - sgn * 1j)
    return out[()] if out.ndim == 0 else out


def indicial_exponents(c: ModelConstants) -> tuple[complex, complex]:
    """Roots of the Euler indicial equation, ``(+branch, -branch)``."""
    _require_oscillatory(c)
    return (complex(-c.n + 1.5, c.mu0), complex(-c.n + 1.5, -c.mu0))


@dataclass(frozen=True)
class CrossProfile:
    """``W0(eta) = alpha * eta**2 + gamma`` on ``(-h/2, h/2)``."""

    alpha: complex
    gamma: complex
    halfwidth: float
    boundary_residual: float

    def __call__(self, eta):
        eta = np.asarray(eta, dtype=float)
        return self.alpha * eta**2 + self.gamma

    def mean(self) -> complex:
        h = 2.0 * self.halfwidth
        return (self.alpha * h**3 / 12.0 + self.gamma * h) / h


def cross_profile_W0(c: ModelConstants, mu: complex | None = None, branch: str = "plus",
                     w0: float | None = None, tol: float = 1e-10) -> CrossProfile:
    """Zero-mean cross-sectional corrector of the thin-domain ansatz (``n = 2``).

    Solves ``-W0'' = mu (mu - 1) w0`` on the interval with ``int W0 = 0`` and
    checks the Neumann data ``W0'(h/2) = (mu h + a) w0``, which holds exactly
    when ``mu`` is an indicial exponent.
    """
    if c.n != 2:
        raise NotImplementedError("cross profile implemented for the planar cusp only")
    if mu is None:
        plus, minus = indicial_exponents(c)
        mu = plus if branch == "plus" else minus
    if w0 is None:
        w0 = c.w0 if c.w0 is not None else 1.0
    h = 2.0 * c.params.omega_halfwidth
    k = mu * (mu - 1.0)
    alpha = -k * w0 / 2.0
    gamma = k * w0 * h * h / 24.0
    flux = 2.0 * alpha * (h / 2.0)
    resid = abs(flux - (mu * h + c.robin_a) * w0)
    scale = max(1.0, abs(w0) * (abs(mu) * h + abs(c.robin_a)))
    if resid > tol * scale:
        raise ConsistencyError(f"mu={mu} is not indicial: boundary residual {resid:.3e}")
    return CrossProfile(complex(alpha), complex(gamma), h / 2.0, resid)


def _moebius_q(eps, c: ModelConstants):
    return complex(eps * c.robin_a - c.n + 1.5, c.mu0)


def _T0(eps: float, c: ModelConstants) -> float:
    # Im q = mu0 > 0, so arg q stays in (0, pi) and -2 arg q is continuous in eps.
    q0 = _moebius_q(0.0, c)
    principal0 = math.atan2(-2.0 * q0.real * q0.imag, q0.real**2 - q0.imag**2)
    shift = principal0 + 2.0 * math.atan2(q0.imag, q0.real)
    q = _moebius_q(eps, c)
    return shift - 2.0 * math.atan2(q.imag, q.real)


def T0_limit(c: ModelConstants) -> float:
    """Value of the slowly varying phase as ``eps -> 0+``."""
    _require_supercritical(c)
    return _T0(0.0, c)


def _require_supercritical(c: ModelConstants):
    if c.regime != SUPERCRITICAL:
        raise RegimeError(f"operation requires the supercritical regime, got {c.regime}")


def _threshold_x(eps: float, c: ModelConstants) -> float:
    return math.log(eps) - 2.0 / (2 * c.n - 3 - eps * c.robin_a)


def blunting_phase(eps: float, c: ModelConstants) -> BluntingPhase:
    """Extension parameter selected by the Robin condition at the blunt end."""
    _require_oscillatory(c)
    if not 0.0 < eps < 1.0:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    if c.regime == SUPERCRITICAL:
        q = _moebius_q(eps, c)
        B = (q.conjugate() / q) * np.exp(-2j * c.mu0 * math.log(eps))
        T0 = _T0(eps, c)
        T = T0 - 2.0 * c.mu0 * math.log(eps)
        return BluntingPhase(eps, _mod_2pi(T), T, T0, complex(B))
    x = _threshold_x(eps, c)
    B = complex(x, 1.0) / complex(x, -1.0)
    T = 2.0 * math.atan2(1.0, x)
    return BluntingPhase(eps, _mod_2pi(T), T, None, B)


def _mod_2pi(x: float) -> float:
    r = x % TWO_PI
    return 0.0 if r >= TWO_PI else r


def centered(angle):
    """Representative of ``angle`` mod 2 pi in ``(-pi, pi]``."""
    return -((-np.asarray(angle) + math.pi) % TWO_PI - math.pi)


def _dT_dlog(eps: float, c: ModelConstants) -> float:
    q = _moebius_q(eps, c)
    dT0 = 2.0 * c.robin_a * c.mu0 / (q.real**2 + q.imag**2)
    return eps * dT0 - 2.0 * c.mu0


def blinking_epsilons(Theta: float, c: ModelConstants, eps_max: float, count: int,
                      tol: float = 1e-12, maxiter: int = 60) -> list[float]:
    """Decreasing blunting parameters at which the extension parameter equals ``Theta``.

    Supercritical: damped Newton in ``t = ln eps`` on
    ``T0(e^t) - 2 mu0 t = Theta + 2 pi k`` for consecutive ``k``.
    Threshold: the phase is monotone and tends to 2 pi, so at most one root
    in ``(0, eps_max)`` exists; it is bracketed and bisected.
    """
    _require_oscillatory(c)
    if count <= 0:
        return []
    if not 0.0 < eps_max <= 1.0:
        raise DomainError("eps_max must lie in (0, 1]")
    if c.regime == THRESHOLD:
        return _threshold_root(Theta, c, eps_max, tol)

    t_max = math.log(eps_max)
    e_top = min(eps_max, 1.0 - 1e-15)
    G_top = _T0(e_top, c) - 2.0 * c.mu0 * math.log(e_top)
    k = math.floor((G_top - Theta) / TWO_PI) + 1
    T00 = _T0(0.0, c)
    roots = []
    while len(roots) < count:
        target = Theta + TWO_PI * k
        t = min((T00 - target) / (2.0 * c.mu0), t_max)
        trace = [t]
        for _ in range(maxiter):
            eps = math.exp(t)
            g = _T0(eps, c) - 2.0 * c.mu0 * t - target
            if abs(g) <= tol:
                break
            step = -g / _dT_dlog(eps, c)
            lam = 1.0
            while lam > 1e-6:
                t_new = t + lam * step
                if t_new < 0.0:
                    g_new = _T0(math.exp(t_new), c) - 2.0 * c.mu0 * t_new - target
                    if abs(g_new) < abs(g):
                        break
                lam *= 0.5
            t = t + lam * step
            trace.append(t)
        else:
            raise RootSolveError(f"Newton failed for branch k={k}", trace)
        if t < t_max:
            roots.append(math.exp(t))
        k += 1
    return roots


def _threshold_root(Theta, c, eps_max, tol):
    target = float(Theta) % TWO_PI

    def g(t):
        return 2.0 * math.atan2(1.0, _threshold_x(math.exp(t), c)) - target

    hi = math.log(min(eps_max, 1.0 - 1e-15))
    lo = -700.0
    glo, ghi = g(lo), g(hi)
    if glo * ghi > 0:
        return []
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if abs(gm) <= tol or hi - lo < 1e-15:
            break
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi = mid
    return [math.exp(mid)]


def phase_to_theta(phi: float) -> float:
    """Extension parameter of a real tail ``cos(mu0 ln z + phi)``: ``2 phi mod 2 pi``."""
    return _mod_2pi(2.0 * phi)


def branch_slope(c: ModelConstants, normZ_sq: float) -> float:
    """Predicted ``d lambda / d|ln eps|`` along a plummeting branch."""
    _require_supercritical(c)
    if not normZ_sq > 0:
        raise DomainError("||Z||^2 must be positive")
    return -2.0 * c.mu0 / normZ_sq

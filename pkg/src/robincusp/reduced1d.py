"""One-dimensional reduced model of the blunted cusp.

Weighted Sturm-Liouville problem obtained by averaging over the cross-section::

    -(z^{2(n-1)} w')' - A z^{2(n-2)} w = lam z^{2(n-1)} w     on (eps, d)

with ``w' + a w = 0`` (Robin), ``w' = 0`` or ``w = 0`` at the blunt end
``z = eps`` and a Dirichlet or Neumann condition at ``z = d``.  P1 elements
with exact element integrals give a symmetric tridiagonal pencil.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .asymptotics import SUPERCRITICAL, ModelConstants
from .eigsolve import Spectrum, Tridiagonal, eigs_window

NODES_PER_PERIOD = 48
END_BCS = ("robin", "neumann", "dirichlet")
OUTER_BCS = ("dirichlet", "neumann")


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class ReducedProblem:
    constants: ModelConstants
    eps: float
    d: float = 1.0
    outer_bc: str = "dirichlet"
    end_bc: str = "robin"
    lambda_window: tuple[float, float] = (-20.0, 20.0)

    def __post_init__(self):
        if not 0.0 < self.eps < self.d:
            raise ValueError(f"need 0 < eps < d, got eps={self.eps}, d={self.d}")
        lo, hi = self.lambda_window
        if not lo < hi:
            raise ValueError("lambda_window requires lo < hi")
        if self.end_bc not in END_BCS:
            raise ValueError(f"end_bc must be one of {END_BCS}")
        if self.outer_bc not in OUTER_BCS:
            raise ValueError(f"outer_bc must be one of {OUTER_BCS}")

    def at(self, eps: float) -> "ReducedProblem":
        return replace(self, eps=eps)


@dataclass(frozen=True)
class ReducedGrid:
    nodes: np.ndarray = field(repr=False)
    spacing_rule: str
    node_count: int

    @classmethod
    def log_uniform(cls, eps: float, d: float, node_count: int) -> "ReducedGrid":
        nodes = np.exp(np.linspace(math.log(eps), math.log(d), node_count))
        nodes[0], nodes[-1] = eps, d
        return cls(nodes, "log_uniform", node_count)

    @classmethod
    def uniform(cls, eps: float, d: float, node_count: int) -> "ReducedGrid":
        nodes = np.linspace(eps, d, node_count)
        return cls(nodes, "uniform", node_count)

    @classmethod
    def for_problem(cls, p: ReducedProblem, nodes_per_period: int = NODES_PER_PERIOD):
        """Log-uniform grid with ``nodes_per_period`` nodes per blink period in ln z."""
        period = p.constants.period if p.constants.regime == SUPERCRITICAL else 2 * math.pi
        span = math.log(p.d / p.eps)
        count = max(int(math.ceil(nodes_per_period * span / period)) + 1, 3)
        return cls.log_uniform(p.eps, p.d, count)


@dataclass
class ReducedForms:
    A_form: Tridiagonal
    M_form: Tridiagonal
    free: np.ndarray  # grid node index of each unknown
    grid: ReducedGrid

    def expand(self, x: np.ndarray) -> np.ndarray:
        """Nodal values on the full grid (zeros at Dirichlet nodes)."""
        out = np.zeros((self.grid.node_count,) + x.shape[1:])
        out[self.free] = x
        return out


_GAUSS = {k: np.polynomial.legendre.leggauss(k) for k in range(2, 8)}


def _element_integrals(z0, z1, n):
    """Per-element ``int p``, and 2x2 blocks ``int q phi_i phi_j``, ``int p phi_i phi_j``."""
    h = z1 - z0
    p_int = (z1 ** (2 * n - 1) - z0 ** (2 * n - 1)) / (2 * n - 1)
    x, w = _GAUSS[min(n + 2, 7)]
    zq = 0.5 * (z0[:, None] + z1[:, None]) + 0.5 * h[:, None] * x[None, :]
    wq = 0.5 * h[:, None] * w[None, :]
    phi0 = (z1[:, None] - zq) / h[:, None]
    phi1 = 1.0 - phi0
    out = []
    for weight in (zq ** (2 * (n - 2)), zq ** (2 * (n - 1))):
        ww = wq * weight
        out.append(((ww * phi0 * phi0).sum(1), (ww * phi0 * phi1).sum(1), (ww * phi1 * phi1).sum(1)))
    return p_int, out[0], out[1]


def assemble_reduced(p: ReducedProblem, g: ReducedGrid) -> ReducedForms:
    """Tridiagonal stiffness-minus-potential form and weighted mass form."""
    z = np.asarray(g.nodes, dtype=float)
    if z[0] != p.eps or z[-1] != p.d or np.any(np.diff(z) <= 0):
        raise AssemblyError("grid must increase strictly from eps to d")
    n = p.constants.n
    A = p.constants.A
    z0, z1 = z[:-1], z[1:]
    h = z1 - z0
    p_int, (q00, q01, q11), (m00, m01, m11) = _element_integrals(z0, z1, n)
    if np.any(p_int <= 0) or np.any(m00 <= 0):
        raise AssemblyError("nonpositive element weight")
    k = p_int / h**2
    N = z.size
    dA = np.zeros(N)
    dM = np.zeros(N)
    dA[:-1] += k - A * q00
    dA[1:] += k - A * q11
    oA = -k - A * q01
    dM[:-1] += m00
    dM[1:] += m11
    oM = m01.copy()
    if p.end_bc == "robin":
        dA[0] -= p.constants.robin_a * p.eps ** (2 * (n - 1))
    free = np.arange(N)
    if p.outer_bc == "dirichlet":
        free = free[:-1]
    if p.end_bc == "dirichlet":
        free = free[1:]
    i0, i1 = free[0], free[-1]
    forms = ReducedForms(
        Tridiagonal(dA[i0:i1 + 1], oA[i0:i1]),
        Tridiagonal(dM[i0:i1 + 1], oM[i0:i1]),
        free,
        g,
    )
    return forms


def reduced_spectrum(p: ReducedProblem, g: ReducedGrid | None = None,
                     tol: float = 1e-8) -> Spectrum:
    """All eigenpairs of the reduced pencil inside ``p.lambda_window``."""
    g = ReducedGrid.for_problem(p) if g is None else g
    forms = assemble_reduced(p, g)
    lo, hi = p.lambda_window
    spec = eigs_window(forms.A_form, forms.M_form, lo, hi, tol=tol)
    spec.meta.update(eps=p.eps, node_count=g.node_count, free=forms.free, grid=g.nodes)
    return spec


def count_below_reduced(p: ReducedProblem, sigma: float, g: ReducedGrid | None = None) -> int:
    from .eigsolve import count_below

    g = ReducedGrid.for_problem(p) if g is None else g
    forms = assemble_reduced(p, g)
    return count_below(forms.A_form, forms.M_form, sigma)


@dataclass
class SweepTable:
    eps: list[float]
    spectra: list[Spectrum]

    def __len__(self):
        return len(self.eps)

    def rows(self):
        """``(eps, index, lambda, residual)`` in deterministic order."""
        for e, s in zip(self.eps, self.spectra):
            for i, (lam, r) in enumerate(zip(s.values, s.residuals)):
                yield e, i, float(lam), float(r)


class SweepError(RuntimeError):
    def __init__(self, eps, cause):
        super().__init__(f"solve failed at eps={eps!r}: {cause}")
        self.eps = eps
        self.cause = cause


def reduced_sweep(p: ReducedProblem, eps_grid, nodes_per_period: int = NODES_PER_PERIOD,
                  tol: float = 1e-8) -> SweepTable:
    eps_grid = [float(e) for e in eps_grid]
    if any(b >= a for a, b in zip(eps_grid, eps_grid[1:])):
        raise ValueError("eps_grid must be strictly decreasing")
    spectra = []
    for e in eps_grid:
        try:
            q = p.at(e)
            spectra.append(reduced_spectrum(q, ReducedGrid.for_problem(q, nodes_per_period), tol))
        except Exception as exc:  # tag with offending eps
            raise SweepError(e, exc) from exc
    return SweepTable(eps_grid, spectra)

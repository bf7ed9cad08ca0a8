"""Symmetric generalized eigensolver ``S x = lam M x`` with inertia certificates.

``S`` may be indefinite, ``M`` must be positive definite.  Every window
returned by :func:`eigs_window` carries the Sylvester inertia counts at its
ends, and the number of eigenpairs must equal their difference.

Three routes share the same contract:

* dense (small pencils): LAPACK ``eigh``; inertia from a Bunch-Kaufman LDL^T,
* sparse: spectrum slicing with shift-invert Lanczos (full
  re-orthogonalization in the M inner product) on a symmetric-mode LU,
* tridiagonal (the 1-D reduced model): Sturm bisection plus inverse iteration.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DENSE_THRESHOLD = 500
PIVOT_FLOOR = 1e-12
MAX_JITTER = 8


class SolverError(RuntimeError):
    """Eigensolver failed; ``partial`` holds whatever was certified so far."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class InertiaMismatchError(SolverError):
    """Converged pairs disagree with the inertia certificate."""


class ZeroPivotError(ArithmeticError):
    """Shift is numerically an eigenvalue; retry with :func:`jitter`."""

    def __init__(self, sigma, pivot):
        super().__init__(f"pivot {pivot:.3e} below floor at sigma={sigma!r}")
        self.sigma = sigma
        self.pivot = pivot


def jitter(sigma: float, attempt: int = 0) -> float:
    """Perturbed shift ``sigma (1 + 1e-6 g) + 1e-9 g`` with ``g = 4**attempt``."""
    g = 4.0 ** attempt
    return sigma * (1.0 + 1e-6 * g) + 1e-9 * g


@dataclass(frozen=True)
class Inertia:
    neg: int
    zero: int
    pos: int


@dataclass
class Tridiagonal:
    """Symmetric tridiagonal matrix stored as main and first off diagonal."""

    diag: np.ndarray
    off: np.ndarray

    def __post_init__(self):
        self.diag = np.asarray(self.diag, dtype=float)
        self.off = np.asarray(self.off, dtype=float)
        if self.off.shape[0] != max(self.diag.shape[0] - 1, 0):
            raise ValueError("off diagonal must have length n - 1")

    @property
    def shape(self):
        return (self.diag.size, self.diag.size)

    def tosparse(self):
        return sp.diags([self.off, self.diag, self.off], [-1, 0, 1], format="csc")

    def toarray(self):
        return self.tosparse().toarray()

    def __matmul__(self, x):
        x = np.asarray(x)
        y = self.diag[:, None] * x if x.ndim == 2 else self.diag * x
        if self.off.size:
            off = self.off[:, None] if x.ndim == 2 else self.off
            y[:-1] += off * x[1:]
            y[1:] += off * x[:-1]
        return y


@dataclass
class Spectrum:
    """Eigenpairs of a pencil inside ``window``, ascending."""

    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    window: tuple[float, float]
    inertia_lo: int
    inertia_hi: int
    backward_errors: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return int(self.values.size)

    @property
    def certified(self) -> bool:
        return len(self) == self.inertia_hi - self.inertia_lo

    @classmethod
    def empty(cls, n, window, inertia_lo, inertia_hi, meta=None):
        return cls(np.zeros(0), np.zeros((n, 0)), np.zeros(0), tuple(window),
                   inertia_lo, inertia_hi, np.zeros(0), dict(meta or {}))


def _norm1(A) -> float:
    if isinstance(A, Tridiagonal):
        return float(np.abs(A.toarray()).sum(axis=0).max()) if A.diag.size < 2000 else \
            float(np.abs(A.diag).max() + 2 * (np.abs(A.off).max() if A.off.size else 0.0))
    if sp.issparse(A):
        return float(abs(A).sum(axis=0).max())
    return float(np.abs(A).sum(axis=0).max())


def residual(S, M, lam: float, x) -> float:
    """``||S x - lam M x||_2 / ||x||_M``."""
    x = np.asarray(x, dtype=float)
    Mx = M @ x
    return float(np.linalg.norm(S @ x - lam * Mx) / np.sqrt(x @ Mx))


def backward_error(S, M, lam, x, normS=None, normM=None) -> float:
    """Normwise relative backward error of an approximate eigenpair."""
    normS = _norm1(S) if normS is None else normS
    normM = _norm1(M) if normM is None else normM
    r = np.linalg.norm(S @ x - lam * (M @ x))
    return float(r / ((normS + abs(lam) * normM) * np.linalg.norm(x)))


# ---------------------------------------------------------------- factorizations


class Factorization:
    """LDL^T-type factorization of ``S - sigma M`` exposing inertia and solves."""

    def __init__(self, sigma, inertia, solve, kind):
        self.sigma = sigma
        self.inertia = inertia
        self.solve = solve
        self.kind = kind


def _dense_inertia(A: np.ndarray, floor: float) -> Inertia:
    _, D, _ = sla.ldl(A, lower=True, hermitian=True)
    ev = _block_diag_eigs(D)
    small = (np.abs(ev) < floor) | (ev == 0)
    if small.any():
        raise ZeroPivotError(None, float(np.abs(ev).min()))
    return Inertia(int((ev < 0).sum()), 0, int((ev > 0).sum()))


def _block_diag_eigs(D):
    n = D.shape[0]
    out = []
    i = 0
    while i < n:
        if i + 1 < n and D[i + 1, i] != 0.0:
            out.extend(np.linalg.eigvalsh(D[i:i + 2, i:i + 2]))
            i += 2
        else:
            out.append(D[i, i])
            i += 1
    return np.asarray(out)


def factorize_shifted(S, M, sigma: float, dense_threshold: int = DENSE_THRESHOLD,
                      pivot_floor: float = PIVOT_FLOOR) -> Factorization:
    """Factor ``S - sigma M``; inertia ``neg`` counts pencil eigenvalues below sigma.

    Raises :class:`ZeroPivotError` when a pivot falls under
    ``pivot_floor * ||S - sigma M||_inf``.
    """
    if isinstance(S, Tridiagonal):
        return _factorize_tridiagonal(S, M, sigma, pivot_floor)
    n = S.shape[0]
    # Symmetric diagonal equilibration is a congruence, so the inertia is
    # unchanged; it keeps the pivot floor meaningful on strongly graded meshes.
    dS = np.abs(S.diagonal()) if sp.issparse(S) else np.abs(np.diag(S))
    dM = np.abs(M.diagonal()) if sp.issparse(M) else np.abs(np.diag(M))
    scale = dS + abs(sigma) * dM
    scale = 1.0 / np.sqrt(np.where(scale > 0, scale, 1.0))
    if n <= dense_threshold:
        A = (_dense(S) - sigma * _dense(M)) * scale[:, None] * scale[None, :]
        floor = pivot_floor * float(np.abs(A).sum(axis=1).max())
        try:
            inertia = _dense_inertia(A, floor)
        except ZeroPivotError as exc:
            raise ZeroPivotError(sigma, exc.pivot) from None
        lu = sla.lu_factor(A, check_finite=False)
        return Factorization(sigma, inertia,
                             lambda b: _scaled(scale, lambda r: sla.lu_solve(lu, r), b), "dense")
    Dg = sp.diags(scale)
    A = (Dg @ (sp.csc_matrix(S) - sigma * sp.csc_matrix(M)) @ Dg).tocsc()
    floor = pivot_floor * float(abs(A).sum(axis=1).max())
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
    except RuntimeError as exc:  # exactly singular
        raise ZeroPivotError(sigma, 0.0) from exc
    if not np.array_equal(lu.perm_r, lu.perm_c):
        # an off-diagonal pivot was forced: the LU is no longer a congruence
        raise ZeroPivotError(sigma, 0.0)
    piv = lu.U.diagonal()
    if np.abs(piv).min() < floor or not np.all(piv):
        raise ZeroPivotError(sigma, float(np.abs(piv).min()))
    neg = int((piv < 0).sum())
    return Factorization(sigma, Inertia(neg, 0, n - neg),
                         lambda b: _scaled(scale, lu.solve, b), "sparse")


def _scaled(scale, solve, b):
    b = np.asarray(b)
    s = scale if b.ndim == 1 else scale[:, None]
    return s * solve(s * b)


def _dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def factorize_with_jitter(S, M, sigma, **kw) -> Factorization:
    """Factor at ``sigma``, retrying at jittered shifts after a pivot breakdown.

    On strongly graded meshes a pivot can be tiny for structural reasons
    (it does not react to the shift).  If the floor-free factorizations at
    ``s`` and ``jitter(s)`` report the same inertia, no eigenvalue separates
    them and the factorization at ``s`` is accepted.
    """
    s = sigma
    relaxed = dict(kw, pivot_floor=0.0)
    for attempt in range(MAX_JITTER):
        try:
            return factorize_shifted(S, M, s, **kw)
        except ZeroPivotError:
            log.debug("small pivot at sigma=%r, jittering", s)
        s_next = jitter(s, attempt)
        try:
            F = factorize_shifted(S, M, s, **relaxed)
            G = factorize_shifted(S, M, s_next, **relaxed)
        except ZeroPivotError:
            s = s_next
            continue
        if F.inertia.neg == G.inertia.neg:
            F.kind += "+structural-pivot"
            return F
        s = s_next
    raise SolverError(f"could not find a regular shift near {sigma!r}")


def count_below(S, M, sigma: float, **kw) -> int:
    """Number of pencil eigenvalues below ``sigma`` (jittered if needed)."""
    return factorize_with_jitter(S, M, sigma, **kw).inertia.neg


# ---------------------------------------------------------------- tridiagonal route


def _sturm_counts(S: Tridiagonal, M: Tridiagonal, shifts) -> np.ndarray:
    shifts = np.atleast_1d(np.asarray(shifts, dtype=float))
    a = S.diag[None, :] - shifts[:, None] * M.diag[None, :]
    b2 = (S.off[None, :] - shifts[:, None] * M.off[None, :]) ** 2
    scale = np.abs(a)
    scale[:, 1:] += np.sqrt(b2)
    scale[:, :-1] += np.sqrt(b2)
    pivmin = np.finfo(float).eps * scale + np.finfo(float).tiny
    count = np.zeros(shifts.size, dtype=int)
    d = a[:, 0].copy()
    for i in range(a.shape[1]):
        if i:
            d = a[:, i] - b2[:, i - 1] / d
        tiny = np.abs(d) < pivmin[:, i]
        d[tiny] = -pivmin[tiny, i]
        count += d < 0
    return count


def _factorize_tridiagonal(S, M, sigma, pivot_floor):
    n = S.diag.size
    inertia_neg = int(_sturm_counts(S, M, [sigma])[0])
    ab = _banded(S, M, sigma)

    def solve(b):
        return sla.solve_banded((1, 1), ab, b)

    return Factorization(sigma, Inertia(inertia_neg, 0, n - inertia_neg), solve, "tridiagonal")


def _banded(S, M, sigma):
    n = S.diag.size
    ab = np.zeros((3, n))
    ab[1] = S.diag - sigma * M.diag
    if n > 1:
        off = S.off - sigma * M.off
        ab[0, 1:] = off
        ab[2, :-1] = off
    return ab


def _eigs_tridiagonal(S, M, lo, hi, tol, seed):
    n = S.diag.size
    n_lo, n_hi = (int(c) for c in _sturm_counts(S, M, [lo, hi]))
    k = n_hi - n_lo
    if k == 0:
        return Spectrum.empty(n, (lo, hi), n_lo, n_hi, {"route": "tridiagonal"})
    idx = np.arange(n_lo, n_hi)
    left = np.full(k, float(lo))
    right = np.full(k, float(hi))
    width = hi - lo
    iters = 0
    while np.max(right - left) > 4 * np.finfo(float).eps * max(abs(lo), abs(hi), 1.0) \
            and iters < 200:
        mid = 0.5 * (left + right)
        c = _sturm_counts(S, M, mid)
        below = c <= idx
        left = np.where(below, mid, left)
        right = np.where(below, right, mid)
        iters += 1
    values = 0.5 * (left + right)
    rng = np.random.default_rng(seed)
    vectors = np.empty((n, k))
    for j, lam in enumerate(values):
        x = rng.standard_normal(n)
        shift = lam + 1e-13 * max(abs(lam), width, 1.0)
        ab = _banded(S, M, shift)
        for _ in range(3):
            x = sla.solve_banded((1, 1), ab, M @ x, check_finite=False)
            x /= np.sqrt(x @ (M @ x))
        vectors[:, j] = x
    values, vectors = _rayleigh_ritz(S, M, vectors)
    return _finish(S, M, values, vectors, (lo, hi), n_lo, n_hi, tol,
                   {"route": "tridiagonal", "bisection_steps": iters})


# ---------------------------------------------------------------- Lanczos


def _lanczos(F, M, lo, hi, want, locked, rng, max_steps, tol):
    """Shift-invert Lanczos on ``(S - sigma M)^{-1} M``; returns Ritz pairs in (lo, hi)."""
    n = M.shape[0]
    sigma = F.sigma
    m_max = min(n - locked.shape[1], max_steps)
    if m_max <= 0:
        return np.zeros(0), np.zeros((n, 0)), 0
    ML = M @ locked if locked.shape[1] else None

    def project(v):
        if ML is not None:
            for _ in range(2):
                v = v - locked @ (ML.T @ v)
        return v

    q = project(rng.standard_normal(n))
    q /= np.sqrt(q @ (M @ q))
    Q = np.zeros((n, m_max + 1))
    MQ = np.zeros((n, m_max + 1))
    Q[:, 0] = q
    MQ[:, 0] = M @ q
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    m = 0
    check_every = 5
    for j in range(m_max):
        r = F.solve(MQ[:, j])
        alpha[j] = MQ[:, j] @ r
        r = r - alpha[j] * Q[:, j]
        if j:
            r = r - beta[j - 1] * Q[:, j - 1]
        for _ in range(2):
            r = r - Q[:, :j + 1] @ (MQ[:, :j + 1].T @ r)
            r = project(r)
        Mr = M @ r
        beta[j] = np.sqrt(max(r @ Mr, 0.0))
        m = j + 1
        done = beta[j] <= 1e-14 * max(np.abs(alpha[:m]).max(), 1e-300)
        if m >= want and (m % check_every == 0 or done or m == m_max):
            theta, s = sla.eigh_tridiagonal(alpha[:m], beta[:m - 1])
            with np.errstate(divide="ignore"):
                lam = sigma + 1.0 / theta
            est = np.abs(beta[j] * s[-1, :])
            inside = (lam > lo) & (lam < hi)
            conv = inside & (est <= tol * np.abs(theta))
            if conv.sum() >= want or done or m == m_max:
                break
        if done:
            break
        Q[:, j + 1] = r / beta[j]
        MQ[:, j + 1] = Mr / beta[j]
    theta, s = sla.eigh_tridiagonal(alpha[:m], beta[:m - 1]) if m > 1 else \
        (alpha[:1], np.ones((1, 1)))
    with np.errstate(divide="ignore"):
        lam = sigma + 1.0 / theta
    inside = (lam > lo) & (lam < hi)
    return lam[inside], Q[:, :m] @ s[:, inside], m


def _rayleigh_ritz(S, M, X):
    if X.shape[1] == 0:
        return np.zeros(0), X
    A = X.T @ (S @ X)
    B = X.T @ (M @ X)
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    w, V = sla.eigh(A, B)
    return w, X @ V


def _finish(S, M, values, vectors, window, n_lo, n_hi, tol, meta):
    normS, normM = _norm1(S), _norm1(M)
    res = np.array([residual(S, M, lam, vectors[:, i]) for i, lam in enumerate(values)])
    bwe = np.array([backward_error(S, M, lam, vectors[:, i], normS, normM)
                    for i, lam in enumerate(values)])
    spec = Spectrum(np.asarray(values), vectors, res, tuple(window), n_lo, n_hi, bwe, meta)
    if len(spec) != n_hi - n_lo:
        raise InertiaMismatchError(
            f"{len(spec)} eigenpairs found but inertia counts {n_hi - n_lo} in {window}", spec)
    bad = bwe > tol
    if bad.any():
        raise SolverError(f"{int(bad.sum())} eigenpairs exceed backward error {tol:g}", spec)
    return spec


def eigs_window(S, M, lo: float, hi: float, tol: float = 1e-8,
                dense_threshold: int = DENSE_THRESHOLD, max_depth: int = 12,
                seed: int = 0) -> Spectrum:
    """All eigenpairs of ``S x = lam M x`` with ``lo < lam < hi``, certified by inertia.

    Vectors are M-orthonormal.  ``tol`` bounds the normwise backward error of
    each pair.  Window ends that coincide with an eigenvalue are nudged by
    :func:`jitter`; the effective window is recorded in ``meta``.
    """
    if not lo < hi:
        raise ValueError("window requires lo < hi")
    if isinstance(S, Tridiagonal):
        lo_eff = _regular_point(S, M, lo, dense_threshold)
        hi_eff = _regular_point(S, M, hi, dense_threshold)
        return _eigs_tridiagonal(S, M, lo_eff, hi_eff, tol, seed)
    n = S.shape[0]
    if n <= dense_threshold:
        return _eigs_dense(S, M, lo, hi, tol, dense_threshold)
    return _eigs_sliced(S, M, lo, hi, tol, dense_threshold, max_depth, seed)


def _regular_point(S, M, x, dense_threshold):
    return factorize_with_jitter(S, M, x, dense_threshold=dense_threshold).sigma


def _eigs_dense(S, M, lo, hi, tol, dense_threshold):
    F_lo = factorize_with_jitter(S, M, lo, dense_threshold=dense_threshold)
    F_hi = factorize_with_jitter(S, M, hi, dense_threshold=dense_threshold)
    lo_eff, hi_eff = F_lo.sigma, F_hi.sigma
    A, B = _dense(S), _dense(M)
    w, V = sla.eigh(A, B)
    keep = (w > lo_eff) & (w < hi_eff)
    meta = {"route": "dense", "window_effective": (lo_eff, hi_eff), "shifts": []}
    return _finish(S, M, w[keep], V[:, keep], (lo, hi), F_lo.inertia.neg,
                   F_hi.inertia.neg, tol, meta)


def _eigs_sliced(S, M, lo, hi, tol, dense_threshold, max_depth, seed):
    S = sp.csc_matrix(S)
    M = sp.csc_matrix(M)
    n = S.shape[0]
    rng = np.random.default_rng(seed)
    F_lo = factorize_with_jitter(S, M, lo, dense_threshold=dense_threshold)
    F_hi = factorize_with_jitter(S, M, hi, dense_threshold=dense_threshold)
    meta = {"route": "sparse", "window_effective": (F_lo.sigma, F_hi.sigma),
            "shifts": [], "lanczos_steps": []}
    found_vals: list[float] = []
    found_vecs: list[np.ndarray] = []
    # Ritz tolerance a bit tighter than the acceptance tolerance
    ritz_tol = 1e-2 * tol

    stack = [(F_lo.sigma, F_hi.sigma, F_lo.inertia.neg, F_hi.inertia.neg, 0)]
    while stack:
        a, b, na, nb, depth = stack.pop()
        want = nb - na
        if want == 0:
            continue
        F = factorize_with_jitter(S, M, 0.5 * (a + b), dense_threshold=dense_threshold)
        meta["shifts"].append(F.sigma)
        mine_v: list[float] = []
        mine_x: list[np.ndarray] = []
        for _ in range(3):
            locked = np.column_stack(mine_x) if mine_x else np.zeros((n, 0))
            lam, X, steps = _lanczos(F, M, a, b, want - len(mine_v), locked, rng,
                                     max_steps=2 * want + 40, tol=ritz_tol)
            meta["lanczos_steps"].append(steps)
            for i, l in enumerate(lam):
                x = X[:, i]
                x = x / np.sqrt(x @ (M @ x))
                if backward_error(S, M, l, x) <= tol:
                    mine_v.append(float(l))
                    mine_x.append(x)
            if len(mine_v) >= want:
                break
        if len(mine_v) == want:
            found_vals.extend(mine_v)
            found_vecs.extend(mine_x)
            continue
        if depth >= max_depth:
            partial = _assemble_partial(S, M, found_vals, found_vecs, lo, hi, F_lo, F_hi, meta)
            raise SolverError(f"window ({a:g}, {b:g}) not resolved after {depth} splits",
                              partial)
        c = F.sigma
        nc = F.inertia.neg
        stack.append((a, c, na, nc, depth + 1))
        stack.append((c, b, nc, nb, depth + 1))

    X = np.column_stack(found_vecs) if found_vecs else np.zeros((n, 0))
    values, vectors = _rayleigh_ritz(S, M, X)
    order = np.argsort(values)
    return _finish(S, M, values[order], vectors[:, order], (lo, hi), F_lo.inertia.neg,
                   F_hi.inertia.neg, tol, meta)


def _assemble_partial(S, M, vals, vecs, lo, hi, F_lo, F_hi, meta):
    n = S.shape[0]
    if not vecs:
        return Spectrum.empty(n, (lo, hi), F_lo.inertia.neg, F_hi.inertia.neg, meta)
    values, vectors = _rayleigh_ritz(S, M, np.column_stack(vecs))
    res = np.array([residual(S, M, l, vectors[:, i]) for i, l in enumerate(values)])
    return Spectrum(values, vectors, res, (lo, hi), F_lo.inertia.neg, F_hi.inertia.neg,
                    None, meta)


def dense_oracle(S, M, lo=-np.inf, hi=np.inf) -> np.ndarray:
    """Reference eigenvalues from LAPACK, for cross-checks."""
    w = sla.eigh(_dense(S), _dense(M), eigvals_only=True)
    return w[(w > lo) & (w < hi)]

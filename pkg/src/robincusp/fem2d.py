"""P1 finite elements for the Robin Laplacian on a triangulated cusp.

The symmetric pencil ``(S, M)`` with ``S = K - a B`` represents

    int grad u . grad v - a int_{Robin part} u v = lam int u v.

Dirichlet conditions (blunt end or symmetry line) are imposed by
eliminating the constrained nodes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh2d import BLUNT_END, OUTER, ROBIN_LATERAL, SYMMETRY, Mesh2D, signed_areas

END_BCS = ("robin", "neumann", "dirichlet")
SYMMETRY_BCS = ("none", "dirichlet_on_symmetry")


class AssemblyError(ValueError):
    pass


def element_matrices(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Local stiffness and consistent mass for one triangle (3x2 vertex array)."""
    K, M = _batch_element_matrices(np.asarray(p, dtype=float)[None])
    return K[0], M[0]


def _batch_element_matrices(p):
    # gradients of barycentric coordinates: rows of inv([[1, y, z]]) transposed
    y, z = p[..., 0], p[..., 1]
    area = 0.5 * ((y[:, 1] - y[:, 0]) * (z[:, 2] - z[:, 0]) - (y[:, 2] - y[:, 0]) * (z[:, 1] - z[:, 0]))
    if np.any(area <= 0):
        raise AssemblyError(f"{int(np.sum(area <= 0))} degenerate or inverted triangles")
    by = np.stack([z[:, 1] - z[:, 2], z[:, 2] - z[:, 0], z[:, 0] - z[:, 1]], axis=1)
    bz = np.stack([y[:, 2] - y[:, 1], y[:, 0] - y[:, 2], y[:, 1] - y[:, 0]], axis=1)
    K = (by[:, :, None] * by[:, None, :] + bz[:, :, None] * bz[:, None, :]) / (4.0 * area[:, None, None])
    M = (np.ones((3, 3)) + np.eye(3))[None] * (area / 12.0)[:, None, None]
    return K, M


def _scatter(rows_idx, local, n):
    i = np.repeat(rows_idx, rows_idx.shape[1], axis=1).ravel()
    j = np.tile(rows_idx, (1, rows_idx.shape[1])).ravel()
    return sp.coo_matrix((local.ravel(), (i, j)), shape=(n, n)).tocsr()


def stiffness_mass(mesh: Mesh2D) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    K, M = _batch_element_matrices(mesh.vertices[mesh.triangles])
    n = mesh.vertices.shape[0]
    return _scatter(mesh.triangles, K, n), _scatter(mesh.triangles, M, n)


def boundary_mass(mesh: Mesh2D, tags) -> sp.csr_matrix:
    """Consistent 1-D mass on the boundary edges carrying any of ``tags``."""
    e = mesh.tagged(tags)
    n = mesh.vertices.shape[0]
    if e.size == 0:
        return sp.csr_matrix((n, n))
    length = np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)
    local = (np.ones((2, 2)) + np.eye(2))[None] * (length / 6.0)[:, None, None]
    return _scatter(e, local, n)


BASES = ("auto", "nodal", "layer")


@dataclass
class FEMProblem:
    S: sp.csr_matrix
    M: sp.csr_matrix
    T: sp.csr_matrix  # vertex values = T @ unknowns
    mesh: Mesh2D
    robin_a: float
    end_bc: str
    symmetry_bc: str
    basis: str

    @property
    def size(self) -> int:
        return self.S.shape[0]

    def expand(self, x: np.ndarray) -> np.ndarray:
        """Vertex values of a coefficient vector (zeros at Dirichlet nodes)."""
        return self.T @ np.asarray(x)

    def coefficients(self, u: np.ndarray) -> np.ndarray:
        """Coefficients reproducing the vertex field ``u`` (exact when ``u`` is admissible)."""
        return self._pinv @ np.asarray(u)

    @property
    def _pinv(self):
        # every column of T holds ones on disjoint-or-nested supports; a left
        # inverse picks one representative vertex per unknown and unwinds means
        if not hasattr(self, "_left_inverse"):
            self._left_inverse = _left_inverse(self)
        return self._left_inverse

    def dump_coordinate(self, which: str = "S") -> str:
        """Lower triangle of ``S`` or ``M`` as ``i j value`` lines."""
        A = sp.tril(getattr(self, which)).tocoo()
        order = np.lexsort((A.col, A.row))
        return "".join(f"{i} {j} {v!r}\n" for i, j, v in
                       zip(A.row[order].tolist(), A.col[order].tolist(), A.data[order].tolist()))


def _left_inverse(p: FEMProblem):
    T = p.T.tocsc()
    n_vert, n = T.shape
    rows, cols, vals = [], [], []
    if p.basis == "nodal":
        for k in range(n):
            rows.append(k)
            cols.append(int(T.indices[T.indptr[k]]))
            vals.append(1.0)
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n_vert))
    means, devs, ref = p._layer_dofs
    for layer, k in means.items():
        rows.append(k)
        cols.append(ref[layer])
        vals.append(1.0)
    for v, (k, layer) in devs.items():
        rows += [k, k]
        cols += [v, ref[layer]]
        vals += [1.0, -1.0]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n_vert))


def _layers(mesh: Mesh2D):
    """Layer id per vertex and the per-triangle layout ``(p, q, r)``.

    ``p, q`` share a layer (the horizontal edge) and ``r`` lies on the
    adjacent one.  Returns None when the mesh is not layered this way.
    """
    layer = mesh.layer_index
    t = mesh.triangles
    lt = layer[t]
    same01 = lt[:, 0] == lt[:, 1]
    same12 = lt[:, 1] == lt[:, 2]
    same20 = lt[:, 2] == lt[:, 0]
    count = same01.astype(int) + same12 + same20
    if np.any(count != 1):
        return None
    r_pos = np.where(same01, 2, np.where(same12, 0, 1))
    p_pos = (r_pos + 1) % 3
    q_pos = (r_pos + 2) % 3
    ar = np.arange(t.shape[0])
    return layer, t[ar, p_pos], t[ar, q_pos], t[ar, r_pos]


def _layer_stiffness(mesh, layout, dof_of):
    """Stiffness in the layer-mean + deviation basis, assembled without cancellation.

    On a triangle with horizontal edge ``pq`` the layer indicator functions
    have gradients ``(0, -+1/dz)`` exactly, so the weak along-z couplings
    never pass through the large cross-width entries.
    """
    layer, p, q, r = layout
    V = mesh.vertices
    y, z = V[:, 0], V[:, 1]
    dz = z[r] - z[p]
    area = 0.5 * np.abs((y[q] - y[p]) * dz)
    sgn = np.sign((y[q] - y[p]) * dz)
    # barycentric gradients of p and q (r has gradient (0, 1/dz))
    twoA = 2.0 * area * sgn
    gp = np.stack([(z[q] - z[r]), (y[r] - y[q])], axis=1) / twoA[:, None]
    gq = np.stack([(z[r] - z[p]), (y[p] - y[r])], axis=1) / twoA[:, None]
    zero = np.zeros_like(dz)
    g_lo = np.stack([zero, -1.0 / dz], axis=1)  # indicator of the pq layer
    g_hi = np.stack([zero, 1.0 / dz], axis=1)   # indicator of r's layer
    nT = p.size
    # local functions: [mean(layer p), mean(layer r), dev p, dev q, dev r]
    G = np.stack([g_lo, g_hi, gp, gq, g_hi], axis=1)
    K = area[:, None, None] * np.einsum("tik,tjk->tij", G, G)
    dofs = np.stack([dof_of["mean"][layer[p]], dof_of["mean"][layer[r]],
                     dof_of["dev"][p], dof_of["dev"][q], dof_of["dev"][r]], axis=1)
    keep = dofs >= 0
    i = np.repeat(dofs, 5, axis=1).ravel()
    j = np.tile(dofs, (1, 5)).ravel()
    mask = (np.repeat(keep, 5, axis=1) & np.tile(keep, (1, 5))).ravel()
    n = dof_of["n"]
    assert nT == dofs.shape[0]
    return sp.coo_matrix((K.ravel()[mask], (i[mask], j[mask])), shape=(n, n)).tocsr()


def assemble_fem(mesh: Mesh2D, a: float, end_bc: str = "robin",
                 symmetry_bc: str = "none", basis: str = "auto") -> FEMProblem:
    """Assemble the Robin-Laplacian pencil on ``mesh``.

    The Robin part of the boundary is the lateral cusp boundary and the head
    boundary, plus the blunt end when ``end_bc == "robin"``.

    ``basis="layer"`` (the default for layered meshes without a symmetry
    constraint) uses per-layer mean values plus nodal deviations as
    unknowns.  It spans the same P1 space, so the pencil is congruent to the
    nodal one, but stays accurate on cells with extreme aspect ratios.
    """
    if end_bc not in END_BCS:
        raise AssemblyError(f"end_bc must be one of {END_BCS}")
    if symmetry_bc not in SYMMETRY_BCS:
        raise AssemblyError(f"symmetry_bc must be one of {SYMMETRY_BCS}")
    if basis not in BASES:
        raise AssemblyError(f"basis must be one of {BASES}")
    has_sym = bool(np.any(mesh.edge_tags == SYMMETRY))
    if symmetry_bc != "none" and not has_sym:
        raise AssemblyError("symmetry condition requested but the mesh has no SYMMETRY edges")
    layout = _layers(mesh) if basis != "nodal" else None
    if basis == "layer" and (layout is None or symmetry_bc != "none"):
        raise AssemblyError("layer basis needs a layered mesh without symmetry constraint")
    if basis == "auto":
        basis = "layer" if layout is not None and symmetry_bc == "none" else "nodal"

    robin = [ROBIN_LATERAL, OUTER] + ([BLUNT_END] if end_bc == "robin" else [])
    B = boundary_mass(mesh, robin)
    n_vert = mesh.vertices.shape[0]
    fixed = set()
    if end_bc == "dirichlet":
        fixed.update(mesh.tagged_nodes([BLUNT_END]).tolist())
    if symmetry_bc == "dirichlet_on_symmetry":
        fixed.update(mesh.tagged_nodes([SYMMETRY]).tolist())

    if basis == "nodal":
        K, M = stiffness_mass(mesh)
        free = np.setdiff1d(np.arange(n_vert), np.fromiter(fixed, dtype=np.int64, count=len(fixed)))
        if free.size == 0:
            raise AssemblyError("no free unknowns")
        T = sp.csr_matrix((np.ones(free.size), (free, np.arange(free.size))),
                          shape=(n_vert, free.size))
        S = (K - a * B)[free][:, free].tocsr()
        M = M[free][:, free].tocsr()
        problem = FEMProblem(S, M, T, mesh, float(a), end_bc, symmetry_bc, "nodal")
    else:
        layer = layout[0]
        n_layers = int(layer.max()) + 1
        y = mesh.vertices[:, 0]
        # reference vertex per layer: the one closest to the axis
        order = np.lexsort((np.abs(y), layer))
        first = np.searchsorted(layer[order], np.arange(n_layers))
        ref = order[first]
        fixed_layers = set(int(layer[v]) for v in fixed)
        for L in fixed_layers:
            if not np.all(np.isin(np.flatnonzero(layer == L), list(fixed))):
                raise AssemblyError("layer basis supports Dirichlet data on whole layers only")
        mean_dof = np.full(n_layers, -1)
        dev_dof = np.full(n_vert, -1)
        k = 0
        for L in range(n_layers):
            if L in fixed_layers:
                continue
            mean_dof[L] = k
            k += 1
            verts = order[first[L]:(first[L + 1] if L + 1 < n_layers else n_vert)]
            for v in verts[1:]:
                dev_dof[v] = k
                k += 1
        dof_of = {"mean": mean_dof, "dev": dev_dof, "n": k}
        rows = np.concatenate([np.flatnonzero(mean_dof[layer] >= 0), np.flatnonzero(dev_dof >= 0)])
        cols = np.concatenate([mean_dof[layer][mean_dof[layer] >= 0], dev_dof[dev_dof >= 0]])
        T = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n_vert, k))
        _, M_nodal = stiffness_mass(mesh)
        K = _layer_stiffness(mesh, layout, dof_of)
        S = (K - a * (T.T @ B @ T)).tocsr()
        M = (T.T @ M_nodal @ T).tocsr()
        S = 0.5 * (S + S.T)
        M = 0.5 * (M + M.T)
        problem = FEMProblem(S.tocsr(), M.tocsr(), T, mesh, float(a), end_bc, symmetry_bc, "layer")
        problem._layer_dofs = (
            {L: int(mean_dof[L]) for L in range(n_layers) if mean_dof[L] >= 0},
            {int(v): (int(dev_dof[v]), int(layer[v])) for v in np.flatnonzero(dev_dof >= 0)},
            {L: int(ref[L]) for L in range(n_layers)},
        )
    problem.S.sort_indices()
    problem.M.sort_indices()
    return problem


# ---------------------------------------------------------------- post-processing


def layer_profile(mesh: Mesh2D, u: np.ndarray):
    """Cross-sectional means of a vertex field on every z-layer.

    Each layer is a row of vertices at one z; the mean is the trapezoidal
    integral along the chord divided by the chord length (exact for P1
    data restricted to the layer).
    """
    u = np.asarray(u)
    z = mesh.vertices[:, 1]
    y = mesh.vertices[:, 0]
    order = np.lexsort((y, z))
    zs, start = np.unique(z[order], return_index=True)
    stops = np.append(start[1:], order.size)
    means = np.empty(zs.size, dtype=np.result_type(u.dtype, float))
    for k, (s0, s1) in enumerate(zip(start, stops)):
        idx = order[s0:s1]
        yy = y[idx]
        if idx.size == 1 or yy[-1] == yy[0]:
            means[k] = u[idx].mean()
            continue
        means[k] = np.trapezoid(u[idx], yy) / (yy[-1] - yy[0])
    return zs, means


def cross_section_average(mesh: Mesh2D, u: np.ndarray, z_samples) -> np.ndarray:
    """Mean of ``u`` over the cross-section at each ``z`` (linear between layers)."""
    zs, means = layer_profile(mesh, u)
    z_samples = np.asarray(z_samples, dtype=float)
    if np.any(z_samples < zs[0]) or np.any(z_samples > zs[-1]):
        raise ValueError("z sample outside the meshed range")
    if np.iscomplexobj(means):
        return np.interp(z_samples, zs, means.real) + 1j * np.interp(z_samples, zs, means.imag)
    return np.interp(z_samples, zs, means)


def tip_mass_fraction(mesh: Mesh2D, u: np.ndarray, z_cut: float) -> float:
    """Share of ``int u^2`` carried by triangles whose centroid lies below ``z_cut``."""
    u = np.asarray(u)
    _, Me = _batch_element_matrices(mesh.vertices[mesh.triangles])
    ue = u[mesh.triangles]
    e_mass = np.einsum("ti,tij,tj->t", ue.conj(), Me, ue).real
    zc = mesh.vertices[mesh.triangles, 1].mean(axis=1)
    total = e_mass.sum()
    if total <= 0:
        raise ValueError("field has zero mass")
    return float(e_mass[zc < z_cut].sum() / total)


def total_area(mesh: Mesh2D) -> float:
    return float(signed_areas(mesh.vertices, mesh.triangles).sum())

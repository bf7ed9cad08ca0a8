"""Structured triangulation of the planar blunted cusp.

The domain is the cusp ``{eps < z < d, |y| < (h/2) z^2}`` closed by a
rectangular head ``{d < z < d + L, |y| < (h/2) d^2}`` flush with the mouth.
Cusp layers are geometric in z (uniform in ln z), anchored at the mouth, so
meshes for different ``eps`` coincide away from the tip.  Optionally the
layer step is capped to keep cells near the tip shape regular.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ROBIN_LATERAL = "ROBIN_LATERAL"
BLUNT_END = "BLUNT_END"
OUTER = "OUTER"
SYMMETRY = "SYMMETRY"
TAGS = (ROBIN_LATERAL, BLUNT_END, OUTER, SYMMETRY)


class MeshSpecError(ValueError):
    pass


class MeshQualityError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class MeshParseError(ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class DomainSpec:
    omega_halfwidth: float = 1.0
    d: float = 1.0
    head_length: float = 1.0
    eps: float = 0.1
    symmetry_split: bool = False

    def __post_init__(self):
        if not 0.0 < self.eps < self.d:
            raise MeshSpecError(f"need 0 < eps < d, got eps={self.eps}, d={self.d}")
        if self.head_length <= 0 or self.omega_halfwidth <= 0:
            raise MeshSpecError("head length and half-width must be positive")

    @property
    def h(self) -> float:
        return 2.0 * self.omega_halfwidth

    def area(self) -> float:
        """Exact area of the (half) domain."""
        h, d, e, L = self.h, self.d, self.eps, self.head_length
        full = h / 3.0 * (d**3 - e**3) + h * d * d * L
        return 0.5 * full if self.symmetry_split else full


@dataclass
class Mesh2D:
    vertices: np.ndarray  # (N, 2) columns (y, z)
    triangles: np.ndarray  # (T, 3), counter-clockwise in the (y, z) plane
    edges: np.ndarray  # (B, 2) boundary edges
    edge_tags: np.ndarray  # (B,) tag strings

    @property
    def boundary_edges(self):
        return [(int(i), int(j), str(t)) for (i, j), t in zip(self.edges, self.edge_tags)]

    @property
    def layer_index(self) -> np.ndarray:
        """Rank of each vertex's z among the distinct z values (layer 0 at the tip)."""
        _, inv = np.unique(self.vertices[:, 1], return_inverse=True)
        return inv

    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)

    def tagged(self, tags) -> np.ndarray:
        tags = set(tags)
        unknown = tags - set(TAGS)
        if unknown:
            raise KeyError(f"unknown boundary tags {sorted(unknown)}")
        mask = np.isin(self.edge_tags, list(tags))
        return self.edges[mask]

    def tagged_nodes(self, tags) -> np.ndarray:
        return np.unique(self.tagged(tags).ravel())

    def __eq__(self, other):
        if not isinstance(other, Mesh2D):
            return NotImplemented
        return (np.array_equal(self.vertices, other.vertices)
                and np.array_equal(self.triangles, other.triangles)
                and np.array_equal(self.edges, other.edges)
                and np.array_equal(self.edge_tags, other.edge_tags))


def signed_areas(vertices, triangles):
    p = vertices[triangles]
    return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))


def cusp_layers(eps, d, h, ny, layers_per_period, period=2 * math.pi, max_aspect=2.0):
    """Layer heights from the mouth ``d`` down to ``eps`` (descending)."""
    ratio = math.exp(-period / layers_per_period)
    z = [d]
    steps = []
    while True:
        zj = z[-1]
        step = zj * (1.0 - ratio)
        if max_aspect is not None:
            step = min(step, max_aspect * h * zj * zj / (ny - 1))
        if zj - step <= eps:
            break
        z.append(zj - step)
        steps.append(step)
    if len(z) > 1 and z[-1] - eps < 0.5 * steps[-1]:
        z[-1] = eps
    else:
        z.append(eps)
    return np.array(z)


def build_mesh(spec: DomainSpec, layers_per_period: int = 48, ny: int = 9, head_res: int = 4,
               period: float = 2 * math.pi, max_aspect: float | None = 2.0,
               min_angle_floor: float = 15.0) -> Mesh2D:
    """Graded structured mesh of the blunted cusp plus head.

    ``period`` is the ln z length resolved by ``layers_per_period`` layers
    (pi / mu0 for the physics of interest).  ``max_aspect`` caps the layer
    step at that multiple of the local cross spacing; ``None`` keeps pure
    geometric layering (strongly anisotropic cells near the tip).
    """
    if layers_per_period < 16:
        raise MeshSpecError("layers_per_period must be >= 16")
    if ny < 3:
        raise MeshSpecError("ny must be >= 3")
    if head_res < 1:
        raise MeshSpecError("head_res must be >= 1")
    if spec.symmetry_split and ny % 2 == 0:
        raise MeshSpecError("symmetry split needs an odd ny (node column on y = 0)")
    h, d = spec.h, spec.d
    zc = cusp_layers(spec.eps, d, h, ny, layers_per_period, period, max_aspect)[::-1]
    zh = d + spec.head_length * np.arange(1, head_res + 1) / head_res
    z = np.concatenate([zc, zh])
    n_cusp = zc.size

    xi = np.linspace(-1.0, 1.0, ny)
    xi[(ny - 1) // 2] = 0.0 if ny % 2 else xi[(ny - 1) // 2]
    if spec.symmetry_split:
        xi = xi[(ny - 1) // 2:]
    ncol = xi.size
    width = np.where(np.arange(z.size) < n_cusp, 0.5 * h * z**2, 0.5 * h * d * d)
    Y = width[:, None] * xi[None, :]
    Z = np.broadcast_to(z[:, None], Y.shape)
    vertices = np.column_stack([Y.ravel(), Z.ravel()])

    def vid(layer, col):
        return layer * ncol + col

    tris = []
    for k in range(z.size - 1):
        for j in range(ncol - 1):
            a, b = vid(k, j), vid(k, j + 1)
            c, e = vid(k + 1, j), vid(k + 1, j + 1)
            if xi[j] >= 0.0:  # shorter diagonal under the outward shear
                tris.append((a, b, c))
                tris.append((b, e, c))
            else:
                tris.append((a, b, e))
                tris.append((a, e, c))
    triangles = np.array(tris, dtype=np.int64)
    ar = signed_areas(vertices, triangles)
    flip = ar < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]

    edges, tags = [], []
    last = z.size - 1
    for j in range(ncol - 1):
        edges.append((vid(0, j), vid(0, j + 1)))
        tags.append(BLUNT_END)
    for k in range(z.size - 1):
        side = ROBIN_LATERAL if k < n_cusp - 1 else OUTER
        edges.append((vid(k, ncol - 1), vid(k + 1, ncol - 1)))
        tags.append(side)
        edges.append((vid(k, 0), vid(k + 1, 0)))
        tags.append(SYMMETRY if spec.symmetry_split else side)
    for j in range(ncol - 1):
        edges.append((vid(last, j), vid(last, j + 1)))
        tags.append(OUTER)
    mesh = Mesh2D(vertices, triangles, np.array(edges, dtype=np.int64), np.array(tags))

    if min_angle_floor:
        report = mesh_quality(mesh)
        if report.inverted or report.min_angle < min_angle_floor:
            raise MeshQualityError(
                f"min angle {report.min_angle:.2f} deg below floor {min_angle_floor} deg", report)
    return mesh


def rectangle_mesh(width: float, length: float, nx: int, nz: int) -> Mesh2D:
    """Uniform right-triangle mesh of ``[0, width] x [0, length]``, all edges OUTER."""
    y = np.linspace(0.0, width, nx + 1)
    z = np.linspace(0.0, length, nz + 1)
    Y, Z = np.meshgrid(y, z)
    vertices = np.column_stack([Y.ravel(), Z.ravel()])
    vid = lambda k, j: k * (nx + 1) + j  # noqa: E731
    tris = []
    for k in range(nz):
        for j in range(nx):
            tris.append((vid(k, j), vid(k, j + 1), vid(k + 1, j + 1)))
            tris.append((vid(k, j), vid(k + 1, j + 1), vid(k + 1, j)))
    edges = []
    for j in range(nx):
        edges += [(vid(0, j), vid(0, j + 1)), (vid(nz, j), vid(nz, j + 1))]
    for k in range(nz):
        edges += [(vid(k, 0), vid(k + 1, 0)), (vid(k, nx), vid(k + 1, nx))]
    return Mesh2D(vertices, np.array(tris, dtype=np.int64), np.array(edges, dtype=np.int64),
                  np.array([OUTER] * len(edges)))


# ---------------------------------------------------------------- quality and topology


@dataclass
class QualityReport:
    min_angle: float
    max_angle: float
    max_aspect: float
    inverted: list = field(default_factory=list)

    def ok(self, floor: float) -> bool:
        return not self.inverted and self.min_angle >= floor


def mesh_quality(m: Mesh2D) -> QualityReport:
    """Angles in degrees, aspect = longest edge / shortest altitude, inverted triangles."""
    p = m.vertices[m.triangles]
    ar = signed_areas(m.vertices, m.triangles)
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    ln = np.linalg.norm(e, axis=2)
    angles = []
    for i in range(3):
        u = -e[:, (i + 2) % 3]
        v = e[:, (i + 1) % 3]
        cosang = (u * v).sum(1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    angles = np.array(angles)
    lmax = ln.max(axis=1)
    with np.errstate(divide="ignore"):
        aspect = lmax * lmax / (2.0 * np.abs(ar))
    inverted = [int(i) for i in np.flatnonzero(ar <= 0)]
    return QualityReport(float(angles.min()), float(angles.max()), float(aspect.max()), inverted)


def unique_edges(m: Mesh2D):
    t = m.triangles
    all_e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(all_e, axis=0, return_counts=True)
    return uniq, counts


def euler_characteristic(m: Mesh2D) -> int:
    uniq, _ = unique_edges(m)
    used = np.unique(m.triangles)
    return int(used.size - uniq.shape[0] + m.triangles.shape[0])


def boundary_loops(m: Mesh2D) -> list[list[int]]:
    """Boundary-edge indices grouped into closed loops."""
    adj: dict[int, list[int]] = {}
    for k, (i, j) in enumerate(m.edges):
        adj.setdefault(int(i), []).append(k)
        adj.setdefault(int(j), []).append(k)
    if any(len(v) != 2 for v in adj.values()):
        raise ValueError("boundary is not a union of closed loops")
    seen = set()
    loops = []
    for start in range(len(m.edges)):
        if start in seen:
            continue
        loop = []
        k = start
        v = int(m.edges[k][0])
        while k not in seen:
            seen.add(k)
            loop.append(k)
            i, j = (int(x) for x in m.edges[k])
            v = j if i == v else i
            k = next(e for e in adj[v] if e != k)
        loops.append(loop)
    return loops


def boundary_is_tagged(m: Mesh2D) -> bool:
    """Tagged edges coincide with the edges owned by exactly one triangle."""
    uniq, counts = unique_edges(m)
    bnd = {tuple(e) for e in uniq[counts == 1]}
    tagged = [tuple(sorted(map(int, e))) for e in m.edges]
    return len(tagged) == len(set(tagged)) and set(tagged) == bnd


# ---------------------------------------------------------------- text format


def write_mesh(m: Mesh2D) -> str:
    lines = [f"vertices {m.vertices.shape[0]}"]
    lines += [f"{y!r} {z!r}" for y, z in m.vertices.tolist()]
    lines.append(f"triangles {m.triangles.shape[0]}")
    lines += [f"{i} {j} {k}" for i, j, k in m.triangles.tolist()]
    lines.append(f"boundary_edges {m.edges.shape[0]}")
    lines += [f"{i} {j} {t}" for (i, j), t in zip(m.edges.tolist(), m.edge_tags.tolist())]
    return "\n".join(lines) + "\n"


def read_mesh(text: str) -> Mesh2D:
    rows = text.splitlines()
    pos = 0

    def header(name):
        nonlocal pos
        if pos >= len(rows):
            raise MeshParseError(pos + 1, f"missing '{name}' header")
        parts = rows[pos].split()
        if len(parts) != 2 or parts[0] != name:
            raise MeshParseError(pos + 1, f"expected '{name} <count>'")
        try:
            count = int(parts[1])
        except ValueError:
            raise MeshParseError(pos + 1, f"bad count {parts[1]!r}") from None
        if count < 0:
            raise MeshParseError(pos + 1, "negative count")
        pos += 1
        return count

    def block(count, width, conv):
        nonlocal pos
        out = []
        for _ in range(count):
            if pos >= len(rows):
                raise MeshParseError(pos + 1, "unexpected end of file")
            parts = rows[pos].split()
            if len(parts) != width:
                raise MeshParseError(pos + 1, f"expected {width} fields, got {len(parts)}")
            try:
                out.append(conv(parts))
            except ValueError as exc:
                raise MeshParseError(pos + 1, str(exc)) from None
            pos += 1
        return out

    nv = header("vertices")
    verts = block(nv, 2, lambda p: (float(p[0]), float(p[1])))
    nt = header("triangles")
    if nt == 0:
        raise MeshParseError(pos, "mesh has no triangles")
    tris = block(nt, 3, lambda p: tuple(int(x) for x in p))
    nb = header("boundary_edges")

    def edge(p):
        if p[2] not in TAGS:
            raise ValueError(f"unknown tag {p[2]!r}")
        return int(p[0]), int(p[1]), p[2]

    bnd = block(nb, 3, edge)
    if any(r.strip() for r in rows[pos:]):
        raise MeshParseError(pos + 1, "trailing content")
    tri = np.array(tris, dtype=np.int64)
    if tri.min() < 0 or tri.max() >= nv:
        raise MeshParseError(nv + 3, "triangle references a missing vertex")
    return Mesh2D(np.array(verts, dtype=float).reshape(-1, 2), tri,
                  np.array([(i, j) for i, j, _ in bnd], dtype=np.int64).reshape(-1, 2),
                  np.array([t for _, _, t in bnd]))

"""Conforming triangular meshes of polygonal obstacles and their boundaries.

A :class:`Mesh` triangulates one or more disjoint polygonal components;
:func:`extract_boundary` derives the inherited panel partition of the
boundary with outward normals, which the boundary-element spaces live on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh",
    "BoundaryMesh",
    "MeshError",
    "generate_square_mesh",
    "refine_uniform",
    "extract_boundary",
    "load_mesh",
    "save_mesh",
    "boxes_mesh",
]


class MeshError(ValueError):
    """Raised when a mesh violates a structural invariant."""


def _signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    return 0.5 * np.cross(b - a, c - a)


def _edge_key(i: int, j: int):
    return (i, j) if i < j else (j, i)


@dataclass
class Mesh:
    """Triangulation of a union of disjoint polygonal components.

    Attributes
    ----------
    vertices : np.ndarray, shape (V, 2)
    triangles : np.ndarray, shape (T, 3)
        Vertex indices in counterclockwise order.
    component_id : np.ndarray, shape (T,)
        Label of the connected component each triangle belongs to.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    component_id: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.component_id = np.asarray(self.component_id, dtype=np.int64)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_components(self) -> int:
        return len(np.unique(self.component_id))

    def areas(self) -> np.ndarray:
        return _signed_areas(self.vertices, self.triangles)

    def validate(self) -> None:
        """Check orientation, conformity and component labelling."""
        if self.triangles.shape[1] != 3 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be (V, 2) and triangles (T, 3)")
        if self.component_id.shape[0] != self.n_triangles:
            raise MeshError("component_id length does not match triangle count")
        if self.triangles.min() < 0 or self.triangles.max() >= self.n_vertices:
            raise MeshError("triangle refers to a nonexistent vertex")
        areas = self.areas()
        if np.any(areas <= 0):
            bad = int(np.argmin(areas))
            raise MeshError(f"triangle {bad} has non-positive area {areas[bad]:.3e}")
        # Duplicate vertices break conformity.
        _, counts = np.unique(
            np.round(self.vertices, 12), axis=0, return_counts=True
        )
        if np.any(counts > 1):
            raise MeshError("mesh contains duplicate vertices")
        edge_count = self.edge_counts()
        if np.any(edge_count > 2):
            raise MeshError("non-manifold edge shared by more than two triangles")
        # Component labels must match edge connectivity exactly.
        computed = _connected_components(self.triangles)
        for label in np.unique(self.component_id):
            members = np.unique(computed[self.component_id == label])
            if len(members) != 1:
                raise MeshError(f"component label {label} is not edge-connected")
        for comp in np.unique(computed):
            labels = np.unique(self.component_id[computed == comp])
            if len(labels) != 1:
                raise MeshError("one connected component carries several labels")
        # Closures of distinct components must not intersect.
        for la in np.unique(self.component_id):
            va = set(self.triangles[self.component_id == la].ravel())
            for lb in np.unique(self.component_id):
                if lb <= la:
                    continue
                vb = set(self.triangles[self.component_id == lb].ravel())
                if va & vb:
                    raise MeshError(
                        f"components {la} and {lb} share vertices (closures intersect)"
                    )
        # Hanging nodes: a boundary edge may not contain another boundary vertex.
        bedges = [e for e, c in self._edge_map().items() if c == 1]
        bverts = np.unique(np.array(bedges).ravel()) if bedges else np.array([], int)
        pts = self.vertices[bverts]
        for (i, j) in bedges:
            a, b = self.vertices[i], self.vertices[j]
            t = b - a
            L2 = t @ t
            rel = pts - a
            s = (rel @ t) / L2
            off = rel - s[:, None] * t[None, :]
            on_open = (
                (np.abs(off).max(axis=1) < 1e-12)
                & (s > 1e-12)
                & (s < 1 - 1e-12)
            )
            if np.any(on_open):
                raise MeshError(f"hanging node on boundary edge ({i}, {j})")

    def _edge_map(self) -> dict:
        counts: dict = {}
        for tri in self.triangles:
            for k in range(3):
                e = _edge_key(int(tri[k]), int(tri[(k + 1) % 3]))
                counts[e] = counts.get(e, 0) + 1
        return counts

    def edge_counts(self) -> np.ndarray:
        return np.array(list(self._edge_map().values()))


def _connected_components(triangles: np.ndarray) -> np.ndarray:
    """Label triangles by edge-connectivity (union-find)."""
    n = triangles.shape[0]
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner: dict = {}
    for t in range(n):
        for k in range(3):
            e = _edge_key(int(triangles[t, k]), int(triangles[t, (k + 1) % 3]))
            if e in owner:
                ra, rb = find(owner[e]), find(t)
                if ra != rb:
                    parent[rb] = ra
            else:
                owner[e] = t
    roots = np.array([find(i) for i in range(n)])
    _, labels = np.unique(roots, return_inverse=True)
    return labels


@dataclass
class BoundaryMesh:
    """Panel partition of the boundary inherited from a volume mesh.

    Panels are ordered pairs of volume-vertex indices such that the
    outward unit normal points into the exterior domain.
    """

    vertices: np.ndarray          # shared with the parent Mesh
    panels: np.ndarray            # (P, 2) volume vertex ids, oriented
    loop_id: np.ndarray           # (P,)
    component_id: np.ndarray      # (P,)
    normals: np.ndarray = field(init=False)
    tangents: np.ndarray = field(init=False)
    lengths: np.ndarray = field(init=False)
    midpoints: np.ndarray = field(init=False)

    def __post_init__(self):
        a = self.vertices[self.panels[:, 0]]
        b = self.vertices[self.panels[:, 1]]
        t = b - a
        self.lengths = np.linalg.norm(t, axis=1)
        self.tangents = t / self.lengths[:, None]
        # Interior lies to the left of the oriented edge, so rotating the
        # tangent by -90 degrees points outward.
        self.normals = np.column_stack([self.tangents[:, 1], -self.tangents[:, 0]])
        self.midpoints = 0.5 * (a + b)

    @property
    def n_panels(self) -> int:
        return self.panels.shape[0]

    @property
    def n_loops(self) -> int:
        return len(np.unique(self.loop_id))

    def endpoints(self):
        return self.vertices[self.panels[:, 0]], self.vertices[self.panels[:, 1]]


def generate_square_mesh(levels: int = 0) -> Mesh:
    """Uniform triangulation of [-0.5, 0.5]^2.

    The base grid is 4x4 squares, each split into two triangles, so
    level 0 has 32 elements and 16 boundary panels; each level quadruples
    the element count.
    """
    if levels < 0:
        raise ValueError("levels must be >= 0")
    n = 4 * 2**levels
    coords = np.linspace(-0.5, 0.5, n + 1)
    X, Y = np.meshgrid(coords, coords, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (n + 1) + j

    tris = []
    for i in range(n):
        for j in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    triangles = np.array(tris, dtype=np.int64)
    return Mesh(vertices, triangles, np.zeros(len(triangles), dtype=np.int64))


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: split every triangle into four congruent children."""
    verts = [mesh.vertices]
    next_id = mesh.n_vertices
    midpoint_of: dict = {}
    new_pts = []

    def mid(i, j):
        nonlocal next_id
        e = _edge_key(i, j)
        if e not in midpoint_of:
            midpoint_of[e] = next_id
            new_pts.append(0.5 * (mesh.vertices[i] + mesh.vertices[j]))
            next_id += 1
        return midpoint_of[e]

    tris = []
    comps = []
    for t, tri in enumerate(mesh.triangles):
        v0, v1, v2 = (int(v) for v in tri)
        m01, m12, m20 = mid(v0, v1), mid(v1, v2), mid(v2, v0)
        tris.extend(
            [(v0, m01, m20), (m01, v1, m12), (m20, m12, v2), (m01, m12, m20)]
        )
        comps.extend([mesh.component_id[t]] * 4)
    vertices = np.vstack([mesh.vertices, np.array(new_pts).reshape(-1, 2)])
    return Mesh(vertices, np.array(tris, dtype=np.int64), np.array(comps, dtype=np.int64))


def extract_boundary(mesh: Mesh) -> BoundaryMesh:
    """Collect the edges belonging to exactly one triangle, oriented outward.

    The panels are exactly the boundary trace of the volume triangulation:
    both endpoints of every panel are volume-mesh vertices.
    """
    seen: dict = {}
    oriented: dict = {}
    comp_of: dict = {}
    for t, tri in enumerate(mesh.triangles):
        for k in range(3):
            i, j = int(tri[k]), int(tri[(k + 1) % 3])
            e = _edge_key(i, j)
            seen[e] = seen.get(e, 0) + 1
            oriented[e] = (i, j)
            comp_of[e] = int(mesh.component_id[t])
    if any(c > 2 for c in seen.values()):
        raise MeshError("non-manifold boundary: an edge is shared by > 2 triangles")

    boundary = [(oriented[e], comp_of[e]) for e, c in seen.items() if c == 1]
    if not boundary:
        raise MeshError("mesh has no boundary edges")

    # Chain oriented edges into closed loops.
    start_of = {edge[0]: (edge, comp) for edge, comp in boundary}
    panels, loop_ids, comp_ids = [], [], []
    visited = set()
    loop = 0
    # Deterministic loop ordering: start from the smallest unvisited vertex.
    for first in sorted(start_of):
        if first in visited:
            continue
        v = first
        while True:
            edge, comp = start_of[v]
            panels.append(edge)
            loop_ids.append(loop)
            comp_ids.append(comp)
            visited.add(v)
            v = edge[1]
            if v == first:
                break
            if v not in start_of or v in visited:
                raise MeshError("boundary edges do not close into loops")
        loop += 1
    return BoundaryMesh(
        mesh.vertices,
        np.array(panels, dtype=np.int64),
        np.array(loop_ids, dtype=np.int64),
        np.array(comp_ids, dtype=np.int64),
    )


def save_mesh(mesh: Mesh, path) -> None:
    """Write the plain-text vertex/triangle listing."""
    with open(path, "w") as fh:
        fh.write(f"vertices {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x!r} {y!r}\n")
        fh.write(f"triangles {mesh.n_triangles}\n")
        for tri, c in zip(mesh.triangles, mesh.component_id):
            fh.write(f"{tri[0]} {tri[1]} {tri[2]} {c}\n")


def load_mesh(path) -> Mesh:
    """Read a mesh file and validate all structural invariants."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    try:
        head = lines[0].split()
        if head[0] != "vertices":
            raise ValueError("expected 'vertices N' header")
        nv = int(head[1])
        vertices = np.array(
            [[float(tok) for tok in lines[1 + i].split()] for i in range(nv)]
        )
        head = lines[1 + nv].split()
        if head[0] != "triangles":
            raise ValueError("expected 'triangles M' header")
        nt = int(head[1])
        rows = [lines[2 + nv + i].split() for i in range(nt)]
        triangles = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows])
        comp = np.array([int(r[3]) for r in rows])
    except (IndexError, ValueError) as exc:
        raise MeshError(f"cannot parse mesh file {path}: {exc}") from exc
    mesh = Mesh(vertices, triangles, comp)
    mesh.validate()
    return mesh


def boxes_mesh(boxes, h: float) -> Mesh:
    """Mesh a union of axis-aligned boxes on a shared lattice of pitch h.

    Box corners must sit on the lattice so that touching boxes merge into
    one conforming component; components and their labels are recomputed
    from edge connectivity.
    """
    if h <= 0:
        raise ValueError("pitch h must be positive")
    vert_id: dict = {}
    vertices = []

    def vid(ix, iy):
        key = (ix, iy)
        if key not in vert_id:
            vert_id[key] = len(vertices)
            vertices.append((ix * h, iy * h))
        return vert_id[key]

    tris = []
    covered = set()
    for (x0, y0, x1, y1) in boxes:
        for lo, hi, name in ((x0, x1, "x"), (y0, y1, "y")):
            for val in (lo, hi):
                if abs(val / h - round(val / h)) > 1e-9:
                    raise MeshError(
                        f"box {name}-coordinate {val} is not a multiple of pitch {h}"
                    )
        ix0, ix1 = round(x0 / h), round(x1 / h)
        iy0, iy1 = round(y0 / h), round(y1 / h)
        if ix1 <= ix0 or iy1 <= iy0:
            raise MeshError("box has non-positive extent")
        for i in range(ix0, ix1):
            for j in range(iy0, iy1):
                if (i, j) in covered:
                    raise MeshError("boxes overlap")
                covered.add((i, j))
                v00, v10 = vid(i, j), vid(i + 1, j)
                v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
    triangles = np.array(tris, dtype=np.int64)
    comp = _connected_components(triangles)
    mesh = Mesh(np.array(vertices), triangles, comp)
    mesh.validate()
    return mesh

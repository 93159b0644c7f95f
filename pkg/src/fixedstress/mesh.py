"""Structured triangular meshes of rectangles and the L-shaped domain.

Every grid cell is split by its bottom-left to top-right diagonal, triangles are
stored counterclockwise and boundary edges carry a string tag naming the side
(``"bottom"``, ``"right"``, ``"top"``, ``"left"``) or, for the L-shape, the
segment ``"G1"`` ... ``"G6"``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GEOM_TOL = 1e-12

RECTANGLE_TAGS = ("bottom", "right", "top", "left")
L_SHAPE_TAGS = ("G1", "G2", "G3", "G4", "G5", "G6")


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulation with tagged boundary edges.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    boundary_edges : (nb, 2) int array of vertex indices
    boundary_tags : tuple of str, one per boundary edge
    domain_kind : ``"UnitSquare"``, ``"LShape"`` or ``"Rectangle"``
    extent : (width, height) of the bounding box
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: tuple
    domain_kind: str
    extent: tuple
    _edges: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        for arr in (self.vertices, self.triangles, self.boundary_edges):
            arr.setflags(write=False)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @property
    def tags(self) -> tuple:
        return RECTANGLE_TAGS if self.domain_kind != "LShape" else L_SHAPE_TAGS

    @property
    def edges(self) -> np.ndarray:
        """All edges as sorted vertex pairs, ordered by (min vertex, max vertex)."""
        if self._edges is None:
            object.__setattr__(self, "_edges", _unique_edges(self.triangles))
        return self._edges

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def tagged_edges(self, tag: str) -> np.ndarray:
        """Vertex pairs of the boundary edges carrying ``tag``."""
        mask = np.array([t == tag for t in self.boundary_tags], dtype=bool)
        return self.boundary_edges[mask]

    def tagged_vertices(self, tag: str) -> np.ndarray:
        return np.unique(self.tagged_edges(tag))

    def scaled(self, factor: float) -> "Mesh":
        """Copy of the mesh with all coordinates multiplied by ``factor``."""
        w, h = self.extent
        return Mesh(
            vertices=self.vertices * factor,
            triangles=self.triangles.copy(),
            boundary_edges=self.boundary_edges.copy(),
            boundary_tags=self.boundary_tags,
            domain_kind="Rectangle" if self.domain_kind == "UnitSquare" else self.domain_kind,
            extent=(w * factor, h * factor),
        )

    def permuted(self, order) -> "Mesh":
        """Copy with triangles reordered (used to check ordering independence)."""
        return Mesh(
            vertices=self.vertices.copy(),
            triangles=self.triangles[np.asarray(order)].copy(),
            boundary_edges=self.boundary_edges.copy(),
            boundary_tags=self.boundary_tags,
            domain_kind=self.domain_kind,
            extent=self.extent,
        )


def _unique_edges(triangles):
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


def _boundary_edges(triangles):
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    # keep the orientation of the owning triangle (counterclockwise along the boundary)
    return e[counts[inv] == 1]


def _grid(width, height, nx, ny):
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    cells = []
    for j in range(ny):
        for i in range(nx):
            v00 = j * (nx + 1) + i
            cells.append((i, j, v00, v00 + 1, v00 + nx + 2, v00 + nx + 1))
    return vertices, cells


def _split(cells):
    tris = []
    for _, _, v00, v10, v11, v01 in cells:
        tris.append((v00, v10, v11))
        tris.append((v00, v11, v01))
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def _rectangle_tag(mid, width, height):
    x, y = mid
    if abs(y) <= GEOM_TOL * max(1.0, height):
        return "bottom"
    if abs(x - width) <= GEOM_TOL * max(1.0, width):
        return "right"
    if abs(y - height) <= GEOM_TOL * max(1.0, height):
        return "top"
    if abs(x) <= GEOM_TOL * max(1.0, width):
        return "left"
    raise ValueError(f"boundary edge midpoint {mid} lies on no side")


def l_shape_tag(mid) -> str:
    """Segment tag of the L-shape boundary containing the point ``mid``."""
    x, y = mid
    tol = GEOM_TOL
    if abs(x) <= tol and -tol <= y <= 1 + tol:
        return "G1"
    if abs(y) <= tol and -tol <= x <= 1 + tol:
        return "G2"
    if abs(x - 1) <= tol and -tol <= y <= 0.5 + tol:
        return "G3"
    if abs(y - 0.5) <= tol and 0.5 - tol <= x <= 1 + tol:
        return "G4"
    if abs(x - 0.5) <= tol and 0.5 - tol <= y <= 1 + tol:
        return "G5"
    if abs(y - 1) <= tol and -tol <= x <= 0.5 + tol:
        return "G6"
    raise ValueError(f"boundary edge midpoint {mid} lies on no L-shape segment")


def build_rectangle_mesh(width: float, height: float, nx: int, ny: int) -> Mesh:
    """Uniform ``nx`` by ``ny`` triangulation of ``(0, width) x (0, height)``."""
    if not (width > 0 and height > 0):
        raise ValueError(f"rectangle dimensions must be positive, got {width} x {height}")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"need at least one subdivision per direction, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    vertices, cells = _grid(width, height, nx, ny)
    triangles = _split(cells)
    bedges = _boundary_edges(triangles)
    mids = vertices[bedges].mean(axis=1)
    tags = tuple(_rectangle_tag(m, width, height) for m in mids)
    kind = "UnitSquare" if width == 1 and height == 1 else "Rectangle"
    return Mesh(vertices, triangles, bedges, tags, kind, (float(width), float(height)))


def build_unit_square_mesh(n: int) -> Mesh:
    return build_rectangle_mesh(1.0, 1.0, n, n)


def build_l_shape_mesh(n: int) -> Mesh:
    """Unit square ``n x n`` mesh with the quadrant ``(0.5, 1) x (0.5, 1)`` removed.

    ``n`` must be even so that the re-entrant corner is a mesh vertex.
    """
    if int(n) != n or n < 2 or n % 2:
        raise ValueError(f"L-shape mesh needs an even n >= 2, got {n}")
    n = int(n)
    vertices, cells = _grid(1.0, 1.0, n, n)
    half = n // 2
    kept = [c for c in cells if not (c[0] >= half and c[1] >= half)]
    triangles = _split(kept)
    used = np.unique(triangles)
    renumber = -np.ones(len(vertices), dtype=np.int64)
    renumber[used] = np.arange(len(used))
    vertices = vertices[used]
    triangles = renumber[triangles]
    bedges = _boundary_edges(triangles)
    mids = vertices[bedges].mean(axis=1)
    tags = tuple(l_shape_tag(m) for m in mids)
    return Mesh(vertices, triangles, bedges, tags, "LShape", (1.0, 1.0))


def mesh_statistics(mesh: Mesh) -> dict:
    e = mesh.edges
    lengths = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    return {
        "num_vertices": mesh.num_vertices,
        "num_triangles": mesh.num_triangles,
        "max_edge_length": float(lengths.max()),
        "total_area": float(mesh.signed_areas().sum()),
    }


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text dump: vertex, triangle and tagged-edge records, 0-based indices."""
    with open(path, "w") as fh:
        fh.write(f"vertices {mesh.num_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        fh.write(f"triangles {mesh.num_triangles}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")
        fh.write(f"edges {len(mesh.boundary_edges)}\n")
        for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
            fh.write(f"{a} {b} {tag}\n")


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    pos = 0

    def block(name):
        nonlocal pos
        head = lines[pos]
        if head[0] != name:
            raise ValueError(f"expected '{name}' block in {path}, found '{head[0]}'")
        count = int(head[1])
        rows = lines[pos + 1:pos + 1 + count]
        pos += 1 + count
        return rows

    verts = np.array([[float(v) for v in r] for r in block("vertices")], dtype=float).reshape(-1, 2)
    tris = np.array([[int(v) for v in r] for r in block("triangles")], dtype=np.int64).reshape(-1, 3)
    erows = block("edges")
    edges = np.array([[int(r[0]), int(r[1])] for r in erows], dtype=np.int64).reshape(-1, 2)
    tags = tuple(r[2] for r in erows)
    kind = "LShape" if tags and tags[0].startswith("G") else "Rectangle"
    extent = tuple(float(v) for v in verts.max(axis=0))
    if kind == "Rectangle" and extent == (1.0, 1.0):
        kind = "UnitSquare"
    return Mesh(verts, tris, edges, tags, kind, extent)

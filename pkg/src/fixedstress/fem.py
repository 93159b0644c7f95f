"""Lagrange P1/P2 spaces on triangles and assembly of the Biot forms.

Vector spaces store their degrees of freedom component-blocked: dof
``c * num_nodes + k`` is component ``c`` at node ``k``.  P2 nodes are the mesh
vertices followed by the edge midpoints, edges ordered by
``(min vertex, max vertex)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh

P1_SCALAR = "P1Scalar"
P1_VECTOR = "P1Vector2"
P2_VECTOR = "P2Vector2"
P2_SCALAR = "P2Scalar"

_LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


# --------------------------------------------------------------------------
# quadrature
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference triangle; ``points`` are barycentric, weights sum to 1/2."""

    points: np.ndarray
    weights: np.ndarray
    degree: int


def _strang_fix_6():
    a, wa = 0.445948490915965, 0.223381589678011
    b, wb = 0.091576213509771, 0.109951743655322
    pts = [
        (1 - 2 * a, a, a), (a, 1 - 2 * a, a), (a, a, 1 - 2 * a),
        (1 - 2 * b, b, b), (b, 1 - 2 * b, b), (b, b, 1 - 2 * b),
    ]
    w = np.array([wa] * 3 + [wb] * 3)
    w = w / w.sum()
    return QuadratureRule(np.array(pts), 0.5 * w, 4)


def collapsed_gauss_rule(n: int) -> QuadratureRule:
    """Duffy-collapsed tensor Gauss-Legendre rule with ``n**2`` points (degree 2n-2)."""
    g, w = np.polynomial.legendre.leggauss(n)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    xi, eta = np.meshgrid(g, g, indexing="ij")
    wx, wy = np.meshgrid(w, w, indexing="ij")
    x = xi.ravel()
    y = (eta * (1.0 - xi)).ravel()
    weights = (wx * wy * (1.0 - xi)).ravel()
    pts = np.column_stack([1.0 - x - y, x, y])
    return QuadratureRule(pts, weights, 2 * n - 2)


DEFAULT_RULE = _strang_fix_6()
# source fields are arbitrary functions; degree 8 keeps polynomial data up to degree 6 exact against P2
LOAD_RULE = collapsed_gauss_rule(5)


def triangle_rule(degree: int = 4) -> QuadratureRule:
    if degree <= 4:
        return DEFAULT_RULE
    return collapsed_gauss_rule(degree // 2 + 1)


# --------------------------------------------------------------------------
# reference basis
# --------------------------------------------------------------------------

def reference_nodes(order: int) -> np.ndarray:
    """Barycentric coordinates of the local nodes for polynomial ``order`` 1 or 2."""
    verts = np.eye(3)
    if order == 1:
        return verts
    mids = np.array([(verts[i] + verts[j]) / 2 for i, j in _LOCAL_EDGES])
    return np.vstack([verts, mids])


def basis_values(order: int, bary: np.ndarray) -> np.ndarray:
    """Shape functions at barycentric points, shape ``(npts, nloc)``."""
    lam = np.atleast_2d(bary)
    if order == 1:
        return lam.copy()
    vals = [lam[:, i] * (2 * lam[:, i] - 1) for i in range(3)]
    vals += [4 * lam[:, i] * lam[:, j] for i, j in _LOCAL_EDGES]
    return np.column_stack(vals)


def _basis_gradients(order, lam, glam):
    """Physical gradients at one barycentric point.

    ``lam`` is (3,), ``glam`` is (nt, 3, 2) barycentric gradients; returns (nt, nloc, 2).
    """
    if order == 1:
        return glam
    out = [(4 * lam[i] - 1) * glam[:, i] for i in range(3)]
    out += [4 * (lam[j] * glam[:, i] + lam[i] * glam[:, j]) for i, j in _LOCAL_EDGES]
    return np.stack(out, axis=1)


def element_geometry(mesh: Mesh):
    """Areas (nt,) and barycentric gradients (nt, 3, 2) of every triangle."""
    p = mesh.vertices[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    if np.any(area <= 0):
        raise ValueError("mesh contains triangles with nonpositive area")
    g = np.empty((len(area), 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        g[:, i, 0] = (y[:, j] - y[:, k]) / (2 * area)
        g[:, i, 1] = (x[:, k] - x[:, j]) / (2 * area)
    return area, g


# --------------------------------------------------------------------------
# function spaces
# --------------------------------------------------------------------------

class FunctionSpace:
    """Continuous Lagrange space on a mesh.

    Parameters
    ----------
    mesh : Mesh
    kind : one of ``"P1Scalar"``, ``"P1Vector2"``, ``"P2Vector2"``, ``"P2Scalar"``
    """

    def __init__(self, mesh: Mesh, kind: str):
        if kind not in (P1_SCALAR, P1_VECTOR, P2_VECTOR, P2_SCALAR):
            raise ValueError(f"unknown space kind {kind!r}")
        self.mesh = mesh
        self.kind = kind
        self.order = 2 if kind.startswith("P2") else 1
        self.ncomp = 2 if kind.endswith("Vector2") else 1
        nv = mesh.num_vertices
        if self.order == 1:
            self.node_map = mesh.triangles.copy()
            self.node_coords = mesh.vertices.copy()
        else:
            edges = mesh.edges
            lookup = {(int(a), int(b)): nv + k for k, (a, b) in enumerate(edges)}
            tri = mesh.triangles
            emap = np.empty((len(tri), 3), dtype=np.int64)
            for le, (i, j) in enumerate(_LOCAL_EDGES):
                lo = np.minimum(tri[:, i], tri[:, j])
                hi = np.maximum(tri[:, i], tri[:, j])
                emap[:, le] = [lookup[(int(a), int(b))] for a, b in zip(lo, hi)]
            self.node_map = np.hstack([tri, emap])
            mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
            self.node_coords = np.vstack([mesh.vertices, mids])
        self.num_nodes = len(self.node_coords)
        self.num_dofs = self.ncomp * self.num_nodes
        self.nloc = self.node_map.shape[1]
        self.node_map.setflags(write=False)

    def __repr__(self):
        return f"FunctionSpace({self.kind}, num_dofs={self.num_dofs})"

    @property
    def is_vector(self) -> bool:
        return self.ncomp == 2

    @property
    def dof_map(self) -> np.ndarray:
        """Global dof indices per triangle, component-blocked, shape (nt, ncomp*nloc)."""
        return np.hstack([self.node_map + c * self.num_nodes for c in range(self.ncomp)])

    def component_dofs(self, comp: int, nodes=None) -> np.ndarray:
        nodes = np.arange(self.num_nodes) if nodes is None else np.asarray(nodes, dtype=np.int64)
        return nodes + comp * self.num_nodes

    def boundary_nodes(self, tag: str) -> np.ndarray:
        """Nodes lying on the boundary edges carrying ``tag`` (vertices and P2 midpoints)."""
        edges = self.mesh.tagged_edges(tag)
        nodes = set(int(v) for v in edges.ravel())
        if self.order == 2:
            nv = self.mesh.num_vertices
            all_edges = self.mesh.edges
            keys = {(int(a), int(b)): k for k, (a, b) in enumerate(all_edges)}
            for a, b in edges:
                nodes.add(nv + keys[(min(int(a), int(b)), max(int(a), int(b)))])
        return np.array(sorted(nodes), dtype=np.int64)

    def quadrature_data(self, rule: QuadratureRule | None = None):
        """Physical points (nq, nt, 2), weights times area (nq, nt), values (nq, nloc)."""
        rule = rule or DEFAULT_RULE
        area, _ = element_geometry(self.mesh)
        verts = self.mesh.vertices[self.mesh.triangles]
        pts = np.einsum("qi,tid->qtd", rule.points, verts)
        wts = 2.0 * rule.weights[:, None] * area[None, :]
        vals = basis_values(self.order, rule.points)
        return pts, wts, vals


def _check_same_mesh(a: FunctionSpace, b: FunctionSpace):
    if a.mesh is not b.mesh:
        raise ValueError("function spaces are defined on different meshes")


def _to_csr(rows, cols, vals, shape):
    m = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape)
    m.sum_duplicates()
    return m.tocsr()


def _pairs(dofs_a, dofs_b):
    rows = np.repeat(dofs_a[:, :, None], dofs_b.shape[1], axis=2)
    cols = np.repeat(dofs_b[:, None, :], dofs_a.shape[1], axis=1)
    return rows, cols


# --------------------------------------------------------------------------
# bilinear forms
# --------------------------------------------------------------------------

def assemble_elasticity(space: FunctionSpace, mu: float, lam: float,
                        rule: QuadratureRule | None = None) -> sp.csr_matrix:
    """Matrix of ``2 mu (eps(u), eps(v)) + lam (div u, div v)``."""
    if not space.is_vector:
        raise ValueError("elasticity needs a vector-valued space")
    rule = rule or DEFAULT_RULE
    area, glam = element_geometry(space.mesh)
    n = space.nloc
    K = np.zeros((len(area), 2 * n, 2 * n))
    for q, lam_q in enumerate(rule.points):
        G = _basis_gradients(space.order, lam_q, glam)
        gx, gy = G[..., 0], G[..., 1]
        w = (2.0 * rule.weights[q] * area)[:, None, None]
        xx = np.einsum("ta,tb->tab", gx, gx)
        yy = np.einsum("ta,tb->tab", gy, gy)
        xy = np.einsum("ta,tb->tab", gx, gy)
        yx = np.einsum("ta,tb->tab", gy, gx)
        K[:, :n, :n] += w * (2 * mu * (xx + 0.5 * yy) + lam * xx)
        K[:, n:, n:] += w * (2 * mu * (yy + 0.5 * xx) + lam * yy)
        K[:, :n, n:] += w * (mu * yx + lam * xy)
        K[:, n:, :n] += w * (mu * xy + lam * yx)
    dofs = space.dof_map
    rows, cols = _pairs(dofs, dofs)
    return _to_csr(rows, cols, K, (space.num_dofs, space.num_dofs))


def assemble_coupling(u_space: FunctionSpace, p_space: FunctionSpace,
                      rule: QuadratureRule | None = None) -> sp.csr_matrix:
    """``D[j, k] = (div phi_k, psi_j)``: pressure rows, displacement columns."""
    _check_same_mesh(u_space, p_space)
    if not u_space.is_vector or p_space.is_vector:
        raise ValueError("coupling needs a vector displacement space and a scalar pressure space")
    rule = rule or DEFAULT_RULE
    area, glam = element_geometry(u_space.mesh)
    psi = basis_values(p_space.order, rule.points)
    n, m = u_space.nloc, p_space.nloc
    E = np.zeros((len(area), m, 2 * n))
    for q, lam_q in enumerate(rule.points):
        G = _basis_gradients(u_space.order, lam_q, glam)
        w = (2.0 * rule.weights[q] * area)[:, None, None]
        E[:, :, :n] += w * np.einsum("a,tb->tab", psi[q], G[..., 0])
        E[:, :, n:] += w * np.einsum("a,tb->tab", psi[q], G[..., 1])
    rows, cols = _pairs(p_space.dof_map, u_space.dof_map)
    return _to_csr(rows, cols, E, (p_space.num_dofs, u_space.num_dofs))


def assemble_pressure_mass(p_space: FunctionSpace, rule: QuadratureRule | None = None) -> sp.csr_matrix:
    rule = rule or DEFAULT_RULE
    area, _ = element_geometry(p_space.mesh)
    psi = basis_values(p_space.order, rule.points)
    local = np.einsum("q,qa,qb->ab", 2.0 * rule.weights, psi, psi)
    E = area[:, None, None] * local[None]
    dofs = p_space.node_map
    rows, cols = _pairs(dofs, dofs)
    return _to_csr(rows, cols, E, (p_space.num_nodes, p_space.num_nodes))


def assemble_pressure_stiffness(p_space: FunctionSpace, kappa: float = 1.0,
                                rule: QuadratureRule | None = None) -> sp.csr_matrix:
    """``Kp[j, k] = kappa (grad psi_k, grad psi_j)``."""
    rule = rule or DEFAULT_RULE
    area, glam = element_geometry(p_space.mesh)
    E = np.zeros((len(area), p_space.nloc, p_space.nloc))
    for q, lam_q in enumerate(rule.points):
        G = _basis_gradients(p_space.order, lam_q, glam)
        E += (2.0 * rule.weights[q] * area)[:, None, None] * np.einsum("tad,tbd->tab", G, G)
    dofs = p_space.node_map
    rows, cols = _pairs(dofs, dofs)
    return _to_csr(rows, cols, kappa * E, (p_space.num_nodes, p_space.num_nodes))


def assemble_loads(p_space: FunctionSpace, u_space: FunctionSpace, f=None, S_f=None,
                   g_rho_kappa=(0.0, 0.0), rule: QuadratureRule | None = None):
    """Load vectors ``(F, Sv, Gv)``.

    ``f(x, y)`` returns the two body-force components, ``S_f(x, y)`` the fluid
    source; either may be None (zero).  ``g_rho_kappa`` is the constant vector
    ``kappa * g * rho``.  Integrated with :data:`LOAD_RULE` unless ``rule`` is given.
    """
    _check_same_mesh(u_space, p_space)
    rule = rule or LOAD_RULE
    F = np.zeros(u_space.num_dofs)
    Sv = np.zeros(p_space.num_dofs)
    pts, wts, phi = u_space.quadrature_data(rule)
    if f is not None:
        for comp in range(2):
            vals = np.asarray(f(pts[..., 0], pts[..., 1])[comp], dtype=float) * np.ones(wts.shape)
            local = np.einsum("qt,qa->ta", vals * wts, phi)
            np.add.at(F, u_space.node_map + comp * u_space.num_nodes, local)
    if S_f is not None:
        _, _, psi = p_space.quadrature_data(rule)
        vals = np.asarray(S_f(pts[..., 0], pts[..., 1]), dtype=float) * np.ones(wts.shape)
        np.add.at(Sv, p_space.node_map, np.einsum("qt,qa->ta", vals * wts, psi))
    Gv = np.zeros(p_space.num_dofs)
    g = np.asarray(g_rho_kappa, dtype=float)
    if np.any(g != 0):
        area, glam = element_geometry(p_space.mesh)
        for q, lam_q in enumerate(rule.points):
            G = _basis_gradients(p_space.order, lam_q, glam)
            np.add.at(Gv, p_space.node_map, (2.0 * rule.weights[q] * area)[:, None] * (G @ g))
    return F, Sv, Gv


# --------------------------------------------------------------------------
# Dirichlet constraints
# --------------------------------------------------------------------------

class DirichletSet:
    """Constrained dof indices with prescribed values.

    Duplicate indices are merged when their values agree and rejected otherwise.
    """

    def __init__(self, dofs=(), values=(), size: int | None = None):
        dofs = np.asarray(dofs, dtype=np.int64).ravel()
        values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape).copy()
        if not np.all(np.isfinite(values)):
            raise ValueError("Dirichlet values must be finite")
        order = np.argsort(dofs, kind="stable")
        dofs, values = dofs[order], values[order]
        if len(dofs) > 1:
            dup = dofs[1:] == dofs[:-1]
            if np.any(dup & (values[1:] != values[:-1])):
                bad = dofs[1:][dup & (values[1:] != values[:-1])][0]
                raise ValueError(f"conflicting Dirichlet values for dof {bad}")
            keep = np.concatenate([[True], ~dup])
            dofs, values = dofs[keep], values[keep]
        if size is not None and len(dofs) and (dofs[0] < 0 or dofs[-1] >= size):
            raise ValueError(f"Dirichlet dof index out of range [0, {size})")
        self.dofs = dofs
        self.values = values
        self.size = size

    def __len__(self):
        return len(self.dofs)

    def __repr__(self):
        return f"DirichletSet({len(self)} dofs)"

    def full_vector(self, n: int) -> np.ndarray:
        g = np.zeros(n)
        g[self.dofs] = self.values
        return g

    def with_values(self, values) -> "DirichletSet":
        return DirichletSet(self.dofs, values, self.size)


def eliminate_matrix(K: sp.spmatrix, dofs) -> sp.csr_matrix:
    """Replace constrained rows and columns by the identity (stays symmetric if K is)."""
    n = K.shape[0]
    keep = np.ones(n)
    keep[np.asarray(dofs, dtype=np.int64)] = 0.0
    Dk = sp.diags(keep)
    return (Dk @ K @ Dk + sp.diags(1.0 - keep)).tocsr()


def lift_rhs(K: sp.spmatrix, rhs: np.ndarray, dirichlet: DirichletSet) -> np.ndarray:
    """Right-hand side matching :func:`eliminate_matrix` for prescribed values."""
    b = np.array(rhs, dtype=float, copy=True)
    if len(dirichlet):
        g = dirichlet.full_vector(K.shape[1])
        b -= K @ g
        b[dirichlet.dofs] = dirichlet.values
    return b


def apply_dirichlet(K: sp.spmatrix, rhs: np.ndarray, dirichlet: DirichletSet):
    """Symmetric elimination; returns the modified matrix and right-hand side."""
    if dirichlet.size is not None and dirichlet.size != K.shape[0]:
        raise ValueError("Dirichlet set size does not match the matrix")
    if len(dirichlet) and (dirichlet.dofs[0] < 0 or dirichlet.dofs[-1] >= K.shape[0]):
        raise ValueError("Dirichlet dof index out of range")
    return eliminate_matrix(K, dirichlet.dofs), lift_rhs(K, rhs, dirichlet)


# --------------------------------------------------------------------------
# interpolation and norms
# --------------------------------------------------------------------------

def interpolate(space: FunctionSpace, field) -> np.ndarray:
    """Nodal interpolant; ``field(x, y)`` returns a scalar or a pair of components."""
    x, y = space.node_coords[:, 0], space.node_coords[:, 1]
    vals = field(x, y)
    if space.is_vector:
        return np.concatenate([np.asarray(v, dtype=float) * np.ones(space.num_nodes) for v in vals])
    return np.asarray(vals, dtype=float) * np.ones(space.num_nodes)


def evaluate(space: FunctionSpace, vec: np.ndarray, rule: QuadratureRule):
    """Finite element function at the rule points: (nq, nt) or (ncomp, nq, nt)."""
    phi = basis_values(space.order, rule.points)
    comps = [np.einsum("qa,ta->qt", phi, vec[space.node_map + c * space.num_nodes])
             for c in range(space.ncomp)]
    return np.stack(comps) if space.is_vector else comps[0]


def l2_error(space: FunctionSpace, vec: np.ndarray, field=None, degree: int = 12) -> float:
    """L2 norm of ``vec - field`` (or of ``vec`` alone when ``field`` is None)."""
    rule = triangle_rule(degree)
    pts, wts, _ = space.quadrature_data(rule)
    uh = evaluate(space, vec, rule)
    if field is None:
        diff = uh
    else:
        ex = field(pts[..., 0], pts[..., 1])
        if space.is_vector:
            ex = np.stack([np.asarray(c, dtype=float) * np.ones(wts.shape) for c in ex])
        diff = uh - ex
    sq = diff ** 2
    if space.is_vector:
        sq = sq.sum(axis=0)
    return float(np.sqrt(np.sum(sq * wts)))


def inf_norm(vec) -> float:
    vec = np.asarray(vec)
    return float(np.max(np.abs(vec))) if vec.size else 0.0


def write_coo(matrix: sp.spmatrix, path) -> None:
    """Coordinate text dump, one ``row col value`` record per line."""
    m = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        for r, c, v in zip(m.row, m.col, m.data):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")

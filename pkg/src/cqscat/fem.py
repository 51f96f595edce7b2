"""Interior finite element assembly on triangular meshes (P1 and P2).

Builds the weighted mass matrix (c^-2 u, v), the anisotropic stiffness
matrix (kappa grad u, grad v), the boundary coupling matrices, load
vectors, and the kappa-elliptic projection with per-component zero-mean
constraints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .meshing import Mesh, BoundaryMesh, _edge_key
from .quadrature import triangle_rule, gauss_01
from .spaces import BoundarySpacePair

__all__ = [
    "CoefficientField",
    "DofMap",
    "FemSystem",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_coupling",
    "assemble_load",
    "assemble_fem_system",
    "elliptic_projection",
    "interior_errors",
]


class CoefficientField:
    """Wave-speed-like coefficient c and symmetric matrix coefficient kappa.

    Both are evaluated at arrays of points together with the component id
    of the element the points belong to, so piecewise-constant material
    assignments per obstacle are expressible alongside smooth fields.
    """

    def __init__(self, c, kappa):
        self._c = c
        self._kappa = kappa

    @classmethod
    def constant(cls, c: float = 1.0, kappa=((1.0, 0.0), (0.0, 1.0))):
        kap = np.asarray(kappa, dtype=float)

        def c_at(pts, comp):
            return np.full(pts.shape[:-1], float(c))

        def k_at(pts, comp):
            out = np.empty(pts.shape[:-1] + (2, 2))
            out[...] = kap
            return out

        return cls(c_at, k_at)

    @classmethod
    def spatial(cls, kappa_fn, c_fn=None):
        """Smooth fields given as functions of points of shape (..., 2)."""

        def c_at(pts, comp):
            if c_fn is None:
                return np.ones(pts.shape[:-1])
            return np.asarray(c_fn(pts))

        def k_at(pts, comp):
            return np.asarray(kappa_fn(pts))

        return cls(c_at, k_at)

    @classmethod
    def per_component(cls, kappa_by_component, c: float = 1.0):
        """Constant 2x2 kappa per connected component (by component id)."""
        table = {int(k): np.asarray(v, dtype=float) for k, v in kappa_by_component.items()}

        def c_at(pts, comp):
            return np.full(pts.shape[:-1], float(c))

        def k_at(pts, comp):
            out = np.empty(pts.shape[:-1] + (2, 2))
            out[...] = table[int(comp)]
            return out

        return cls(c_at, k_at)

    def c_at(self, pts, comp=0):
        return self._c(pts, comp)

    def kappa_at(self, pts, comp=0):
        return self._kappa(pts, comp)

    def validate(self, mesh: Mesh, p: int = 1) -> None:
        """Check uniform positivity of c and of the kappa eigenvalues."""
        ref, _ = triangle_rule(2 * p + 2)
        for comp in np.unique(mesh.component_id):
            tris = mesh.triangles[mesh.component_id == comp]
            a = mesh.vertices[tris[:, 0]]
            B = np.stack(
                [mesh.vertices[tris[:, 1]] - a, mesh.vertices[tris[:, 2]] - a], axis=-1
            )
            pts = a[:, None, :] + np.einsum("tij,qj->tqi", B, ref)
            cvals = self.c_at(pts, comp)
            if np.min(cvals) <= 0:
                raise ValueError(f"coefficient c is not positive on component {comp}")
            kap = self.kappa_at(pts, comp)
            if np.max(np.abs(kap - np.swapaxes(kap, -1, -2))) > 1e-12:
                raise ValueError("kappa is not symmetric")
            eig = np.linalg.eigvalsh(kap)
            if np.min(eig) <= 0:
                raise ValueError(
                    f"kappa is not uniformly positive definite on component {comp}"
                )


def _p1_tables(ref):
    lam = np.stack([1 - ref[:, 0] - ref[:, 1], ref[:, 0], ref[:, 1]], axis=0)  # (3, Q)
    grad = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])                   # (3, 2)
    dlam = np.repeat(grad[:, None, :], ref.shape[0], axis=1)                   # (3, Q, 2)
    return lam, dlam


def _p2_tables(ref):
    lam, dlam = _p1_tables(ref)
    l0, l1, l2 = lam
    d0, d1, d2 = dlam
    N = np.stack(
        [
            l0 * (2 * l0 - 1),
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            4 * l0 * l1,
            4 * l1 * l2,
            4 * l2 * l0,
        ],
        axis=0,
    )
    dN = np.stack(
        [
            (4 * l0 - 1)[:, None] * d0,
            (4 * l1 - 1)[:, None] * d1,
            (4 * l2 - 1)[:, None] * d2,
            4 * (l1[:, None] * d0 + l0[:, None] * d1),
            4 * (l2[:, None] * d1 + l1[:, None] * d2),
            4 * (l0[:, None] * d2 + l2[:, None] * d0),
        ],
        axis=0,
    )
    return N, dN


@dataclass
class DofMap:
    """Global numbering of the continuous P_p interior space."""

    mesh: Mesh
    p: int
    cell_dofs: np.ndarray
    n_dofs: int
    edge_index: Optional[dict] = None

    @classmethod
    def build(cls, mesh: Mesh, p: int) -> "DofMap":
        if p == 1:
            return cls(mesh, 1, mesh.triangles.copy(), mesh.n_vertices)
        if p != 2:
            raise ValueError("only p in {1, 2} is supported")
        edge_index: dict = {}
        tris = mesh.triangles
        cell = np.empty((mesh.n_triangles, 6), dtype=np.int64)
        cell[:, :3] = tris
        for t in range(mesh.n_triangles):
            for k, (i, j) in enumerate(((0, 1), (1, 2), (2, 0))):
                e = _edge_key(int(tris[t, i]), int(tris[t, j]))
                if e not in edge_index:
                    edge_index[e] = len(edge_index)
                cell[t, 3 + k] = mesh.n_vertices + edge_index[e]
        return cls(mesh, 2, cell, mesh.n_vertices + len(edge_index), edge_index)

    def tables(self, degree: int):
        ref, w = triangle_rule(degree)
        if self.p == 1:
            N, dN = _p1_tables(ref)
        else:
            N, dN = _p2_tables(ref)
        return ref, w, N, dN


def _geometry(mesh: Mesh):
    tris = mesh.triangles
    a = mesh.vertices[tris[:, 0]]
    B = np.stack(
        [mesh.vertices[tris[:, 1]] - a, mesh.vertices[tris[:, 2]] - a], axis=-1
    )  # (T, 2, 2)
    det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
    inv = np.empty_like(B)
    inv[:, 0, 0] = B[:, 1, 1]
    inv[:, 0, 1] = -B[:, 0, 1]
    inv[:, 1, 0] = -B[:, 1, 0]
    inv[:, 1, 1] = B[:, 0, 0]
    inv /= det[:, None, None]
    return a, B, det, inv


def _scatter(cell_dofs, local, n_dofs):
    nloc = cell_dofs.shape[1]
    rows = np.repeat(cell_dofs, nloc, axis=1).ravel()
    cols = np.tile(cell_dofs, (1, nloc)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n_dofs, n_dofs))
    return mat.tocsr()


def _eval_coeff_per_component(mesh, fn, pts):
    """Evaluate a component-aware coefficient at (T, Q, ...) points."""
    out = None
    for comp in np.unique(mesh.component_id):
        mask = mesh.component_id == comp
        vals = fn(pts[mask], comp)
        if out is None:
            out = np.empty((pts.shape[0],) + vals.shape[1:], dtype=vals.dtype)
        out[mask] = vals
    return out


def assemble_mass(mesh: Mesh, coeff: CoefficientField, p: int) -> sp.csr_matrix:
    """Galerkin matrix of (c^-2 u, v) on continuous P_p."""
    dof = DofMap.build(mesh, p)
    return _mass(mesh, coeff, dof)


def _mass(mesh, coeff, dof: DofMap) -> sp.csr_matrix:
    ref, w, N, _ = dof.tables(2 * dof.p + 2)
    a, B, det, _ = _geometry(mesh)
    pts = a[:, None, :] + np.einsum("tij,qj->tqi", B, ref)
    cinv2 = _eval_coeff_per_component(mesh, coeff.c_at, pts) ** (-2.0)
    local = np.einsum("tq,aq,bq,q->tab", cinv2, N, N, w) * det[:, None, None]
    return _scatter(dof.cell_dofs, local, dof.n_dofs)


def assemble_stiffness(mesh: Mesh, coeff: CoefficientField, p: int) -> sp.csr_matrix:
    """Galerkin matrix of (kappa grad u, grad v) on continuous P_p."""
    dof = DofMap.build(mesh, p)
    return _stiffness(mesh, coeff, dof)


def _stiffness(mesh, coeff, dof: DofMap) -> sp.csr_matrix:
    ref, w, _, dN = dof.tables(2 * dof.p + 2)
    a, B, det, inv = _geometry(mesh)
    pts = a[:, None, :] + np.einsum("tij,qj->tqi", B, ref)
    kap = _eval_coeff_per_component(mesh, coeff.kappa_at, pts)  # (T, Q, 2, 2)
    gphys = np.einsum("aqj,tji->taqi", dN, inv)                  # (T, nloc, Q, 2)
    local = np.einsum("tqij,taqj,tbqi,q->tab", kap, gphys, gphys, w) * det[:, None, None]
    return _scatter(dof.cell_dofs, local, dof.n_dofs)


def assemble_load(mesh: Mesh, f, t: float, p: int) -> np.ndarray:
    """Load vector with entries integral of f(x, y, t) * basis."""
    dof = DofMap.build(mesh, p)
    return _load(mesh, f, t, dof)


def _load(mesh, f, t, dof: DofMap) -> np.ndarray:
    ref, w, N, _ = dof.tables(2 * dof.p + 2)
    a, B, det, _ = _geometry(mesh)
    pts = a[:, None, :] + np.einsum("tij,qj->tqi", B, ref)
    vals = np.asarray(f(pts, t))
    local = np.einsum("tq,aq,q->ta", vals, N, w) * det[:, None]
    out = np.zeros(dof.n_dofs)
    np.add.at(out, dof.cell_dofs, local)
    return out


def assemble_coupling(mesh: Mesh, bmesh: BoundaryMesh, pair: BoundarySpacePair, p: int,
                      dof: Optional[DofMap] = None):
    """Assemble I_h (X_h x Y_h pairing) and derive Gamma (X_h x U_h) from it.

    Y_h is the trace space of U_h on the inherited partition, so Gamma is
    obtained by scattering the columns of I_h to the boundary degrees of
    freedom of U_h; the two matrices agree entrywise by construction.
    """
    if pair.p != p:
        raise ValueError("pair degree does not match requested degree")
    if pair.bmesh is not bmesh and pair.bmesh.n_panels != bmesh.n_panels:
        raise ValueError("boundary mesh does not match the space pair")
    dof = dof or DofMap.build(mesh, p)

    xi, w = gauss_01(p + 2)
    BX = pair.Xh.basis_at(xi)
    BY = pair.Yh.basis_at(xi)
    loc = np.einsum("aq,bq,q->ab", BX, BY, w)   # unit panel

    rows, cols, vals = [], [], []
    for pan in range(bmesh.n_panels):
        h = bmesh.lengths[pan]
        dx = pair.Xh.panel_dofs[pan]
        dy = pair.Yh.panel_dofs[pan]
        for ia in range(pair.Xh.nloc):
            for ib in range(pair.Yh.nloc):
                rows.append(dx[ia])
                cols.append(dy[ib])
                vals.append(loc[ia, ib] * h)
    Ih = sp.csr_matrix((vals, (rows, cols)), shape=(pair.dim_x, pair.dim_y))

    ident = trace_identification(bmesh, pair, dof)
    Ico = Ih.tocoo()
    Gamma = sp.csr_matrix(
        (Ico.data, (Ico.row, ident[Ico.col])), shape=(pair.dim_x, dof.n_dofs)
    )
    return Gamma, Ih


def trace_identification(bmesh: BoundaryMesh, pair: BoundarySpacePair,
                         dof: DofMap) -> np.ndarray:
    """Map each Y_h degree of freedom to the matching U_h degree of freedom."""
    bverts = pair.Yh.boundary_vertices
    ident = np.empty(pair.dim_y, dtype=np.int64)
    ident[: len(bverts)] = bverts
    if pair.p == 2:
        for pan, (a, b) in enumerate(bmesh.panels):
            e = _edge_key(int(a), int(b))
            ident[len(bverts) + pan] = dof.mesh.n_vertices + dof.edge_index[e]
    return ident


@dataclass
class FemSystem:
    """Assembled interior system: mass, stiffness and boundary couplings."""

    mesh: Mesh
    bmesh: BoundaryMesh
    pair: BoundarySpacePair
    dof: DofMap
    M: sp.csr_matrix
    S: sp.csr_matrix
    Gamma: sp.csr_matrix
    Ih: sp.csr_matrix

    @property
    def p(self) -> int:
        return self.dof.p

    @property
    def n_dofs(self) -> int:
        return self.dof.n_dofs


def assemble_fem_system(mesh: Mesh, bmesh: BoundaryMesh, pair: BoundarySpacePair,
                        coeff: CoefficientField, p: int) -> FemSystem:
    dof = DofMap.build(mesh, p)
    M = _mass(mesh, coeff, dof)
    S = _stiffness(mesh, coeff, dof)
    Gamma, Ih = assemble_coupling(mesh, bmesh, pair, p, dof)
    return FemSystem(mesh, bmesh, pair, dof, M, S, Gamma, Ih)


def elliptic_projection(mesh: Mesh, coeff: CoefficientField, u_fn, grad_fn,
                        p: int) -> np.ndarray:
    """kappa-elliptic projection with per-component zero-mean constraints.

    Solves (kappa grad(Pu - u), grad w) = 0 for all w in U_h subject to
    integral of (Pu - u) over each component being zero, enforced with one
    Lagrange multiplier per component.
    """
    dof = DofMap.build(mesh, p)
    S = _stiffness(mesh, coeff, dof)

    ref, w, N, dN = dof.tables(2 * p + 3)
    a, B, det, inv = _geometry(mesh)
    pts = a[:, None, :] + np.einsum("tij,qj->tqi", B, ref)
    kap = _eval_coeff_per_component(mesh, coeff.kappa_at, pts)
    gphys = np.einsum("aqj,tji->taqi", dN, inv)
    gu = np.asarray(grad_fn(pts))                 # (T, Q, 2)
    rhs_loc = np.einsum("tqij,tqj,taqi,q->ta", kap, gu, gphys, w) * det[:, None]
    rhs = np.zeros(dof.n_dofs)
    np.add.at(rhs, dof.cell_dofs, rhs_loc)

    comps = np.unique(mesh.component_id)
    C = np.zeros((len(comps), dof.n_dofs))
    means = np.zeros(len(comps))
    phi_int = np.einsum("aq,q->a", N, w)
    uvals = np.asarray(u_fn(pts))
    for ci, comp in enumerate(comps):
        mask = mesh.component_id == comp
        loc = phi_int[None, :] * det[mask, None]
        np.add.at(C[ci], dof.cell_dofs[mask], loc)
        means[ci] = np.sum(np.einsum("tq,q->t", uvals[mask], w) * det[mask])

    kkt = sp.bmat(
        [[S, sp.csr_matrix(C).T], [sp.csr_matrix(C), None]], format="csc"
    )
    sol = spsolve(kkt, np.concatenate([rhs, means]))
    return sol[: dof.n_dofs]


def interior_errors(mesh: Mesh, dof: DofMap, coefs: np.ndarray, u_fn, grad_fn,
                    degree: Optional[int] = None):
    """L2 and H1-seminorm distances between a coefficient vector and a field.

    Returns (l2_error, h1_seminorm_error); the full H1 error is the root
    of the sum of squares.
    """
    ref, w, N, dN = dof.tables(degree or (2 * dof.p + 2))
    a, B, det, inv = _geometry(mesh)
    pts = a[:, None, :] + np.einsum("tij,qj->tqi", B, ref)
    gphys = np.einsum("aqj,tji->taqi", dN, inv)
    uh = np.einsum("ta,aq->tq", coefs[dof.cell_dofs], N)
    guh = np.einsum("ta,taqi->tqi", coefs[dof.cell_dofs], gphys)
    du = uh - np.asarray(u_fn(pts))
    dg = guh - np.asarray(grad_fn(pts))
    e_l2 = np.sqrt(np.sum(np.abs(du) ** 2 * w[None, :] * det[:, None]))
    e_h1 = np.sqrt(np.sum(np.sum(np.abs(dg) ** 2, axis=-1) * w[None, :] * det[:, None]))
    return float(e_l2), float(e_h1)

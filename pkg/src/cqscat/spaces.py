"""Piecewise polynomial spaces on the inherited boundary partition.

For interior degree p the flux space X_h is discontinuous P_{p-1} on the
panels and the trace space Y_h is continuous P_p; in 2D both have the
same dimension, so all boundary matrices are square.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .meshing import BoundaryMesh
from .quadrature import gauss_01


def _monomial_coeffs(kind: str, p: int) -> np.ndarray:
    """Columns are local basis functions expressed in 1, xi, xi^2."""
    if kind == "x" and p == 1:          # P0
        return np.array([[1.0]])
    if kind == "x" and p == 2:          # discontinuous P1, nodes at 0 and 1
        return np.array([[1.0, 0.0], [-1.0, 1.0]])
    if kind == "y" and p == 1:          # hat functions, nodes at 0 and 1
        return np.array([[1.0, 0.0], [-1.0, 1.0]])
    if kind == "y" and p == 2:          # quadratic Lagrange, nodes at 0, 1/2, 1
        return np.array([[1.0, 0.0, 0.0], [-3.0, 4.0, -1.0], [2.0, -4.0, 2.0]])
    raise ValueError(f"unsupported panel space ({kind}, p={p})")


@dataclass
class PanelSpace:
    """A panelwise polynomial space on a boundary mesh."""

    bmesh: BoundaryMesh
    coeffs: np.ndarray          # (deg+1, nloc) monomial coefficients
    panel_dofs: np.ndarray      # (P, nloc) global dof index per local node
    dim: int

    @property
    def nloc(self) -> int:
        return self.coeffs.shape[1]

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0] - 1

    def basis_at(self, xi: np.ndarray) -> np.ndarray:
        """Local basis values, shape (nloc, len(xi))."""
        powers = np.vander(np.asarray(xi, float), self.coeffs.shape[0], increasing=True)
        return (powers @ self.coeffs).T


def _flux_space(bmesh: BoundaryMesh, p: int) -> PanelSpace:
    P = bmesh.n_panels
    nloc = p
    dofs = np.arange(P * nloc).reshape(P, nloc)
    return PanelSpace(bmesh, _monomial_coeffs("x", p), dofs, P * nloc)


def _trace_space(bmesh: BoundaryMesh, p: int) -> PanelSpace:
    P = bmesh.n_panels
    bverts = np.unique(bmesh.panels.ravel())
    vidx = {int(v): i for i, v in enumerate(bverts)}
    if p == 1:
        dofs = np.array(
            [[vidx[int(a)], vidx[int(b)]] for a, b in bmesh.panels], dtype=np.int64
        )
        dim = len(bverts)
    else:
        dofs = np.array(
            [
                [vidx[int(a)], len(bverts) + k, vidx[int(b)]]
                for k, (a, b) in enumerate(bmesh.panels)
            ],
            dtype=np.int64,
        )
        dim = len(bverts) + P
    space = PanelSpace(bmesh, _monomial_coeffs("y", p), dofs, dim)
    space.boundary_vertices = bverts  # volume ids of the vertex dofs
    return space


@dataclass
class BoundarySpacePair:
    """The X_h (flux) / Y_h (trace) pair on one boundary mesh."""

    bmesh: BoundaryMesh
    p: int
    Xh: PanelSpace
    Yh: PanelSpace

    @property
    def dim_x(self) -> int:
        return self.Xh.dim

    @property
    def dim_y(self) -> int:
        return self.Yh.dim

    def mass_x(self) -> sp.csr_matrix:
        return _panel_gram(self.Xh)

    def mass_y(self) -> sp.csr_matrix:
        return _panel_gram(self.Yh)

    def tangential_derivative(self) -> sp.csr_matrix:
        """Map Y_h coefficients to X_h coefficients of the arclength derivative.

        The derivative of a continuous P_p trace function is discontinuous
        P_{p-1} on the same panels, i.e. an element of X_h.
        """
        dcoef = self.Yh.coeffs[1:, :] * np.arange(1, self.Yh.coeffs.shape[0])[:, None]
        rows, cols, vals = [], [], []
        if self.p == 1:
            # d/ds of the two hats is constant -1/h, +1/h.
            for pan in range(self.bmesh.n_panels):
                h = self.bmesh.lengths[pan]
                x = self.Xh.panel_dofs[pan, 0]
                for loc in range(2):
                    rows.append(x)
                    cols.append(self.Yh.panel_dofs[pan, loc])
                    vals.append(dcoef[0, loc] / h)
        else:
            # Derivative is linear; express it in the nodal X_h basis by
            # evaluating at the panel endpoints.
            for pan in range(self.bmesh.n_panels):
                h = self.bmesh.lengths[pan]
                for node, xi in enumerate((0.0, 1.0)):
                    x = self.Xh.panel_dofs[pan, node]
                    vals_at = dcoef[0, :] + dcoef[1, :] * xi
                    for loc in range(3):
                        rows.append(x)
                        cols.append(self.Yh.panel_dofs[pan, loc])
                        vals.append(vals_at[loc] / h)
        return sp.csr_matrix(
            (vals, (rows, cols)), shape=(self.dim_x, self.dim_y)
        )


def make_pair(bmesh: BoundaryMesh, p: int) -> BoundarySpacePair:
    if p not in (1, 2):
        raise ValueError("boundary spaces are defined for p in {1, 2}")
    return BoundarySpacePair(bmesh, p, _flux_space(bmesh, p), _trace_space(bmesh, p))


def _panel_gram(space: PanelSpace) -> sp.csr_matrix:
    xi, w = gauss_01(space.degree + 2)
    B = space.basis_at(xi)                       # (nloc, q)
    loc = np.einsum("aq,bq,q->ab", B, B, w)      # unit-panel Gram
    rows, cols, vals = [], [], []
    for pan in range(space.bmesh.n_panels):
        d = space.panel_dofs[pan]
        h = space.bmesh.lengths[pan]
        for a in range(space.nloc):
            for b in range(space.nloc):
                rows.append(d[a])
                cols.append(d[b])
                vals.append(loc[a, b] * h)
    return sp.csr_matrix((vals, (rows, cols)), shape=(space.dim, space.dim))


def panel_quad_points(bmesh: BoundaryMesh, n: int):
    """Gauss points on every panel: returns (xi, w, points (P, n, 2))."""
    xi, w = gauss_01(n)
    a, b = bmesh.endpoints()
    pts = a[:, None, :] + xi[None, :, None] * (b - a)[:, None, :]
    return xi, w, pts


def project_onto(space: PanelSpace, g, mass: sp.csr_matrix | None = None) -> np.ndarray:
    """L2-orthogonal projection of a boundary function onto a panel space.

    ``g`` is called with points of shape (P, q, 2) and the panel index
    array and must return values of shape (P, q).
    """
    from scipy.sparse.linalg import spsolve

    xi, w, pts = panel_quad_points(space.bmesh, space.degree + 3)
    vals = g(pts)
    B = space.basis_at(xi)                       # (nloc, q)
    rhs = np.zeros(space.dim, dtype=np.result_type(vals, float))
    loc = np.einsum("pq,aq,q->pa", vals, B, w) * space.bmesh.lengths[:, None]
    np.add.at(rhs, space.panel_dofs, loc)
    M = mass if mass is not None else _panel_gram(space)
    return spsolve(M.tocsc(), rhs)


def eval_on_panels(space: PanelSpace, coefs: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Evaluate a coefficient vector at local coordinates xi on every panel."""
    B = space.basis_at(xi)                       # (nloc, q)
    return np.einsum("pa,aq->pq", coefs[space.panel_dofs], B)


def l2_norm_gamma(space: PanelSpace, coefs: np.ndarray) -> float:
    M = _panel_gram(space)
    return float(np.sqrt(np.real(np.conj(coefs) @ (M @ coefs))))


def l2_error_gamma(space: PanelSpace, coefs: np.ndarray, exact, n: int = 8) -> float:
    """L2(Gamma) distance between a coefficient vector and a boundary function."""
    xi, w, pts = panel_quad_points(space.bmesh, n)
    approx = eval_on_panels(space, coefs, xi)
    diff = np.abs(approx - exact(pts)) ** 2
    return float(np.sqrt(np.sum(diff * w[None, :] * space.bmesh.lengths[:, None])))

"""Fully discrete coupled interior/boundary solver.

Two equivalent paths solve the same discrete system: a marching-on-in-time
scheme that factorizes one coupled step matrix and feeds the convolution
tail of all past boundary densities into each right-hand side, and a
reduction-to-boundary scheme that diagonalizes the time convolution by a
scaled DFT and solves an independent Schur-complement system per complex
frequency.  The exterior field is reconstructed from the boundary
densities with the discretized Kirchhoff representation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ._util import parallel_map
from .bem import (
    LaplaceBlock,
    _classify_pairs,
    assemble_blocks,
    evaluate_potentials,
    _point_panel_distance,
)
from .cq import (
    TimeGrid,
    MatrixTransfer,
    SparseTransfer,
    TransferFunction,
    cq_weights,
    contour_frequencies,
    default_radius,
)
from .fem import CoefficientField, FemSystem, assemble_fem_system, _load, DofMap
from .meshing import Mesh, extract_boundary
from .spaces import make_pair, project_onto

logger = logging.getLogger(__name__)

__all__ = [
    "ScatteringProblem",
    "SolutionTrace",
    "build_problem",
    "assemble_Fh",
    "assemble_Bh",
    "solve_marching",
    "solve_reduction_to_boundary",
    "postprocess_exterior",
    "trapezoidal_interior",
    "interior_energy",
]

# Matrix-valued convolution weights are stored only on the marching path.
MARCHING_MAX_BOUNDARY_DOFS = 256
MARCHING_MAX_STEPS = 1000


@dataclass
class ScatteringProblem:
    """Mesh, materials, projected transmission data and run parameters."""

    fem: FemSystem
    coeff: CoefficientField
    grid: TimeGrid
    beta0: np.ndarray                       # (N+1, dim Y_h)
    beta1: np.ndarray                       # (N+1, dim X_h)
    body_force: Optional[Callable] = None   # f(points, t)
    obs_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    radius: Optional[float] = None

    def __post_init__(self):
        N = self.grid.N
        if self.beta0.shape != (N + 1, self.fem.pair.dim_y):
            raise ValueError("beta0 has the wrong shape")
        if self.beta1.shape != (N + 1, self.fem.pair.dim_x):
            raise ValueError("beta1 has the wrong shape")
        for name, arr in (("beta0", self.beta0), ("beta1", self.beta1)):
            scale = np.max(np.abs(arr))
            if scale > 0 and np.max(np.abs(arr[0])) > 1e-8 * scale:
                raise ValueError(f"{name} is not causal: nonzero data at t = 0")
        self.obs_points = np.asarray(self.obs_points, dtype=float).reshape(-1, 2)
        if len(self.obs_points):
            bm = self.fem.bmesh
            a, b = bm.endpoints()
            d = _point_panel_distance(self.obs_points, a, b)
            if np.any(d < bm.lengths[None, :] * (1 - 1e-12)):
                raise ValueError(
                    "observation points must stay more than one panel length from the boundary"
                )

    @property
    def loads(self) -> Optional[np.ndarray]:
        """Per-step body-force load vectors, assembled lazily."""
        if self.body_force is None:
            return None
        if not hasattr(self, "_loads"):
            self._loads = np.stack(
                [
                    _load(self.fem.mesh, self.body_force, t, self.fem.dof)
                    for t in self.grid.times
                ]
            )
        return self._loads


@dataclass
class SolutionTrace:
    """Per-step coefficient records and postprocessed exterior samples."""

    problem: ScatteringProblem
    u: np.ndarray                           # (N+1, dim U_h)
    lam: np.ndarray                         # (N+1, dim X_h)
    phi: np.ndarray                         # (N+1, dim Y_h)
    exterior: np.ndarray                    # (N+1, n_obs)

    @property
    def grid(self) -> TimeGrid:
        return self.problem.grid


def build_problem(mesh: Mesh, coeff: CoefficientField, p: int, grid: TimeGrid,
                  beta0_fn, beta1_fn, body_force=None, obs_points=(),
                  radius: Optional[float] = None) -> ScatteringProblem:
    """Assemble spaces and project the transmission data onto them.

    ``beta0_fn(points, t)`` and ``beta1_fn(points, normals, t)`` receive
    panel quadrature points of shape (P, q, 2); the data are projected
    L2-orthogonally onto Y_h and X_h at every time step.
    """
    coeff.validate(mesh, p)
    bmesh = extract_boundary(mesh)
    pair = make_pair(bmesh, p)
    fem = assemble_fem_system(mesh, bmesh, pair, coeff, p)

    from .quadrature import gauss_01
    from .spaces import _panel_gram

    beta0 = np.zeros((grid.N + 1, pair.dim_y))
    beta1 = np.zeros((grid.N + 1, pair.dim_x))
    for space, fn, out, with_normals in (
        (pair.Yh, beta0_fn, beta0, False),
        (pair.Xh, beta1_fn, beta1, True),
    ):
        xi, w = gauss_01(space.degree + 3)
        a, b = bmesh.endpoints()
        pts = a[:, None, :] + xi[None, :, None] * (b - a)[:, None, :]
        B = space.basis_at(xi)
        gram = splu(sp.csc_matrix(_panel_gram(space)))
        for n, t in enumerate(grid.times):
            vals = fn(pts, bmesh.normals, t) if with_normals else fn(pts, t)
            rhs = np.zeros(space.dim)
            np.add.at(
                rhs,
                space.panel_dofs,
                np.einsum("pq,aq,q->pa", vals, B, w) * bmesh.lengths[:, None],
            )
            out[n] = gram.solve(rhs)
    return ScatteringProblem(
        fem, coeff, grid, beta0, beta1, body_force, np.asarray(obs_points, float).reshape(-1, 2), radius
    )


def assemble_Fh(fem: FemSystem) -> TransferFunction:
    """Interior transfer function F_h(s) = S_h + s^2 M_h with sparse solve."""
    return SparseTransfer(
        lambda s: (fem.S + (s * s) * fem.M).tocsc(), (fem.n_dofs, fem.n_dofs)
    )


def _schur_term(fem: FemSystem, flu) -> np.ndarray:
    """Gamma F^-1 Gamma^T, one interior solve per column of Gamma^T."""
    Gt = fem.Gamma.T.toarray().astype(complex)
    X = flu.solve(Gt)
    return fem.Gamma @ X


def _coupled_boundary_matrix(fem: FemSystem, blocks: LaplaceBlock, flu) -> np.ndarray:
    """The reduced boundary matrix solved per frequency.

    Eliminating the interior unknown from the coupled system leaves
    [[V + Gamma F^-1 Gamma^T, -(1/2) I - K], [(1/2) I^T + K^T, W]];
    the identity blocks enter with opposite signs (skew coupling), which
    is what makes the underlying two-equation formulation symmetric.
    """
    Ih = fem.Ih.toarray()
    schur = _schur_term(fem, flu)
    nx, ny = fem.pair.dim_x, fem.pair.dim_y
    B = np.empty((nx + ny, nx + ny), dtype=complex)
    B[:nx, :nx] = blocks.V + schur
    B[:nx, nx:] = -0.5 * Ih - blocks.K
    B[nx:, :nx] = 0.5 * Ih.T + blocks.K.T
    B[nx:, nx:] = blocks.W
    return B


def assemble_Bh(fem: FemSystem, s: complex,
                blocks: Optional[LaplaceBlock] = None) -> np.ndarray:
    """Materialize the reduced boundary matrix B_h(s)."""
    F = assemble_Fh(fem)
    flu = F.factorization(s)
    blocks = blocks if blocks is not None else assemble_blocks(fem.bmesh, fem.pair, s)
    return _coupled_boundary_matrix(fem, blocks, flu)


def coupled_boundary_transfer(fem: FemSystem) -> TransferFunction:
    """B_h as a TransferFunction (materializes one frequency at a time)."""
    n = fem.pair.dim_x + fem.pair.dim_y
    return MatrixTransfer(lambda s: assemble_Bh(fem, s), (n, n))


def solve_marching(problem: ScatteringProblem,
                   threads: Optional[int] = None,
                   oversampling: int = 4) -> SolutionTrace:
    """March the coupled system, feeding CQ tails of past densities.

    The interior block is the two-step trapezoidal recurrence; the
    boundary blocks carry dense matrix-valued convolution weights, so the
    path is gated to small boundary spaces and step counts.  The weights
    are computed from an oversampled contour so the tail is accurate well
    beyond the plain transform's square-root-of-eps floor.
    """
    fem, grid = problem.fem, problem.grid
    nx, ny = fem.pair.dim_x, fem.pair.dim_y
    if nx > MARCHING_MAX_BOUNDARY_DOFS or ny > MARCHING_MAX_BOUNDARY_DOFS:
        raise ValueError(
            "marching path is limited to 256 boundary dofs per space; "
            "use solve_reduction_to_boundary"
        )
    if grid.N > MARCHING_MAX_STEPS:
        raise ValueError("marching path is limited to 1000 steps")
    k = grid.k
    classes = _classify_pairs(fem.bmesh)

    def bem_block(s):
        blocks = assemble_blocks(fem.bmesh, fem.pair, s, classes)
        out = np.empty((nx + ny, nx + ny), dtype=complex)
        out[:nx, :nx] = blocks.V
        out[:nx, nx:] = -blocks.K
        out[nx:, :nx] = blocks.K.T
        out[nx:, nx:] = blocks.W
        return out

    logger.info("marching: computing %d boundary weight matrices", grid.N + 1)
    weights = cq_weights(
        MatrixTransfer(bem_block, (nx + ny, nx + ny)), grid, problem.radius,
        oversampling=oversampling,
    ).omega

    Ih = fem.Ih.toarray()
    skew = np.zeros((nx + ny, nx + ny))
    skew[:nx, nx:] = -0.5 * Ih
    skew[nx:, :nx] = 0.5 * Ih.T
    nu = fem.n_dofs
    A = sp.lil_matrix((nu + nx + ny, nu + nx + ny))
    A[:nu, :nu] = 4.0 / k**2 * fem.M + fem.S
    A[:nu, nu : nu + nx] = -fem.Gamma.T
    A[nu : nu + nx, :nu] = fem.Gamma
    A[nu:, nu:] = weights[0] + skew
    step = splu(A.tocsc())

    loads = problem.loads
    u = np.zeros((grid.N + 1, nu))
    mu = np.zeros((grid.N + 1, nx + ny))
    b0, b1 = problem.beta0, problem.beta1

    def past(arr, n, m):
        return arr[n - m] if n - m >= 0 else np.zeros(arr.shape[1])

    for n in range(grid.N + 1):
        data1 = b1[n] + 2.0 * past(b1, n, 1) + past(b1, n, 2)
        rhs_u = fem.Gamma.T @ (data1 + 2.0 * past(mu, n, 1)[:nx] + past(mu, n, 2)[:nx])
        rhs_u += 4.0 / k**2 * (fem.M @ (2.0 * past(u, n, 1) - past(u, n, 2)))
        rhs_u -= fem.S @ (2.0 * past(u, n, 1) + past(u, n, 2))
        if loads is not None:
            rhs_u += loads[n] + 2.0 * past(loads, n, 1) + past(loads, n, 2)
        tail = np.zeros(nx + ny)
        if n:
            m_hist = min(n, grid.N)
            tail = np.einsum("mij,mj->i", weights[1 : m_hist + 1], mu[n - 1 :: -1][:m_hist])
        rhs_b = np.concatenate([Ih @ b0[n], np.zeros(ny)]) - tail
        sol = step.solve(np.concatenate([rhs_u, rhs_b]))
        u[n] = sol[:nu]
        mu[n] = sol[nu:]

    lam, phi = mu[:, :nx], mu[:, nx:]
    exterior = postprocess_exterior(problem, lam, phi, problem.obs_points, threads)
    return SolutionTrace(problem, u, lam, phi, exterior)


def _transform_setup(grid: TimeGrid, radius: Optional[float], oversampling: int):
    L = oversampling * (grid.N + 1)
    rho = radius if radius is not None else default_radius(grid.N, L)
    freqs = contour_frequencies(grid, rho, L)
    return freqs, L, L // 2, rho


def _scaled_forward(arr: np.ndarray, radius: float, L: int) -> np.ndarray:
    rho_n = radius ** np.arange(L, dtype=float)
    shape = (-1,) + (1,) * (arr.ndim - 1)
    pad = np.zeros((L,) + arr.shape[1:], dtype=arr.dtype)
    pad[: arr.shape[0]] = arr
    return np.fft.ifft(pad * rho_n.reshape(shape), axis=0) * L


def _scaled_inverse(hats: np.ndarray, radius: float, n_keep: int) -> np.ndarray:
    L = hats.shape[0]
    rho_n = radius ** np.arange(n_keep, dtype=float)
    shape = (-1,) + (1,) * (hats.ndim - 1)
    return np.fft.fft(hats, axis=0)[:n_keep] / L / rho_n.reshape(shape)


def _mirror(hats: np.ndarray) -> None:
    nfreq = hats.shape[0]
    for l in range(1, (nfreq + 1) // 2):
        hats[nfreq - l] = np.conj(hats[l])


def solve_reduction_to_boundary(problem: ScatteringProblem,
                                threads: Optional[int] = None,
                                oversampling: int = 1) -> SolutionTrace:
    """All-steps-at-once solve: three interior/boundary stages per frequency.

    Per frequency s_l: (1) interior solve for the intermediate variable
    driven by the flux data, (2) reduced boundary solve for the densities,
    (3) interior solve for the field with the recovered flux.  All
    frequencies are independent; conjugate symmetry halves the work.
    """
    fem, grid = problem.fem, problem.grid
    freqs, L, half, radius = _transform_setup(grid, problem.radius, oversampling)
    nx, ny = fem.pair.dim_x, fem.pair.dim_y

    b0_hat = _scaled_forward(problem.beta0, radius, L)
    b1_hat = _scaled_forward(problem.beta1, radius, L)
    loads = problem.loads
    load_hat = _scaled_forward(loads, radius, L) if loads is not None else None
    GammaT = fem.Gamma.T.toarray()
    classes = _classify_pairs(fem.bmesh)

    def solve_one(l):
        s = freqs[l]
        try:
            F = sp.csc_matrix(fem.S + (s * s) * fem.M, dtype=complex)
            flu = splu(F)
            rhs1 = GammaT @ b1_hat[l]
            if load_hat is not None:
                rhs1 = rhs1 + load_hat[l]
            w = flu.solve(rhs1)
            blocks = assemble_blocks(fem.bmesh, fem.pair, s, classes)
            B = _coupled_boundary_matrix(fem, blocks, flu)
            rhs2 = np.concatenate(
                [fem.Ih @ b0_hat[l] - fem.Gamma @ w, np.zeros(ny, dtype=complex)]
            )
            mu = la.solve(B, rhs2)
            lam_hat, phi_hat = mu[:nx], mu[nx:]
            rhs3 = GammaT @ (b1_hat[l] + lam_hat)
            if load_hat is not None:
                rhs3 = rhs3 + load_hat[l]
            u_hat = flu.solve(rhs3)
            return lam_hat, phi_hat, u_hat
        except Exception as exc:
            raise RuntimeError(
                f"reduction-to-boundary failed at frequency index {l}, s={freqs[l]}"
            ) from exc

    results = parallel_map(solve_one, range(half + 1), threads)
    lam_hat = np.zeros((L, nx), dtype=complex)
    phi_hat = np.zeros((L, ny), dtype=complex)
    u_hat = np.zeros((L, fem.n_dofs), dtype=complex)
    for l, (lh, ph, uh) in enumerate(results):
        lam_hat[l], phi_hat[l], u_hat[l] = lh, ph, uh
    for arr in (lam_hat, phi_hat, u_hat):
        _mirror(arr)
    lam = _scaled_inverse(lam_hat, radius, grid.N + 1).real
    phi = _scaled_inverse(phi_hat, radius, grid.N + 1).real
    u = _scaled_inverse(u_hat, radius, grid.N + 1).real
    exterior = postprocess_exterior(
        problem, lam, phi, problem.obs_points, threads, oversampling
    )
    return SolutionTrace(problem, u, lam, phi, exterior)


def postprocess_exterior(problem: ScatteringProblem, lam: np.ndarray,
                         phi: np.ndarray, points, threads: Optional[int] = None,
                         oversampling: int = 1) -> np.ndarray:
    """Kirchhoff reconstruction u* = D*phi - S*lambda at exterior points.

    Applies the all-steps strategy: transform the density sequences,
    evaluate the frequency-domain potentials per contour frequency, and
    transform back.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    grid = problem.grid
    if len(points) == 0:
        return np.zeros((grid.N + 1, 0))
    fem = problem.fem
    freqs, L, half, radius = _transform_setup(grid, problem.radius, oversampling)
    lam_hat = _scaled_forward(lam, radius, L)
    phi_hat = _scaled_forward(phi, radius, L)

    def eval_one(l):
        return evaluate_potentials(
            fem.bmesh, fem.pair, freqs[l], lam_hat[l], phi_hat[l], points
        )

    results = parallel_map(eval_one, range(half + 1), threads)
    ext_hat = np.zeros((L, len(points)), dtype=complex)
    for l, val in enumerate(results):
        ext_hat[l] = val
    _mirror(ext_hat)
    return _scaled_inverse(ext_hat, radius, grid.N + 1).real


def trapezoidal_interior(M, S, k: float, forcing: Optional[np.ndarray],
                         n_steps: int, u0=None, u1=None) -> np.ndarray:
    """Trapezoidal stepping of M u'' + S u = f with averaged right-hand side.

    With ``u0``/``u1`` the free oscillation is started from given states;
    otherwise the history is extended by zero (causal forcing).
    """
    n = M.shape[0]
    u = np.zeros((n_steps + 1, n))
    A = (4.0 / k**2) * M + S
    lu = splu(sp.csc_matrix(A))
    start = 0
    if u0 is not None:
        u[0] = u0
        u[1] = u1 if u1 is not None else u0
        start = 2

    def past(arr, i, m):
        return arr[i - m] if i - m >= 0 else np.zeros(arr.shape[1])

    for i in range(start, n_steps + 1):
        rhs = (4.0 / k**2) * (M @ (2.0 * past(u, i, 1) - past(u, i, 2)))
        rhs -= S @ (2.0 * past(u, i, 1) + past(u, i, 2))
        if forcing is not None:
            rhs += forcing[i] + 2.0 * past(forcing, i, 1) + past(forcing, i, 2)
        u[i] = lu.solve(rhs)
    return u


def interior_energy(M, S, k: float, u: np.ndarray) -> np.ndarray:
    """Discrete energy (1/2)|du|_M^2 + (1/2)|au|_S^2 at the half steps."""
    du = (u[1:] - u[:-1]) / k
    au = 0.5 * (u[1:] + u[:-1])
    return 0.5 * np.einsum("ni,ni->n", du, (M @ du.T).T) + 0.5 * np.einsum(
        "ni,ni->n", au, (S @ au.T).T
    )

"""Problem setups, manufactured solutions, error metrics and rate studies.

The manufactured verification case pairs an interior plane wave (made an
exact solution by an analytic body force) with an exterior cylindrical
wave radiated from a source point at the origin; the transmission data
are generated so both fields solve the coupled problem exactly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .coupled import ScatteringProblem, SolutionTrace, build_problem, solve_reduction_to_boundary
from .cq import TimeGrid
from .fem import CoefficientField, interior_errors
from .meshing import generate_square_mesh
from .quadrature import gauss_01
from .signals import CausalSignal, Sin6Heaviside, WindowedSine
from .spaces import eval_on_panels, panel_quad_points

__all__ = [
    "ManufacturedCase",
    "ConvergenceReport",
    "plane_wave_incident",
    "causal_plane_wave_delay",
    "manufactured_case_1",
    "gaussian_lens_kappa",
    "error_metrics",
    "convergence_study",
    "DEFAULT_OBSERVATION_POINTS",
    "RATE_WINDOWS",
]

DEFAULT_OBSERVATION_POINTS = ((1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0))

# Accepted last-level estimated convergence rates for the p = 1 study:
# (lower bound, upper bound or None).
RATE_WINDOWS = {
    "e_u_l2": (1.7, 2.3),
    "e_u_h1": (0.8, 1.2),
    "e_phi": (1.7, 2.3),
    "e_lambda": (1.2, None),
    "e_obs": (1.5, 2.5),
}


def plane_wave_incident(direction, signal: CausalSignal, t0: float):
    """Transmission data of the incident plane wave psi(x.d - t - t0).

    Returns (beta0_fn, beta1_fn) suitable for :func:`build_problem`:
    beta0 is the trace of the incident wave and beta1 its normal
    derivative (d . nu) psi'.
    """
    d = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(d)
    if abs(norm - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")

    def beta0(pts, t):
        return signal(pts @ d - t - t0)

    def beta1(pts, normals, t):
        dn = normals @ d                          # (P,)
        return dn[:, None] * signal.d1(pts @ d - t - t0)

    return beta0, beta1


def causal_plane_wave_delay(bmesh, direction, signal: CausalSignal,
                            margin: float = 0.05) -> float:
    """Delay making the plane-wave data causal and the interaction start
    shortly after t = 0.

    Requires a compactly supported signal: the support band must lie
    behind the obstacle at t = 0 and sweep it for t > 0.
    """
    if signal.support_end is None:
        raise ValueError("causal plane-wave data needs a compactly supported signal")
    d = np.asarray(direction, dtype=float)
    xd = bmesh.vertices[np.unique(bmesh.panels.ravel())] @ d
    return float(xd.min() - signal.support_end - margin)


@dataclass
class ManufacturedCase:
    """Exact interior/exterior pair with generated transmission data."""

    coeff: CoefficientField
    direction: np.ndarray
    t0: float
    interior_signal: CausalSignal
    exterior_signal: CausalSignal
    kappa_fn: Callable                     # points -> (..., 2, 2)
    d_kappa_d: Callable                    # points -> (...,)  d . kappa d
    div_kappa_d: Callable                  # points -> (...,)  div(kappa d)

    # --- interior plane wave u(x, t) = sigma(t - x.d - t0) ---
    def phase(self, pts, t):
        return t - pts @ self.direction - self.t0

    def u(self, pts, t):
        return self.interior_signal(self.phase(pts, t))

    def grad_u(self, pts, t):
        dp = self.interior_signal.d1(self.phase(pts, t))
        return -dp[..., None] * self.direction

    def body_force(self, pts, t):
        xi = self.phase(pts, t)
        s1 = self.interior_signal.d1(xi)
        s2 = self.interior_signal.d2(xi)
        return (1.0 - self.d_kappa_d(pts)) * s2 + self.div_kappa_d(pts) * s1

    # --- exterior cylindrical wave from a source point at the origin ---
    def u_plus(self, pts, t):
        r = np.linalg.norm(pts, axis=-1)
        return _cylindrical_wave(self.exterior_signal, r, t)

    def du_plus_dr(self, pts, t):
        r = np.linalg.norm(pts, axis=-1)
        return _cylindrical_wave(self.exterior_signal, r, t, derivative=True)

    def grad_u_plus(self, pts, t):
        r = np.linalg.norm(pts, axis=-1)
        dr = _cylindrical_wave(self.exterior_signal, r, t, derivative=True)
        return dr[..., None] * pts / r[..., None]

    # --- transmission data beta0 = u - u_plus, beta1 = conormal jumps ---
    def beta0_fn(self, pts, t):
        return self.u(pts, t) - self.u_plus(pts, t)

    def beta1_fn(self, pts, normals, t):
        kap = self.kappa_fn(pts)
        flux_in = np.einsum("pqij,pqj,pi->pq", kap, self.grad_u(pts, t), normals)
        r = np.linalg.norm(pts, axis=-1)
        geom = np.einsum("pqi,pi->pq", pts, normals) / r
        flux_out = geom * _cylindrical_wave(self.exterior_signal, r, t, derivative=True)
        return flux_in - flux_out

    def exact_phi(self, t):
        return lambda pts: self.u_plus(pts, t)

    def exact_lambda(self, bmesh, t):
        def g(pts):
            r = np.linalg.norm(pts, axis=-1)
            geom = np.einsum("pqi,pi->pq", pts, bmesh.normals) / r
            return geom * _cylindrical_wave(self.exterior_signal, r, t, derivative=True)

        return g


def _cylindrical_wave(signal: CausalSignal, r, t, derivative: bool = False,
                      n_cells: int = 10, n_gauss: int = 12):
    """Retarded field of a 2D point source at the origin.

    u(r, t) = (1/2pi) integral_0^arccosh(t/r) g(t - r cosh theta) dtheta for
    t > r, zero otherwise; the radial derivative differentiates under the
    integral (the endpoint term vanishes because g(0) = 0).
    """
    r = np.asarray(r, dtype=float)
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    out = np.zeros(r.shape)
    lit = t > r
    if np.any(lit):
        rl = r[lit]
        theta_max = np.arccosh(t / rl)
        x0, w0 = gauss_01(n_gauss)
        q = (np.arange(n_cells)[:, None] + x0[None, :]).ravel() / n_cells
        wq = np.tile(w0 / n_cells, n_cells)
        theta = theta_max[..., None] * q                       # (..., Q)
        arg = t - rl[..., None] * np.cosh(theta)
        if derivative:
            vals = -np.cosh(theta) * signal.d1(arg)
        else:
            vals = signal(arg)
        out[lit] = theta_max / (2.0 * np.pi) * (vals @ wq)
    out = out.reshape(r.shape)
    return out[0] if scalar else out


def _experiment1_kappa():
    """The polynomial anisotropic field of the verification study."""

    def kappa(pts):
        pts = np.asarray(pts, dtype=float)
        r2 = pts[..., 0] ** 2 + pts[..., 1] ** 2
        out = np.empty(pts.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0 + 0.5 * r2
        out[..., 0, 1] = 0.25 + 0.5 * r2
        out[..., 1, 0] = 0.25 + 0.5 * r2
        out[..., 1, 1] = 3.0 + 0.5 * r2
        return out

    d = np.array([1.0, 1.0]) / np.sqrt(2.0)

    def d_kappa_d(pts):
        pts = np.asarray(pts, dtype=float)
        r2 = pts[..., 0] ** 2 + pts[..., 1] ** 2
        # 0.5*k11 + k12 + 0.5*k22 for the diagonal direction
        return 2.25 + r2

    def div_kappa_d(pts):
        pts = np.asarray(pts, dtype=float)
        return np.sqrt(2.0) * (pts[..., 0] + pts[..., 1])

    return kappa, d, d_kappa_d, div_kappa_d


def manufactured_case_1(kappa_choice: str = "experiment1") -> ManufacturedCase:
    """Verification problem on the unit square centered at the origin.

    Interior: diagonal plane wave carrying a ramped sine, delayed so the
    transmission data vanish identically at t = 0.  Exterior: cylindrical
    wave radiating sin^6(4t) from the origin.  A body force makes the
    interior wave an exact solution for the anisotropic kappa.
    """
    if kappa_choice == "experiment1":
        kappa, d, dkd, divkd = _experiment1_kappa()
        coeff = CoefficientField.spatial(kappa)
    elif kappa_choice == "identity":
        kappa = lambda pts: np.broadcast_to(np.eye(2), np.asarray(pts).shape[:-1] + (2, 2))
        d = np.array([1.0, 1.0]) / np.sqrt(2.0)
        dkd = lambda pts: np.ones(np.asarray(pts).shape[:-1])
        divkd = lambda pts: np.zeros(np.asarray(pts).shape[:-1])
        coeff = CoefficientField.constant()
    else:
        raise ValueError(f"unknown kappa choice {kappa_choice!r}")
    # Causality needs t0 >= max(-x.d) = 1/sqrt(2) over the closed square;
    # the extra margin keeps the first coarse-grid steps data-free.
    t0 = 0.9
    return ManufacturedCase(
        coeff=coeff,
        direction=d,
        t0=t0,
        interior_signal=WindowedSine(omega=2.0, tau=0.5),
        exterior_signal=Sin6Heaviside(omega=4.0),
        kappa_fn=kappa,
        d_kappa_d=dkd,
        div_kappa_d=divkd,
    )


def gaussian_lens_kappa() -> CoefficientField:
    """Isotropic lens kappa = (1 - 1.65 exp(-1/(1-r^2))) I for r < 1."""

    def kappa(pts):
        pts = np.asarray(pts, dtype=float)
        r2 = pts[..., 0] ** 2 + pts[..., 1] ** 2
        bump = np.zeros(r2.shape)
        inside = r2 < 1.0
        bump[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
        factor = 1.0 - 1.65 * bump
        out = np.zeros(pts.shape[:-1] + (2, 2))
        out[..., 0, 0] = factor
        out[..., 1, 1] = factor
        return out

    return CoefficientField.spatial(kappa)


@dataclass
class MetricRecord:
    e_u_l2: float
    e_u_h1: float
    e_lambda: float
    e_phi: float
    e_obs: float


def error_metrics(trace: SolutionTrace, case: ManufacturedCase, t: float) -> MetricRecord:
    """Interior L2/H1, boundary L2 and observation-point errors at time t."""
    grid = trace.grid
    n = int(round(t / grid.k))
    if abs(n * grid.k - t) > 1e-10 * max(1.0, t):
        raise ValueError(f"time {t} is not on the grid (k = {grid.k})")
    fem = trace.problem.fem

    e_l2, e_h1s = interior_errors(
        fem.mesh, fem.dof, trace.u[n],
        lambda pts: case.u(pts, t),
        lambda pts: case.grad_u(pts, t),
    )
    e_h1 = float(np.hypot(e_l2, e_h1s))

    e_lam = _boundary_l2_error(fem, "X", trace.lam[n], case.exact_lambda(fem.bmesh, t))
    e_phi = _boundary_l2_error(fem, "Y", trace.phi[n], case.exact_phi(t))

    if trace.exterior.shape[1]:
        obs = trace.problem.obs_points
        exact = case.u_plus(obs, t)
        e_obs = float(np.max(np.abs(exact - trace.exterior[n])))
    else:
        e_obs = float("nan")
    return MetricRecord(e_l2, e_h1, e_lam, e_phi, e_obs)


def _boundary_l2_error(fem, which: str, coefs, exact_fn, n_quad: int = 8) -> float:
    space = fem.pair.Xh if which == "X" else fem.pair.Yh
    xi, w, pts = panel_quad_points(fem.bmesh, n_quad)
    approx = eval_on_panels(space, coefs, xi)
    diff = np.abs(approx - exact_fn(pts)) ** 2
    return float(np.sqrt(np.sum(diff * w[None, :] * fem.bmesh.lengths[:, None])))


@dataclass
class ConvergenceReport:
    """Per-level errors with estimated convergence rates between levels."""

    rows: list = field(default_factory=list)

    METRICS = ("e_u_l2", "e_u_h1", "e_lambda", "e_phi", "e_obs")
    HEADER = (
        "level,n_fem,n_bem,m,e_u_l2,ecr_u_l2,e_u_h1,ecr_u_h1,"
        "e_lambda,ecr_lambda,e_phi,ecr_phi,e_obs,ecr_obs"
    )

    def add(self, level: int, n_fem: int, n_bem: int, m: int, rec: MetricRecord):
        self.rows.append(
            {
                "level": level,
                "n_fem": n_fem,
                "n_bem": n_bem,
                "m": m,
                "e_u_l2": rec.e_u_l2,
                "e_u_h1": rec.e_u_h1,
                "e_lambda": rec.e_lambda,
                "e_phi": rec.e_phi,
                "e_obs": rec.e_obs,
            }
        )

    def ecr(self, metric: str, level_index: int) -> float:
        """log2 error ratio between consecutive levels (nan on the first)."""
        if level_index == 0:
            return float("nan")
        e0 = self.rows[level_index - 1][metric]
        e1 = self.rows[level_index][metric]
        return float(np.log2(e0 / e1))

    def last_rates(self) -> dict:
        i = len(self.rows) - 1
        return {m: self.ecr(m, i) for m in self.METRICS}

    def rates_within_windows(self, windows=RATE_WINDOWS) -> bool:
        rates = self.last_rates()
        for metric, (lo, hi) in windows.items():
            r = rates[metric]
            if not np.isfinite(r) or r < lo or (hi is not None and r > hi):
                return False
        return True

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.HEADER.split(","))
        for i, row in enumerate(self.rows):
            out = [row["level"], row["n_fem"], row["n_bem"], row["m"]]
            for metric in self.METRICS:
                out.append(f"{row[metric]:.6e}")
                r = self.ecr(metric, i)
                out.append("" if not np.isfinite(r) else f"{r:.4f}")
            writer.writerow(out)
        return buf.getvalue()


def convergence_study(case: ManufacturedCase, levels: int, p: int, T: float,
                      steps0: int, obs_points=DEFAULT_OBSERVATION_POINTS,
                      threads: Optional[int] = None,
                      solver=solve_reduction_to_boundary,
                      progress: Optional[Callable[[str], None]] = None,
                      ) -> ConvergenceReport:
    """Run the manufactured problem over a mesh/time refinement ladder.

    Mesh elements quadruple and time steps double per level, keeping the
    space and time resolutions locked; errors are evaluated at the final
    time and reported with estimated convergence rates.
    """
    if levels < 2:
        raise ValueError("need at least two levels to estimate rates")
    report = ConvergenceReport()
    for level in range(levels):
        mesh = generate_square_mesh(level)
        M = steps0 * 2**level
        grid = TimeGrid(T / M, M)
        problem = build_problem(
            mesh, case.coeff, p, grid,
            case.beta0_fn, case.beta1_fn,
            body_force=case.body_force,
            obs_points=obs_points,
        )
        trace = solver(problem, threads=threads)
        rec = error_metrics(trace, case, T)
        report.add(level, mesh.n_triangles, problem.fem.bmesh.n_panels, M, rec)
        if progress is not None:
            progress(
                f"level {level}: N_FEM={mesh.n_triangles} M={M} "
                f"E_u_L2={rec.e_u_l2:.3e} E_phi={rec.e_phi:.3e}"
            )
    return report

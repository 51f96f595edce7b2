"""Command-line front end: self-tests, convergence studies, simulations."""

from __future__ import annotations

import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_config
from .coupled import build_problem, solve_reduction_to_boundary
from .cq import ScalarTransfer, TimeGrid, all_steps_at_once, cq_weights, solve_convolution_equation_marching
from .meshing import extract_boundary, generate_square_mesh
from .scenarios import (
    causal_plane_wave_delay,
    convergence_study,
    manufactured_case_1,
    plane_wave_incident,
)

FAULT_ENV = "CQSCAT_SELFTEST_FAULT"


@click.group()
@click.version_option(version=__version__)
def main():
    """Transient acoustic scattering with coupled FEM/BEM and convolution quadrature."""


# ---------------------------------------------------------------------------
# selftest
# ---------------------------------------------------------------------------
def _check_kernel_k0():
    from .bem import fundamental_solution

    # Frozen against the integral representation of K0 evaluated by
    # adaptive quadrature (see the test suite for the live oracle).
    expected = 0.421024438240708 / (2.0 * np.pi)
    got = complex(fundamental_solution(1.0, 1.0)).real
    return abs(got - expected) < 1e-12, f"K0(1)/2pi = {got:.15f}"


def _check_weights_const():
    grid = TimeGrid(0.1, 128)
    w = cq_weights(ScalarTransfer(lambda s: 1.0), grid).omega
    ok = abs(w[0] - 1.0) < 1e-12 and np.max(np.abs(w[1:])) < 1e-12
    return ok, f"max tail {np.max(np.abs(w[1:])):.2e}"


def _check_weights_inv_s():
    grid = TimeGrid(0.1, 128)
    w = cq_weights(ScalarTransfer(lambda s: 1.0 / s), grid).omega
    expected = np.full(129, grid.k)
    expected[0] = grid.k / 2.0
    err = np.max(np.abs(w - expected)) / grid.k
    return err < 1e-10, f"relative error {err:.2e}"


def _check_weights_s():
    grid = TimeGrid(0.1, 128)
    w = cq_weights(ScalarTransfer(lambda s: s), grid).omega
    expected = (4.0 / grid.k) * (-1.0) ** np.arange(129)
    expected[0] = 2.0 / grid.k
    err = np.max(np.abs(w - expected) / np.abs(expected))
    return err < 1e-10, f"relative error {err:.2e}"


def _check_cq_equivalence():
    grid = TimeGrid(0.05, 128)
    F = ScalarTransfer(lambda s: 1.0 / (s + 1.0))
    g = np.sin(grid.times) * (1.0 - np.exp(-5.0 * grid.times))
    y1 = solve_convolution_equation_marching(F, grid, None, g)
    y2 = all_steps_at_once(F, grid, g, oversampling=2).real
    err = np.max(np.abs(y1 - y2)) / np.max(np.abs(y1))
    return err < 1e-8, f"marching vs all-steps {err:.2e}"


def _check_bem_far():
    from scipy.special import kv

    from .bem import assemble_V
    from .quadrature import gauss_01
    from .spaces import make_pair

    bm = extract_boundary(generate_square_mesh(0))
    pair = make_pair(bm, 1)
    s = 2.0 + 3.0j
    V = assemble_V(bm, pair, s)
    a, b = bm.endpoints()
    i, j = 0, 8
    xi, wq = gauss_01(20)
    X = a[i] + xi[:, None] * (b[i] - a[i])
    Y = a[j] + xi[:, None] * (b[j] - a[j])
    R = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=-1)
    oracle = np.einsum("q,r,qr->", wq, wq, kv(0, s * R) / (2 * np.pi))
    oracle *= bm.lengths[i] * bm.lengths[j]
    err = abs(V[i, j] - oracle) / abs(oracle)
    return err < 1e-12, f"far entry vs 20-point Gauss {err:.2e}"


def _check_bem_self():
    from .bem import assemble_V
    from .spaces import make_pair

    bm = extract_boundary(generate_square_mesh(0))
    pair = make_pair(bm, 1)
    s = 1e-4
    V = assemble_V(bm, pair, s)
    h = bm.lengths[0]
    gamma_e = 0.5772156649015329
    closed = (h * h * (1.5 - np.log(h)) - h * h * (np.log(s / 2.0) + gamma_e)) / (2 * np.pi)
    err = abs(V[0, 0] - closed) / abs(closed)
    return err < 1e-6, f"self entry vs log closed form {err:.2e}"


def _check_coupling_identification():
    from .fem import assemble_coupling, DofMap, trace_identification
    from .spaces import make_pair

    mesh = generate_square_mesh(0)
    bm = extract_boundary(mesh)
    pair = make_pair(bm, 1)
    dof = DofMap.build(mesh, 1)
    Gamma, Ih = assemble_coupling(mesh, bm, pair, 1, dof)
    ident = trace_identification(bm, pair, dof)
    ok = np.array_equal(Gamma.toarray()[:, ident], Ih.toarray())
    return ok, "Gamma columns equal Ih under dof identification"


_SELFTEST_CHECKS = [
    ("kernel:k0", _check_kernel_k0),
    ("cq_weights:const", _check_weights_const),
    ("cq_weights:1/s", _check_weights_inv_s),
    ("cq_weights:s", _check_weights_s),
    ("cq_equivalence:ode", _check_cq_equivalence),
    ("bem_quadrature:far", _check_bem_far),
    ("bem_quadrature:self", _check_bem_self),
    ("coupling:identification", _check_coupling_identification),
]


@main.command()
def selftest():
    """Run the built-in CQ and quadrature oracle checks."""
    fault = os.environ.get(FAULT_ENV)
    n_pass = 0
    first_fail = None
    for name, fn in _SELFTEST_CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"exception: {exc}"
        if fault == name:
            ok, detail = False, "fault injected"
        status = "PASS" if ok else "FAIL"
        click.echo(f"{status}  {name:28s} {detail}")
        if ok:
            n_pass += 1
        elif first_fail is None:
            first_fail = name
    click.echo(f"PASS {n_pass}/{len(_SELFTEST_CHECKS)}")
    if first_fail is not None:
        click.echo(f"first failing check: {first_fail}", err=True)
        sys.exit(1)


# ---------------------------------------------------------------------------
# converge
# ---------------------------------------------------------------------------
def _load_config(path, out_override):
    try:
        cfg = parse_config(path)
    except ConfigError as exc:
        raise click.UsageError(str(exc))
    if out_override:
        cfg.output_dir = out_override
    return cfg


def _prepare_outdir(cfg: RunConfig) -> Path:
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "resolved.toml").write_text(cfg.resolved_text())
    return outdir


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="TOML run configuration.")
@click.option("--threads", type=int, default=None, help="Parallel solver tasks (default: all cores).")
@click.option("--out", "out_override", type=click.Path(), default=None, help="Output directory override.")
def converge(config_path, threads, out_override):
    """Run the manufactured-solution convergence ladder and write the report."""
    cfg = _load_config(config_path, out_override)
    if not cfg.manufactured:
        raise click.UsageError("converge requires manufactured = true in [run]")
    if cfg.levels < 2:
        raise click.UsageError("converge needs at least 2 levels to estimate rates")
    outdir = _prepare_outdir(cfg)
    case = manufactured_case_1()
    report = convergence_study(
        case, cfg.levels, cfg.p, cfg.T, cfg.steps,
        obs_points=cfg.observation_points, threads=threads,
        progress=lambda msg: click.echo(msg),
    )
    from .reporting import plot_convergence, write_report_csv

    write_report_csv(report, outdir / "report.csv")
    plot_convergence(report, outdir / "convergence.png")
    rates = report.last_rates()
    click.echo("last-level rates: " + "  ".join(f"{k}={v:.3f}" for k, v in rates.items()))
    if cfg.p == 1 and not report.rates_within_windows():
        click.echo("convergence rates fall outside the accepted windows", err=True)
        sys.exit(1)
    click.echo(f"report written to {outdir}")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------
@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="TOML run configuration.")
@click.option("--threads", type=int, default=None, help="Parallel solver tasks (default: all cores).")
@click.option("--out", "out_override", type=click.Path(), default=None, help="Output directory override.")
def simulate(config_path, threads, out_override):
    """Run a plane-wave scattering simulation and export traces and snapshots."""
    cfg = _load_config(config_path, out_override)
    if cfg.direction is None:
        raise click.UsageError("simulate requires an [incident] section")
    outdir = _prepare_outdir(cfg)

    mesh = cfg.build_mesh()
    if cfg.coefficients_kind == "per_component" and len(cfg.diagonals) < mesh.n_components:
        raise click.UsageError(
            f"per_component coefficients need {mesh.n_components} diagonal entries"
        )
    coeff = cfg.build_coefficients()
    signal = cfg.build_signal()
    bmesh = extract_boundary(mesh)
    delay = (
        causal_plane_wave_delay(bmesh, cfg.direction, signal)
        if cfg.delay == "auto"
        else float(cfg.delay)
    )
    beta0_fn, beta1_fn = plane_wave_incident(cfg.direction, signal, delay)
    grid = TimeGrid(cfg.T / cfg.steps, cfg.steps)
    try:
        problem = build_problem(
            mesh, coeff, cfg.p, grid, beta0_fn, beta1_fn,
            obs_points=cfg.observation_points, radius=cfg.radius,
        )
        trace = solve_reduction_to_boundary(problem, threads=threads)
    except (ValueError, RuntimeError) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(1)

    from .reporting import write_boundary_traces_csv, write_observations_csv

    write_boundary_traces_csv(trace, outdir / "boundary_traces.csv")
    write_observations_csv(
        grid.times, problem.obs_points, trace.exterior, outdir / "observations.csv"
    )
    if cfg.snapshot_times:
        _write_snapshots(cfg, problem, trace, outdir, threads)
    click.echo(f"simulation outputs written to {outdir}")


def _write_snapshots(cfg, problem, trace, outdir: Path, threads):
    import matplotlib.tri as mtri

    from .bem import _point_panel_distance
    from .coupled import postprocess_exterior
    from .reporting import plot_snapshot, write_vtk_structured, write_vtk_unstructured

    mesh, bmesh = problem.fem.mesh, problem.fem.bmesh
    grid = problem.grid
    g = cfg.exterior_grid
    gx = np.linspace(g["xmin"], g["xmax"], g["n"])
    gy = np.linspace(g["ymin"], g["ymax"], g["n"])
    GX, GY = np.meshgrid(gx, gy)
    pts = np.column_stack([GX.ravel(), GY.ravel()])

    a, b = bmesh.endpoints()
    dist = _point_panel_distance(pts, a, b)
    mask = np.all(dist >= bmesh.lengths[None, :], axis=1)
    tri = mtri.Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles)
    finder = tri.get_trifinder()
    inside = finder(pts[:, 0], pts[:, 1]) >= 0
    mask &= ~inside

    ext = np.zeros((grid.N + 1, len(pts)))
    if np.any(mask):
        ext[:, mask] = postprocess_exterior(
            problem, trace.lam, trace.phi, pts[mask], threads
        )

    for t_req in cfg.snapshot_times:
        n = int(round(t_req / grid.k))
        if n < 0 or n > grid.N:
            click.echo(f"snapshot time {t_req} outside the run; skipped", err=True)
            continue
        tag = f"{n:05d}"
        u_vert = trace.u[n][: mesh.n_vertices]
        write_vtk_unstructured(
            outdir / f"interior_{tag}.vtk", mesh, {"u": u_vert},
            title=f"interior field at t={n * grid.k:.6g}",
        )
        write_vtk_structured(
            outdir / f"exterior_{tag}.vtk",
            (g["xmin"], g["ymin"]),
            (gx[1] - gx[0], gy[1] - gy[0]),
            (g["n"], g["n"]),
            {"u_star": ext[n], "valid": mask.astype(float)},
            title=f"exterior field at t={n * grid.k:.6g}",
        )
        plot_snapshot(
            outdir / f"snapshot_{tag}.png", mesh, u_vert, (gx, gy), ext[n], mask,
            n * grid.k,
        )


if __name__ == "__main__":
    main()

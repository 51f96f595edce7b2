"""Delimited output, legacy-VTK snapshots and matplotlib figures."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import matplotlib.tri as mtri

from .meshing import Mesh
from .scenarios import ConvergenceReport


def write_report_csv(report: ConvergenceReport, path) -> None:
    Path(path).write_text(report.to_csv())


def plot_convergence(report: ConvergenceReport, path) -> None:
    """Error-vs-level figure with first and second order reference slopes."""
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    levels = [row["level"] for row in report.rows]
    styles = {
        "e_u_l2": ("o-", "interior L2"),
        "e_u_h1": ("s-", "interior H1"),
        "e_lambda": ("^-", "flux density"),
        "e_phi": ("v-", "trace density"),
        "e_obs": ("d-", "observation"),
    }
    for metric, (style, label) in styles.items():
        vals = [row[metric] for row in report.rows]
        ax.semilogy(levels, vals, style, label=label, markersize=4)
    anchor = report.rows[0]["e_u_l2"]
    ref = np.array(levels, dtype=float)
    ax.semilogy(levels, anchor * 4.0 ** (-ref), "k--", lw=0.8, label="order 2")
    ax.semilogy(levels, anchor * 2.0 ** (-ref), "k:", lw=0.8, label="order 1")
    ax.set_xlabel("refinement level")
    ax.set_ylabel("error at final time")
    ax.set_xticks(levels)
    ax.legend(fontsize=8, ncol=2)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_observations_csv(times, points, values, path) -> None:
    """Time series of the exterior field at the observation points."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["step", "time"] + [f"u_star_at_{x:g}_{y:g}" for x, y in points]
        )
        for n, t in enumerate(times):
            writer.writerow([n, f"{t:.12g}"] + [f"{v:.12e}" for v in values[n]])


def write_boundary_traces_csv(trace, path) -> None:
    """Wide per-step table of the boundary density coefficients."""
    lam, phi = trace.lam, trace.phi
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["step", "time"]
            + [f"lambda_{j}" for j in range(lam.shape[1])]
            + [f"phi_{j}" for j in range(phi.shape[1])]
        )
        for n, t in enumerate(trace.grid.times):
            writer.writerow(
                [n, f"{t:.12g}"]
                + [f"{v:.12e}" for v in lam[n]]
                + [f"{v:.12e}" for v in phi[n]]
            )


def write_vtk_unstructured(path, mesh: Mesh, point_data: dict, title="interior field") -> None:
    """Legacy-VTK ASCII unstructured grid with point scalars."""
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    lines += [f"{x!r} {y!r} 0.0" for x, y in mesh.vertices]
    lines.append(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {mesh.n_triangles}")
    lines += ["5"] * mesh.n_triangles
    lines.append(f"POINT_DATA {mesh.n_vertices}")
    for name, values in point_data.items():
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [f"{v!r}" for v in values]
    Path(path).write_text("\n".join(lines) + "\n")


def write_vtk_structured(path, origin, spacing, dims, point_data: dict,
                         title="exterior field") -> None:
    """Legacy-VTK ASCII structured points with point scalars."""
    nx, ny = dims
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx} {ny} 1",
        f"ORIGIN {origin[0]!r} {origin[1]!r} 0.0",
        f"SPACING {spacing[0]!r} {spacing[1]!r} 1.0",
        f"POINT_DATA {nx * ny}",
    ]
    for name, values in point_data.items():
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [f"{v!r}" for v in np.asarray(values).ravel()]
    Path(path).write_text("\n".join(lines) + "\n")


def plot_snapshot(path, mesh: Mesh, u_vertices, grid_xy, exterior, mask, t) -> None:
    """Combined interior/exterior field figure at one snapshot time."""
    fig, ax = plt.subplots(figsize=(5.4, 4.6))
    gx, gy = grid_xy
    ext = np.array(exterior, dtype=float)
    ext[~mask] = np.nan
    scale = max(np.nanmax(np.abs(ext), initial=0.0), np.max(np.abs(u_vertices), initial=0.0))
    scale = scale if scale > 0 else 1.0
    pc = ax.pcolormesh(
        gx, gy, ext.reshape(len(gy), len(gx)), shading="nearest",
        cmap="RdBu_r", vmin=-scale, vmax=scale,
    )
    tri = mtri.Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles)
    ax.tripcolor(tri, u_vertices, shading="gouraud", cmap="RdBu_r", vmin=-scale, vmax=scale)
    ax.set_aspect("equal")
    ax.set_title(f"t = {t:.3f}")
    fig.colorbar(pc, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

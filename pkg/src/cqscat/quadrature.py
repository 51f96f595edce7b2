"""Quadrature rules used by the FEM and BEM assembly routines.

Triangle rules are built by collapsing a tensor Gauss-Jacobi x
Gauss-Legendre grid onto the reference triangle, which gives exactness
for any requested polynomial degree without tabulated point sets.
Interval rules are plain Gauss-Legendre, plus a geometrically graded
composite rule for integrands with an endpoint (log-type) singularity.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=64)
def gauss_01(n: int):
    """Gauss-Legendre nodes/weights on [0, 1], exact to degree 2n-1."""
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=32)
def triangle_rule(degree: int):
    """Quadrature on the reference triangle (0,0)-(1,0)-(0,1).

    Exact for bivariate polynomials of total degree <= ``degree``.

    Returns
    -------
    points : np.ndarray, shape (Q, 2)
        Barycentric-free reference coordinates (x, y).
    weights : np.ndarray, shape (Q,)
        Weights summing to 1/2 (reference area).
    """
    n = (degree + 2) // 2 + 1
    # u-direction carries the (1 - u) collapse Jacobian exactly.
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    u = 0.5 * (xj + 1.0)
    wu = 0.25 * wj  # (1/2 interval scale) * (1/2 weight-function scale)
    xv, wv = gauss_01(n)
    U, V = np.meshgrid(u, xv, indexing="ij")
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    w = np.outer(wu, wv).ravel()
    return np.column_stack([x, y]), w


def graded_cells(n_levels: int, ratio: float = 0.15):
    """Geometric breakpoints on [0, 1] accumulating at 0.

    Returns the sorted breakpoints ``[0, ratio^n, ..., ratio, 1]``.
    """
    pts = [ratio**j for j in range(n_levels, 0, -1)]
    return np.concatenate([[0.0], pts, [1.0]]) if pts[-1] < 1.0 else np.concatenate([[0.0], pts])


def composite_gauss(breakpoints: np.ndarray, n: int):
    """Gauss-Legendre rule applied on each cell of a partition of [a, b]."""
    x0, w0 = gauss_01(n)
    lo = breakpoints[:-1]
    hi = breakpoints[1:]
    width = hi - lo
    x = (lo[:, None] + width[:, None] * x0[None, :]).ravel()
    w = (width[:, None] * w0[None, :]).ravel()
    return x, w


def log_singular_rule(scale: float, n: int = 12, n_levels: int = 7, ratio: float = 0.15):
    """Composite rule on [0, 1] for integrands like f(u) * K0(scale * u).

    Grades geometrically toward u = 0 (integrable log singularity) and,
    when ``scale`` is large, adds uniform cells so the exponential decay
    of the kernel is resolved cell by cell.
    """
    bp = graded_cells(n_levels, ratio)
    if scale > 8.0:
        extra = np.linspace(0.0, 1.0, int(min(40, np.ceil(scale / 4.0))) + 1)
        bp = np.unique(np.concatenate([bp, extra]))
    return composite_gauss(bp, n)

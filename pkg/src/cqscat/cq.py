"""Trapezoidal-rule convolution quadrature.

Weights are Taylor coefficients of F(delta(zeta)/k) with
delta(zeta) = 2(1 - zeta)/(1 + zeta), recovered by sampling F on a
scaled contour and applying an inverse DFT.  Convolution equations can
be solved either by marching on in time or all steps at once, where a
scaled DFT diagonalizes the discrete convolution so that each complex
frequency is an independent linear solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ._util import parallel_map

__all__ = [
    "TimeGrid",
    "trapezoidal_delta",
    "default_radius",
    "TransferFunction",
    "ScalarTransfer",
    "MatrixTransfer",
    "SparseTransfer",
    "BlockTransfer",
    "CQWeights",
    "cq_weights",
    "forward_convolution",
    "solve_convolution_equation_marching",
    "all_steps_at_once",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_n = n*k, n = 0..N."""

    k: float
    N: int

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("time step k must be positive")
        if self.N < 1:
            raise ValueError("need at least one step")

    @property
    def T(self) -> float:
        return self.k * self.N

    @property
    def times(self) -> np.ndarray:
        return self.k * np.arange(self.N + 1)


def trapezoidal_delta(zeta):
    """Generating function 2(1 - zeta)/(1 + zeta) of the trapezoidal rule."""
    zeta = np.asarray(zeta)
    if np.any(np.abs(1.0 + zeta) < 1e-300):
        raise ZeroDivisionError("delta(zeta) has a pole at zeta = -1")
    return 2.0 * (1.0 - zeta) / (1.0 + zeta)


def default_radius(N: int, n_samples: Optional[int] = None) -> float:
    """Contour radius balancing aliasing against round-off amplification.

    For an L-point contour transform of weights up to index N the
    balance point is eps^(1/(L+N+1)); the plain transform has L = N+1.
    """
    L = N + 1 if n_samples is None else n_samples
    return float(np.finfo(float).eps ** (1.0 / (L + N + 1)))


def contour_frequencies(grid: TimeGrid, radius: float,
                        n_samples: Optional[int] = None) -> np.ndarray:
    """The Laplace frequencies delta(radius * zeta_l)/k, Re s > 0."""
    if not 0.0 < radius < 1.0:
        raise ValueError("contour radius must lie in (0, 1)")
    L = grid.N + 1 if n_samples is None else n_samples
    zeta = radius * np.exp(2j * np.pi * np.arange(L) / L)
    return trapezoidal_delta(zeta) / grid.k


class TransferFunction:
    """A Laplace-domain operator family s -> F(s), Re s > 0.

    Subclasses provide ``sample`` (materialize the value), ``apply``
    (matrix-vector product) and ``solve``.  ``shape`` is None for scalar
    transfer functions.  Sums, products, inverses and 2x2 blocks are
    composable, so resolvents and Schur-complement systems are
    expressible without materializing them eagerly.
    """

    shape: Optional[Tuple[int, int]] = None

    def sample(self, s):
        raise NotImplementedError

    def apply(self, s, x):
        F = self.sample(s)
        return F * x if self.shape is None else F @ x

    def solve(self, s, b):
        F = self.sample(s)
        if self.shape is None:
            return b / F
        return np.linalg.solve(F, b)

    def __add__(self, other):
        return _SumTransfer(self, other)

    def __mul__(self, other):
        return _ProductTransfer(self, other)

    def inverse(self):
        return _InverseTransfer(self)


class ScalarTransfer(TransferFunction):
    def __init__(self, fn: Callable):
        self.fn = fn
        self.shape = None

    def sample(self, s):
        return self.fn(s)


class MatrixTransfer(TransferFunction):
    """Dense matrix-valued transfer function with cached factorization."""

    def __init__(self, fn: Callable, shape: Tuple[int, int]):
        self.fn = fn
        self.shape = shape
        self._cache_s = None
        self._cache_lu = None

    def sample(self, s):
        return np.asarray(self.fn(s))

    def _lu(self, s):
        if self._cache_s is None or s != self._cache_s:
            self._cache_lu = la.lu_factor(self.sample(s))
            self._cache_s = s
        return self._cache_lu

    def solve(self, s, b):
        return la.lu_solve(self._lu(s), b)


class SparseTransfer(TransferFunction):
    """Sparse matrix-valued transfer function, solved by sparse LU."""

    def __init__(self, fn: Callable, shape: Tuple[int, int]):
        self.fn = fn
        self.shape = shape
        self._cache_s = None
        self._cache_lu = None

    def sample(self, s):
        return self.fn(s)

    def apply(self, s, x):
        return self.sample(s) @ x

    def factorization(self, s):
        if self._cache_s is None or s != self._cache_s:
            self._cache_lu = splu(sp.csc_matrix(self.sample(s), dtype=complex))
            self._cache_s = s
        return self._cache_lu

    def solve(self, s, b):
        return self.factorization(s).solve(np.asarray(b, dtype=complex))


class _SumTransfer(TransferFunction):
    def __init__(self, A, B):
        if A.shape != B.shape:
            raise ValueError("transfer function shapes differ")
        self.A, self.B = A, B
        self.shape = A.shape

    def sample(self, s):
        return self.A.sample(s) + self.B.sample(s)

    def apply(self, s, x):
        return self.A.apply(s, x) + self.B.apply(s, x)


class _ProductTransfer(TransferFunction):
    """Composition A(s) B(s)."""

    def __init__(self, A, B):
        self.A, self.B = A, B
        if A.shape is None and B.shape is None:
            self.shape = None
        else:
            ra = A.shape or (None, None)
            rb = B.shape or (None, None)
            self.shape = (ra[0] or rb[0], rb[1] or ra[1])

    def sample(self, s):
        a, b = self.A.sample(s), self.B.sample(s)
        if self.shape is None:
            return a * b
        return a @ b if (self.A.shape and self.B.shape) else a * b

    def apply(self, s, x):
        return self.A.apply(s, self.B.apply(s, x))

    def solve(self, s, b):
        return self.B.solve(s, self.A.solve(s, b))


class _InverseTransfer(TransferFunction):
    def __init__(self, A):
        self.A = A
        self.shape = A.shape

    def sample(self, s):
        if self.shape is None:
            return 1.0 / self.A.sample(s)
        n = self.shape[0]
        return self.A.solve(s, np.eye(n, dtype=complex))

    def apply(self, s, x):
        return self.A.solve(s, x)

    def solve(self, s, b):
        return self.A.apply(s, b)


class BlockTransfer(TransferFunction):
    """2x2 (or larger) block of transfer functions, solved densely."""

    def __init__(self, blocks):
        self.blocks = blocks
        rows = sum(row[0].shape[0] for row in blocks)
        cols = sum(B.shape[1] for B in blocks[0])
        self.shape = (rows, cols)
        self._cache_s = None
        self._cache_lu = None

    def sample(self, s):
        return np.block([[np.asarray(B.sample(s)) for B in row] for row in self.blocks])

    def solve(self, s, b):
        if self._cache_s is None or s != self._cache_s:
            self._cache_lu = la.lu_factor(self.sample(s))
            self._cache_s = s
        return la.lu_solve(self._cache_lu, b)


@dataclass
class CQWeights:
    """Convolution weights omega_0..omega_N of one transfer function."""

    grid: TimeGrid
    radius: float
    omega: np.ndarray            # (N+1,) scalars or (N+1, r, c) matrices
    imag_residue: float = 0.0

    @property
    def is_matrix(self) -> bool:
        return self.omega.ndim == 3


def cq_weights(F: TransferFunction, grid: TimeGrid, radius: Optional[float] = None,
               conjugate_symmetry: bool = True, oversampling: int = 4) -> CQWeights:
    """Convolution weights by scaled inverse DFT of contour samples.

    With ``conjugate_symmetry`` the operator is assumed real in the time
    domain (F(conj s) = conj F(s)), halving the number of evaluations;
    the weights are then returned real and the discarded imaginary part
    is recorded as ``imag_residue``.  ``oversampling`` samples the contour
    at oversampling*(N+1) points, which sharpens the weights well below
    the square-root-of-eps accuracy of the plain transform.
    """
    L = oversampling * (grid.N + 1)
    radius = default_radius(grid.N, L) if radius is None else radius
    freqs = contour_frequencies(grid, radius, L)
    if conjugate_symmetry:
        half = L // 2
        samples = [np.asarray(F.sample(freqs[l]), dtype=complex) for l in range(half + 1)]
        stack = np.empty((L,) + samples[0].shape, dtype=complex)
        for l, val in enumerate(samples):
            stack[l] = val
        for l in range(1, (L + 1) // 2):
            stack[L - l] = np.conj(stack[l])
    else:
        stack = np.stack([np.asarray(F.sample(s), dtype=complex) for s in freqs])
    hat = np.fft.fft(stack, axis=0)[: grid.N + 1] / L
    scale = radius ** (-np.arange(grid.N + 1, dtype=float))
    omega = hat * scale.reshape((-1,) + (1,) * (hat.ndim - 1))
    residue = 0.0
    if conjugate_symmetry:
        mx = np.max(np.abs(omega))
        residue = float(np.max(np.abs(omega.imag)) / mx) if mx > 0 else 0.0
        omega = omega.real
    return CQWeights(grid, radius, omega, residue)


def forward_convolution(weights: CQWeights, g: np.ndarray) -> np.ndarray:
    """Strictly causal discrete convolution y_n = sum_m omega_m g_{n-m}."""
    g = np.asarray(g)
    N = weights.grid.N
    if g.shape[0] != N + 1:
        raise ValueError("sample count does not match the time grid")
    om = weights.omega
    if not weights.is_matrix:
        if g.ndim == 1:
            return np.convolve(om, g)[: N + 1]
        out = np.stack(
            [np.convolve(om, g[:, j])[: N + 1] for j in range(g.shape[1])], axis=1
        )
        return out
    if g.shape[1] != om.shape[2]:
        raise ValueError("vector length does not match matrix weights")
    dtype = np.result_type(om, g)
    y = np.zeros((N + 1, om.shape[1]), dtype=dtype)
    for n in range(N + 1):
        y[n] = np.einsum("mij,mj->i", om[: n + 1], g[n::-1])
    return y


def solve_convolution_equation_marching(F: TransferFunction, grid: TimeGrid,
                                        radius: Optional[float] = None,
                                        g: np.ndarray = None) -> np.ndarray:
    """March the convolution equation: omega_0 y_n = g_n - tail."""
    g = np.asarray(g)
    w = cq_weights(F, grid, radius)
    om = w.omega
    N = grid.N
    if not w.is_matrix:
        if abs(om[0]) < 1e-300:
            raise ZeroDivisionError("omega_0 is singular")
        y = np.zeros_like(g, dtype=np.result_type(om, g))
        for n in range(N + 1):
            tail = np.tensordot(om[1 : n + 1], y[n - 1 :: -1][: n], axes=(0, 0)) if n else 0.0
            y[n] = (g[n] - tail) / om[0]
        return y
    lu = la.lu_factor(om[0])
    y = np.zeros((N + 1, om.shape[1]), dtype=np.result_type(om, g))
    for n in range(N + 1):
        tail = (
            np.einsum("mij,mj->i", om[1 : n + 1], y[n - 1 :: -1][: n]) if n else 0.0
        )
        y[n] = la.lu_solve(lu, g[n] - tail)
    return y


def all_steps_at_once(F: TransferFunction, grid: TimeGrid, g: np.ndarray,
                      radius: Optional[float] = None,
                      conjugate_symmetry: Optional[bool] = None,
                      threads: Optional[int] = None,
                      oversampling: int = 1) -> np.ndarray:
    """Solve the discrete convolution equation by frequency diagonalization.

    Scales the data by radius^n, applies a DFT over the steps, solves
    F(s_l) y_l = g_l independently per frequency, and transforms back.
    Real data activates the conjugate-symmetric half-range of solves.
    Returns complex samples; the imaginary part is the diagonalization
    residue for real problems.  ``oversampling`` zero-pads the transform,
    trading extra frequency solves for accuracy beyond the
    square-root-of-eps floor of the plain method.
    """
    g = np.asarray(g)
    N = grid.N
    if g.shape[0] != N + 1:
        raise ValueError("sample count does not match the time grid")
    L = oversampling * (N + 1)
    radius = default_radius(N, L) if radius is None else radius
    if conjugate_symmetry is None:
        conjugate_symmetry = bool(np.isrealobj(g))
    freqs = contour_frequencies(grid, radius, L)
    rho_n = radius ** np.arange(L, dtype=float)
    shape_tail = (1,) * (g.ndim - 1)
    gpad = np.zeros((L,) + g.shape[1:], dtype=g.dtype)
    gpad[: N + 1] = g
    ghat = np.fft.ifft(gpad * rho_n.reshape((-1,) + shape_tail), axis=0) * L

    def solve_one(l):
        try:
            return F.solve(freqs[l], ghat[l])
        except Exception as exc:
            raise RuntimeError(
                f"transfer-function solve failed at frequency index {l}, s={freqs[l]}"
            ) from exc

    if conjugate_symmetry:
        half = L // 2
        results = parallel_map(solve_one, range(half + 1), threads)
        yhat = np.empty_like(ghat)
        for l, val in enumerate(results):
            yhat[l] = val
        for l in range(1, (L + 1) // 2):
            yhat[L - l] = np.conj(yhat[l])
    else:
        results = parallel_map(solve_one, range(L), threads)
        yhat = np.stack(results)
    y = np.fft.fft(yhat, axis=0)[: N + 1] / L
    return y * (1.0 / rho_n[: N + 1]).reshape((-1,) + shape_tail)

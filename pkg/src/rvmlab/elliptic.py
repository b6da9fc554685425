"""Finite-difference -Delta and -Delta + 1/r^2 on the meridian grid.

Both operators act on axisymmetric fields g(r, z) through the conservative
radial stencil

    -(r_{i+1/2} (g_{i+1} - g_i) - r_{i-1/2} (g_i - g_{i-1})) / (r_i h_r^2)

plus the centred second difference in z.  Multiplying each row by its cell
volume gives a symmetric M-matrix, which is what the linear solver sees.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import AXIS, INTERIOR, MeridianGrid

LAPLACE = "laplace"
LAPLACE_INV_R2 = "laplace_plus_inv_r2"


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class EllipticOperator:
    kind: str
    grid: MeridianGrid
    unknowns: np.ndarray = field(repr=False)   # boolean mask on the grid
    matrix: sp.csr_matrix = field(repr=False)  # volume-weighted, symmetric
    weights: np.ndarray = field(repr=False)    # cell volumes of the unknowns

    @property
    def n(self) -> int:
        return self.weights.size

    def to_vector(self, g: np.ndarray) -> np.ndarray:
        return np.asarray(g)[self.unknowns]

    def to_field(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.shape)
        out[self.unknowns] = x
        return out


def _cell_volumes(grid: MeridianGrid) -> np.ndarray:
    wr = 2.0 * np.pi * grid.r * grid.h_r
    if grid.domain.touches_axis:
        wr[0] = 2.0 * np.pi * grid.h_r ** 2 / 8.0
    return wr[:, None] * np.full((1, grid.n_z), grid.h_z)


def make_operator(grid: MeridianGrid, kind: str) -> EllipticOperator:
    if kind not in (LAPLACE, LAPLACE_INV_R2):
        raise ValueError(f"unknown operator kind {kind!r}")
    unknowns = grid.kind == INTERIOR
    if kind == LAPLACE:
        unknowns = unknowns | (grid.kind == AXIS)
    idx = -np.ones(grid.shape, dtype=np.int64)
    idx[unknowns] = np.arange(int(unknowns.sum()))
    vol = _cell_volumes(grid)
    hr, hz = grid.h_r, grid.h_z
    r = grid.r
    rows, cols, vals = [], [], []

    def add(a, b, v):
        rows.append(a)
        cols.append(b)
        vals.append(v)

    for i, j in zip(*np.nonzero(unknowns)):
        k = idx[i, j]
        w = vol[i, j]
        diag = 0.0
        if r[i] == 0.0:
            # axis row: (1/r)(r g_r)_r -> 4 (g_1 - g_0) / h^2
            c = w * 4.0 / hr ** 2
            diag += c
            if idx[1, j] >= 0:
                add(k, idx[1, j], -c)
        else:
            for ii, rh in ((i + 1, r[i] + 0.5 * hr), (i - 1, r[i] - 0.5 * hr)):
                c = w * rh / (r[i] * hr ** 2)
                diag += c
                if idx[ii, j] >= 0:
                    add(k, idx[ii, j], -c)
        for jj in (j - 1, j + 1):
            c = w / hz ** 2
            diag += c
            if idx[i, jj] >= 0:
                add(k, idx[i, jj], -c)
        if kind == LAPLACE_INV_R2:
            diag += w / r[i] ** 2
        add(k, k, diag)
    n = int(unknowns.sum())
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    for arr in (unknowns,):
        arr.flags.writeable = False
    return EllipticOperator(kind, grid, unknowns, mat, vol[unknowns])


def apply(op: EllipticOperator, g: np.ndarray) -> np.ndarray:
    """The discrete operator at the unknown nodes, using all values of g.

    Entries at nodes that are not unknowns of ``op`` are returned as 0.
    """
    g = np.asarray(g, dtype=float)
    grid = op.grid
    if g.shape != grid.shape:
        raise ValueError(f"field shape {g.shape} does not match grid {grid.shape}")
    hr, hz = grid.h_r, grid.h_z
    r = grid.r
    out = np.zeros(grid.shape)
    rc = r[1:-1, None]
    out[1:-1, 1:-1] = -((rc + 0.5 * hr) * (g[2:, 1:-1] - g[1:-1, 1:-1])
                        - (rc - 0.5 * hr) * (g[1:-1, 1:-1] - g[:-2, 1:-1])) / (rc * hr ** 2)
    out[1:-1, 1:-1] -= (g[1:-1, 2:] - 2.0 * g[1:-1, 1:-1] + g[1:-1, :-2]) / hz ** 2
    if op.kind == LAPLACE_INV_R2:
        out[1:-1, 1:-1] += g[1:-1, 1:-1] / rc ** 2
    if grid.domain.touches_axis and op.kind == LAPLACE:
        out[0, 1:-1] = (-4.0 * (g[1, 1:-1] - g[0, 1:-1]) / hr ** 2
                        - (g[0, 2:] - 2.0 * g[0, 1:-1] + g[0, :-2]) / hz ** 2)
    out[~op.unknowns] = 0.0
    return out


def pcg(A, b, rtol=1e-10, maxiter=None, x0=None):
    """Jacobi-preconditioned conjugate gradients; returns (x, iterations, rel. residual)."""
    n = b.size
    maxiter = 10 * n if maxiter is None else maxiter
    dinv = 1.0 / A.diagonal()
    x = np.zeros(n) if x0 is None else x0.copy()
    res = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    z = dinv * res
    p = z.copy()
    rz = res @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        res -= alpha * Ap
        rel = np.linalg.norm(res) / bnorm
        if rel <= rtol:
            return x, it, rel
        z = dinv * res
        rz_new = res @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"PCG did not converge in {maxiter} iterations (rel. residual {rel:.3e})")


def solve_dirichlet(op: EllipticOperator, rhs: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Solve ``op g = rhs`` at the unknown nodes with g = 0 on the physical boundary."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != op.grid.shape:
        raise ValueError("rhs shape does not match grid")
    b = op.weights * rhs[op.unknowns]
    if not np.all(np.isfinite(b)):
        raise ValueError("rhs must be finite at the unknown nodes")
    x, _, _ = pcg(op.matrix, b, rtol=rtol)
    return op.to_field(x)


def lifted_laplacian(grid: MeridianGrid, g: np.ndarray, n_phi: int = 4) -> np.ndarray:
    """Restriction of -Delta (g e^{i phi}) to the meridian plane.

    The lifted field is sampled on ``n_phi`` azimuthal planes; the (r, z) part
    of the cylindrical Laplacian uses the same stencil as ``apply`` and the
    azimuthal second derivative is taken spectrally.  The result is divided by
    e^{i phi} and averaged over the planes.
    """
    phis = 2.0 * np.pi * np.arange(n_phi) / n_phi
    lifted = g[None, :, :] * np.exp(1j * phis)[:, None, None]
    k = np.fft.fftfreq(n_phi, d=1.0 / n_phi)
    d2 = np.fft.ifft(-(k ** 2)[:, None, None] * np.fft.fft(lifted, axis=0), axis=0)
    lap_op = make_operator_stub(grid)
    out = np.empty(lifted.shape, dtype=complex)
    for s in range(n_phi):
        out[s] = (apply(lap_op, lifted[s].real) + 1j * apply(lap_op, lifted[s].imag))
    rc = grid.r[1:-1, None]
    out[:, 1:-1, 1:-1] -= d2[:, 1:-1, 1:-1] / rc ** 2
    restricted = out * np.exp(-1j * phis)[:, None, None]
    res = restricted.mean(axis=0)
    mask = grid.kind == INTERIOR
    return np.where(mask, res.real, 0.0)


def make_operator_stub(grid: MeridianGrid) -> EllipticOperator:
    # stencil-only laplace operator (no matrix) for applying to lifted slices
    unknowns = grid.kind == INTERIOR
    return EllipticOperator(LAPLACE, grid, unknowns, None, np.empty(0))

"""Finite-difference discretization of ``M u = (a u_x)_x`` on (0, 1).

Flux form with the coefficient evaluated at cell midpoints::

    (M_h u)_i = (a_{i+1/2} (u_{i+1} - u_i) / h_{i+1/2}
                 - a_{i-1/2} (u_i - u_{i-1}) / h_{i-1/2}) / w_i

with ``w_i`` the dual-cell (mass) weight.  The matrix ``K = W M_h`` is the
symmetric negative definite stiffness; on a uniform grid ``M_h`` itself is
symmetric.  Grids are ``x = s**grading`` for uniform ``s``.

WD: unknowns at the interior nodes, ``u(0) = u(1) = 0``.
SD: unknowns at ``x_0 = 0 .. x_{N-1}``, ``u(1) = 0``, and the flux through
``x = 0`` is dropped, which imposes ``(a u_x)(0) = 0`` weakly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .model import BC_SD, BC_WD, WD, DiffusionCoefficient, SystemSpec, validate_diffusion


class OperatorError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    N: int
    grid: np.ndarray        # all grid points, 0 and 1 included
    nodes: np.ndarray       # the N unknown locations
    flux: np.ndarray        # a_{i+1/2} / h_{i+1/2} for every cell of ``grid``
    mass: np.ndarray        # w_i, diagonal of the lumped mass matrix
    bc: str
    a: Callable
    grading: float

    @property
    def stiff_diag(self) -> np.ndarray:
        c = self.flux
        if self.bc == BC_WD:
            return -(c[:-1] + c[1:])
        d = -c[: self.N].copy()
        d[1:] -= c[: self.N - 1]
        return d

    @property
    def stiff_off(self) -> np.ndarray:
        if self.bc == BC_WD:
            return self.flux[1:-1].copy()
        return self.flux[: self.N - 1].copy()

    @property
    def stiffness(self) -> sp.csr_matrix:
        """Symmetric ``K = W M_h`` (negative definite)."""
        off = self.stiff_off
        return sp.diags([off, self.stiff_diag, off], [-1, 0, 1], format="csr")

    @property
    def M_h(self) -> sp.csr_matrix:
        return sp.diags(1.0 / self.mass) @ self.stiffness

    def apply(self, u: np.ndarray) -> np.ndarray:
        """``M_h u`` along the last axis."""
        u = np.asarray(u, dtype=float)
        out = self.stiff_diag * u
        off = self.stiff_off
        out[..., :-1] += off * u[..., 1:]
        out[..., 1:] += off * u[..., :-1]
        return out / self.mass

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """Cell slopes ``(u_{i+1} - u_i) / h`` on every cell of ``grid``
        (boundary values from the boundary conditions)."""
        u = np.asarray(u, dtype=float)
        full = self.extend(u)
        return np.diff(full, axis=-1) / np.diff(self.grid)

    def extend(self, u: np.ndarray) -> np.ndarray:
        """Pad nodal values with the Dirichlet boundary values to ``grid``."""
        u = np.asarray(u, dtype=float)
        pad = [(0, 0)] * (u.ndim - 1)
        if self.bc == BC_WD:
            return np.pad(u, pad + [(1, 1)])
        return np.pad(u, pad + [(0, 1)])

    def inner(self, u, v) -> np.ndarray:
        return np.sum(self.mass * u * v, axis=-1)

    def norm(self, u) -> np.ndarray:
        return np.sqrt(self.inner(u, u))

    def dense(self) -> np.ndarray:
        return self.M_h.toarray()


def default_grading(a) -> float:
    """Grid exponent used when the configuration says ``auto``.

    WD eigenfunctions behave like ``x**(1 - K)`` at 0 and the eigenvalue error
    on ``x = s**g`` decays like ``h**min(2, g (1 - K))``, hence
    ``g = min(3, 2 / (1 - K))``.  SD eigenfunctions are smoother and ``g = 3``
    gives second order up to ``K`` close to 2.  Larger exponents push the
    operator entries (``~ h_0**(K - 2)``) past what double precision
    eigensolvers resolve.
    """
    if isinstance(a, DiffusionCoefficient):
        try:
            rep = validate_diffusion(a)
        except ValueError:
            return 2.0
        if rep.cls == WD:
            return float(min(3.0, 2.0 / (1.0 - rep.K)))
        return 3.0
    return 1.0


def make_grid(N: int, bc: str, grading: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    if bc == BC_WD:
        s = np.arange(N + 2) / (N + 1)
        grid = s ** grading
        return grid, grid[1:-1]
    if bc == BC_SD:
        s = np.arange(N + 1) / N
        grid = s ** grading
        return grid, grid[:-1]
    raise OperatorError(f"unknown boundary regime {bc!r}")


def assemble(a: Callable, N: int, bc: str = BC_WD, grading: float = 1.0) -> DiscreteOperator:
    if N < 3:
        raise OperatorError(f"need at least 3 unknowns, got N = {N}")
    grid, nodes = make_grid(N, bc, grading)
    h = np.diff(grid)
    mid = 0.5 * (grid[:-1] + grid[1:])
    with np.errstate(all="ignore"):
        amid = np.asarray(a(mid), dtype=float)
    if amid.shape != mid.shape or not np.all(np.isfinite(amid)) or np.any(amid <= 0):
        raise OperatorError("diffusion coefficient not evaluable (or not positive) at a midpoint")
    flux = amid / h
    if bc == BC_WD:
        mass = 0.5 * (h[:-1] + h[1:])
    else:
        mass = np.empty(N)
        mass[0] = 0.5 * h[0]
        mass[1:] = 0.5 * (h[: N - 1] + h[1:N])
    return DiscreteOperator(N=N, grid=grid, nodes=nodes, flux=flux, mass=mass,
                            bc=bc, a=a, grading=float(grading))


def assemble_operator(spec: SystemSpec, N: int | None = None) -> DiscreteOperator:
    grading = spec.grading if spec.grading is not None else default_grading(spec.a)
    return assemble(spec.a, spec.N if N is None else N, spec.bc, grading)


# ---------------------------------------------------------------------------
# Hardy-Poincare constant

_GX, _GW = np.polynomial.legendre.leggauss(8)


def _cell_quadrature(grid: np.ndarray):
    """Gauss points/weights per cell, in log(x) on cells away from 0 and in
    ``x = x_1 s**2`` on a cell touching 0 (both absorb the power-type
    behaviour of ``a`` and ``a/x**2``)."""
    left, right = grid[:-1, None], grid[1:, None]
    pos = left[:, 0] > 0.0
    X = np.empty((grid.size - 1, _GX.size))
    J = np.empty_like(X)
    tl = np.log(left[pos])
    tr = np.log(right[pos])
    t = 0.5 * (tr - tl) * _GX + 0.5 * (tr + tl)
    X[pos] = np.exp(t)
    J[pos] = X[pos] * _GW * 0.5 * (tr - tl)
    if not pos[0]:
        s = 0.5 * (_GX + 1.0)
        X[0] = right[0, 0] * s ** 2
        J[0] = right[0, 0] * s * _GW  # d(x1 s^2) = 2 x1 s ds, ds = dt/2
    return X, J


def hardy_poincare_constant(op: DiscreteOperator) -> float:
    """Best constant C of ``int (a/x^2) u^2 <= C int a u_x^2`` over the
    piecewise-linear functions on ``op.grid``.

    Both quadratic forms are integrated with Gauss rules adapted to the
    singular weight, so the discrete constant is a Rayleigh quotient of a
    genuine ``H_a^1`` function: it bounds the continuous constant from below
    and increases on nested grids.  Dirichlet (WD) regime only.
    """
    if op.bc != BC_WD:
        raise OperatorError("Hardy-Poincare constant is computed for the Dirichlet (WD) regime")
    grid = op.grid
    h = np.diff(grid)[:, None]
    X, J = _cell_quadrature(grid)
    with np.errstate(all="ignore"):
        aX = np.asarray(op.a(X), dtype=float)
    if not np.all(np.isfinite(aX)) or np.any(aX <= 0):
        raise OperatorError("diffusion coefficient not evaluable at quadrature points")
    phiL = (grid[1:, None] - X) / h
    phiR = (X - grid[:-1, None]) / h
    wgt = aX / X ** 2 * J
    mLL = np.sum(wgt * phiL * phiL, axis=1)
    mRR = np.sum(wgt * phiR * phiR, axis=1)
    mLR = np.sum(wgt * phiL * phiR, axis=1)
    kc = np.sum(aX * J, axis=1) / h[:, 0] ** 2

    W = sp.diags([mLR[1:-1], mRR[:-1] + mLL[1:], mLR[1:-1]], [-1, 0, 1], format="csc")
    S = sp.diags([-kc[1:-1], kc[:-1] + kc[1:], -kc[1:-1]], [-1, 0, 1], format="csc")
    try:
        vals = eigsh(W, k=1, M=S, which="LA", return_eigenvectors=False, tol=1e-12)
    except Exception as exc:  # ArpackNoConvergence, singular S
        raise OperatorError(f"generalized eigenproblem failed: {exc}") from exc
    return float(vals[0])


def hardy_quadratic_forms(op: DiscreteOperator, u: np.ndarray) -> tuple[float, float]:
    """``(int (a/x^2) u^2, int a u_x^2)`` for the piecewise-linear ``u``,
    with the quadrature of :func:`hardy_poincare_constant`."""
    full = op.extend(u)
    grid = op.grid
    h = np.diff(grid)[:, None]
    X, J = _cell_quadrature(grid)
    aX = op.a(X)
    uX = (full[:-1, None] * (grid[1:, None] - X) + full[1:, None] * (X - grid[:-1, None])) / h
    lhs = float(np.sum(aX / X ** 2 * uX ** 2 * J))
    slope = np.diff(full) / h[:, 0]
    rhs = float(np.sum(np.sum(aX * J, axis=1) * slope ** 2))
    return lhs, rhs


def hardy_analytic(alpha: float) -> float:
    """``4 / (1 - alpha)^2``, the Hardy constant of ``a = x**alpha`` (alpha < 1)."""
    return 4.0 / (1.0 - alpha) ** 2


def export_operator_csv(op: DiscreteOperator, path) -> None:
    """Banded dump: node, x, mass, sub-, main- and super-diagonal of M_h."""
    Mh = op.M_h.tocsr()
    main = Mh.diagonal()
    sub = np.concatenate([[0.0], Mh.diagonal(-1)])
    sup = np.concatenate([Mh.diagonal(1), [0.0]])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "x", "mass", "sub", "main", "super"])
        for i in range(op.N):
            w.writerow([i, repr(float(op.nodes[i])), repr(float(op.mass[i])),
                        repr(float(sub[i])), repr(float(main[i])), repr(float(sup[i]))])

"""Galerkin truncation, Gramians, minimum-energy null controls and the
Crank-Nicolson simulator for ``dY/dt = (D M + A) Y + B v 1_omega``.

Truncated state: mode-major coefficients ``y[p * n + i] = <Y_i, Phi_p>``.
Control: nodal values ``v_c(x_j)`` on the grid nodes inside omega, with the
lumped-mass energy ``sum_j w_j v_c(x_j)^2``.  The truncated input matrix acts
on the scaled values ``sqrt(w_j) v_c(x_j)`` so that this energy is Euclidean.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import (block_diag, cho_factor, cho_solve, eigh, expm,
                          solve_continuous_lyapunov, solve_triangular)
from scipy.sparse.linalg import splu

from .kalman import dichotomy_scan, mode_matrix
from .model import SystemSpec
from .operator import DiscreteOperator
from .spectral import SpectralBasis

SINGULAR_TOL = 1e-12


class ControllabilityError(RuntimeError):
    """The truncated system cannot be steered to zero."""

    def __init__(self, message: str, deficient_modes=()):
        super().__init__(message)
        self.deficient_modes = list(deficient_modes)


class SimulationError(RuntimeError):
    pass


def omega_mask(nodes: np.ndarray, omega) -> np.ndarray:
    return (nodes > omega[0]) & (nodes < omega[1])


@dataclass(frozen=True, eq=False)
class TruncatedSystem:
    P: int
    n: int
    m: int
    A_tilde: np.ndarray      # (nP, nP), block p is L_p
    B_tilde: np.ndarray      # (nP, m * N_omega)
    omega_gram: np.ndarray   # (P, P), sum_{x_j in omega} w_j Phi_p Phi_q
    omega_idx: np.ndarray
    basis: SpectralBasis
    spec: SystemSpec

    @property
    def dim(self) -> int:
        return self.n * self.P

    @property
    def Q(self) -> np.ndarray:
        """``B_tilde B_tilde^T = kron(omega_gram, B B^T)``."""
        return np.kron(self.omega_gram, self.spec.B @ self.spec.B.T)


def galerkin_truncate(spec: SystemSpec, basis: SpectralBasis, P: int | None = None) -> TruncatedSystem:
    P = basis.P if P is None else P
    if not 1 <= P <= basis.P:
        raise ValueError(f"P = {P} outside 1..{basis.P}")
    b = basis.truncate(P)
    n, m = spec.n, spec.m
    A_tilde = block_diag(*[mode_matrix(spec, float(lam)) for lam in b.lambdas])
    idx = np.flatnonzero(omega_mask(b.nodes, spec.omega))
    if idx.size == 0:
        raise ValueError(f"no grid node inside omega = {spec.omega}")
    sw = np.sqrt(b.mass[idx])
    Phi_w = b.modes[:, idx] * sw             # (P, N_omega)
    omega_gram = Phi_w @ Phi_w.T
    # B_tilde[(p, i), (c, j)] = B[i, c] sqrt(w_j) Phi_p(x_j)
    B_tilde = np.einsum("ic,pj->picj", spec.B, Phi_w).reshape(n * P, m * idx.size)
    return TruncatedSystem(P, n, m, A_tilde, B_tilde, omega_gram, idx, b, spec)


# ---------------------------------------------------------------------------
# Gramians


def _simpson_gramian(A, Q, T, panels):
    panels += panels % 2
    h = T / panels
    Eh = expm(A * h)
    X = np.eye(A.shape[0])
    acc = np.zeros_like(Q)
    for k in range(panels + 1):
        wk = 1.0 if k in (0, panels) else (4.0 if k % 2 else 2.0)
        acc += wk * (X @ Q @ X.T)
        X = Eh @ X
    return acc * h / 3.0


def simpson_gramian(A, Q, T: float, N_t: int = 200, rtol: float = 1e-8,
                    max_panels: int = 1 << 14) -> tuple[np.ndarray, int]:
    """``int_0^T e^{As} Q e^{A^T s} ds`` by composite Simpson, doubling the
    panel count until the relative Frobenius change is below ``rtol``."""
    if N_t < 100:
        raise ValueError("N_t must be >= 100")
    panels = N_t
    G = _simpson_gramian(A, Q, T, panels)
    while panels < max_panels:
        panels *= 2
        G2 = _simpson_gramian(A, Q, T, panels)
        scale = np.linalg.norm(G2)
        change = np.linalg.norm(G2 - G) / scale if scale > 0 else 0.0
        G = G2
        if change < rtol:
            break
    return 0.5 * (G + G.T), panels


def lyapunov_gramian(A, Q, T: float) -> np.ndarray:
    """Gramian from ``A G + G A^T = e^{AT} Q e^{A^T T} - Q``."""
    E = expm(A * T)
    G = solve_continuous_lyapunov(A, E @ Q @ E.T - Q)
    return 0.5 * (G + G.T)


def controllability_gramian(ts: TruncatedSystem, T: float | None = None, N_t: int = 200,
                            method: str = "lyapunov") -> np.ndarray:
    T = ts.spec.T if T is None else float(T)
    Q = ts.Q
    if not np.any(Q):
        return np.zeros_like(Q)
    if method == "simpson":
        return simpson_gramian(ts.A_tilde, Q, T, N_t)[0]
    if method != "lyapunov":
        raise ValueError(f"unknown Gramian method {method!r}")
    G = lyapunov_gramian(ts.A_tilde, Q, T)
    # fall back when the Sylvester operator is (nearly) singular
    resid = ts.A_tilde @ G + G @ ts.A_tilde.T
    E = expm(ts.A_tilde * T)
    target = E @ Q @ E.T - Q
    tscale = np.linalg.norm(target) + np.linalg.norm(ts.A_tilde) * np.linalg.norm(G)
    if not np.all(np.isfinite(G)) or np.linalg.norm(resid - target) > 1e-8 * max(tscale, 1e-300):
        return simpson_gramian(ts.A_tilde, Q, T, N_t)[0]
    return G


@dataclass(frozen=True, eq=False)
class GramianCheck:
    singular: bool
    sigma_min: float          # smallest eigenvalue of G
    sigma_max: float
    equilibrated_min: float   # smallest eigenvalue of diag-equilibrated G
    kernel: np.ndarray        # (nP, k) orthonormal kernel directions
    kernel_modes: list[int]   # 1-based modes carrying kernel content


def check_gramian(G: np.ndarray, n: int, tol: float = SINGULAR_TOL) -> GramianCheck:
    """Singularity test on ``S G S`` with ``S = diag(G)^{-1/2}``.

    Equilibration removes the mode-dependent scale of the Gramian (high
    modes decay fast and have small Gramian entries without being
    uncontrollable); a zero diagonal entry is a structural kernel direction.
    """
    G = 0.5 * (G + G.T)
    ev = np.linalg.eigvalsh(G)
    smax = float(ev[-1]) if ev.size else 0.0
    d = np.diag(G).copy()
    dmax = float(d.max()) if d.size else 0.0
    dead = d <= 1e-14 * dmax if dmax > 0 else np.ones_like(d, dtype=bool)
    live = ~dead
    kernels = [np.eye(G.shape[0])[:, dead]]
    emin = 0.0
    if np.any(live):
        s = 1.0 / np.sqrt(d[live])
        Ge = G[np.ix_(live, live)] * s[:, None] * s[None, :]
        w, V = eigh(Ge)
        emin = float(w[0] / w[-1])
        small = w <= tol * w[-1]
        if np.any(small):
            K = np.zeros((G.shape[0], int(small.sum())))
            Kl = V[:, small] * s[:, None]
            K[live] = Kl / np.linalg.norm(Kl, axis=0)
            kernels.append(K)
    kernel = np.hstack(kernels)
    singular = kernel.shape[1] > 0
    modes = []
    if singular:
        content = np.linalg.norm(kernel.reshape(-1, n, kernel.shape[1]), axis=1).max(axis=1)
        modes = [int(p) + 1 for p in np.flatnonzero(content > 1e-8)]
    return GramianCheck(singular, float(ev[0]) if ev.size else 0.0, smax,
                        emin if not np.any(dead) else 0.0, kernel, modes)


# ---------------------------------------------------------------------------
# minimum-energy null control


def mode_coefficients(Y0: np.ndarray, basis: SpectralBasis) -> np.ndarray:
    """Mode-major coefficient vector of an ``(n, N)`` state."""
    Y0 = np.atleast_2d(np.asarray(Y0, dtype=float))
    return ((basis.modes * basis.mass) @ Y0.T).ravel()


def initial_state(terms, basis: SpectralBasis, n: int) -> np.ndarray:
    """``Y0 = sum coeff * Phi_p e_component`` from ``[component, p, coeff]``
    triples (1-based component and mode)."""
    Y0 = np.zeros((n, basis.op.N))
    for comp, p, coeff in terms:
        if not 1 <= int(comp) <= n or not 1 <= int(p) <= basis.P:
            raise ValueError(f"initial term {[comp, p, coeff]} out of range")
        Y0[int(comp) - 1] += float(coeff) * basis.modes[int(p) - 1]
    return Y0


@dataclass(eq=False)
class ControlField:
    v: np.ndarray             # (m, N_omega, N_t + 1) nodal control values
    t: np.ndarray
    x: np.ndarray             # omega nodes
    omega_idx: np.ndarray
    T: float
    energy: float             # exact truncated energy eta^T G eta
    energy_quadrature: float  # trapezoidal int int_omega |v|^2
    truncated_residual: float
    P: int
    gramian: GramianCheck
    eta: np.ndarray
    projected: bool = False
    residual: float | None = None  # full-PDE value once verified

    @property
    def N_t(self) -> int:
        return self.t.size - 1

    def source(self, k: int, spec: SystemSpec, N: int) -> np.ndarray:
        """``B v 1_omega`` at time index ``k`` as an ``(n, N)`` array."""
        f = np.zeros((spec.n, N))
        f[:, self.omega_idx] = spec.B @ self.v[:, :, k]
        return f


def synthesize_null_control(spec: SystemSpec, basis: SpectralBasis, Y0, T: float | None = None,
                            P: int | None = None, N_t: int | None = None,
                            project_out_deficient: bool = False,
                            method: str = "lyapunov") -> ControlField:
    """HUM control ``v(t) = B_tilde^T e^{A_tilde^T (T - t)} eta`` with
    ``G eta = -e^{A_tilde T} y0``.

    Raises :class:`ControllabilityError` when the Gramian is singular, unless
    ``project_out_deficient`` is set, in which case only the component of the
    target in the range of ``G`` is steered.
    """
    T = spec.T if T is None else float(T)
    N_t = spec.N_t if N_t is None else int(N_t)
    ts = galerkin_truncate(spec, basis, P)
    G = controllability_gramian(ts, T, method=method)
    chk = check_gramian(G, spec.n)
    y0 = mode_coefficients(Y0, ts.basis)
    E = expm(ts.A_tilde * T)
    target = -E @ y0
    if chk.singular and not project_out_deficient:
        rep = dichotomy_scan(spec, ts.basis, ts.P)
        modes = rep.deficient_modes or chk.kernel_modes
        raise ControllabilityError(
            f"system not controllable at this truncation (P = {ts.P}) "
            f"- deficient modes: {modes}", modes)
    if chk.singular:
        w, V = eigh(G)
        keep = w > SINGULAR_TOL * w[-1]
        eta = V[:, keep] @ ((V[:, keep].T @ target) / w[keep])
    elif np.any(y0):
        d = np.sqrt(np.diag(G))
        c = cho_factor(G / d[:, None] / d[None, :])
        eta = cho_solve(c, target / d) / d
    else:
        eta = np.zeros_like(y0)
    y0n = np.linalg.norm(y0)
    trunc = float(np.linalg.norm(E @ y0 + G @ eta) / y0n) if y0n > 0 else 0.0

    t = np.linspace(0.0, T, N_t + 1)
    Ed = expm(ts.A_tilde.T * (T / N_t))
    mu = np.empty((N_t + 1, ts.dim))
    mu[-1] = eta
    for k in range(N_t - 1, -1, -1):
        mu[k] = Ed @ mu[k + 1]
    Bmu = mu.reshape(N_t + 1, ts.P, spec.n) @ spec.B      # (N_t+1, P, m)
    Phi_om = ts.basis.modes[:, ts.omega_idx]               # (P, N_omega)
    v = np.einsum("kpc,pj->cjk", Bmu, Phi_om)
    w_om = ts.basis.mass[ts.omega_idx]
    inst = np.einsum("cjk,j->k", v ** 2, w_om)
    eq = float(np.sum(0.5 * (inst[1:] + inst[:-1]) * np.diff(t)))
    return ControlField(v=v, t=t, x=ts.basis.nodes[ts.omega_idx], omega_idx=ts.omega_idx,
                        T=T, energy=float(eta @ G @ eta), energy_quadrature=eq,
                        truncated_residual=trunc, P=ts.P, gramian=chk, eta=eta,
                        projected=bool(chk.singular))


# ---------------------------------------------------------------------------
# Crank-Nicolson simulation


@dataclass(eq=False)
class Trajectory:
    t: np.ndarray            # snapshot times
    Y: np.ndarray            # (snapshots, n, N)
    Y_T: np.ndarray
    norms: np.ndarray        # L2 norm at every time step
    t_all: np.ndarray


def state_norm(Y: np.ndarray, op: DiscreteOperator) -> float:
    return float(np.sqrt(np.sum(op.mass * np.atleast_2d(Y) ** 2)))


def simulate_forward(spec: SystemSpec, op: DiscreteOperator, Y0, control: ControlField | None = None,
                     N_t: int | None = None, T: float | None = None, stride: int = 10,
                     source=None, startup: int = 0) -> Trajectory:
    """Crank-Nicolson for the coupled block operator ``D (x) M_h + A (x) I``.

    ``control`` supplies ``B v 1_omega`` on its own time grid (``N_t`` must
    match); ``source(t)`` adds an arbitrary ``(n, N)`` forcing.  Forcing is
    averaged over each step.  ``startup > 0`` replaces that many initial steps
    by two backward-Euler half steps each (Rannacher start), which damps the
    stiff components of nonsmooth data that Crank-Nicolson alone keeps
    oscillating.
    """
    n, N = spec.n, op.N
    Y = np.array(np.broadcast_to(np.asarray(Y0, dtype=float), (n, N)))
    if control is not None:
        T = control.T if T is None else float(T)
        N_t = control.N_t if N_t is None else int(N_t)
        if N_t != control.N_t or not np.isclose(T, control.T):
            raise SimulationError("control time grid does not match the simulation grid")
    T = spec.T if T is None else float(T)
    N_t = spec.N_t if N_t is None else int(N_t)
    if N_t < 1 or stride < 1:
        raise SimulationError("N_t and stride must be positive")
    dt = T / N_t
    L = (sp.kron(sp.csr_matrix(spec.D), op.M_h) + sp.kron(sp.csr_matrix(spec.A), sp.identity(N))).tocsc()
    I = sp.identity(n * N, format="csc")
    try:
        lu = splu((I - 0.5 * dt * L).tocsc())
    except RuntimeError as exc:
        raise SimulationError(f"Crank-Nicolson factorization failed: {exc}") from exc
    R = (I + 0.5 * dt * L).tocsr()
    t_all = np.linspace(0.0, T, N_t + 1)

    def forcing(k):
        f = np.zeros((n, N))
        if control is not None:
            f += control.source(k, spec, N)
        if source is not None:
            f += source(t_all[k])
        return f.ravel()

    forced = control is not None or source is not None
    y = Y.ravel().copy()
    snaps_t, snaps = [0.0], [Y.copy()]
    norms = np.empty(N_t + 1)
    norms[0] = state_norm(Y, op)
    f_old = forcing(0) if forced else None
    for k in range(N_t):
        f_new = forcing(k + 1) if forced else None
        if k < startup:
            f_mid = 0.5 * (f_old + f_new) if forced else 0.0
            y = lu.solve(y + 0.5 * dt * f_mid)
            y = lu.solve(y + 0.5 * dt * f_new if forced else y)
        else:
            rhs = R @ y
            if forced:
                rhs += 0.5 * dt * (f_old + f_new)
            y = lu.solve(rhs)
        f_old = f_new
        Yk = y.reshape(n, N)
        norms[k + 1] = state_norm(Yk, op)
        if (k + 1) % stride == 0 or k + 1 == N_t:
            snaps_t.append(t_all[k + 1])
            snaps.append(Yk.copy())
    if not np.all(np.isfinite(y)):
        raise SimulationError("non-finite state")
    if snaps_t[-1] != t_all[-1]:
        snaps_t.append(t_all[-1])
        snaps.append(y.reshape(n, N).copy())
    return Trajectory(np.array(snaps_t), np.array(snaps), y.reshape(n, N).copy(), norms, t_all)


def verify_null_control(spec: SystemSpec, basis: SpectralBasis, Y0, ctrl: ControlField | None,
                        N_t: int | None = None, T: float | None = None) -> dict:
    """Simulate with the control and report ``||Y(T)|| / ||Y0||``."""
    op = basis.op
    traj = simulate_forward(spec, op, Y0, ctrl, N_t=N_t, T=T, stride=max(1, 10 ** 9))
    n0 = state_norm(Y0, op)
    res = state_norm(traj.Y_T, op) / n0 if n0 > 0 else 0.0
    P = ctrl.P if ctrl is not None else basis.P
    modes = mode_coefficients(traj.Y_T, basis.truncate(P)).reshape(P, spec.n)
    if ctrl is not None:
        ctrl.residual = res
    return {
        "residual": res,
        "mode_residuals": modes / n0 if n0 > 0 else modes,
        "energy": ctrl.energy if ctrl is not None else 0.0,
        "final_norm": state_norm(traj.Y_T, op),
    }


# ---------------------------------------------------------------------------
# observability


def observability_gramian(ts: TruncatedSystem, T: float | None = None, N_t: int = 200) -> np.ndarray:
    """``int_0^T Phi(t) Phi(t)^T dt`` for the observed adjoint trajectories
    ``B_tilde^T e^{A_tilde^T (T - t)} xi``: Simpson over the adjoint flow,
    independent of the Lyapunov route used for the control Gramian."""
    T = ts.spec.T if T is None else float(T)
    Q = ts.Q
    return simpson_gramian(ts.A_tilde, Q, T, N_t)[0] if np.any(Q) else np.zeros_like(Q)


@dataclass(frozen=True, eq=False)
class ObservabilityReport:
    C_hat: float              # inf when divergent
    divergent: bool
    kernel_modes: list[int]
    gramian: GramianCheck
    T: float
    P: int

    def summary(self) -> dict:
        return {"C_hat": self.C_hat, "divergent": self.divergent,
                "kernel_modes": self.kernel_modes, "T": self.T, "P": self.P,
                "gramian_min_eig": self.gramian.sigma_min,
                "gramian_equilibrated_min": self.gramian.equilibrated_min,
                "note": "truncated lower estimate of the observability constant"}


def estimate_observability_constant(spec: SystemSpec, basis: SpectralBasis, T: float | None = None,
                                    P: int | None = None, N_t: int = 200) -> ObservabilityReport:
    """``C_hat = max ||e^{A_tilde^T T} xi||^2 / (xi^T G_obs xi)``.

    Evaluated as ``||R^{-T} S E||_2^2`` with ``S G_obs S = R^T R`` the
    equilibrated Cholesky factorization and ``E = e^{A_tilde T}``.  Since
    ``E`` is invertible, a singular ``G_obs`` always gives the divergence
    flag (even when ``E^T`` maps its kernel below underflow).
    """
    T = spec.T if T is None else float(T)
    ts = galerkin_truncate(spec, basis, P)
    G = observability_gramian(ts, T, N_t)
    chk = check_gramian(G, spec.n)
    if chk.singular:
        return ObservabilityReport(float("inf"), True, chk.kernel_modes, chk, T, ts.P)
    E = expm(ts.A_tilde * T)
    d = np.sqrt(np.diag(G))
    try:
        c, _ = cho_factor(G / d[:, None] / d[None, :], lower=True)
    except np.linalg.LinAlgError:
        return ObservabilityReport(float("inf"), True, chk.kernel_modes, chk, T, ts.P)
    X = solve_triangular(c, E / d[:, None], lower=True)
    C_hat = float(np.linalg.norm(X, 2) ** 2)
    return ObservabilityReport(C_hat, False, [], chk, T, ts.P)

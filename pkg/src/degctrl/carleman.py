"""Carleman weights, parameter feasibility and weighted space-time functionals.

Weights::

    theta(t) = 1 / (t^4 (T - t)^4)
    psi(x)   = lam (int_0^x y / a(y) dy - c)
    Psi(x)   = exp(rho sigma(x)) - exp(2 rho ||sigma||_inf)
    phi = theta psi,  Phi = theta Psi

with ``c > 5``, ``rho > 4 ln 2 / ||sigma||_inf`` and
``exp(2 rho S) / (c - 1) < lam < 4 / (3 c) (exp(2 rho S) - exp(rho S))``.

All weighted integrals are accumulated in log space: ``exp(2 s phi)`` spans
hundreds of orders of magnitude over the time interval.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.special import logsumexp

from .model import DomainError, SystemSpec, make_system
from .operator import DiscreteOperator

C_DEFAULT = 6.0
C_MAX = 20.0
RHO_MARGIN = 0.01


class CarlemanInfeasible(ValueError):
    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = report or {}


def weight_theta(t, T: float):
    """``1 / (t^4 (T - t)^4)``; ``inf`` at ``t = 0`` and ``t = T``."""
    t = np.asarray(t, dtype=float)
    if T <= 0:
        raise DomainError("T must be positive")
    if np.any((t < 0) | (t > T)):
        raise DomainError(f"t outside [0, {T}]")
    with np.errstate(divide="ignore"):
        out = 1.0 / (t ** 4 * (T - t) ** 4)
    return out if out.ndim else float(out)


def log_theta(t, T: float):
    t = np.asarray(t, dtype=float)
    return -4.0 * (np.log(t) + np.log(T - t))


# ---------------------------------------------------------------------------
# spatial profile


@dataclass(frozen=True, eq=False)
class SigmaProfile:
    """``sigma(x) = x (1 - x) exp(k x) / scale`` with ``||sigma||_inf = 1``.

    ``k`` places the unique critical point at the centre of ``omega0``;
    ``sigma_x(0) > 0`` and ``sigma_x(1) < 0``, so ``sigma_x`` vanishes nowhere
    outside ``omega0``.
    """

    omega0: tuple[float, float]
    k: float
    scale: float

    @property
    def centre(self) -> float:
        return 0.5 * (self.omega0[0] + self.omega0[1])

    @property
    def sup(self) -> float:
        return 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x * (1.0 - x) * np.exp(self.k * x) / self.scale

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(self.k * x) * ((1.0 - 2.0 * x) + self.k * x * (1.0 - x)) / self.scale


def sigma_profile(omega0, check_points: int = 100001) -> SigmaProfile:
    w1, w2 = float(omega0[0]), float(omega0[1])
    if not 0.0 < w1 < w2 < 1.0:
        raise DomainError(f"omega0 = ({w1}, {w2}) must be compactly inside (0, 1)")
    c = 0.5 * (w1 + w2)
    k = (2.0 * c - 1.0) / (c * (1.0 - c))
    scale = c * (1.0 - c) * math.exp(k * c)
    prof = SigmaProfile((w1, w2), k, scale)
    x = np.linspace(0.0, 1.0, check_points)
    dl = prof.derivative(x[x <= w1])
    dr = prof.derivative(x[x >= w2])
    if not (np.all(dl > 0) and np.all(dr < 0)):
        raise DomainError("profile derivative vanishes outside omega0")
    return prof


# ---------------------------------------------------------------------------
# parameters


def lambda_interval(c: float, rho: float, S: float) -> tuple[float, float]:
    e1, e2 = math.exp(rho * S), math.exp(2.0 * rho * S)
    return e2 / (c - 1.0), 4.0 / (3.0 * c) * (e2 - e1)


def rho_min(S: float) -> float:
    return 4.0 * math.log(2.0) / S


def y_over_a_integral(a: Callable, x: float = 1.0) -> float:
    """``int_0^x y / a(y) dy`` (adaptive quadrature, endpoint singularity
    of ``y / a`` is integrable under the degeneracy hypotheses)."""
    val, err = quad(lambda y: y / a(y), 0.0, x, limit=200)
    if not math.isfinite(val) or err > 1e-8 * max(1.0, abs(val)):
        raise CarlemanInfeasible(f"quadrature of y/a(y) on (0, {x}) did not converge")
    return float(val)


@dataclass(frozen=True)
class CarlemanParameters:
    c: float
    rho: float
    lam: float
    interval: tuple[float, float]
    sigma_sup: float
    integral: float           # int_0^1 y / a(y) dy
    margins: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"c": self.c, "rho": self.rho, "lambda": self.lam,
                "interval": list(self.interval), "sigma_sup": self.sigma_sup,
                "integral_y_over_a": self.integral, "margins": dict(self.margins)}


def constraint_margins(c: float, rho: float, lam: float, S: float) -> dict:
    lo, hi = lambda_interval(c, rho, S)
    return {"c>5": c - 5.0, "rho>4ln2/S": rho - rho_min(S),
            "lambda>lower": lam - lo, "lambda<upper": hi - lam}


def select_parameters(a: Callable | None = None, sigma=1.0, c: float | None = None,
                      rho: float | None = None) -> CarlemanParameters:
    """Choose ``(c, rho, lam)`` strictly inside the constraint region.

    ``sigma`` is a profile or its sup norm.  Defaults: ``c = 6`` (escalated in
    unit steps up to 20 when the interval is empty or ``psi < 0`` would fail),
    ``rho`` 1% above its lower bound, ``lam`` at the interval midpoint.
    """
    S = float(sigma.sup if isinstance(sigma, SigmaProfile) else sigma)
    if not S > 0:
        raise CarlemanInfeasible("||sigma||_inf must be positive")
    if rho is not None and not rho > rho_min(S):
        raise CarlemanInfeasible(f"rho = {rho} violates rho > 4 ln2 / ||sigma|| = {rho_min(S):.6g}")
    if c is not None and not c > 5.0:
        raise CarlemanInfeasible(f"c = {c} violates c > 5")
    integral = y_over_a_integral(a) if a is not None else 0.0
    r = rho if rho is not None else (1.0 + RHO_MARGIN) * rho_min(S)
    tried = []
    c_try = c if c is not None else C_DEFAULT
    while True:
        lo, hi = lambda_interval(c_try, r, S)
        tried.append({"c": c_try, "interval": [lo, hi]})
        if lo < hi and integral < c_try:
            lam = 0.5 * (lo + hi)
            margins = constraint_margins(c_try, r, lam, S)
            if min(margins.values()) <= 0:
                raise CarlemanInfeasible("selected triple not strictly feasible", {"tried": tried})
            return CarlemanParameters(c_try, r, lam, (lo, hi), S, integral, margins)
        if c is not None or c_try >= C_MAX:
            raise CarlemanInfeasible(
                f"empty lambda interval or int_0^1 y/a = {integral:.6g} >= c for all tried c",
                {"tried": tried, "rho": r, "sigma_sup": S, "integral": integral})
        c_try = min(C_MAX, max(c_try + 1.0, math.floor(integral) + 1.0))


# ---------------------------------------------------------------------------
# weights


_GX, _GW = np.polynomial.legendre.leggauss(8)


def cumulative_y_over_a(a: Callable, grid: np.ndarray) -> np.ndarray:
    """``int_0^{x_k} y / a(y) dy`` at every grid point (``grid[0] = 0``):
    adaptive quadrature on the first cell, 8-point Gauss on the others."""
    grid = np.asarray(grid, dtype=float)
    if grid[0] != 0.0:
        raise ValueError("grid must start at 0")
    out = np.zeros(grid.size)
    if grid.size == 1:
        return out
    first = y_over_a_integral(a, float(grid[1]))
    lo, hi = grid[1:-1, None], grid[2:, None]
    X = 0.5 * (hi - lo) * _GX + 0.5 * (hi + lo)
    with np.errstate(all="ignore"):
        vals = X / np.asarray(a(X), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise CarlemanInfeasible("y/a(y) not finite on the grid")
    cells = np.sum(vals * _GW, axis=1) * 0.5 * (hi[:, 0] - lo[:, 0])
    out[1] = first
    out[2:] = first + np.cumsum(cells)
    return out


@dataclass(frozen=True, eq=False)
class CarlemanWeights:
    T: float
    params: CarlemanParameters
    sigma: SigmaProfile | None
    x: np.ndarray
    psi: np.ndarray
    Psi: np.ndarray
    M_0: float              # max psi on [0, 1]
    m_0: float | None       # min |Psi| on omega
    a: Callable

    @property
    def c(self):
        return self.params.c

    @property
    def rho(self):
        return self.params.rho

    @property
    def lam(self):
        return self.params.lam

    def psi_at(self, x):
        return np.interp(x, self.x, self.psi)

    def Psi_at(self, x):
        if self.sigma is None:
            raise ValueError("weights built without a sigma profile")
        S = self.params.sigma_sup
        return np.exp(self.rho * self.sigma(x)) - math.exp(2.0 * self.rho * S)

    def phi(self, t, x):
        """``theta(t) psi(x)`` on the outer product of ``t`` and ``x``."""
        return np.multiply.outer(weight_theta(t, self.T), self.psi_at(x))

    def Phi(self, t, x):
        return np.multiply.outer(weight_theta(t, self.T), self.Psi_at(x))


def weight_psi_phi(a: Callable, params: CarlemanParameters, T: float, grid=None,
                   sigma: SigmaProfile | None = None, omega=None) -> CarlemanWeights:
    grid = np.linspace(0.0, 1.0, 10001) if grid is None else np.asarray(grid, dtype=float)
    psi = params.lam * (cumulative_y_over_a(a, grid) - params.c)
    if sigma is not None:
        Psi = np.exp(params.rho * sigma(grid)) - math.exp(2.0 * params.rho * params.sigma_sup)
    else:
        Psi = np.full_like(grid, np.nan)
    m_0 = None
    if omega is not None and sigma is not None:
        inside = grid[(grid > omega[0]) & (grid < omega[1])]
        if inside.size:
            m_0 = float(np.min(np.abs(np.exp(params.rho * sigma(inside))
                                      - math.exp(2.0 * params.rho * params.sigma_sup))))
    return CarlemanWeights(float(T), params, sigma, grid, psi, Psi, float(psi.max()), m_0, a)


# ---------------------------------------------------------------------------
# functionals


@dataclass(frozen=True)
class FunctionalValue:
    log_value: float
    log_terms: tuple
    log_cutoff: float

    @property
    def value(self) -> float:
        return math.exp(self.log_value) if self.log_value > -math.inf else 0.0

    @property
    def cutoff_rel(self) -> float:
        """Estimated neglected endpoint mass relative to the value."""
        if self.log_cutoff == -math.inf:
            return 0.0
        if self.log_value == -math.inf:
            return math.inf
        return math.exp(min(self.log_cutoff - self.log_value, 700.0))


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def _time_weights(t):
    """Trapezoid on the cutoff window ``[t_1, t_{N-1}]``: returns retained
    index slice and log-weights."""
    if t.size < 4:
        raise ValueError("need at least 4 time levels")
    dt = np.diff(t)
    keep = slice(1, t.size - 1)
    w = np.zeros(t.size - 2)
    w[:-1] += 0.5 * dt[1:-1]
    w[1:] += 0.5 * dt[1:-1]
    return keep, np.log(w)


def _edge_log_bound(e, s, log_th_edge, psi, log_space_w, log_g_edge, delta):
    """log of ``delta * sum_j w_j g_j max_{theta >= theta_edge} (s theta)^e e^{2 s theta psi_j}``."""
    th_edge = math.exp(log_th_edge)
    with np.errstate(divide="ignore", invalid="ignore"):
        th_star = np.where(psi < 0, e / (2.0 * s * np.abs(psi)), np.inf)
    th = np.where((e > 0) & (th_star > th_edge), th_star, th_edge)
    logw = e * (math.log(s) + np.log(th)) + 2.0 * s * th * psi
    return math.log(delta) + float(logsumexp(log_space_w + logw + log_g_edge))


def _weighted_term(e, s, log_th, psi, log_space_w, log_time_w, g, keep):
    logw = e * (math.log(s) + log_th)[:, None] + 2.0 * s * np.exp(log_th)[:, None] * psi[None, :]
    L = log_time_w[:, None] + log_space_w[None, :] + logw + _log(g[keep])
    return float(logsumexp(L))


def space_time_terms(z: np.ndarray, t: np.ndarray, op: DiscreteOperator):
    """Nodal/cell densities of the four terms: ``z_t^2``, ``(M z)^2``,
    ``a z_x^2`` (cells) and ``(x^2 / a) z^2``."""
    z = np.asarray(z, dtype=float)
    if z.shape != (t.size, op.N):
        raise ValueError(f"z must have shape {(t.size, op.N)}, got {z.shape}")
    zt = np.gradient(z, t, axis=0, edge_order=2)
    Mz = op.apply(z)
    mid = 0.5 * (op.grid[:-1] + op.grid[1:])
    amid = op.a(mid)
    zx = op.gradient(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        hw = np.where(op.nodes > 0, op.nodes ** 2 / op.a(np.where(op.nodes > 0, op.nodes, 1.0)), 0.0)
    return zt ** 2, Mz ** 2, amid * zx ** 2, hw * z ** 2, mid


def functional_I(tau: float, z, s: float, weights: CarlemanWeights, op: DiscreteOperator,
                 t) -> FunctionalValue:
    """``I(tau, z)`` over ``(delta, T - delta) x (0, 1)``, ``delta = T / N_t``.

    Terms ``(s theta)^(tau-1) (z_t^2 + (M z)^2)``, ``(s theta)^(tau+1) a z_x^2``
    and ``(s theta)^(tau+3) (x^2 / a) z^2``, each times ``exp(2 s phi)``.
    ``z`` has shape ``(N_t + 1, N)`` on the uniform time grid ``t``.
    """
    t = np.asarray(t, dtype=float)
    if not s > 0:
        raise ValueError("s must be positive")
    zt2, Mz2, az2, hz2, mid = space_time_terms(z, t, op)
    keep, log_time_w = _time_weights(t)
    log_th = log_theta(t[keep], weights.T)
    psi_n = weights.psi_at(op.nodes)
    psi_c = weights.psi_at(mid)
    lw_n = np.log(op.mass)
    lw_c = np.log(np.diff(op.grid))
    spec = [(tau - 1, zt2, psi_n, lw_n), (tau - 1, Mz2, psi_n, lw_n),
            (tau + 1, az2, psi_c, lw_c), (tau + 3, hz2, psi_n, lw_n)]
    terms = tuple(_weighted_term(e, s, log_th, ps, lw, log_time_w, g, keep)
                  for e, g, ps, lw in spec)
    delta = t[1] - t[0]
    cut = []
    for e, g, ps, lw in spec:
        for k_edge in (1, t.size - 2):
            lth = float(log_theta(t[k_edge], weights.T))
            cut.append(_edge_log_bound(e, s, lth, ps, lw, _log(g[k_edge]), delta))
    return FunctionalValue(float(logsumexp(terms)), terms, float(logsumexp(cut)))


def apply_P(d: float, z: np.ndarray, t: np.ndarray, op: DiscreteOperator) -> np.ndarray:
    """``(d/dt + d M) z`` on the space-time grid."""
    return np.gradient(z, t, axis=0, edge_order=2) + d * op.apply(z)


def functional_J(tau: float, z, s: float, weights: CarlemanWeights, op: DiscreteOperator, t,
                 d) -> FunctionalValue:
    """``J(tau, z)`` for ``n = len(d) <= 3``::

        I(tau + 3(n-1), z) + sum_{i=2}^{n} I(tau + 3(n-2), P_i z)
          + sum_{p=2}^{n-1} sum_{i_1 < ... < i_p} I(tau + 3(n-p-1), P_{i_p} ... P_{i_1} z)

    with ``P_i = d/dt + d_i M`` (indices 1-based, ``d_i`` the diffusion
    coefficients).
    """
    d = [float(v) for v in np.atleast_1d(d)]
    n = len(d)
    if not 1 <= n <= 3:
        raise ValueError("functional_J is available for n <= 3 only")
    t = np.asarray(t, dtype=float)
    parts = [functional_I(tau + 3 * (n - 1), z, s, weights, op, t)]
    for i in range(2, n + 1):
        parts.append(functional_I(tau + 3 * (n - 2), apply_P(d[i - 1], z, t, op), s, weights, op, t))
    for p in range(2, n):
        for idx in itertools.combinations(range(1, n + 1), p):
            w = z
            for i in idx:
                w = apply_P(d[i - 1], w, t, op)
            parts.append(functional_I(tau + 3 * (n - p - 1), w, s, weights, op, t))
    return FunctionalValue(float(logsumexp([q.log_value for q in parts])),
                           tuple(q.log_value for q in parts),
                           float(logsumexp([q.log_cutoff for q in parts])))


def observation_term(z, s: float, exponent: float, weights: CarlemanWeights, op: DiscreteOperator,
                     t, omega) -> float:
    """log of ``int int_{(0,T) x omega} (s theta)^exponent exp(2 s Phi) z^2``."""
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=float)
    keep, log_time_w = _time_weights(t)
    log_th = log_theta(t[keep], weights.T)
    inside = (op.nodes > omega[0]) & (op.nodes < omega[1])
    Psi = weights.Psi_at(op.nodes[inside])
    return _weighted_term(exponent, s, log_th, Psi, np.log(op.mass[inside]), log_time_w,
                          z[:, inside] ** 2, keep)


# ---------------------------------------------------------------------------
# empirical ratio for the scalar equation


def boundary_slope(u: np.ndarray, op: DiscreteOperator) -> np.ndarray:
    """``u_x(t, 1)`` by the 3-point one-sided formula (``u(1) = 0``)."""
    x0, x1, x2 = op.grid[-3], op.grid[-2], op.grid[-1]
    u0, u1 = u[..., -2], u[..., -1]
    # derivative at x2 of the quadratic through (x0,u0), (x1,u1), (x2,0)
    c0 = (x2 - x1) / ((x0 - x1) * (x0 - x2))
    c1 = (x2 - x0) / ((x1 - x0) * (x1 - x2))
    return c0 * u0 + c1 * u1


@dataclass(frozen=True)
class RatioRow:
    s: float
    log_lhs: float
    log_rhs: float
    cutoff_rel: float

    @property
    def lhs(self) -> float:
        return math.exp(self.log_lhs) if self.log_lhs > -math.inf else 0.0

    @property
    def rhs(self) -> float:
        return math.exp(self.log_rhs) if self.log_rhs > -math.inf else 0.0

    @property
    def ratio(self) -> float:
        if self.log_lhs == -math.inf:
            return 0.0
        return math.exp(self.log_lhs - self.log_rhs)


def scalar_system(a, potential: float = 0.0, T: float = 4.0, N: int = 1000, N_t: int = 2000,
                  bc=None, grading=None) -> SystemSpec:
    """``u_t - (a u_x)_x + c u = f`` as a one-component system."""
    return make_system(a, [[1.0]], [[-potential]], [[1.0]], (0.25, 0.75), T, bc=bc,
                       N=N, N_t=N_t, grading=grading)


def smooth_initial_data(op: DiscreteOperator, rng: np.random.Generator, terms: int = 5) -> np.ndarray:
    """``sum_k c_k sin(k pi x) / k^2`` with standard normal ``c_k``."""
    k = np.arange(1, terms + 1)
    c = rng.standard_normal(terms)
    return (c / k ** 2) @ np.sin(np.pi * np.outer(k, op.nodes))


def empirical_carleman_ratio(spec: SystemSpec, u0, s_grid, weights: CarlemanWeights,
                             f: Callable | None = None, op: DiscreteOperator | None = None,
                             startup: int = 4) -> list[RatioRow]:
    """Solve the scalar problem by Crank-Nicolson and tabulate
    ``LHS = I(0, u)`` against
    ``RHS = int int f^2 exp(2 s phi) + s a(1) int theta u_x(t,1)^2 exp(2 s phi(t,1))``.
    """
    from .control import simulate_forward
    from .operator import assemble_operator

    if spec.n != 1:
        raise ValueError("empirical ratio is defined for a scalar equation")
    op = assemble_operator(spec) if op is None else op
    u0 = np.asarray(u0, dtype=float)
    traj = simulate_forward(spec, op, u0[None, :], N_t=spec.N_t, T=spec.T, stride=1, startup=startup,
                            source=(lambda tt: f(tt, op.nodes)[None, :]) if f is not None else None)
    u = traj.Y[:, 0, :]
    t = traj.t
    if not np.all(np.isfinite(u)):
        raise RuntimeError("non-convergent solve")
    keep, log_time_w = _time_weights(t)
    log_th = log_theta(t[keep], weights.T)
    ux1 = boundary_slope(u, op)
    psi1 = float(weights.psi_at(1.0))
    a1 = float(np.asarray(op.a(np.array([1.0])))[0])
    fvals = None
    if f is not None:
        fvals = np.array([f(tt, op.nodes) for tt in t])
    rows = []
    for s in s_grid:
        s = float(s)
        lhs = functional_I(0.0, u, s, weights, op, t)
        logb = (math.log(s * a1) + float(logsumexp(log_time_w + log_th + 2.0 * s * np.exp(log_th) * psi1
                                                 + _log(ux1[keep] ** 2))))
        parts = [logb]
        if fvals is not None:
            parts.append(_weighted_term(0.0, s, log_th, weights.psi_at(op.nodes), np.log(op.mass),
                                        log_time_w, fvals ** 2, keep))
        rows.append(RatioRow(s, lhs.log_value, float(logsumexp(parts)), lhs.cutoff_rel))
    return rows

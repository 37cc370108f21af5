"""Per-mode Kalman test for ``L = D M + A`` with input matrix ``B``.

On the eigenfunction ``Phi_p`` the operator ``L`` acts as the matrix
``L_p = -lambda_p D + A``, and the Kalman operator as
``K_p = [L_p^{n-1} B | ... | L_p B | B]``.  The system is null controllable
iff ``K_p`` has full row rank for every mode.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, null_space

from .model import SystemSpec
from .spectral import SpectralBasis

FULL_RANK_TAIL = "full-rank-tail"
DEFICIENT_EVERYWHERE = "deficient-everywhere"
MIXED = "mixed-up-to-horizon"


class WitnessError(ValueError):
    pass


def mode_matrix(spec_or_D, lam: float, A=None) -> np.ndarray:
    """``L_p = -lambda D + A``; accepts a :class:`SystemSpec` or ``(D, lam, A)``."""
    if isinstance(spec_or_D, SystemSpec):
        D, A = spec_or_D.D, spec_or_D.A
    else:
        D = np.atleast_2d(np.asarray(spec_or_D, dtype=float))
        A = np.atleast_2d(np.asarray(A, dtype=float))
    if D.shape != A.shape or D.shape[0] != D.shape[1]:
        raise ValueError(f"D {D.shape} and A {A.shape} must be equal square shapes")
    return -lam * D + A


def kalman_matrix(L, B, scale: float = 1.0) -> np.ndarray:
    """``[(L/scale)^{n-1} B | ... | (L/scale) B | B]``.

    ``scale > 0`` multiplies block ``k`` by ``scale**-k``, an invertible
    column scaling that leaves the rank unchanged but keeps entries bounded
    when ``L`` grows with the eigenvalue.
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    n = L.shape[0]
    if L.shape != (n, n) or B.shape[0] != n:
        raise ValueError(f"shape mismatch: L {L.shape}, B {B.shape}")
    Ls = L / scale
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(Ls @ blocks[-1])
    return np.hstack(blocks[::-1])


def mode_kalman(spec: SystemSpec, lam: float, scaled: bool = True) -> np.ndarray:
    scale = max(1.0, abs(lam)) if scaled else 1.0
    return kalman_matrix(mode_matrix(spec, lam), spec.B, scale)


@dataclass(frozen=True)
class RankReport:
    rank: int
    det: float        # det(K K^T), product of squared singular values
    sigma_min: float  # n-th singular value (0 when K has fewer columns)
    sigma_max: float


def mode_rank_report(K, tol: float = 1e-8) -> RankReport:
    if not 0.0 < tol < 1.0:
        raise ValueError("tol must lie in (0, 1)")
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n = K.shape[0]
    s = np.linalg.svd(K, compute_uv=False)
    s = np.concatenate([s, np.zeros(max(0, n - s.size))])[:n]
    smax = float(s[0]) if s.size else 0.0
    if smax == 0.0:
        return RankReport(0, 0.0, 0.0, 0.0)
    rank = int(np.count_nonzero(s > tol * smax))
    with np.errstate(divide="ignore"):
        logdet = float(np.sum(2.0 * np.log(s)))
    det = math.exp(logdet) if logdet < 709.0 else math.inf
    return RankReport(rank, det, float(s[-1]), smax)


@dataclass(frozen=True)
class ModeRecord:
    p: int
    lam: float
    rank: int
    det: float          # det(K_p K_p^T), unscaled
    sigma_min: float    # unscaled
    rel_sigma_min: float  # sigma_min / sigma_max of the scaled matrix

    def as_row(self):
        return [self.p, self.lam, self.rank, self.sigma_min, self.det]


@dataclass
class KalmanReport:
    records: list[ModeRecord]
    deficient_modes: list[int]
    dichotomy: str
    p0: int | None
    scan_horizon: int
    tol: float
    generic_rank: int
    structural: bool
    possible_roots: list[float] = field(default_factory=list)
    note: str = ""

    @property
    def controllable(self) -> bool:
        return not self.deficient_modes

    def summary(self) -> dict:
        return {
            "dichotomy": self.dichotomy,
            "p0": self.p0,
            "deficient_modes": self.deficient_modes,
            "scan_horizon": self.scan_horizon,
            "tol": self.tol,
            "generic_rank": self.generic_rank,
            "structural_deficiency": self.structural,
            "possible_deficient_lambdas_beyond_horizon": self.possible_roots,
            "note": self.note,
        }


def classify(deficient: list[int], horizon: int) -> tuple[str, int | None]:
    if not deficient:
        return FULL_RANK_TAIL, 0
    if len(deficient) == horizon:
        return DEFICIENT_EVERYWHERE, None
    p0 = max(deficient)
    if p0 < horizon:
        return FULL_RANK_TAIL, p0
    return MIXED, None


def _det_polynomial_values(spec: SystemSpec, lams: np.ndarray) -> np.ndarray:
    """``det K(lambda)`` when m = 1, else ``det(K K^T)`` (unscaled)."""
    out = []
    for lam in lams:
        K = mode_kalman(spec, lam, scaled=False)
        out.append(np.linalg.det(K) if spec.m == 1 else np.linalg.det(K @ K.T))
    return np.array(out)


def det_polynomial_degree(spec: SystemSpec) -> int:
    """Degree bound of ``det K`` (m = 1) or ``det(K K^T)`` (Cauchy-Binet:
    twice the largest degree of an ``n x n`` minor)."""
    n, m = spec.n, spec.m
    if m == 1:
        return n * (n - 1) // 2
    col_deg = sorted((k for k in range(n) for _ in range(m)), reverse=True)
    return 2 * sum(col_deg[:n])


def det_polynomial(spec: SystemSpec, lam_scale: float = 1.0) -> np.polynomial.Chebyshev:
    """Interpolate the determinant polynomial of the Kalman family on
    ``[0, lam_scale]`` at Chebyshev points (exact up to rounding)."""
    deg = det_polynomial_degree(spec)
    nodes = 0.5 * lam_scale * (1 - np.cos(np.pi * (np.arange(deg + 1) + 0.5) / (deg + 1)))
    vals = _det_polynomial_values(spec, nodes)
    return np.polynomial.Chebyshev.fit(nodes, vals, deg, domain=[0.0, lam_scale])


def generic_rank(spec: SystemSpec, tol: float = 1e-8, samples: int | None = None,
                 rng: np.random.Generator | None = None, lam_max: float = 1.0) -> int:
    """Rank of ``lambda -> K(lambda)`` at random parameter values."""
    rng = np.random.default_rng(0) if rng is None else rng
    samples = samples or (2 * det_polynomial_degree(spec) + 3)
    lams = rng.uniform(0.0, max(lam_max, 1.0), size=samples)
    return max(mode_rank_report(mode_kalman(spec, lam), tol).rank for lam in lams)


def _tail_roots(spec: SystemSpec, lam_horizon: float, lam_scale: float) -> list[float]:
    if det_polynomial_degree(spec) == 0:
        return []
    poly = det_polynomial(spec, lam_scale)
    roots = poly.roots()
    coeff_scale = np.max(np.abs(poly.coef)) or 1.0
    out = []
    for r in roots:
        if abs(r.imag) <= 1e-6 * max(1.0, abs(r.real)) and r.real > lam_horizon:
            val = abs(poly(r.real))
            if val <= 1e-8 * coeff_scale:
                out.append(float(r.real))
    return sorted(out)


def dichotomy_scan(spec: SystemSpec, basis: SpectralBasis, P_max: int | None = None,
                   tol: float = 1e-8, rng: np.random.Generator | None = None) -> KalmanReport:
    """Run the per-mode rank test over ``p = 1..P_max`` and classify."""
    P_max = basis.P if P_max is None else P_max
    if P_max > basis.P:
        raise ValueError(f"basis has {basis.P} modes, scan needs {P_max}")
    records = []
    deficient = []
    for p in range(1, P_max + 1):
        lam = float(basis.lambdas[p - 1])
        scaled = mode_rank_report(mode_kalman(spec, lam, scaled=True), tol)
        raw = mode_rank_report(mode_kalman(spec, lam, scaled=False), tol)
        rel = scaled.sigma_min / scaled.sigma_max if scaled.sigma_max > 0 else 0.0
        records.append(ModeRecord(p, lam, scaled.rank, raw.det, raw.sigma_min, rel))
        if scaled.rank < spec.n:
            deficient.append(p)
    dichotomy, p0 = classify(deficient, P_max)
    lam_top = float(basis.lambdas[P_max - 1])
    g_rank = generic_rank(spec, tol, rng=rng, lam_max=lam_top)
    structural = g_rank < spec.n
    roots = [] if structural else _tail_roots(spec, lam_top, 4.0 * lam_top)
    note = ""
    if dichotomy == MIXED:
        note = "deficiency at the scan horizon; classification is finite-horizon only"
    elif dichotomy == DEFICIENT_EVERYWHERE and not structural:
        note = "every scanned mode deficient but generic rank is full"
    return KalmanReport(records=records, deficient_modes=deficient, dichotomy=dichotomy,
                        p0=p0, scan_horizon=P_max, tol=tol, generic_rank=g_rank,
                        structural=structural, possible_roots=roots, note=note)


# ---------------------------------------------------------------------------
# equivalent forms of the Kalman condition on a truncation


def stacked_kernel_test(spec: SystemSpec, lambdas, tol: float = 1e-8) -> float:
    """Smallest normalized singular value of the block-diagonal truncated
    ``K^*`` (blocks: scaled ``K_p^T``, each normalized by its norm).

    Trivial kernel iff the returned value exceeds ``tol``.
    """
    from scipy.linalg import block_diag
    blocks = []
    for lam in lambdas:
        K = mode_kalman(spec, float(lam))
        nrm = np.linalg.norm(K, 2)
        blocks.append((K / nrm if nrm > 0 else K).T)
    big = block_diag(*blocks)
    s = np.linalg.svd(big, compute_uv=False)
    n_state = spec.n * len(lambdas)
    s = np.concatenate([s, np.zeros(max(0, n_state - s.size))])
    return float(s[n_state - 1] / s[0]) if s[0] > 0 else 0.0


def determinant_test(spec: SystemSpec, lambdas) -> float:
    """``min_p det(K_p K_p^T) / ||K_p||^(2n)`` over the scaled matrices."""
    worst = math.inf
    for lam in lambdas:
        K = mode_kalman(spec, float(lam))
        s = np.linalg.svd(K, compute_uv=False)
        if s.size < spec.n or s[0] == 0:
            return 0.0
        worst = min(worst, float(np.prod((s[: spec.n] / s[0]) ** 2)))
    return worst


def sigma_test(spec: SystemSpec, lambdas) -> float:
    """``min_p sigma_min / sigma_max`` of the scaled per-mode matrices."""
    worst = math.inf
    for lam in lambdas:
        r = mode_rank_report(mode_kalman(spec, float(lam)))
        worst = min(worst, r.sigma_min / r.sigma_max if r.sigma_max > 0 else 0.0)
    return worst


@dataclass(frozen=True)
class EquivalenceResult:
    sigma: float
    stacked: float
    det: float
    verdicts: tuple     # (sigma, stacked, det): True = full rank at every mode
    in_band: bool

    @property
    def agree(self) -> bool:
        return len(set(self.verdicts)) == 1


def equivalence_check(spec: SystemSpec, lambdas, tol: float = 1e-8,
                      band: float = 100.0) -> EquivalenceResult:
    """Run the three full-rank tests on a truncation.

    Thresholds: ``tol`` for the two singular-value ratios and ``tol**n`` for
    the normalized determinant (a product of ``n`` squared ratios, one of
    them equal to 1).  An instance is in the tolerance band when a ratio lies
    within a factor ``band`` of its threshold.
    """
    n = spec.n
    r1 = sigma_test(spec, lambdas)
    r2 = stacked_kernel_test(spec, lambdas)
    r3 = determinant_test(spec, lambdas)
    tdet = tol ** n
    verdicts = (r1 > tol, r2 > tol, r3 > tdet)
    in_band = (tol / band < r1 < tol * band or tol / band < r2 < tol * band
               or tdet / band < r3 < tdet * band)
    return EquivalenceResult(r1, r2, r3, verdicts, bool(in_band))


# ---------------------------------------------------------------------------
# norm constants of the Kalman operator on a truncation


@dataclass(frozen=True)
class KalmanConstants:
    forward: float      # sup_p ||K_p|| / lambda_p^(n-1)
    adjoint: float      # sup_p ||K_p^T|| / lambda_p^(n-1)
    inverse: float      # sup_p 1 / (sigma_min(K_p) lambda_p^((2n-1)(n-1))), full-rank p only
    argmax_forward: int
    argmax_inverse: int | None


def kalman_constants(spec: SystemSpec, basis: SpectralBasis, P: int | None = None,
                     tol: float = 1e-8) -> KalmanConstants:
    """Optimal truncated constants of the three mode-wise Kalman bounds.

    With ``u = sum u_p Phi_p`` one has ``||K u||^2 = sum |K_p u_p|^2`` and
    ``||M^k u||^2 = sum lambda_p^(2k) |u_p|^2``, so each bound holds on the
    first ``P`` modes with the supremum of the per-mode ratio (returned
    square-rooted, i.e. as operator-norm constants).  Rank-deficient modes
    are skipped in the inverse bound; it is ``nan`` when none is full rank.
    """
    P = basis.P if P is None else P
    n = spec.n
    fwd = adj = inv = 0.0
    arg_f, arg_i = 1, None
    for p in range(1, P + 1):
        lam = float(basis.lambdas[p - 1])
        if lam <= 0:
            raise ValueError("eigenvalues must be positive")
        K = mode_kalman(spec, lam, scaled=False)
        s = np.linalg.svd(K, compute_uv=False)
        nf = s[0] / lam ** (n - 1)
        na = np.linalg.norm(K.T, 2) / lam ** (n - 1)
        if nf > fwd:
            fwd, arg_f = nf, p
        adj = max(adj, na)
        if mode_rank_report(mode_kalman(spec, lam), tol).rank < n:
            continue
        ni = 1.0 / (s[n - 1] * lam ** ((2 * n - 1) * (n - 1)))
        if ni > inv:
            inv, arg_i = ni, p
    if arg_i is None:
        inv = math.nan
    return KalmanConstants(fwd, adj, inv, arg_f, arg_i)


# ---------------------------------------------------------------------------
# necessity counterexample


@dataclass(frozen=True, eq=False)
class Witness:
    p0: int
    lam: float
    z_T: np.ndarray
    null_basis: np.ndarray      # orthonormal basis of ker K_{p0}^T
    residual: float             # ||K_{p0}^T z_T||
    chain_residual: float       # max_k ||B^T (L^T)^k z_T||
    invariance_residual: float  # ||(I - Pi Pi^T) L^T Pi||


def kernel_witness(spec: SystemSpec, basis: SpectralBasis, p0: int,
                   tol: float = 1e-8) -> Witness:
    """Unit ``z_T`` with ``K_{p0}^T z_T = 0`` (``p0`` is 1-based)."""
    lam = float(basis.lambdas[p0 - 1])
    L = mode_matrix(spec, lam)
    K = mode_kalman(spec, lam, scaled=True)
    U, s, _ = np.linalg.svd(K)
    n = spec.n
    s = np.concatenate([s, np.zeros(max(0, n - s.size))])[:n]
    smax = s[0]
    null_idx = [i for i in range(n) if s[i] <= tol * smax] if smax > 0 else list(range(n))
    if not null_idx:
        raise WitnessError(f"mode {p0} is not deficient: no witness exists")
    Pi = U[:, null_idx]
    z = Pi[:, 0].copy()
    Kraw = mode_kalman(spec, lam, scaled=False)
    residual = float(np.linalg.norm(Kraw.T @ z))
    chain, v = 0.0, z.copy()
    for _ in range(n):
        chain = max(chain, float(np.linalg.norm(spec.B.T @ v)))
        v = L.T @ v
    inv_res = float(np.linalg.norm(L.T @ Pi - Pi @ (Pi.T @ L.T @ Pi), 2))
    return Witness(p0, lam, z, Pi, residual, chain, inv_res)


@dataclass(frozen=True, eq=False)
class AdjointTrajectory:
    t: np.ndarray
    z: np.ndarray                # (len(t), n)
    observation: np.ndarray      # |B^T z(t)|
    sup_observation: float
    norm_z0: float


def adjoint_mode_trajectory(spec: SystemSpec, basis: SpectralBasis, p0: int, z_T,
                            T: float | None = None, N_t: int = 200) -> AdjointTrajectory:
    """Solve ``-z' = L_{p0}^T z`` backward from ``z(T) = z_T``.

    ``phi(t, x) = z(t) Phi_{p0}(x)`` then solves the adjoint system, and
    ``B^T phi`` vanishes identically when ``z_T`` is a kernel witness.
    """
    T = spec.T if T is None else float(T)
    lam = float(basis.lambdas[p0 - 1])
    LT = mode_matrix(spec, lam).T
    z_T = np.asarray(z_T, dtype=float)
    t = np.linspace(0.0, T, N_t + 1)
    z = np.array([expm(LT * (T - tk)) @ z_T for tk in t])
    obs = np.linalg.norm(z @ spec.B, axis=1)
    return AdjointTrajectory(t, z, obs, float(obs.max()), float(np.linalg.norm(z[0])))


def deficient_directions(spec: SystemSpec, lam: float, tol: float = 1e-8) -> np.ndarray:
    """Orthonormal basis of ``ker K(lam)^T`` (empty when full rank)."""
    K = mode_kalman(spec, lam, scaled=True)
    ns = null_space(K.T, rcond=tol)
    return ns

"""Problem description for coupled degenerate parabolic systems.

The system is ``dY/dt = (D M + A) Y + B v 1_omega`` on (0, 1) with
``M y = (a y_x)_x`` and ``a(0) = 0``.  This module holds the problem data,
checks the structural hypotheses on ``a`` and ``D``, and reads/writes the
YAML configuration document shared by every CLI subcommand.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
import yaml

WD = "WD"
SD = "SD"
BC_WD = "WD-Dirichlet"
BC_SD = "SD-Neumann-at-0"

_BC_ALIASES = {
    "wd-dirichlet": BC_WD,
    "wd": BC_WD,
    "dirichlet": BC_WD,
    "sd-neumann-at-0": BC_SD,
    "sd": BC_SD,
    "neumann-at-0": BC_SD,
}

# radius of the "near 0" window used for the monotonicity part of (SD)
SD_MONOTONE_RADIUS = 0.1


class SpecError(ValueError):
    """Invalid problem description (CLI exit code 2)."""


class SchemaError(SpecError):
    pass


class DomainError(SpecError):
    pass


class ShapeError(SpecError):
    pass


class DiagonalizabilityError(SpecError):
    pass


class DegeneracyError(SpecError):
    pass


# ---------------------------------------------------------------------------
# diffusion coefficient


@dataclass(frozen=True, eq=False)
class DiffusionCoefficient:
    """Degenerate diffusion coefficient ``a`` on [0, 1].

    ``kind`` is ``"power-law"`` (``a = x**alpha``) or ``"sampled"`` (a table
    of ``(x, a(x))`` pairs, interpolated piecewise-linearly, with ``(0, 0)``
    prepended when missing).  ``degeneracy_class``, ``K`` and ``theta_sd``
    are the declared hypothesis data; ``None`` means "infer".
    """

    kind: str
    alpha: float | None = None
    table: tuple[tuple[float, float], ...] | None = None
    degeneracy_class: str | None = None
    K: float | None = None
    theta_sd: float | None = None

    @classmethod
    def power_law(cls, alpha: float, **kw) -> "DiffusionCoefficient":
        return cls(kind="power-law", alpha=float(alpha), **kw)

    @classmethod
    def sampled(cls, xs, values, **kw) -> "DiffusionCoefficient":
        pts = sorted(zip(map(float, xs), map(float, values)))
        if pts[0][0] > 0.0:
            pts.insert(0, (0.0, 0.0))
        return cls(kind="sampled", table=tuple(pts), **kw)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "power-law":
            return np.power(x, self.alpha)
        xs, vals = self._arrays()
        return np.interp(x, xs, vals)

    def _arrays(self):
        xs = np.array([p[0] for p in self.table])
        vals = np.array([p[1] for p in self.table])
        return xs, vals

    def __eq__(self, other):
        if not isinstance(other, DiffusionCoefficient):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.alpha == other.alpha
            and self.table == other.table
            and self.degeneracy_class == other.degeneracy_class
            and self.K == other.K
            and self.theta_sd == other.theta_sd
        )

    __hash__ = None

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind == "power-law":
            out["alpha"] = self.alpha
        else:
            out["table"] = [list(p) for p in self.table]
        for key, val in (("class", self.degeneracy_class), ("K", self.K),
                         ("theta", self.theta_sd)):
            if val is not None:
                out[key] = val
        return out


@dataclass(frozen=True)
class DegeneracyClassReport:
    cls: str
    K: float
    theta: float | None
    radius: float
    samples: int
    exact: bool  # True when K comes from the closed form (power law)

    def to_dict(self) -> dict:
        return {"class": self.cls, "K": self.K, "theta": self.theta,
                "monotonicity_radius": self.radius, "samples": self.samples,
                "exact": self.exact}


def validation_points(samples: int) -> np.ndarray:
    """Geometric points 2**-j (j = 0..samples) merged with a uniform grid."""
    geo = 2.0 ** -np.arange(samples + 1, dtype=float)
    uni = np.linspace(0.0, 1.0, samples + 2)[1:]
    return np.unique(np.concatenate([geo, uni]))


def _class_of(K: float) -> str:
    if 0.0 <= K < 1.0:
        return WD
    if 1.0 <= K < 2.0:
        return SD
    raise DegeneracyError(f"K = {K:g} is outside [0, 2); a is neither (WD) nor (SD)")


def _monotone_theta(a: DiffusionCoefficient, K: float, radius: float,
                    samples: int) -> float | None:
    """Largest admissible theta with a(x)/x**theta nondecreasing on (0, radius]."""
    xs = validation_points(samples)
    xs = xs[xs <= radius]
    ax = a(xs)
    if K > 1.0:
        candidates = np.linspace(K, 1.0, 201)[:-1]
    else:
        candidates = np.linspace(1.0, 0.0, 201)[1:-1]
    for th in candidates:
        ratio = ax / xs ** th
        # xs ascending
        if np.all(np.diff(ratio) >= -1e-12 * np.abs(ratio[1:])):
            return float(th)
    return None


def validate_diffusion(a: DiffusionCoefficient, samples: int = 40,
                       radius: float = SD_MONOTONE_RADIUS) -> DegeneracyClassReport:
    """Classify ``a`` as (WD) or (SD) and find the constant K of x a' <= K a.

    Power laws are handled in closed form (``K = alpha``).  Sampled tables
    use centered differences of the interpolant on :func:`validation_points`
    and report the smallest K fitting every sample.
    """
    if a.kind == "power-law":
        alpha = a.alpha
        if alpha is None or not math.isfinite(alpha) or alpha <= 0.0:
            raise DegeneracyError(f"power-law exponent must be > 0, got {alpha}")
        if alpha >= 2.0:
            raise DegeneracyError(f"alpha = {alpha:g} >= 2: K would leave [1, 2)")
        K = float(alpha)
        cls = _class_of(K)
        theta = None
        if cls == SD:
            # a / x**theta = x**(alpha - theta) is nondecreasing iff theta <= alpha
            theta = K if K > 1.0 else 0.5
        report = DegeneracyClassReport(cls, K, theta, radius, samples, exact=True)
    elif a.kind == "sampled":
        xs_tab, vals = a._arrays()
        if xs_tab[0] != 0.0 or vals[0] != 0.0:
            raise DegeneracyError("sampled coefficient must satisfy a(0) = 0")
        if np.any(vals[1:] <= 0.0):
            raise DegeneracyError("sampled coefficient has a <= 0 on (0, 1]")
        if xs_tab[-1] < 1.0:
            raise DegeneracyError("sampled table must reach x = 1")
        xs = validation_points(samples)
        h = 1e-3 * np.minimum(xs, 1.0 - xs + 1e-300)
        h = np.where(xs >= 1.0, 1e-3 * xs, h)
        right = np.minimum(xs + h, 1.0)
        left = xs - h
        deriv = (a(right) - a(left)) / (right - left)
        K = max(0.0, float(np.max(xs * deriv / a(xs))))
        cls = _class_of(K)
        theta = _monotone_theta(a, K, radius, samples) if cls == SD else None
        if cls == SD and theta is None:
            raise DegeneracyError(
                f"(SD) monotonicity fails: no theta with a/x^theta nondecreasing on (0, {radius}]")
        report = DegeneracyClassReport(cls, K, theta, radius, samples, exact=False)
    else:
        raise SchemaError(f"unknown diffusion kind {a.kind!r}")

    # declared hypothesis data must be consistent with what was found
    declared_K = a.K if a.K is not None else report.K
    if a.K is not None and a.K < report.K - 1e-12:
        raise DegeneracyError(
            f"declared K = {a.K:g} violates x a'(x) <= K a(x); minimal K is {report.K:g}")
    declared_cls = a.degeneracy_class or _class_of(declared_K)
    if _class_of(declared_K) != declared_cls:
        raise DegeneracyError(
            f"declared class {declared_cls} inconsistent with K = {declared_K:g}")
    if (declared_cls, declared_K, a.theta_sd) != (report.cls, report.K, None):
        theta = None
        if declared_cls == SD:
            theta = _declared_theta_check(a, declared_K, radius, samples)
        report = DegeneracyClassReport(declared_cls, declared_K, theta,
                                       radius, samples, report.exact)
    return report


def _declared_theta_check(a, K, radius, samples):
    theta = a.theta_sd
    if theta is None:
        theta = _monotone_theta(a, K, radius, samples)
        if theta is None:
            raise DegeneracyError("(SD) monotonicity near 0 fails for every admissible theta")
        return theta
    lo_ok = (1.0 < theta <= K) if K > 1.0 else (0.0 < theta < 1.0)
    if not lo_ok:
        raise DegeneracyError(f"theta = {theta:g} not admissible for K = {K:g}")
    xs = validation_points(samples)
    xs = xs[xs <= radius]
    ratio = a(xs) / xs ** theta
    if np.any(np.diff(ratio) < -1e-12 * np.abs(ratio[1:])):
        raise DegeneracyError(f"a/x^{theta:g} is not nondecreasing on (0, {radius}]")
    return theta


# ---------------------------------------------------------------------------
# diffusion matrix


@dataclass(frozen=True, eq=False)
class DiagonalizationCertificate:
    """``D = inv(P) @ diag(J) @ P`` with real positive ``J``."""

    P: np.ndarray
    J: np.ndarray
    conditioning: float
    residual: float


def validate_diagonalizable(D, tol: float = 1e-8) -> DiagonalizationCertificate:
    D = np.atleast_2d(np.asarray(D, dtype=float))
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ShapeError(f"D must be square, got shape {D.shape}")
    w, V = np.linalg.eig(D)
    if np.any(np.abs(w.imag) > 1e-10):
        raise DiagonalizabilityError(f"D has complex eigenvalues {w}")
    w = w.real
    V = V.real
    if np.any(w <= 0.0):
        raise DiagonalizabilityError(f"D has nonpositive eigenvalues {w}")
    cond = float(np.linalg.cond(V))
    if not math.isfinite(cond) or cond > 1.0 / tol:
        raise DiagonalizabilityError(
            f"D is not (numerically) diagonalizable: cond(eigenvectors) = {cond:.3e}")
    order = np.argsort(w, kind="stable")
    w, V = w[order], V[:, order]
    P = np.linalg.inv(V)
    residual = float(np.linalg.norm(V @ np.diag(w) @ P - D))
    if residual > tol * max(np.linalg.norm(D), 1.0):
        raise DiagonalizabilityError(f"reconstruction residual {residual:.3e} too large")
    return DiagonalizationCertificate(P=P, J=w, conditioning=cond, residual=residual)


# ---------------------------------------------------------------------------
# system


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Full problem description.

    ``N`` is the number of spatial unknowns, ``N_t`` the number of time
    steps; ``grading`` is the exponent of the grid map ``x = s**grading``
    (``None`` selects it from the coefficient, see
    :func:`degctrl.operator.default_grading`).
    """

    a: DiffusionCoefficient
    D: np.ndarray
    A: np.ndarray
    B: np.ndarray
    omega: tuple[float, float]
    T: float
    bc: str
    N: int = 2000
    N_t: int = 2000
    grading: float | None = None

    @property
    def n(self) -> int:
        return self.D.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SystemSpec):
            return NotImplemented
        return (
            self.a == other.a
            and np.array_equal(self.D, other.D)
            and np.array_equal(self.A, other.A)
            and np.array_equal(self.B, other.B)
            and tuple(self.omega) == tuple(other.omega)
            and self.T == other.T
            and self.bc == other.bc
            and self.N == other.N
            and self.N_t == other.N_t
            and self.grading == other.grading
        )

    __hash__ = None

    def replace(self, **changes) -> "SystemSpec":
        from dataclasses import replace
        return replace(self, **changes)


def make_system(a, D, A, B, omega, T, bc=None, N=2000, N_t=2000, grading=None,
                validate=True) -> SystemSpec:
    """Build a :class:`SystemSpec` from array-likes, validating by default."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 0:
        B = B.reshape(1, 1)
    elif B.ndim == 1:
        B = B.reshape(-1, 1)
    if bc is None:
        bc = BC_WD if validate_diffusion(a).cls == WD else BC_SD
    spec = SystemSpec(a=a, D=D, A=A, B=B, omega=(float(omega[0]), float(omega[1])),
                      T=float(T), bc=normalize_bc(bc), N=int(N), N_t=int(N_t),
                      grading=None if grading is None else float(grading))
    if validate:
        validate_system(spec)
    return spec


def normalize_bc(bc: str) -> str:
    try:
        return _BC_ALIASES[str(bc).strip().lower()]
    except KeyError:
        raise SchemaError(f"unknown boundary regime {bc!r}") from None


def validate_system(spec: SystemSpec) -> dict:
    """Check every structural invariant; return a JSON-friendly report."""
    n = spec.D.shape[0]
    if spec.D.shape != (n, n):
        raise ShapeError(f"D must be square, got {spec.D.shape}")
    if spec.A.shape != (n, n):
        raise ShapeError(f"A must be {n}x{n}, got {spec.A.shape}")
    if spec.B.ndim != 2 or spec.B.shape[0] != n:
        raise ShapeError(f"B must have {n} rows, got {spec.B.shape}")
    w1, w2 = spec.omega
    if not (0.0 < w1 < w2 < 1.0):
        raise DomainError(f"omega = ({w1}, {w2}) must satisfy 0 < w1 < w2 < 1")
    if not spec.T > 0.0:
        raise DomainError(f"T must be positive, got {spec.T}")
    if spec.N < 3:
        raise DomainError(f"N must be >= 3, got {spec.N}")
    if spec.N_t < 1:
        raise DomainError(f"N_t must be >= 1, got {spec.N_t}")
    deg = validate_diffusion(spec.a)
    expected = BC_WD if deg.cls == WD else BC_SD
    if spec.bc != expected:
        raise DomainError(f"boundary regime {spec.bc} inconsistent with class {deg.cls}")
    cert = validate_diagonalizable(spec.D)
    return {
        "n": n,
        "m": spec.B.shape[1],
        "degeneracy": deg.to_dict(),
        "diagonalization": {"eigenvalues": cert.J.tolist(),
                            "conditioning": cert.conditioning,
                            "residual": cert.residual},
        "omega": list(spec.omega),
        "T": spec.T,
        "bc": spec.bc,
    }


# ---------------------------------------------------------------------------
# configuration document


@dataclass
class RunSettings:
    """Subcommand sections of the configuration document (all optional)."""

    modes: int = 16
    tol: float = 1e-8
    p_max: int = 100
    seed: int = 0
    initial: list = field(default_factory=lambda: [[1, 1, 1.0]])
    time_stride: int = 10
    carleman: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"modes": self.modes, "tol": self.tol, "p_max": self.p_max,
                "seed": self.seed, "initial": self.initial,
                "time_stride": self.time_stride, "carleman": dict(self.carleman)}


def _require(doc: Mapping, key: str, where: str):
    if not isinstance(doc, Mapping) or key not in doc:
        raise SchemaError(f"missing required key '{where}{key}'")
    return doc[key]


def _parse_diffusion(sec: Mapping) -> DiffusionCoefficient:
    kind = _require(sec, "kind", "diffusion.")
    extra = {"degeneracy_class": sec.get("class"), "K": sec.get("K"),
             "theta_sd": sec.get("theta")}
    if kind == "power-law":
        return DiffusionCoefficient.power_law(float(_require(sec, "alpha", "diffusion.")), **extra)
    if kind == "sampled":
        table = np.asarray(_require(sec, "table", "diffusion."), dtype=float)
        if table.ndim != 2 or table.shape[1] != 2:
            raise ShapeError("diffusion.table must be a list of [x, a] pairs")
        return DiffusionCoefficient.sampled(table[:, 0], table[:, 1], **extra)
    raise SchemaError(f"diffusion.kind must be 'power-law' or 'sampled', got {kind!r}")


def _matrix(value, name: str, rows: int | None = None) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ShapeError(f"{name} is not a numeric matrix") from None
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim == 1:
        if rows is not None and arr.size == rows:
            arr = arr.reshape(rows, 1)
        elif rows is None and arr.size == 1:
            arr = arr.reshape(1, 1)
        else:
            side = int(round(math.sqrt(arr.size)))
            if side * side != arr.size:
                raise ShapeError(f"{name} has incompatible shape {arr.shape}")
            arr = arr.reshape(side, side)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be two-dimensional")
    return arr


def load_config(text: str) -> tuple[SystemSpec, RunSettings]:
    """Parse a YAML configuration document into a validated system + settings."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError(f"malformed configuration document: {exc}") from None
    if not isinstance(doc, Mapping):
        raise SchemaError("configuration document must be a mapping")

    system = _require(doc, "system", "")
    a = _parse_diffusion(_require(doc, "diffusion", ""))
    D = _matrix(_require(system, "D", "system."), "D")
    if D.shape[0] != D.shape[1]:
        raise ShapeError(f"D must be square, got {D.shape}")
    n = D.shape[0]
    A = _matrix(_require(system, "A", "system."), "A")
    if A.shape[0] != A.shape[1]:
        raise ShapeError(f"A must be square, got {A.shape}")
    if A.shape != D.shape:
        raise ShapeError(f"A shape {A.shape} does not match D shape {D.shape}")
    B = _matrix(_require(system, "B", "system."), "B", rows=n)
    if "n" in system and int(system["n"]) != n:
        raise ShapeError(f"system.n = {system['n']} but D is {n}x{n}")
    if "m" in system and int(system["m"]) != B.shape[1]:
        raise ShapeError(f"system.m = {system['m']} but B has {B.shape[1]} columns")

    control = _require(doc, "control", "")
    omega = _require(control, "omega", "control.")
    if not isinstance(omega, (list, tuple)) or len(omega) != 2:
        raise SchemaError("control.omega must be a pair [w1, w2]")
    T = float(_require(control, "T", "control."))

    grid = doc.get("grid") or {}
    grading = grid.get("grading", "auto")
    grading = None if grading in (None, "auto") else float(grading)

    deg_bc = doc.get("boundary")
    spec = SystemSpec(
        a=a, D=D, A=A, B=B, omega=(float(omega[0]), float(omega[1])), T=T,
        bc=normalize_bc(deg_bc) if deg_bc is not None else (
            BC_WD if validate_diffusion(a).cls == WD else BC_SD),
        N=int(grid.get("nx", 2000)), N_t=int(grid.get("nt", 2000)), grading=grading,
    )
    validate_system(spec)

    run = doc.get("run") or {}
    settings = RunSettings(
        modes=int(run.get("modes", 16)),
        tol=float(run.get("tol", 1e-8)),
        p_max=int(run.get("p_max", 100)),
        seed=int(run.get("seed", 0)),
        initial=list(run.get("initial", [[1, 1, 1.0]])),
        time_stride=int(run.get("time_stride", 10)),
        carleman=dict(doc.get("carleman") or {}),
    )
    return spec, settings


def parse_problem_config(text: str) -> SystemSpec:
    return load_config(text)[0]


def emit_config(spec: SystemSpec, settings: RunSettings | None = None) -> str:
    doc: dict[str, Any] = {
        "system": {"n": spec.n, "m": spec.m, "D": spec.D.tolist(),
                   "A": spec.A.tolist(), "B": spec.B.tolist()},
        "diffusion": spec.a.to_dict(),
        "boundary": spec.bc,
        "control": {"omega": list(spec.omega), "T": spec.T},
        "grid": {"nx": spec.N, "nt": spec.N_t,
                 "grading": "auto" if spec.grading is None else spec.grading},
    }
    if settings is not None:
        run = settings.to_dict()
        doc["carleman"] = run.pop("carleman")
        doc["run"] = run
    return yaml.safe_dump(doc, sort_keys=False)

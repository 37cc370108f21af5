import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from degctrl.model import (BC_SD, BC_WD, SD, WD, DegeneracyError, DiagonalizabilityError,
                           DiffusionCoefficient, DomainError, SchemaError, ShapeError,
                           emit_config, load_config, make_system, normalize_bc,
                           parse_problem_config, validate_diagonalizable, validate_diffusion,
                           validation_points)

MINIMAL = """
system: {n: 1, m: 1, D: [[1.0]], A: [[0.0]], B: [[1.0]]}
diffusion: {kind: power-law, alpha: 0.5}
control: {omega: [0.3, 0.8], T: 1.0}
"""


def test_minimal_document_parses():
    spec = parse_problem_config(MINIMAL)
    assert spec.n == 1 and spec.m == 1
    assert spec.bc == BC_WD
    assert spec.omega == (0.3, 0.8)
    assert spec.T == 1.0


def test_omega_outside_unit_interval():
    with pytest.raises(DomainError):
        parse_problem_config(MINIMAL.replace("[0.3, 0.8]", "[0.5, 1.2]"))


def test_jordan_block_rejected():
    doc = MINIMAL.replace("n: 1, m: 1, D: [[1.0]], A: [[0.0]], B: [[1.0]]",
                          "D: [[1, 1], [0, 1]], A: [[0, 0], [0, 0]], B: [[1], [0]]")
    with pytest.raises(DiagonalizabilityError):
        parse_problem_config(doc)


@pytest.mark.parametrize("key", ["system", "diffusion", "control"])
def test_missing_section_named(key):
    lines = [ln for ln in MINIMAL.strip().splitlines() if not ln.startswith(key)]
    with pytest.raises(SchemaError, match=key):
        parse_problem_config("\n".join(lines))


def test_missing_nested_key_named():
    with pytest.raises(SchemaError, match="control.T"):
        parse_problem_config(MINIMAL.replace(", T: 1.0", ""))


def test_nonsquare_matrices():
    with pytest.raises(ShapeError):
        parse_problem_config(MINIMAL.replace("D: [[1.0]]", "D: [[1.0, 2.0]]"))
    with pytest.raises(ShapeError):
        parse_problem_config(MINIMAL.replace("A: [[0.0]]", "A: [[0.0, 1.0], [0.0, 0.0]]"))


def test_malformed_yaml():
    with pytest.raises(SchemaError):
        parse_problem_config("system: [unclosed")


def test_boundary_inferred_from_class():
    spec = parse_problem_config(MINIMAL.replace("alpha: 0.5", "alpha: 1.5"))
    assert spec.bc == BC_SD


def test_boundary_inconsistent_with_class():
    with pytest.raises(DomainError):
        parse_problem_config(MINIMAL + "boundary: SD\n")


def test_bc_aliases():
    assert normalize_bc("WD") == BC_WD
    assert normalize_bc("SD") == BC_SD
    with pytest.raises(SchemaError):
        normalize_bc("periodic")


def test_round_trip():
    spec, settings_ = load_config(MINIMAL)
    again, settings2 = load_config(emit_config(spec, settings_))
    assert again == spec
    assert settings2 == settings_


def test_round_trip_sampled():
    xs = np.linspace(0.1, 1.0, 10)
    a = DiffusionCoefficient.sampled(xs, xs ** 0.5)
    spec = make_system(a, [[1.0]], [[0.0]], [[1.0]], (0.2, 0.6), 0.5)
    assert parse_problem_config(emit_config(spec)) == spec


# ---------------------------------------------------------------------------
# diffusion classification


def test_power_half_is_wd():
    rep = validate_diffusion(DiffusionCoefficient.power_law(0.5))
    assert rep.cls == WD and rep.K == 0.5 and rep.theta is None


def test_power_three_halves_is_sd():
    rep = validate_diffusion(DiffusionCoefficient.power_law(1.5))
    assert rep.cls == SD and rep.K == 1.5 and rep.theta == 1.5


def test_power_one_is_sd_with_theta_below_one():
    rep = validate_diffusion(DiffusionCoefficient.power_law(1.0))
    assert rep.cls == SD and 0.0 < rep.theta < 1.0


@pytest.mark.parametrize("alpha", [2.0, 2.5, 0.0, -1.0])
def test_power_out_of_range(alpha):
    with pytest.raises(DegeneracyError):
        validate_diffusion(DiffusionCoefficient.power_law(alpha))


@given(st.floats(min_value=0.01, max_value=1.99), st.integers(min_value=5, max_value=80))
def test_power_K_exact_and_sample_independent(alpha, samples):
    rep = validate_diffusion(DiffusionCoefficient.power_law(alpha), samples=samples)
    assert rep.K == alpha
    assert rep.cls == (WD if alpha < 1 else SD)


def test_sampled_nonpositive_rejected():
    with pytest.raises(DegeneracyError):
        validate_diffusion(DiffusionCoefficient.sampled([0.5, 1.0], [0.0, 1.0]))


def test_sampled_square_root_is_wd():
    # below the smallest table point the interpolant is linear (K = 1), so
    # validation stays inside the table
    xs = 2.0 ** -np.arange(30)[::-1]
    rep = validate_diffusion(DiffusionCoefficient.sampled(xs, np.sqrt(xs)), samples=25)
    assert rep.cls == WD
    assert 0.45 <= rep.K < 1.0


def test_sampled_linear_tail_is_sd():
    xs = np.linspace(0.1, 1.0, 10)
    rep = validate_diffusion(DiffusionCoefficient.sampled(xs, xs))
    assert rep.cls == SD and abs(rep.K - 1.0) < 1e-9


def test_declared_K_too_small():
    with pytest.raises(DegeneracyError):
        validate_diffusion(DiffusionCoefficient.power_law(0.5, K=0.3))


def test_declared_K_larger_is_accepted():
    rep = validate_diffusion(DiffusionCoefficient.power_law(0.5, K=0.9))
    assert rep.K == 0.9 and rep.cls == WD


def test_validation_points_cover_geometric_scale():
    pts = validation_points(20)
    assert pts.min() == 2.0 ** -20 and pts.max() == 1.0
    assert np.all(np.diff(pts) > 0)


# ---------------------------------------------------------------------------
# diagonalization


def test_identity_certificate():
    cert = validate_diagonalizable(np.eye(2))
    assert np.allclose(cert.J, [1, 1])
    assert np.allclose(np.abs(cert.P), np.eye(2))


def test_triangular_certificate():
    cert = validate_diagonalizable([[2.0, 1.0], [0.0, 3.0]])
    assert np.allclose(cert.J, [2.0, 3.0])
    assert cert.residual <= 1e-12


def test_defective_rejected():
    with pytest.raises(DiagonalizabilityError):
        validate_diagonalizable([[1.0, 1.0], [0.0, 1.0]])


def test_complex_and_negative_rejected():
    with pytest.raises(DiagonalizabilityError):
        validate_diagonalizable([[0.0, -1.0], [1.0, 0.0]])
    with pytest.raises(DiagonalizabilityError):
        validate_diagonalizable([[-1.0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=1, max_value=5), st.integers(min_value=0, max_value=2 ** 31))
def test_recovers_random_spectrum(n, seed):
    rng = np.random.default_rng(seed)
    J = np.sort(rng.uniform(0.5, 5.0, n))
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    P = Q @ np.diag(rng.uniform(0.5, 2.0, n))
    D = np.linalg.inv(P) @ np.diag(J) @ P
    cert = validate_diagonalizable(D)
    assert np.allclose(cert.J, J, atol=1e-8)

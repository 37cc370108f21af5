import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import jn_zeros

from degctrl.model import BC_SD, BC_WD, DiffusionCoefficient
from degctrl.operator import assemble, default_grading
from degctrl.spectral import (SpectrumError, bessel_oracle, bessel_oracle_all, bessel_parameters,
                              bessel_zeros, compute_spectrum, project, project_all, sign_changes)


def basis_for(alpha, bc, N=2000, P=20):
    a = DiffusionCoefficient.power_law(alpha)
    return compute_spectrum(assemble(a, N, bc, default_grading(a)), P)


def test_alpha_zero_is_sine_spectrum():
    p = np.arange(1, 8)
    assert np.allclose(bessel_oracle_all(0.0, 7, BC_WD), (p * np.pi) ** 2, rtol=1e-12)


def test_oracle_frozen_values():
    assert np.isclose(bessel_oracle(0.5, 1, BC_WD), 4.739066397843299, rtol=1e-12)
    assert np.isclose(bessel_oracle(1.0, 1, BC_SD), 1.4457964907366962, rtol=1e-12)
    assert np.isclose(bessel_zeros(1 / 3, 1)[0], 2.902586, atol=1e-6)


@pytest.mark.parametrize("nu", [0, 1, 2])
def test_integer_orders_match_tabulated_zeros(nu):
    assert np.allclose(bessel_zeros(nu, 20), jn_zeros(nu, 20), rtol=1e-13)


@given(st.floats(min_value=0.0, max_value=1.0))
def test_zero_spacing(nu):
    z = bessel_zeros(nu, 12)
    assert np.all(np.diff(z) > 2.0)
    assert z[0] > nu


def test_oracle_domain_errors():
    with pytest.raises(SpectrumError):
        bessel_parameters(1.2, BC_WD)
    with pytest.raises(SpectrumError):
        bessel_parameters(0.5, BC_SD)
    with pytest.raises(SpectrumError):
        bessel_zeros(-0.5, 3)


def test_first_eigenvalue_half():
    b = basis_for(0.5, BC_WD)
    assert abs(b.lambdas[0] / 4.739066397843299 - 1) < 1e-3


def test_alpha_zero_continuity():
    b = basis_for(0.01, BC_WD, N=4000, P=2)
    assert abs(b.lambdas[0] / np.pi ** 2 - 1) < 0.02


@pytest.mark.parametrize("alpha,bc", [(0.5, BC_WD), (1.5, BC_SD)])
def test_gram_identity_and_sign_convention(alpha, bc):
    b = basis_for(alpha, bc)
    assert np.abs(b.gram() - np.eye(b.P)).max() < 1e-10
    assert np.all(b.modes[:, -1] > 0)
    assert np.all(np.diff(b.lambdas) > 0)
    assert b.residual < 1e-12


@pytest.mark.parametrize("alpha,bc", [(0.5, BC_WD), (1.0, BC_SD)])
def test_sturm_oscillation(alpha, bc):
    b = basis_for(alpha, bc)
    assert [sign_changes(b.modes[p]) for p in range(20)] == list(range(20))


@pytest.mark.parametrize("alpha,bc", [(0.25, BC_WD), (1.0, BC_SD), (1.5, BC_SD)])
def test_second_order_convergence(alpha, bc):
    a = DiffusionCoefficient.power_law(alpha)
    lams = [compute_spectrum(assemble(a, N, bc, default_grading(a)), 3).lambdas
            for N in (250, 500, 1000)]
    exact = bessel_oracle_all(alpha, 3, bc)
    errs = [np.abs(l - exact) / exact for l in lams]
    assert np.all(errs[0] / errs[1] > 3.5) and np.all(errs[1] / errs[2] > 3.5)


def test_uniform_grid_order_limited_by_degeneracy():
    # eigenfunctions ~ x^(1 - alpha): uniform grids converge at order 1 - alpha
    a = DiffusionCoefficient.power_law(0.5)
    exact = bessel_oracle(0.5, 1, BC_WD)
    errs = [abs(compute_spectrum(assemble(a, N, BC_WD, 1.0), 1).lambdas[0] - exact)
            for N in (499, 999, 1999)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.allclose(rates, 0.5, atol=0.05)


def test_resolution_guard():
    a = DiffusionCoefficient.power_law(0.5)
    with pytest.raises(SpectrumError):
        compute_spectrum(assemble(a, 40, BC_WD), 11)
    with pytest.raises(SpectrumError):
        compute_spectrum(assemble(a, 40, BC_WD), 0)


def test_projection_orthonormality():
    b = basis_for(0.5, BC_WD)
    assert np.allclose(project([b.modes[0], np.zeros(b.op.N)], 1, b), [1.0, 0.0])
    assert np.allclose(project([b.modes[1], np.zeros(b.op.N)], 1, b), [0.0, 0.0], atol=1e-12)
    with pytest.raises(SpectrumError):
        project(np.zeros(10), 1, b)
    with pytest.raises(SpectrumError):
        project(b.modes[0], 0, b)


def test_parseval_for_smooth_function():
    a = DiffusionCoefficient.power_law(0.5)
    op = assemble(a, 400, BC_WD, 2.0)
    b = compute_spectrum(op, 100)
    psi = op.nodes * (1 - op.nodes) * np.exp(op.nodes)
    coeffs = project_all(psi, b)[:, 0]
    assert abs(np.sum(coeffs ** 2) / op.inner(psi, psi) - 1) < 0.01


def test_truncate():
    b = basis_for(0.5, BC_WD)
    t = b.truncate(5)
    assert t.P == 5 and np.array_equal(t.lambdas, b.lambdas[:5])
    with pytest.raises(SpectrumError):
        b.truncate(50)

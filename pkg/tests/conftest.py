import numpy as np
import pytest

from degctrl.model import DiffusionCoefficient, make_system
from degctrl.operator import assemble_operator
from degctrl.spectral import compute_spectrum

D_CASCADE = np.diag([1.0, 2.0])
A_CASCADE = np.array([[0.0, 0.0], [1.0, 0.0]])
OMEGA = (0.3, 0.8)


def cascade_spec(B, N=2000, N_t=2000, T=0.5, alpha=0.5):
    return make_system(DiffusionCoefficient.power_law(alpha), D_CASCADE, A_CASCADE,
                       np.asarray(B, dtype=float).reshape(2, -1), OMEGA, T, N=N, N_t=N_t)


@pytest.fixture(scope="session")
def cascade():
    return cascade_spec([[1.0], [0.0]])


@pytest.fixture(scope="session")
def deficient():
    return cascade_spec([[0.0], [1.0]])


@pytest.fixture(scope="session")
def basis100(cascade):
    """First 100 modes of -(x^0.5 u')' at N = 2000."""
    return compute_spectrum(assemble_operator(cascade), 100)


@pytest.fixture(scope="session")
def basis16(basis100):
    return basis100.truncate(16)

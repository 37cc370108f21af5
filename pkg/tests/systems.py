"""Random coupled systems with prescribed controllability structure."""
import numpy as np

from degctrl.model import DiffusionCoefficient, make_system

KINDS = ("generic", "spectral", "structural")


def random_system(rng, kind, lambdas, n=None, m=None, omega=(0.3, 0.8), T=0.5):
    """``generic``: random (D, A, B); ``spectral``: B orthogonal to a real
    left eigenvector of one L_p, so K_p is deficient at that mode only;
    ``structural``: a common left eigenvector of D and A annihilates B."""
    n = int(rng.integers(1, 5)) if n is None else n
    m = int(rng.integers(1, 3)) if m is None else m
    S = rng.standard_normal((n, n)) + 2 * np.eye(n)
    Si = np.linalg.inv(S)
    d = rng.uniform(0.5, 3.0, n)
    Ah = rng.standard_normal((n, n))
    Bh = rng.standard_normal((n, m))
    if kind == "structural":
        Ah[0, 1:] = 0.0
        Bh[0] = 0.0
    D, A, B = S @ np.diag(d) @ Si, S @ Ah @ Si, S @ Bh
    p = None
    if kind == "spectral":
        p = int(rng.integers(0, len(lambdas)))
        w, V = np.linalg.eig((-lambdas[p] * D + A).T)
        real = np.flatnonzero(np.abs(w.imag) < 1e-12)
        if real.size == 0:
            return random_system(rng, "generic", lambdas, n, m, omega, T)
        z = V[:, real[0]].real
        z /= np.linalg.norm(z)
        B = B - np.outer(z, z @ B)
    spec = make_system(DiffusionCoefficient.power_law(0.5), D, A, B, omega, T, validate=False)
    return spec, kind, p

"""Eigenvalue error against the Bessel closed form under grid refinement.

    python scripts/spectral_convergence.py --alpha 0.5 --modes 10
"""
import argparse

import numpy as np

from degctrl.model import BC_SD, BC_WD, DiffusionCoefficient
from degctrl.operator import assemble, default_grading
from degctrl.spectral import bessel_oracle_all, compute_spectrum


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--alpha", type=float, default=0.5)
    ap.add_argument("--modes", type=int, default=10)
    ap.add_argument("--grading", type=float, default=None, help="default: automatic")
    ap.add_argument("--sizes", type=int, nargs="+", default=[500, 1000, 2000, 4000, 8000])
    args = ap.parse_args()

    a = DiffusionCoefficient.power_law(args.alpha)
    bc = BC_WD if args.alpha < 1 else BC_SD
    g = default_grading(a) if args.grading is None else args.grading
    exact = bessel_oracle_all(args.alpha, args.modes, bc)
    print(f"alpha = {args.alpha}, {bc}, grading {g}")
    print(f"{'N':>6} {'max rel err':>12} {'order':>6}")
    prev = None
    for N in args.sizes:
        lam = compute_spectrum(assemble(a, N, bc, g), args.modes).lambdas
        err = float(np.max(np.abs(lam / exact - 1)))
        order = "" if prev is None else f"{np.log2(prev / err):6.2f}"
        print(f"{N:6d} {err:12.3e} {order:>6}")
        prev = err


if __name__ == "__main__":
    main()

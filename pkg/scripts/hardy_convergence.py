"""Discrete Hardy-Poincare constant under nested refinement.

    python scripts/hardy_convergence.py --alpha 0.25 0.5
"""
import argparse

from degctrl.model import BC_WD, DiffusionCoefficient
from degctrl.operator import assemble, hardy_analytic, hardy_poincare_constant


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--alpha", type=float, nargs="+", default=[0.25, 0.5])
    ap.add_argument("--cells", type=int, nargs="+", default=[500, 1000, 2000, 4000, 8000])
    ap.add_argument("--grading", type=float, default=10.0)
    args = ap.parse_args()

    for alpha in args.alpha:
        a = DiffusionCoefficient.power_law(alpha)
        exact = hardy_analytic(alpha)
        print(f"alpha = {alpha}: 4/(1-alpha)^2 = {exact:.6f}")
        for cells in args.cells:
            C = hardy_poincare_constant(assemble(a, cells - 1, BC_WD, args.grading))
            print(f"  cells {cells:6d}  C_h = {C:.6f}  rel gap {1 - C / exact:.4f}")


if __name__ == "__main__":
    main()

"""Agreement of the three full-rank tests on random coupled systems.

    python scripts/equivalence_study.py --count 300
"""
import argparse
import sys
from collections import Counter
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from systems import KINDS, random_system  # noqa: E402

from degctrl.kalman import equivalence_check  # noqa: E402
from degctrl.model import BC_WD  # noqa: E402
from degctrl.spectral import bessel_oracle_all  # noqa: E402


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--modes", type=int, default=50)
    ap.add_argument("--tol", type=float, default=1e-8)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    lams = bessel_oracle_all(0.5, args.modes, BC_WD)
    rng = np.random.default_rng(args.seed)
    tally = Counter()
    for i in range(args.count):
        kind = KINDS[i % 3]
        spec, _, _ = random_system(rng, kind, lams)
        r = equivalence_check(spec, lams, args.tol)
        verdict = "band" if r.in_band else ("agree" if r.agree else "DISAGREE")
        tally[kind, verdict] += 1
        if verdict != "agree":
            print(f"{kind:10s} n={spec.n} m={spec.m} sigma={r.sigma:.2e} stacked={r.stacked:.2e} "
                  f"det={r.det:.2e} -> {verdict}")
    for key, v in sorted(tally.items()):
        print(f"{key[0]:10s} {key[1]:8s} {v}")


if __name__ == "__main__":
    main()

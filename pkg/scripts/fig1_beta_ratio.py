"""beta2/beta1 across average SNR, with the relax-and-floor factor it certifies."""

import argparse
import csv
from pathlib import Path

import numpy as np

from fbq.rates import beta1, beta2, db_to_linear
from fbq.solvers import approximation_factor_from_ratio


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/fig1_beta_ratio.csv")
    ap.add_argument("--lo", type=float, default=-15.0)
    ap.add_argument("--hi", type=float, default=15.0)
    ap.add_argument("--step", type=float, default=0.5)
    args = ap.parse_args()

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    grid = np.round(np.arange(args.lo, args.hi + args.step / 2, args.step), 6)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["snr_db", "beta1", "beta2", "ratio", "factor"])
        worst = 0.0
        for s in grid:
            b1, b2 = beta1(db_to_linear(s)), beta2(db_to_linear(s))
            worst = max(worst, b2 / b1)
            w.writerow([s, repr(b1), repr(b2), repr(b2 / b1), repr(approximation_factor_from_ratio(b2 / b1))])
    print(f"max beta2/beta1 on [{args.lo}, {args.hi}] dB: {worst:.4f} -> {out}")


if __name__ == "__main__":
    main()

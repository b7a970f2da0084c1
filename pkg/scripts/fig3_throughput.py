"""Stability knees of every policy for the asymmetric and the nearly symmetric SNR profile.

Writes one JSON per profile with the per-point slopes, the knees and their
ratios, plus a flat CSV of mean queue length against arrival rate.
"""

import argparse
import csv
import json
from pathlib import Path

from fbq.sim import POLICIES, ChannelDraws, SimConfig, default_codebook, knee_grid, overhead_estimate, stability_sweep

PROFILES = {"asymmetric": (-10.0, -8.0, 10.0, 10.0), "symmetric": (-1.0, -1.0, 1.0, 1.0)}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--outdir", default="results")
    ap.add_argument("--profile", choices=list(PROFILES) + ["both"], default="both")
    ap.add_argument("--horizon", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--step", type=float, default=0.02, help="grid step as a fraction of the perfect-feedback capacity")
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    names = list(PROFILES) if args.profile == "both" else [args.profile]
    book = None
    for name in names:
        config = SimConfig(snr_db=PROFILES[name], horizon=args.horizon, seed=args.seed)
        book = book or default_codebook(config)
        channels = ChannelDraws(config.horizon, config.num_bands, config.seed, book)
        grid = knee_grid(config, channels, 0.6, 1.06, args.step)
        res = stability_sweep(config, grid, list(POLICIES), book, channels, workers=args.workers)
        res["overhead"] = {
            "per_virtual_user": overhead_estimate(config),
            "per_physical_user": overhead_estimate(config, per_physical_user=True),
        }
        with open(outdir / f"fig3_{name}.json", "w") as fh:
            json.dump(res, fh, indent=2, sort_keys=True)
        with open(outdir / f"fig3_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["policy", "arrival_rate", "mean_queue", "max_slope", "stable"])
            for p, v in res["policies"].items():
                for pt in v["points"]:
                    w.writerow([p, repr(pt["arrival_rate"]), repr(pt["mean_queue"]), repr(pt["max_slope"]), pt["stable"]])
        k = res["knees"]
        print(f"{name}: " + ", ".join(f"{p} {v:.4f}" for p, v in k.items() if v is not None))
        g, e, pf = k["maxweight-greedy"], k["equal-static"], k["perfect-feedback"]
        if g and e and pf:
            print(f"  greedy/perfect {g / pf:.3f}  greedy/equal-static {g / e:.3f}")


if __name__ == "__main__":
    main()

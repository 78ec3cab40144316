"""Two-arm Hoeffding race over a grid of mean gaps and confidence levels.

Writes ``race.csv`` with the observed error rate next to delta and the mean
stopping time for each (gap, delta) pair.
"""

import argparse
import csv
from pathlib import Path

from anytime_bow import race_simulate

RESULTS = Path(__file__).resolve().parent.parent / "results"


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, default=RESULTS)
    args = p.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    with open(args.out_dir / "race.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mu1", "mu2", "gap", "delta", "trials", "error_rate", "mean_stop_time", "truncated"])
        for gap in (0.02, 0.05, 0.1, 0.2, 0.4, 0.8):
            for delta in (0.01, 0.05, 0.2):
                mu1, mu2 = 0.5 + gap / 2, 0.5 - gap / 2
                r = race_simulate(mu1, mu2, delta, args.trials, args.seed)
                w.writerow([f"{mu1:.2f}", f"{mu2:.2f}", gap, delta, args.trials,
                            f"{r.error_rate:.4f}", f"{r.mean_stop_time:.1f}", r.truncated])
                print(f"gap {gap:<5} delta {delta:<5} error {r.error_rate:.4f} stop {r.mean_stop_time:10.1f}")


if __name__ == "__main__":
    main()

"""Histogram evolution for one easy and one hard planted query, plus the
fraction of features each kind needs under Rule1.

Outputs:
  trace_easy.csv, trace_hard.csv   per-step argmax, gap, max and mean
  snapshots_easy.csv, snapshots_hard.csv   full histograms every 5% of features
  easy_hard_fractions.csv   per query and seed, fraction processed under Rule1
"""

import csv

import numpy as np

from anytime_bow import Never, Rule1, run_query, run_query_trace

from common import benchmark, median_final_gap, parser


def write_snapshots(trace, ids, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", *ids])
        for t in sorted(trace.snapshots):
            w.writerow([t, *(f"{x:.6g}" for x in trace.snapshots[t])])


def main():
    p = parser(__doc__)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--scale", type=float, default=0.5, help="Rule1 T as a multiple of the median final gap")
    args = p.parse_args()
    ds, info, v, ix = benchmark(args)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    ids = ix.image_ids.tolist()

    for kind in ("easy", "hard"):
        pq = next(q for q in info.queries if q.kind == kind)
        trace = run_query_trace(ix, v, ds.image(pq.query_id), Never(), 5, 0)
        trace.write_csv(args.out_dir / f"trace_{kind}.csv")
        write_snapshots(trace, ids, args.out_dir / f"snapshots_{kind}.csv")
        peaks = [s.argmax for s in trace.steps]
        settle = next(t for t in range(len(peaks), 0, -1) if t == 1 or peaks[t - 2] != peaks[-1])
        print(f"{kind} query {pq.query_id}: match {pq.match_id}, final peak {peaks[-1]}, "
              f"peak settles after {settle}/{len(peaks)} features")

    T = args.scale * median_final_gap(ix, v, ds.queries)
    kinds = {q.query_id: q.kind for q in info.queries}
    rows, per_seed = [], []
    for seed in range(args.seeds):
        fr = {"easy": [], "hard": []}
        for q in ds.queries:
            res = run_query(ix, v, q, Rule1(T), 1, seed)
            fr[kinds[q.image_id]].append(res.fraction_processed)
            rows.append([seed, q.image_id, kinds[q.image_id], f"{res.fraction_processed:.6f}"])
        per_seed.append((np.median(fr["easy"]), np.median(fr["hard"])))
    with open(args.out_dir / "easy_hard_fractions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "query_id", "kind", "fraction_processed"])
        w.writerows(rows)
    e, h = np.mean(per_seed, axis=0)
    wins = sum(a < b for a, b in per_seed)
    print(f"Rule1 T={T:.4f}: median fraction easy {e:.3f}, hard {h:.3f}; easy lower in {wins}/{args.seeds} seeds")


if __name__ == "__main__":
    main()

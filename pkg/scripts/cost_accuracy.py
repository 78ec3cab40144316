"""Recall against fraction of features processed for every stopping rule family.

Writes ``curves.csv`` (report columns plus one row per rule, threshold and n)
to the output directory and prints a compact table of recall@10.
"""

from anytime_bow import EvalConfig, Hoeffding, Never, evaluate, sweep
from anytime_bow.eval import write_report_csv

from common import benchmark, median_final_gap, parser


def main():
    p = parser(__doc__)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--threads", type=int, default=4)
    args = p.parse_args()
    ds, _, v, ix = benchmark(args)
    g = median_final_gap(ix, v, ds.queries)
    grids = {
        "rule1": [s * g for s in (1.2, 1.0, 0.85, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1)],
        "rule2": [40, 30, 20, 15, 12, 10, 8, 6, 4],
        "rule3": [60, 40, 30, 20, 15, 10, 7, 5, 3],
    }
    cfg = EvalConfig(top_n=(3, 5, 10), monte_carlo_runs=args.runs, seed=0, threads=args.threads)
    reports = [evaluate(ix, v, ds, EvalConfig(**{**cfg.__dict__,
                                                 "rules": (Never(), Hoeffding(0.05), Hoeffding(0.5))}))]
    for family, thresholds in grids.items():
        reports += sweep(ix, v, ds, family, thresholds, cfg)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(reports, args.out_dir / "curves.csv")

    print(f"median final gap (Rule1 scale): {g:.4f}")
    print(f"{'rule':<10}{'param':>12}{'fraction':>10}{'recall@10':>11}")
    for rep in reports:
        for row in rep.rows:
            if row.n == 10:
                param = f"{float(row.param):.4g}" if row.param else "-"
                print(f"{row.rule:<10}{param:>12}{row.mean_fraction:>10.3f}{row.recall:>11.3f}")


if __name__ == "__main__":
    main()

"""How many features each query needs before its peak settles on the final answer.

Writes ``profile_deciles.csv`` (query counts per tenth of the features) and
``profile_per_query.csv``, split by planted query kind in the printout.
"""

import numpy as np

from anytime_bow import features_needed_profile

from common import benchmark, parser


def main():
    p = parser(__doc__)
    p.add_argument("--perm-seed", type=int, default=0, help="feature-order seed")
    args = p.parse_args()
    ds, info, v, ix = benchmark(args)
    prof = features_needed_profile(ix, v, ds, args.perm_seed, threads=4)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    prof.write_csv(args.out_dir / "profile_deciles.csv")
    prof.write_per_query_csv(args.out_dir / "profile_per_query.csv")

    kinds = np.array([info.kind_of(q) for q in prof.query_ids])
    for b, c in enumerate(prof.decile_counts):
        print(f"{b * 10:3d}-{b * 10 + 10:3d}% {'#' * int(c)} {c}")
    for kind in ("easy", "hard"):
        f = prof.min_fractions[kinds == kind]
        print(f"{kind}: median {np.median(f):.3f}, 90th percentile {np.quantile(f, 0.9):.3f} over {f.size} queries")


if __name__ == "__main__":
    main()

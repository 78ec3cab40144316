"""Shared setup for the experiment scripts: the default synthetic benchmark."""

import argparse
from pathlib import Path

import numpy as np

from anytime_bow import KMeansConfig, SynthConfig, build_index, compute_idf, synthesize_with_info, train
from anytime_bow.query import replay

RESULTS = Path(__file__).resolve().parent.parent / "results"


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seed", type=int, default=1, help="dataset and vocabulary seed")
    p.add_argument("--k", type=int, default=128, help="vocabulary size")
    p.add_argument("--out-dir", type=Path, default=RESULTS)
    p.add_argument("--config", type=Path, help="SynthConfig JSON; defaults otherwise")
    return p


def benchmark(args):
    cfg = SynthConfig.from_json(args.config) if args.config else SynthConfig()
    ds, info = synthesize_with_info(cfg, args.seed)
    db = ds.database
    v = train(np.concatenate([im.descriptors for im in db]), KMeansConfig(args.k, seed=args.seed))
    v = compute_idf(v, db)
    return ds, info, v, build_index(v, db)


def median_final_gap(ix, v, queries, seed=0) -> float:
    """Median over queries of max - mean after all features: the natural Rule1 scale."""
    gaps = [t.maxes[-1] - t.running_sum[-1] / ix.num_images
            for t in (replay(ix, v, q, seed) for q in queries)]
    return float(np.median(gaps))

"""Acceptance criteria, one test each. Every test records a PASS/FAIL line
that is printed in the terminal summary."""

import csv
import time
from pathlib import Path

import numpy as np
import pytest

from anytime_bow.cli import main
from anytime_bow.descriptors import SynthConfig, synthesize
from anytime_bow.errors import InvalidConfig
from anytime_bow.eval import (
    EvalConfig, evaluate, features_needed_profile, sweep, tfidf_vectors, tie_aware_order,
    write_report_csv,
)
from anytime_bow.index import build_index
from anytime_bow.query import replay, run_query
from anytime_bow.stopping import Never, Rule1, race_simulate
from anytime_bow.vocabulary import KMeansConfig, Vocabulary, compute_idf, kmeans, quantize, train

from conftest import pipeline, prefix_replay_fractions

pytestmark = pytest.mark.acceptance

RESULTS = Path(__file__).resolve().parent.parent / "results"


def _random_configs(count, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n_clusters = int(rng.integers(16, 257))
        cfg = SynthConfig(
            num_images=int(rng.integers(10, 101)) * 2,
            features_per_image=int(rng.integers(10, 101)),
            dimension=int(rng.integers(2, 33)),
            num_clusters=n_clusters,
            hard_fraction=float(rng.random()),
            confuser_count=int(rng.integers(0, 6)),
            clusters_per_image=int(rng.integers(2, min(16, n_clusters) + 1)),
        )
        k = int(rng.integers(8, 257))
        ds_seed = int(rng.integers(0, 2**31))
        try:
            cfg.validate()
            ds = synthesize(cfg, ds_seed)
        except InvalidConfig:
            continue
        k = min(k, sum(len(im) for im in ds.database))
        out.append((cfg, ds, k, ds_seed))
    return out


def _build(ds, k, seed):
    db = ds.database
    v = compute_idf(train(np.concatenate([im.descriptors for im in db]), KMeansConfig(k, seed=seed)), db)
    return v, build_index(v, db)


def _median_final_gap(ix, v, queries, seed=0):
    gaps = []
    for q in queries:
        t = replay(ix, v, q, seed)
        gaps.append(t.maxes[-1] - t.running_sum[-1] / ix.num_images)
    return float(np.median(gaps))


def test_oracle_equivalence(criterion):
    start = time.perf_counter()
    mismatches = checked = 0
    cases = _random_configs(20, seed=2024)
    for cfg, ds, k, seed in cases:
        v, ix = _build(ds, k, seed)
        db = ds.database
        D = tfidf_vectors(v, db)
        dn = np.linalg.norm(D, axis=1)
        ids = np.array([im.image_id for im in db])
        for q in ds.queries:
            qv = tfidf_vectors(v, [q])[0]
            qn = np.linalg.norm(qv)
            with np.errstate(invalid="ignore", divide="ignore"):
                cos = np.where((dn > 0) & (qn > 0), D @ qv / (dn * qn), 0.0)
            expected = tie_aware_order(cos, ids).tolist()
            got = [i for i, _ in run_query(ix, v, q, Never(), len(db), seed=q.image_id).ranked]
            mismatches += got != expected
            checked += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 60 and len(cases) >= 20
    criterion("oracle equivalence", ok,
              f"{len(cases)} datasets, {checked} queries, {mismatches} mismatches, {elapsed:.1f}s (limit 60s)")
    assert ok


def test_prefix_replay_equivalence(criterion):
    mismatches = checked = 0
    for s in range(10):
        cfg = SynthConfig(num_images=60, features_per_image=40, dimension=8, num_clusters=64,
                          confuser_count=4, clusters_per_image=8)
        ds, _, v, ix = pipeline(cfg, seed=100 + s, k=64)
        prof = features_needed_profile(ix, v, ds, seed=s)
        oracle = prefix_replay_fractions(v, ds.database, ds.queries, s)
        mismatches += sum(a != b for a, b in zip(prof.min_fractions.tolist(), oracle))
        checked += len(oracle)
    criterion("prefix-replay equivalence", mismatches == 0,
              f"10 datasets, {checked} queries, {mismatches} mismatches")
    assert mismatches == 0


def test_threshold_monotonicity(bench, criterion):
    ds, _, v, ix = bench
    g = _median_final_gap(ix, v, ds.queries)
    scales = [1.0, 0.85, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2]
    Ts = [s * g for s in scales]
    cfg = EvalConfig(top_n=(3,), monte_carlo_runs=1, seed=0)
    reports = sweep(ix, v, ds, "rule1", Ts, cfg)
    never = evaluate(ix, v, ds, cfg).row(Never(), 3).recall
    feats = [rep.features_processed[("rule1", repr(float(T)))][0] for rep, T in zip(reports, Ts)]
    violations = sum(int((lo > hi).sum()) for hi, lo in zip(feats, feats[1:]))
    top = reports[0].row(Rule1(Ts[0]), 3).recall
    ok = violations == 0 and abs(top - never) <= 0.02
    criterion("threshold monotonicity", ok,
              f"{violations} per-query violations over 8 thresholds; recall@3 {top:.4f} at "
              f"T={Ts[0]:.3f} vs never {never:.4f} (|diff| {abs(top - never):.4f} <= 0.02)")
    assert ok


def test_easy_hard_separation(bench, criterion):
    ds, info, v, ix = bench
    assert ds is not None and info.config.hard_fraction == 0.5
    T = 0.5 * _median_final_gap(ix, v, ds.queries)
    kinds = {q.query_id: q.kind for q in info.queries}
    wins, meds = 0, []
    for seed in range(10):
        fr = {"easy": [], "hard": []}
        for q in ds.queries:
            fr[kinds[q.image_id]].append(run_query(ix, v, q, Rule1(T), 1, seed).fraction_processed)
        e, h = float(np.median(fr["easy"])), float(np.median(fr["hard"]))
        meds.append((e, h))
        wins += e < h
    ok = wins >= 9
    e, h = np.mean(meds, axis=0)
    criterion("easy/hard separation", ok,
              f"easy median < hard median in {wins}/10 seeds (need 9); mean medians {e:.3f} vs {h:.3f}")
    assert ok


def test_hoeffding_race(criterion):
    start = time.perf_counter()
    r = race_simulate(0.6, 0.4, 0.05, 1000, seed=0)
    small = race_simulate(0.51, 0.49, 0.05, 1000, seed=1)
    large = race_simulate(0.9, 0.1, 0.05, 1000, seed=1)
    elapsed = time.perf_counter() - start
    ok = r.error_rate <= 0.05 and small.mean_stop_time > large.mean_stop_time and elapsed < 30
    criterion("hoeffding race bound", ok,
              f"error {r.error_rate:.4f} <= 0.05; stop time gap 0.02 {small.mean_stop_time:.0f} > "
              f"gap 0.8 {large.mean_stop_time:.1f}; {elapsed:.1f}s (limit 30s)")
    assert ok


def test_cost_accuracy_trend(bench, criterion):
    ds, _, v, ix = bench
    cfg = EvalConfig(top_n=(10,), monte_carlo_runs=10, seed=0)
    full = evaluate(ix, v, ds, cfg).row(Never(), 10).recall
    g = _median_final_gap(ix, v, ds.queries)

    def at(T):
        rep = evaluate(ix, v, ds, EvalConfig(**{**cfg.__dict__, "rules": (Rule1(T),)}))
        return rep, rep.mean_fraction(Rule1(T))

    lo, hi = 0.05 * g, 1.5 * g  # fraction increases with T
    rep, frac = at(0.5 * g)
    T = 0.5 * g
    for _ in range(30):
        if abs(frac - 0.5) <= 0.05:
            break
        if frac > 0.5:
            hi = T
        else:
            lo = T
        T = 0.5 * (lo + hi)
        rep, frac = at(T)
    recall = rep.row(Rule1(T), 10).recall
    loss = full - recall

    curve_T = sorted({*(s * g for s in (1.2, 1.0, 0.85, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1)), T}, reverse=True)
    curve = sweep(ix, v, ds, "rule1", curve_T, cfg)
    RESULTS.mkdir(exist_ok=True)
    write_report_csv(curve, RESULTS / "cost_accuracy_rule1.csv")
    with open(RESULTS / "cost_accuracy_threshold.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "mean_fraction", "recall_at_10", "never_recall_at_10", "loss"])
        w.writerow([repr(T), f"{frac:.6f}", f"{recall:.6f}", f"{full:.6f}", f"{loss:.6f}"])

    ok = abs(frac - 0.5) <= 0.05 and loss <= 0.05
    criterion("cost/accuracy trend", ok,
              f"T={T:.4f} gives mean fraction {frac:.3f}; recall@10 {recall:.4f} vs full {full:.4f} "
              f"(loss {loss:.4f} <= 0.05), 10 runs; curve in results/")
    assert ok


def _cli_pipeline(root: Path, threads: int) -> dict:
    root.mkdir()
    ds, voc, ix = root / "ds.bowd", root / "v.bowv", root / "i.bowi"
    rc = [main(["synth", "--out", str(ds), "--seed", "11"]),
          main(["train-vocab", "--input", str(ds), "--k", "128", "--seed", "11", "--out", str(voc)]),
          main(["build-index", "--vocab", str(voc), "--input", str(ds), "--out", str(ix)])]
    eng = ["--index", str(ix), "--vocab", str(voc), "--dataset", str(ds), "--seed", "5",
           "--threads", str(threads)]
    rc += [main(["bench", *eng, "--rules", "never", "rule1:12,6", "rule2:10", "rule3:10",
                 "hoeffding:0.5", "--runs", "3", "--out", str(root / "bench.csv")]),
           main(["sweep", *eng, "--family", "rule3", "--thresholds", "20,10,5", "--runs", "2",
                 "--out", str(root / "sweep.csv")]),
           main(["profile", *eng, "--out", str(root / "profile.csv"), "--per-query", str(root / "pq.csv")]),
           main(["race", "--mu1", "0.6", "--mu2", "0.4", "--delta", "0.05", "--trials", "200",
                 "--seed", "5", "--out", str(root / "race.csv")])]
    assert rc == [0] * len(rc)
    return {f.name: f.read_bytes() for f in sorted(root.iterdir())}


def test_determinism(tmp_path, criterion):
    a = _cli_pipeline(tmp_path / "run1", threads=1)
    b = _cli_pipeline(tmp_path / "run2", threads=1)
    c = _cli_pipeline(tmp_path / "run3", threads=4)
    differ = sorted(n for n in a if not (a[n] == b.get(n) == c.get(n)))
    ok = not differ and set(a) == set(b) == set(c)
    criterion("determinism", ok,
              f"{len(a)} output files compared over 3 reruns (threads 1, 1, 4); differing: {differ or 'none'}")
    assert ok


def test_kmeans_sanity(criterion):
    bad_runs = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        centers = rng.normal(size=(20, 8)) * 3
        X = (centers[rng.integers(0, 20, 4000)] + rng.normal(size=(4000, 8))).astype(np.float32)
        h = kmeans(X, KMeansConfig(32, max_iterations=50, tolerance=0.0, seed=seed)).distortion_history
        if any(b > a * (1 + 1e-12) for a, b in zip(h, h[1:])):
            bad_runs.append(seed)

    rng = np.random.default_rng(99)
    v = Vocabulary(rng.normal(size=(256, 16)))
    C = v.centroids.astype(np.float64)
    D = rng.normal(size=(10_000, 16)).astype(np.float32)
    wrong = 0
    for d in D:
        dist = np.linalg.norm(C - d.astype(np.float64), axis=1)
        w, qd = quantize(v, d)
        wrong += w != int(np.argmin(dist)) or not np.isclose(qd, dist.min(), rtol=1e-12, atol=0)
    ok = not bad_runs and wrong == 0
    criterion("k-means sanity", ok,
              f"distortion increased in runs {bad_runs or 'none'} of 5; quantize disagreed on {wrong}/10000")
    assert ok

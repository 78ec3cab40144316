"""Evaluation harness: recall at a precision floor, fraction of features
processed, threshold sweeps and the per-query features-needed profile.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .descriptors import Dataset, ImageRecord
from .errors import InvalidConfig, MissingGroundTruth
from .index import InvertedIndex
from .query import Trajectory, VoteConfig, rank_top, replay
from .stopping import Never, StoppingRule, make_rule, rule_label
from .vocabulary import Vocabulary

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["rule", "param", "n", "recall", "precision", "mean_fraction", "run_count",
                  "recall_unfiltered"]


@dataclass(frozen=True)
class EvalConfig:
    top_n: tuple[int, ...] = (3, 5, 10)
    rules: tuple = (Never(),)
    monte_carlo_runs: int = 10
    seed: int = 0
    precision_floor: float = 0.90
    threads: int = 1
    votes: VoteConfig = VoteConfig()

    def validate(self) -> None:
        if not self.top_n or min(self.top_n) < 1:
            raise InvalidConfig("top_n entries must be >= 1")
        if not self.rules:
            raise InvalidConfig("no rules to evaluate")
        if self.monte_carlo_runs < 1:
            raise InvalidConfig("monte_carlo_runs must be >= 1")
        if not 0.0 <= self.precision_floor <= 1.0:
            raise InvalidConfig("precision_floor must lie in [0, 1]")
        if self.threads < 1:
            raise InvalidConfig("threads must be >= 1")


@dataclass(frozen=True)
class EvalRow:
    rule: str
    param: str
    n: int
    recall: float
    precision: float
    mean_fraction: float
    run_count: int
    recall_unfiltered: float

    def as_csv(self) -> list:
        return [self.rule, self.param, self.n, f"{self.recall:.6f}", f"{self.precision:.6f}",
                f"{self.mean_fraction:.6f}", self.run_count, f"{self.recall_unfiltered:.6f}"]


@dataclass
class EvalReport:
    """Metrics per (rule, n), averaged over Monte Carlo runs.

    ``features_processed[label]`` has shape ``(runs, queries)``;
    ``fractions[label]`` is the per-query fraction averaged over runs.
    """

    rows: list[EvalRow]
    query_ids: list[int]
    features_processed: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)
    fractions: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    def row(self, rule: StoppingRule, n: int) -> EvalRow:
        name, param = rule_label(rule)
        for r in self.rows:
            if (r.rule, r.param, r.n) == (name, param, n):
                return r
        raise KeyError((name, param, n))

    def mean_fraction(self, rule: StoppingRule) -> float:
        return float(self.fractions[rule_label(rule)].mean())


def operating_point(top1: np.ndarray, hit: np.ndarray, positives: int,
                    floor: float) -> tuple[float, float, float]:
    """Best recall over min-score acceptance thresholds with precision >= floor.

    ``top1[q]`` is the query's best score, ``hit[q]`` the best score among its
    correct candidates (``-inf`` when none). A query is accepted at threshold
    ``s`` when ``top1 >= s`` and correct when ``hit >= s``. Returns
    ``(recall, precision, unfiltered_recall)``.
    """
    if positives == 0:
        return 0.0, 0.0, 0.0
    unfiltered = float(np.isfinite(hit).sum()) / positives
    cuts = np.unique(top1[np.isfinite(top1)])[::-1]
    if cuts.size == 0:
        return 0.0, 0.0, unfiltered
    accepted = (top1[None, :] >= cuts[:, None]).sum(axis=1)
    correct = (hit[None, :] >= cuts[:, None]).sum(axis=1)
    precision = correct / accepted
    recall = correct / positives
    ok = np.flatnonzero(precision >= floor)
    if ok.size == 0:
        return 0.0, float(precision.max()), unfiltered
    best = ok[np.lexsort((-precision[ok], -recall[ok]))[0]]
    return float(recall[best]), float(precision[best]), unfiltered


def _query_outcomes(traj: Trajectory, rules, ix: InvertedIndex, max_n: int):
    out = []
    for rule in rules:
        t, _ = traj.stop_step(rule)
        out.append((t, rank_top(traj.bins[t - 1], ix.image_ids, max_n)))
    return out


def evaluate(ix: InvertedIndex, v: Vocabulary, ds: Dataset, cfg: EvalConfig) -> EvalReport:
    """Run every query under every rule for ``cfg.monte_carlo_runs`` seeds.

    Run ``r`` visits each query's features in the order drawn from seed
    ``cfg.seed + r``. Only candidates with a positive score count as matches.
    """
    cfg.validate()
    queries = list(ds.queries)
    for q in queries:
        if q.image_id not in ds.ground_truth:
            raise MissingGroundTruth(q.image_id)
    gts = [ds.ground_truth[q.image_id] for q in queries]
    positives = sum(1 for g in gts if g)
    labels = [rule_label(r) for r in cfg.rules]
    if len(set(labels)) != len(labels):
        raise InvalidConfig("duplicate rules in evaluation config")
    max_n = max(cfg.top_n)
    n_runs, n_q = cfg.monte_carlo_runs, len(queries)
    feats = {lab: np.zeros((n_runs, n_q), dtype=np.int64) for lab in labels}
    metrics = {(lab, n): np.zeros((n_runs, 3)) for lab in labels for n in cfg.top_n}
    sizes = np.array([len(q) for q in queries])
    ix.vote_table(v.idf, cfg.votes.normalize)  # warm the shared cache before threading

    def one(args):
        q, seed = args
        return _query_outcomes(replay(ix, v, q, seed, cfg.votes), cfg.rules, ix, max_n)

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        for r in range(n_runs):
            seed = cfg.seed + r
            outcomes = list(pool.map(one, [(q, seed) for q in queries]))
            for k, lab in enumerate(labels):
                per_q = [o[k] for o in outcomes]
                feats[lab][r] = [t for t, _ in per_q]
                for n in cfg.top_n:
                    top1 = np.full(n_q, -np.inf)
                    hit = np.full(n_q, -np.inf)
                    for i, (_, ranked) in enumerate(per_q):
                        cands = [(im, s) for im, s in ranked[:n] if s > 0.0]
                        if cands:
                            top1[i] = cands[0][1]
                            good = [s for im, s in cands if im in gts[i]]
                            if good:
                                hit[i] = max(good)
                    metrics[(lab, n)][r] = operating_point(top1, hit, positives, cfg.precision_floor)
            log.info("monte carlo run %d/%d done", r + 1, n_runs)

    rows = []
    fractions = {}
    for rule, lab in zip(cfg.rules, labels):
        frac = (feats[lab] / sizes[None, :]).mean(axis=0)
        fractions[lab] = frac
        for n in cfg.top_n:
            rec, prec, unf = metrics[(lab, n)].mean(axis=0)
            rows.append(EvalRow(lab[0], lab[1], n, float(rec), float(prec), float(frac.mean()),
                                n_runs, float(unf)))
    return EvalReport(rows, [q.image_id for q in queries], feats, fractions)


def sweep(ix: InvertedIndex, v: Vocabulary, ds: Dataset, family: str,
          thresholds: Sequence[float], cfg: EvalConfig) -> list[EvalReport]:
    """One report per threshold of a rule family (``rule1``, ``rule2`` or ``rule3``)."""
    if family not in ("rule1", "rule2", "rule3"):
        raise InvalidConfig(f"cannot sweep rule family {family!r}")
    if len(thresholds) == 0:
        raise InvalidConfig("thresholds must be non-empty")
    rules = tuple(make_rule(family, t) for t in thresholds)
    uniq = tuple(dict.fromkeys(rules))
    full = evaluate(ix, v, ds, EvalConfig(**{**cfg.__dict__, "rules": uniq}))
    reports = []
    for rule in rules:
        lab = rule_label(rule)
        reports.append(EvalReport(
            [r for r in full.rows if (r.rule, r.param) == lab],
            full.query_ids,
            {lab: full.features_processed[lab]},
            {lab: full.fractions[lab]},
        ))
    return reports


def write_report_csv(reports: Sequence[EvalReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for rep in reports:
            for row in rep.rows:
                w.writerow(row.as_csv())


@dataclass
class FeatureProfile:
    query_ids: list[int]
    min_fractions: np.ndarray
    decile_counts: np.ndarray  # bin b covers [b/10, (b+1)/10), the last bin includes 1.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin", "lower", "upper", "count"])
            for b, c in enumerate(self.decile_counts):
                w.writerow([b, f"{b / 10:.1f}", f"{(b + 1) / 10:.1f}", int(c)])

    def write_per_query_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["query_id", "min_fraction"])
            for q, f in zip(self.query_ids, self.min_fractions):
                w.writerow([q, f"{f:.6f}"])


def settle_step(peaks: Sequence[int | None]) -> int:
    """Smallest t such that the peak after every step >= t equals the final peak."""
    final = peaks[-1]
    t = len(peaks)
    while t > 1 and peaks[t - 2] == final:
        t -= 1
    return t


def features_needed_profile(ix: InvertedIndex, v: Vocabulary, ds: Dataset, seed: int,
                            votes: VoteConfig = VoteConfig(), threads: int = 1) -> FeatureProfile:
    """Per query, the smallest prefix fraction after which the histogram peak
    already equals the exhaustive one and stays there."""
    queries = list(ds.queries)
    ix.vote_table(v.idf, votes.normalize)

    def one(q):
        traj = replay(ix, v, q, seed, votes)
        return settle_step(traj.peaks()), traj.length

    with ThreadPoolExecutor(max_workers=threads) as pool:
        res = list(pool.map(one, queries))
    fr = np.array([t / F for t, F in res])
    bins = np.array([min(9, (10 * t) // F) for t, F in res], dtype=np.int64)
    return FeatureProfile([q.image_id for q in queries], fr, np.bincount(bins, minlength=10))


# Brute-force reference, independent of the inverted index and the query loop.

def _oracle_words(v: Vocabulary, descriptors: np.ndarray) -> np.ndarray:
    X = np.asarray(descriptors, dtype=np.float64)
    C = v.centroids.astype(np.float64)
    d2 = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return d2.argmin(axis=1)


def tfidf_vectors(v: Vocabulary, images: Sequence[ImageRecord]) -> np.ndarray:
    out = np.zeros((len(images), v.size))
    for i, im in enumerate(images):
        counts = np.bincount(_oracle_words(v, im.descriptors), minlength=v.size)
        out[i] = counts / counts.sum() * v.idf
    return out


def oracle_cosine(v: Vocabulary, database: Sequence[ImageRecord], query: ImageRecord) -> np.ndarray:
    D = tfidf_vectors(v, database)
    q = tfidf_vectors(v, [query])[0]
    dn = np.linalg.norm(D, axis=1)
    qn = np.linalg.norm(q)
    dots = D @ q
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where((dn > 0) & (qn > 0), dots / (dn * qn), 0.0)
    return cos


def tie_aware_order(scores: np.ndarray, ids: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Ids by descending score; scores within ``rtol`` of their neighbour form
    one tie group, ordered by ascending id.

    Mathematically equal cosines can differ in the last bits when computed
    by a dense dot product, so exact float comparison would invent an order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.asarray(ids)
    by_score = np.lexsort((ids, -scores))
    s = scores[by_score]
    gaps = (s[:-1] - s[1:]) > rtol * np.maximum(np.abs(s[:-1]), np.finfo(float).tiny)
    group = np.concatenate([[0], np.cumsum(gaps)])
    return ids[by_score][np.lexsort((ids[by_score], group))]


def oracle_ranking(v: Vocabulary, database: Sequence[ImageRecord], query: ImageRecord) -> list[int]:
    cos = oracle_cosine(v, database, query)
    ids = np.array([im.image_id for im in database])
    return tie_aware_order(cos, ids).tolist()

"""Anytime query engine.

Query features are visited in a seeded random order. Each one is quantized,
its postings vote into a score histogram over database images, and the
stopping rule is consulted after every feature.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .descriptors import ImageRecord
from .errors import DimensionMismatch, EmptyQuery, InvalidConfig
from .index import InvertedIndex
from .stopping import Never, StoppingRule, StopState, should_stop
from .vocabulary import Vocabulary, quantize, quantize_many


@dataclass
class ScoreHistogram:
    """Per-image accumulated votes with incrementally maintained statistics.

    ``second_max`` is the largest bin other than ``current_argmax``; ``unit``
    is the largest vote a single feature can add to one bin.
    """

    bins: np.ndarray
    running_sum: float = 0.0
    current_max: float = 0.0
    current_argmax: int = 0
    second_max: float = 0.0
    unit: float = 0.0

    @classmethod
    def zeros(cls, n: int, unit: float = 0.0) -> "ScoreHistogram":
        return cls(np.zeros(n), unit=unit)

    @property
    def mean(self) -> float:
        return self.running_sum / self.bins.size

    @property
    def peak(self) -> int | None:
        return self.current_argmax if self.current_max > 0.0 else None

    def add(self, where: np.ndarray, votes: np.ndarray) -> None:
        # `where` is ascending and duplicate-free, votes are non-negative
        if where.size == 0:
            return
        h = self.bins
        h[where] += votes
        self.running_sum += float(votes.sum())
        vals = h[where]
        j = int(vals.argmax())
        cand, cand_val = int(where[j]), float(vals[j])
        old = self.current_argmax
        old_val = float(h[old])
        if cand_val > old_val or (cand_val == old_val and cand < old):
            new, new_val = cand, cand_val
        else:
            new, new_val = old, old_val
        second = self.second_max
        others = where != new
        if others.any():
            second = max(second, float(vals[others].max()))
        if old != new:
            second = max(second, old_val)
        self.current_max = new_val
        self.current_argmax = new
        self.second_max = second


class StopReason(enum.Enum):
    RULE_FIRED = "rule_fired"
    EXHAUSTED = "exhausted"


@dataclass
class QueryResult:
    ranked: list[tuple[int, float]]
    features_processed: int
    fraction_processed: float
    stop_reason: StopReason
    histogram_snapshot: np.ndarray | None = None


@dataclass(frozen=True)
class VoteConfig:
    """How a quantized feature turns into votes.

    ``normalize=False`` votes raw ``idf * tf * idf`` without the per-image norm.
    ``distance_weighted`` scales each vote by ``exp(-d^2 / sigma^2)`` where ``d``
    is the quantization distance; ``sigma`` defaults to the mean quantization
    distance observed while building the index.
    """

    normalize: bool = True
    distance_weighted: bool = False
    sigma: float | None = None


def rank_top(bins: np.ndarray, image_ids: np.ndarray, n: int, min_score: float | None = None):
    """Top-``n`` (image_id, score) by score descending, ties by ascending image id."""
    m = min(n, bins.size)
    if m < bins.size:
        kth = np.partition(bins, bins.size - m)[bins.size - m]
        pool = np.flatnonzero(bins >= kth)
    else:
        pool = np.arange(bins.size)
    order = pool[np.lexsort((image_ids[pool], -bins[pool]))][:m]
    ranked = [(int(image_ids[p]), float(bins[p])) for p in order]
    if min_score is not None:
        ranked = [r for r in ranked if r[1] >= min_score]
    return ranked


def _check(ix: InvertedIndex, v: Vocabulary, query: ImageRecord, n: int) -> None:
    if v.idf is None:
        raise InvalidConfig("vocabulary has no idf")
    if ix.num_words != v.size:
        raise InvalidConfig(f"index has {ix.num_words} words, vocabulary {v.size}")
    if len(query) == 0:
        raise EmptyQuery("query has no features")
    if query.dimension != v.dimension:
        raise DimensionMismatch(v.dimension, query.dimension)
    if n < 1:
        raise InvalidConfig("n must be >= 1")


def _distance_factor(ix: InvertedIndex, votes: VoteConfig):
    if not votes.distance_weighted:
        return None
    sigma = votes.sigma if votes.sigma is not None else ix.mean_quantization_distance
    if not sigma > 0:
        raise InvalidConfig("distance weighting needs a positive sigma")
    return 1.0 / (sigma * sigma)


def _run(ix, v, query, rule, seed, votes, on_step=None):
    table, unit = ix.vote_table(v.idf, votes.normalize)
    inv_s2 = _distance_factor(ix, votes)
    order = np.random.default_rng(seed).permutation(len(query))
    hist = ScoreHistogram.zeros(ix.num_images, unit)
    state = StopState()
    reason = StopReason.EXHAUSTED
    desc = query.descriptors
    for i in order:
        w, dist = quantize(v, desc[i])
        vote = table[w]
        if inv_s2 is not None:
            vote = vote * math.exp(-dist * dist * inv_s2)
        hist.add(ix.bins[w], vote)
        state.advance(hist)
        if on_step is not None:
            on_step(state.features_processed, w, hist)
        if should_stop(rule, hist, state):
            reason = StopReason.RULE_FIRED
            break
    return hist, state, reason


def run_query(ix: InvertedIndex, v: Vocabulary, query: ImageRecord, rule: StoppingRule,
              n: int, seed: int, *, votes: VoteConfig = VoteConfig(),
              min_score: float | None = None, keep_histogram: bool = False) -> QueryResult:
    _check(ix, v, query, n)
    hist, state, reason = _run(ix, v, query, rule, seed, votes)
    t = state.features_processed
    return QueryResult(
        ranked=rank_top(hist.bins, ix.image_ids, n, min_score),
        features_processed=t,
        fraction_processed=t / len(query),
        stop_reason=reason,
        histogram_snapshot=hist.bins.copy() if keep_histogram else None,
    )


@dataclass(frozen=True)
class TraceStep:
    step: int
    word_id: int
    argmax: int | None  # image id of the histogram peak
    gap: float
    max: float
    mean: float


@dataclass
class QueryTrace:
    result: QueryResult
    steps: list[TraceStep]
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "word_id", "argmax", "gap", "max", "mean"])
            for s in self.steps:
                w.writerow([s.step, s.word_id, "" if s.argmax is None else s.argmax,
                            repr(s.gap), repr(s.max), repr(s.mean)])


def run_query_trace(ix: InvertedIndex, v: Vocabulary, query: ImageRecord, rule: StoppingRule,
                    n: int, seed: int, *, votes: VoteConfig = VoteConfig(),
                    min_score: float | None = None, snapshot_every: float | None = 0.05) -> QueryTrace:
    """Like :func:`run_query`, recording per-step peak and gap.

    Full histogram copies are kept every ``snapshot_every`` fraction of the
    query's features and at the final step.
    """
    _check(ix, v, query, n)
    F = len(query)
    if snapshot_every:
        checkpoints = {min(F, max(1, math.ceil(k * snapshot_every * F)))
                       for k in range(1, int(math.ceil(1 / snapshot_every)) + 1)}
    else:
        checkpoints = set()
    steps: list[TraceStep] = []
    snaps: dict[int, np.ndarray] = {}

    def record(t, w, h):
        peak = h.peak
        steps.append(TraceStep(t, w, None if peak is None else int(ix.image_ids[peak]),
                               h.current_max - h.mean, h.current_max, h.mean))
        if t in checkpoints:
            snaps[t] = h.bins.copy()

    hist, state, reason = _run(ix, v, query, rule, seed, votes, record)
    t = state.features_processed
    snaps[t] = hist.bins.copy()
    result = QueryResult(rank_top(hist.bins, ix.image_ids, n, min_score), t, t / F, reason,
                         hist.bins.copy())
    return QueryTrace(result, steps, snaps)


@dataclass
class Trajectory:
    """Every intermediate histogram of one exhaustive pass over a query.

    Because votes are only ever added, stopping a query early under any rule
    yields exactly the prefix of this pass, so one trajectory answers every
    rule and threshold for a given (query, seed).
    """

    words: np.ndarray
    bins: np.ndarray  # (F, N): row t-1 is the histogram after t features
    running_sum: np.ndarray
    maxes: np.ndarray
    argmaxes: np.ndarray
    seconds: np.ndarray
    unit: float

    @property
    def length(self) -> int:
        return self.words.size

    def histogram(self, t: int) -> ScoreHistogram:
        return ScoreHistogram(self.bins[t - 1], float(self.running_sum[t - 1]),
                              float(self.maxes[t - 1]), int(self.argmaxes[t - 1]),
                              float(self.seconds[t - 1]), self.unit)

    def peaks(self) -> list[int | None]:
        return [int(a) if m > 0.0 else None for a, m in zip(self.argmaxes, self.maxes)]

    def stop_step(self, rule: StoppingRule) -> tuple[int, StopReason]:
        if isinstance(rule, Never):
            return self.length, StopReason.EXHAUSTED
        state = StopState()
        for t in range(1, self.length + 1):
            h = self.histogram(t)
            state.advance(h)
            if should_stop(rule, h, state):
                return t, StopReason.RULE_FIRED
        return self.length, StopReason.EXHAUSTED


def replay(ix: InvertedIndex, v: Vocabulary, query: ImageRecord, seed: int,
           votes: VoteConfig = VoteConfig()) -> Trajectory:
    """Process every feature of ``query`` in the seeded order, keeping each histogram."""
    _check(ix, v, query, 1)
    table, unit = ix.vote_table(v.idf, votes.normalize)
    inv_s2 = _distance_factor(ix, votes)
    order = np.random.default_rng(seed).permutation(len(query))
    words, dists = quantize_many(v, query.descriptors[order])
    F, N = order.size, ix.num_images
    hist = ScoreHistogram.zeros(N, unit)
    rows = np.empty((F, N))
    sums, maxes, seconds = np.empty(F), np.empty(F), np.empty(F)
    argmaxes = np.empty(F, dtype=np.int64)
    for t in range(F):
        w = int(words[t])
        vote = table[w]
        if inv_s2 is not None:
            d = float(dists[t])
            vote = vote * math.exp(-d * d * inv_s2)
        hist.add(ix.bins[w], vote)
        rows[t] = hist.bins
        sums[t] = hist.running_sum
        maxes[t] = hist.current_max
        argmaxes[t] = hist.current_argmax
        seconds[t] = hist.second_max
    return Trajectory(words, rows, sums, maxes, argmaxes, seconds, unit)

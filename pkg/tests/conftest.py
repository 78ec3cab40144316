import functools

import numpy as np
import pytest

from anytime_bow.descriptors import SynthConfig, synthesize_with_info
from anytime_bow.index import build_index
from anytime_bow.query import ScoreHistogram
from anytime_bow.vocabulary import KMeansConfig, compute_idf, train

_CRITERIA = []


@functools.lru_cache(maxsize=None)
def pipeline(cfg: SynthConfig = SynthConfig(), seed: int = 1, k: int = 128):
    """(dataset, synth info, vocabulary, index) for a synthetic benchmark."""
    ds, info = synthesize_with_info(cfg, seed)
    db = ds.database
    v = train(np.concatenate([im.descriptors for im in db]), KMeansConfig(k, seed=seed))
    v = compute_idf(v, db)
    return ds, info, v, build_index(v, db)


@pytest.fixture(scope="session")
def bench():
    return pipeline()


@pytest.fixture(scope="session")
def small():
    cfg = SynthConfig(num_images=40, features_per_image=30, dimension=8, num_clusters=48,
                      hard_fraction=0.5, confuser_count=3, clusters_per_image=6)
    return pipeline(cfg, seed=3, k=40)


def hist_of(values) -> ScoreHistogram:
    values = np.asarray(values, dtype=float)
    h = ScoreHistogram.zeros(values.size)
    h.add(np.arange(values.size), values)
    return h


def _brute_words(C, X):
    return ((X.astype(np.float64)[:, None, :] - C[None, :, :]) ** 2).sum(-1).argmin(1)


def prefix_replay_fractions(v, database, queries, seed):
    """Oracle for the features-needed profile.

    Every prefix histogram is recomputed from scratch as
    ``unit-norm database tf-idf @ (prefix word counts * idf)``, with the peak
    taken as the lowest bin within 1e-12 relative of the maximum.
    """
    C = v.centroids.astype(np.float64)
    D = np.zeros((len(database), v.size))
    for i, im in enumerate(database):
        cw = np.bincount(_brute_words(C, im.descriptors), minlength=v.size)
        D[i] = cw / cw.sum() * v.idf
    norms = np.linalg.norm(D, axis=1, keepdims=True)
    Dn = np.divide(D, norms, out=np.zeros_like(D), where=norms > 0)
    out = []
    for q in queries:
        order = np.random.default_rng(seed).permutation(len(q))
        words = _brute_words(C, q.descriptors[order])
        counts = np.zeros(v.size)
        peaks = []
        for w in words:
            counts[w] += 1
            h = Dn @ (counts * v.idf)
            m = h.max()
            peaks.append(None if m <= 0 else int(np.flatnonzero(h >= m * (1 - 1e-12))[0]))
        t = len(peaks)
        while t > 1 and peaks[t - 2] == peaks[-1]:
            t -= 1
        out.append(t / len(peaks))
    return out


@pytest.fixture
def criterion():
    """Record an acceptance criterion outcome for the end-of-run summary."""
    def record(name, ok, detail=""):
        _CRITERIA.append((name, bool(ok), detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")

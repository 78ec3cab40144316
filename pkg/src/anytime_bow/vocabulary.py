"""Visual vocabulary: k-means training, exact vector quantization, idf."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .descriptors import ImageRecord
from .errors import DimensionMismatch, FormatError, InvalidConfig

log = logging.getLogger(__name__)

MAGIC = b"BOWV"
VERSION = 1
_HEADER = struct.Struct("<4sHIII")

# rows x centroids x dims held in memory at once during exact distance scans
_SCAN_BUDGET = 1 << 22


@dataclass(frozen=True, eq=False)
class Vocabulary:
    centroids: np.ndarray  # (K, D) float32
    idf: np.ndarray | None = None  # (K,) float64
    trained_on: int = 0  # number of database images behind idf

    def __post_init__(self):
        c = np.ascontiguousarray(self.centroids, dtype=np.float32)
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise InvalidConfig("centroids must be a non-empty (K, D) array")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)
        if self.idf is not None:
            idf = np.ascontiguousarray(self.idf, dtype=np.float64)
            if idf.shape != (c.shape[0],) or not np.isfinite(idf).all() or (idf < 0).any():
                raise InvalidConfig("idf must hold K finite non-negative values")
            idf.setflags(write=False)
            object.__setattr__(self, "idf", idf)

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def dimension(self) -> int:
        return self.centroids.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Vocabulary):
            return NotImplemented
        if (self.idf is None) != (other.idf is None):
            return False
        return (
            self.trained_on == other.trained_on
            and np.array_equal(self.centroids, other.centroids)
            and (self.idf is None or np.array_equal(self.idf, other.idf))
        )

    __hash__ = None


@dataclass(frozen=True)
class KMeansConfig:
    k: int
    max_iterations: int = 100
    tolerance: float = 1e-4
    seed: int = 0


@dataclass
class KMeansResult:
    centroids: np.ndarray  # float64
    labels: np.ndarray
    distortion_history: list[float] = field(default_factory=list)
    iterations: int = 0
    duplicate_centroids: int = 0


def _scan(X: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest-centroid scan; ties go to the lowest centroid index."""
    n, k = X.shape[0], C.shape[0]
    labels = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float64)
    step = max(1, _SCAN_BUDGET // max(1, k * C.shape[1]))
    for lo in range(0, n, step):
        diff = X[lo:lo + step, None, :] - C[None, :, :]
        d2 = (diff * diff).sum(axis=-1)
        idx = d2.argmin(axis=1)
        labels[lo:lo + step] = idx
        best[lo:lo + step] = d2[np.arange(idx.size), idx]
    return labels, best


def _as_matrix(descriptors) -> np.ndarray:
    if isinstance(descriptors, np.ndarray):
        X = descriptors
    else:
        X = np.concatenate([np.atleast_2d(np.asarray(d)) for d in descriptors], axis=0)
    if X.ndim != 2:
        raise InvalidConfig("descriptors must form an (N, D) array")
    return np.asarray(X, dtype=np.float32).astype(np.float64)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    dups = 0
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
            dups += 1
        else:
            cdf = np.cumsum(d2)
            idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            idx = min(idx, n - 1)
        chosen.append(idx)
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return X[chosen].copy(), dups


def kmeans(descriptors, cfg: KMeansConfig) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Descriptors are put in lexicographic order before seeding so the result
    does not depend on the order they were supplied in. ``labels`` refer to
    that canonical order.
    """
    X = _as_matrix(descriptors)
    n = X.shape[0]
    if n == 0:
        raise InvalidConfig("no descriptors to cluster")
    if cfg.k < 1:
        raise InvalidConfig(f"k must be positive, got {cfg.k}")
    if cfg.k > n:
        raise InvalidConfig(f"k={cfg.k} exceeds descriptor count {n}")
    if cfg.max_iterations < 1 or cfg.tolerance < 0:
        raise InvalidConfig("max_iterations must be >= 1 and tolerance >= 0")

    X = X[np.lexsort(X.T[::-1])]
    rng = np.random.default_rng(cfg.seed)
    C, dups = _kmeans_pp(X, cfg.k, rng)
    spread = float(np.sqrt(((X - X.mean(axis=0)) ** 2).sum(axis=1).mean()))

    history = []
    labels = np.zeros(n, dtype=np.int64)
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        labels, d2 = _scan(X, C)
        history.append(float(d2.sum()))
        counts = np.bincount(labels, minlength=cfg.k)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # move each empty centroid onto the currently worst-served point
            far = np.argsort(-d2, kind="stable")
            taken = 0
            for j in empty:
                while counts[labels[far[taken]]] <= 1:
                    taken += 1
                p = far[taken]
                taken += 1
                counts[labels[p]] -= 1
                labels[p] = j
                counts[j] = 1
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        new_C = sums / counts[:, None]
        move = float(np.sqrt(((new_C - C) ** 2).sum(axis=1)).max())
        C = new_C
        if spread == 0.0 or move / spread < cfg.tolerance:
            break

    c32 = C.astype(np.float32)
    _, first = np.unique(c32, axis=0, return_index=True)
    dup_final = cfg.k - first.size
    if dup_final:
        log.warning("k-means produced %d duplicate centroids (degenerate input)", dup_final)
    return KMeansResult(C, labels, history, it, max(dups, dup_final))


def train(descriptors, cfg: KMeansConfig) -> Vocabulary:
    """Train a vocabulary (idf unset) from database descriptors."""
    res = kmeans(descriptors, cfg)
    log.info("k-means: k=%d, %d iterations, distortion %.6g",
             cfg.k, res.iterations, res.distortion_history[-1])
    return Vocabulary(res.centroids)


def quantize_many(v: Vocabulary, descriptors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(descriptors, dtype=np.float32))
    if X.shape[1] != v.dimension:
        raise DimensionMismatch(v.dimension, X.shape[1])
    words, d2 = _scan(X.astype(np.float64), v.centroids.astype(np.float64))
    return words, np.sqrt(d2)


def quantize(v: Vocabulary, d) -> tuple[int, float]:
    """Nearest word by exhaustive scan; returns ``(word_id, distance)``."""
    d = np.asarray(d, dtype=np.float32)
    if d.ndim != 1:
        raise DimensionMismatch(v.dimension, d.shape[-1] if d.ndim else 0)
    words, dist = quantize_many(v, d[None, :])
    return int(words[0]), float(dist[0])


def compute_idf(v: Vocabulary, database: Sequence[ImageRecord]) -> Vocabulary:
    """idf[w] = ln(N_im / max(1, n_w)), n_w = images whose words include w."""
    if len(database) == 0:
        raise InvalidConfig("database is empty")
    n_w = np.zeros(v.size, dtype=np.int64)
    for im in database:
        words, _ = quantize_many(v, im.descriptors)
        n_w[np.unique(words)] += 1
    n_im = len(database)
    idf = np.log(n_im / np.maximum(n_w, 1).astype(np.float64))
    return replace(v, idf=idf, trained_on=n_im)


def save_vocabulary(v: Vocabulary, path) -> None:
    idf = v.idf if v.idf is not None else np.zeros(v.size)
    n_im = v.trained_on if v.idf is not None else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, v.dimension, v.size, n_im))
        fh.write(v.centroids.astype("<f4").tobytes())
        fh.write(np.asarray(idf, dtype="<f8").tobytes())


def load_vocabulary(path) -> Vocabulary:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise FormatError(0, "file too short for header")
    magic, version, dim, k, n_im = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(0, f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(4, f"unsupported version {version}")
    off = _HEADER.size
    need = k * dim * 4 + k * 8
    if len(buf) - off != need:
        raise FormatError(off, f"expected {need} payload bytes, found {len(buf) - off}")
    cents = np.frombuffer(buf, "<f4", k * dim, off).reshape(k, dim).astype(np.float32)
    idf = np.frombuffer(buf, "<f8", k, off + k * dim * 4).astype(np.float64)
    if n_im == 0:
        return Vocabulary(cents)
    return Vocabulary(cents, idf, n_im)

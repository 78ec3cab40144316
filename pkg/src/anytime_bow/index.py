"""Inverted index from visual words to tf-idf weighted postings."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .descriptors import ImageRecord
from .errors import FormatError, InvalidConfig, WordOutOfRange
from .vocabulary import Vocabulary, quantize_many

MAGIC = b"BOWI"
VERSION = 1
_HEADER = struct.Struct("<4sHII")
_POSTING = np.dtype([("image_id", "<u4"), ("weight", "<f8")])


class Posting(NamedTuple):
    image_id: int
    weight: float


@dataclass(frozen=True, eq=False)
class InvertedIndex:
    """Postings are stored per word as parallel arrays of database *positions*
    (histogram bins, ascending) and weights ``tf * idf``. ``image_ids`` maps
    positions back to dataset image ids.
    """

    bins: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]
    image_ids: np.ndarray
    image_norms: np.ndarray
    image_word_counts: np.ndarray
    mean_quantization_distance: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_words(self) -> int:
        return len(self.bins)

    @property
    def num_images(self) -> int:
        return int(self.image_ids.size)

    def lookup(self, w: int) -> list[Posting]:
        if not 0 <= w < self.num_words:
            raise WordOutOfRange(w, self.num_words)
        ids = self.image_ids[self.bins[w]]
        return [Posting(int(i), float(x)) for i, x in zip(ids, self.weights[w])]

    def vote_table(self, idf: np.ndarray, normalize: bool = True) -> tuple[tuple[np.ndarray, ...], float]:
        """Per-word vote increments and the largest single increment.

        A feature quantized to ``w`` adds ``idf[w] * weight / norm`` to each
        posted bin (``idf[w] * weight`` when ``normalize`` is false). Summed
        over a whole query this is proportional to tf-idf cosine similarity.
        """
        key = (np.asarray(idf, dtype=np.float64).tobytes(), normalize)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        votes = []
        top = 0.0
        for w in range(self.num_words):
            v = idf[w] * self.weights[w]
            if normalize:
                v = v / self.image_norms[self.bins[w]]
            v.setflags(write=False)
            votes.append(v)
            if v.size:
                top = max(top, float(v.max()))
        hit = (tuple(votes), top)
        self._cache[key] = hit
        return hit

    def __eq__(self, other):
        if not isinstance(other, InvertedIndex):
            return NotImplemented
        return (
            self.num_words == other.num_words
            and all(np.array_equal(a, b) for a, b in zip(self.bins, other.bins))
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and np.array_equal(self.image_ids, other.image_ids)
            and np.array_equal(self.image_norms, other.image_norms)
            and np.array_equal(self.image_word_counts, other.image_word_counts)
            and self.mean_quantization_distance == other.mean_quantization_distance
        )

    __hash__ = None


def build_index(v: Vocabulary, database: Sequence[ImageRecord]) -> InvertedIndex:
    if v.idf is None:
        raise InvalidConfig("vocabulary has no idf; run compute_idf first")
    if len(database) == 0:
        raise InvalidConfig("database is empty")
    K = v.size
    per_word_bins: list[list[int]] = [[] for _ in range(K)]
    per_word_w: list[list[float]] = [[] for _ in range(K)]
    norms = np.zeros(len(database))
    totals = np.zeros(len(database), dtype=np.int64)
    dist_sum = 0.0
    n_feat = 0
    for pos, im in enumerate(database):
        if len(im) == 0:
            raise InvalidConfig(f"database image {im.image_id} has no descriptors")
        words, dist = quantize_many(v, im.descriptors)
        dist_sum += float(dist.sum())
        n_feat += dist.size
        counts = np.bincount(words, minlength=K)
        tf = counts / words.size
        w_img = tf * v.idf
        present = np.flatnonzero(w_img > 0)
        for w in present:
            per_word_bins[w].append(pos)
            per_word_w[w].append(float(w_img[w]))
        norms[pos] = np.sqrt(np.sum(w_img[present] ** 2))
        totals[pos] = words.size
    bins = tuple(np.asarray(b, dtype=np.int64) for b in per_word_bins)
    weights = tuple(np.asarray(x, dtype=np.float64) for x in per_word_w)
    for arr in (*bins, *weights, norms, totals):
        arr.setflags(write=False)
    ids = np.asarray([im.image_id for im in database], dtype=np.int64)
    ids.setflags(write=False)
    return InvertedIndex(bins, weights, ids, norms, totals, dist_sum / n_feat)


def lookup(ix: InvertedIndex, w: int) -> list[Posting]:
    return ix.lookup(w)


def save_index(ix: InvertedIndex, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, ix.num_words, ix.num_images))
        for b, w in zip(ix.bins, ix.weights):
            rec = np.empty(b.size, dtype=_POSTING)
            rec["image_id"] = ix.image_ids[b]
            rec["weight"] = w
            fh.write(struct.pack("<I", b.size))
            fh.write(rec.tobytes())
        fh.write(ix.image_norms.astype("<f8").tobytes())
        fh.write(ix.image_word_counts.astype("<u4").tobytes())
        fh.write(ix.image_ids.astype("<u4").tobytes())
        fh.write(struct.pack("<d", ix.mean_quantization_distance))


def load_index(path) -> InvertedIndex:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise FormatError(0, "file too short for header")
    magic, version, k, n_im = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(0, f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(4, f"unsupported version {version}")
    off = _HEADER.size
    raw = []
    for _ in range(k):
        if off + 4 > len(buf):
            raise FormatError(off, "truncated posting list")
        (cnt,) = struct.unpack_from("<I", buf, off)
        off += 4
        if off + cnt * _POSTING.itemsize > len(buf):
            raise FormatError(off, "truncated posting list")
        raw.append(np.frombuffer(buf, _POSTING, cnt, off))
        off += cnt * _POSTING.itemsize
    tail = n_im * (8 + 4 + 4) + 8
    if len(buf) - off != tail:
        raise FormatError(off, f"expected {tail} trailing bytes, found {len(buf) - off}")
    norms = np.frombuffer(buf, "<f8", n_im, off).astype(np.float64)
    off += 8 * n_im
    totals = np.frombuffer(buf, "<u4", n_im, off).astype(np.int64)
    off += 4 * n_im
    ids = np.frombuffer(buf, "<u4", n_im, off).astype(np.int64)
    off += 4 * n_im
    (mean_dist,) = struct.unpack_from("<d", buf, off)

    pos_of = {int(i): p for p, i in enumerate(ids)}
    bins, weights = [], []
    for rec in raw:
        try:
            b = np.asarray([pos_of[int(i)] for i in rec["image_id"]], dtype=np.int64)
        except KeyError as exc:
            raise FormatError(off, f"posting refers to unknown image {exc}") from None
        bins.append(b)
        weights.append(rec["weight"].astype(np.float64))
    for arr in (*bins, *weights, norms, totals, ids):
        arr.setflags(write=False)
    return InvertedIndex(tuple(bins), tuple(weights), ids, norms, totals, mean_dist)

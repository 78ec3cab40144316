"""Descriptor datasets: the binary container, the ground-truth sidecar and a
synthetic generator with planted easy and hard queries.

A dataset is an ordered list of images, each holding a ``(F_i, D)`` float32
array of local descriptors. The first ``len(images) // 2`` images form the
database; the remainder are queries.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, FormatError, InvalidConfig

MAGIC = b"BOWD"
VERSION = 1
_HEADER = struct.Struct("<4sHII")
_RECORD = struct.Struct("<II")


@dataclass(frozen=True, eq=False)
class ImageRecord:
    image_id: int
    descriptors: np.ndarray  # (F, D) float32

    def __post_init__(self):
        d = np.ascontiguousarray(self.descriptors, dtype=np.float32)
        if d.ndim != 2 or d.shape[1] < 1:
            raise InvalidConfig(f"image {self.image_id}: need an (F, D) descriptor array")
        if not np.isfinite(d).all():
            raise InvalidConfig(f"image {self.image_id}: non-finite descriptor values")
        d.setflags(write=False)
        object.__setattr__(self, "descriptors", d)

    @property
    def dimension(self) -> int:
        return self.descriptors.shape[1]

    def __len__(self):
        return self.descriptors.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ImageRecord):
            return NotImplemented
        return self.image_id == other.image_id and np.array_equal(self.descriptors, other.descriptors)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Dataset:
    dimension: int
    images: tuple[ImageRecord, ...]
    ground_truth: dict[int, frozenset[int]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(
            self, "ground_truth",
            {int(q): frozenset(int(m) for m in ms) for q, ms in self.ground_truth.items()},
        )
        if self.dimension < 1:
            raise InvalidConfig("dimension must be positive")
        ids = set()
        for im in self.images:
            if im.dimension != self.dimension:
                raise DimensionMismatch(self.dimension, im.dimension)
            if im.image_id in ids:
                raise InvalidConfig(f"duplicate image id {im.image_id}")
            if len(im) == 0:
                raise InvalidConfig(f"image {im.image_id} has no descriptors")
            ids.add(im.image_id)
        for q, ms in self.ground_truth.items():
            missing = ({q} | ms) - ids
            if missing:
                raise InvalidConfig(f"ground truth refers to unknown images {sorted(missing)}")

    @property
    def num_database(self) -> int:
        return len(self.images) // 2

    @property
    def database(self) -> tuple[ImageRecord, ...]:
        return self.images[: self.num_database]

    @property
    def queries(self) -> tuple[ImageRecord, ...]:
        return self.images[self.num_database:]

    def image(self, image_id: int) -> ImageRecord:
        for im in self.images:
            if im.image_id == image_id:
                return im
        raise KeyError(image_id)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.dimension == other.dimension
            and self.images == other.images
            and self.ground_truth == other.ground_truth
        )

    __hash__ = None


def ground_truth_path(path) -> Path:
    """Sidecar location for a container path: ``ds.bowd`` -> ``ds.gt.csv``."""
    return Path(path).with_suffix(".gt.csv")


def save_dataset(ds: Dataset, path, gt_path=None) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, ds.dimension, len(ds.images)))
        for im in ds.images:
            fh.write(_RECORD.pack(im.image_id, len(im)))
            fh.write(im.descriptors.astype("<f4", copy=False).tobytes())
    write_ground_truth(ds.ground_truth, gt_path or ground_truth_path(path))


def write_ground_truth(gt: dict[int, frozenset[int]], path) -> None:
    # A row with an empty match_id declares a query that has no correct match.
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "match_id"])
        for q in sorted(gt):
            if gt[q]:
                for m in sorted(gt[q]):
                    w.writerow([q, m])
            else:
                w.writerow([q, ""])


def read_ground_truth(path) -> dict[int, frozenset[int]]:
    gt: dict[int, set[int]] = {}
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header != ["query_id", "match_id"]:
            raise FormatError(0, f"{path}: expected header query_id,match_id")
        for lineno, row in enumerate(rows, start=2):
            if len(row) != 2:
                raise FormatError(lineno, f"{path}: expected 2 columns")
            try:
                q = int(row[0])
                matches = gt.setdefault(q, set())
                if row[1].strip():
                    matches.add(int(row[1]))
            except ValueError as exc:
                raise FormatError(lineno, f"{path}: {exc}") from None
    return {q: frozenset(ms) for q, ms in gt.items()}


def load_dataset(path, gt_path=None) -> Dataset:
    """Read a ``BOWD`` container plus its ground-truth sidecar (if present)."""
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < _HEADER.size:
        raise FormatError(0, "file too short for header")
    magic, version, dim, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(0, f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(4, f"unsupported version {version}")
    if dim < 1:
        raise FormatError(6, "dimension must be positive")
    off = _HEADER.size
    images = []
    for _ in range(count):
        if off + _RECORD.size > len(buf):
            raise FormatError(off, "truncated image record header")
        image_id, n = _RECORD.unpack_from(buf, off)
        off += _RECORD.size
        if n < 1:
            raise FormatError(off - 4, f"image {image_id} has no descriptors")
        need = n * dim * 4
        remaining = len(buf) - off
        if remaining < need:
            if remaining % (4 * n) == 0 and remaining > 0:
                raise DimensionMismatch(dim, remaining // (4 * n))
            raise FormatError(off, "truncated descriptor block")
        arr = np.frombuffer(buf, dtype="<f4", count=n * dim, offset=off).reshape(n, dim)
        if not np.isfinite(arr).all():
            raise FormatError(off, f"image {image_id} has non-finite values")
        images.append(ImageRecord(image_id, arr.astype(np.float32)))
        off += need
    if off != len(buf):
        raise FormatError(off, "trailing bytes after last image")
    gt_file = Path(gt_path) if gt_path is not None else ground_truth_path(path)
    gt = read_ground_truth(gt_file) if gt_file.exists() else {}
    try:
        return Dataset(dim, images, gt)
    except InvalidConfig as exc:
        raise FormatError(off, str(exc)) from None


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the planted-structure generator.

    ``sigma`` is the per-axis descriptor noise as a fraction of the mean
    nearest-neighbour distance between cluster centres. ``core_fraction`` is
    the share of clusters a hard "family" of database images has in common;
    ``query_noise`` is the share of query features drawn from random clusters.
    """

    num_images: int = 200
    features_per_image: int = 60
    dimension: int = 16
    num_clusters: int = 128
    hard_fraction: float = 0.5
    confuser_count: int = 19
    sigma: float = 0.05
    clusters_per_image: int = 12
    core_fraction: float = 0.75
    query_noise: float = 0.3

    def validate(self) -> None:
        if self.num_images < 2:
            raise InvalidConfig("num_images must be >= 2")
        if self.features_per_image < 1:
            raise InvalidConfig("features_per_image must be >= 1")
        if self.dimension < 1:
            raise InvalidConfig("dimension must be >= 1")
        if self.num_clusters < 1:
            raise InvalidConfig("num_clusters must be >= 1")
        if self.clusters_per_image < 1:
            raise InvalidConfig("clusters_per_image must be >= 1")
        if self.confuser_count < 0:
            raise InvalidConfig("confuser_count must be >= 0")
        if self.sigma < 0:
            raise InvalidConfig("sigma must be >= 0")
        for name in ("hard_fraction", "core_fraction", "query_noise"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1], got {val}")

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        with open(path) as fh:
            raw = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise InvalidConfig(f"unknown synth config keys {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PlantedQuery:
    query_id: int
    kind: str  # "easy" or "hard"
    match_id: int
    confusers: tuple[int, ...]
    clusters: frozenset[int]  # clusters the query's features were drawn from


@dataclass(frozen=True)
class SynthInfo:
    """Generator bookkeeping kept alongside a synthetic dataset."""

    config: SynthConfig
    seed: int
    signatures: dict[int, frozenset[int]]  # database image id -> cluster set
    queries: tuple[PlantedQuery, ...]

    def kind_of(self, query_id: int) -> str:
        for q in self.queries:
            if q.query_id == query_id:
                return q.kind
        raise KeyError(query_id)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "seed": self.seed,
            "queries": [
                {"query_id": q.query_id, "kind": q.kind, "match_id": q.match_id,
                 "confusers": list(q.confusers)}
                for q in self.queries
            ],
        }


def synthesize(cfg: SynthConfig, seed: int) -> Dataset:
    return synthesize_with_info(cfg, seed)[0]


def synthesize_with_info(cfg: SynthConfig, seed: int) -> tuple[Dataset, SynthInfo]:
    """Generate a dataset whose queries have a planted match in the database.

    Database images are either singletons (a random cluster signature of
    their own) or members of a family of ``confuser_count + 1`` images that
    share a common core of clusters. Easy queries are matched to singletons;
    hard queries to family members, so the rest of the family competes with
    the true match for votes.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    C, D, F = cfg.num_clusters, cfg.dimension, cfg.features_per_image

    centers = rng.uniform(0.0, 1.0, size=(C, D))
    if C > 1:
        d2 = ((centers[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        np.fill_diagonal(d2, np.inf)
        spacing = float(np.sqrt(d2.min(axis=1)).mean())
    else:
        spacing = 1.0
    noise_sd = cfg.sigma * spacing

    n_db = cfg.num_images // 2
    n_q = cfg.num_images - n_db
    n_hard = int(round(cfg.hard_fraction * n_q))
    n_easy = n_q - n_hard
    fam_size = cfg.confuser_count + 1
    n_fam = min(math.ceil(n_hard / fam_size), n_db // fam_size) if n_hard else 0
    if n_hard and n_fam == 0:
        raise InvalidConfig(
            f"database of {n_db} images cannot hold a family of {fam_size} near-duplicates"
        )
    n_single = n_db - n_fam * fam_size
    if n_easy and n_single == 0:
        raise InvalidConfig("no singleton database images left for easy queries")

    S = min(cfg.clusters_per_image, C)
    n_core = min(S, int(round(cfg.core_fraction * S)))
    order = rng.permutation(n_db)
    families = [order[k * fam_size:(k + 1) * fam_size].tolist() for k in range(n_fam)]
    singles = order[n_fam * fam_size:].tolist()

    signatures: dict[int, np.ndarray] = {}
    family_of: dict[int, list[int]] = {}
    for fam in families:
        core = rng.choice(C, size=n_core, replace=False)
        rest = np.setdiff1d(np.arange(C), core)
        for member in fam:
            own = rng.choice(rest, size=min(S - n_core, rest.size), replace=False)
            signatures[member] = np.sort(np.concatenate([core, own]))
            family_of[member] = fam
    for s in singles:
        signatures[s] = np.sort(rng.choice(C, size=S, replace=False))

    def draw(clusters: np.ndarray) -> np.ndarray:
        pts = centers[clusters] + rng.normal(0.0, noise_sd, size=(clusters.size, D))
        return pts.astype(np.float32)

    images = []
    for i in range(n_db):
        images.append(ImageRecord(i, draw(rng.choice(signatures[i], size=F))))

    hard_slots = set(rng.permutation(n_q)[:n_hard].tolist())
    members = [m for fam in families for m in fam]
    n_noise = int(round(cfg.query_noise * F))
    planted, gt = [], {}
    hard_seen = easy_seen = 0
    for k in range(n_q):
        qid = n_db + k
        if k in hard_slots:
            match = members[hard_seen % len(members)]
            hard_seen += 1
            kind = "hard"
            confusers = tuple(sorted(m for m in family_of[match] if m != match))
        else:
            match = singles[easy_seen % len(singles)]
            easy_seen += 1
            kind = "easy"
            confusers = ()
        clusters = np.concatenate([
            rng.choice(signatures[match], size=F - n_noise),
            rng.integers(0, C, size=n_noise),
        ])
        rng.shuffle(clusters)
        images.append(ImageRecord(qid, draw(clusters)))
        planted.append(PlantedQuery(qid, kind, match, confusers, frozenset(clusters.tolist())))
        gt[qid] = frozenset({match})

    ds = Dataset(D, images, gt)
    info = SynthInfo(
        cfg, seed,
        {i: frozenset(signatures[i].tolist()) for i in range(n_db)},
        tuple(planted),
    )
    return ds, info

"""Episode construction: synthetic tasks, embedding files, sampling, K-means baseline.

Hidden labels never sit on the public attributes of an :class:`Episode`;
evaluation code reaches them through :meth:`Episode.ground_truth`.
"""
import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import InputError
from .rng import substream

MAGIC = b"CVEM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class GroundTruth:
    query_labels: np.ndarray
    pool_labels: np.ndarray  # -1 marks distractor rows
    pool_distractor: np.ndarray


@dataclass
class SemanticTable:
    vectors: np.ndarray  # one row per class
    class_ids: List[int]

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.class_ids):
            raise InputError("semantic table needs one vector per class id")
        if not np.all(np.isfinite(self.vectors)):
            raise InputError("semantic vectors must be finite")

    def lookup(self, class_ids):
        index = {c: i for i, c in enumerate(self.class_ids)}
        missing = [c for c in class_ids if c not in index]
        if missing:
            raise InputError(f"no semantic vector for classes {missing}")
        return self.vectors[[index[c] for c in class_ids]]


class Episode:
    """One N-way K-shot task with support, query and unlabeled pool.

    ``class_ids`` maps episode-local labels ``0..N-1`` to source class ids.
    """

    def __init__(self, support, support_labels, query, pool, n_way, k_shot, seed,
                 class_ids, query_labels, pool_labels, pool_distractor, semantic=None):
        self.support = np.asarray(support, dtype=np.float64)
        self.support_labels = np.asarray(support_labels, dtype=np.int64)
        self.query = np.asarray(query, dtype=np.float64)
        self.pool = np.asarray(pool, dtype=np.float64)
        self.n_way = int(n_way)
        self.k_shot = int(k_shot)
        self.seed = int(seed)
        self.class_ids = [int(c) for c in class_ids]
        self.semantic: Optional[SemanticTable] = semantic
        self._truth = GroundTruth(
            np.asarray(query_labels, dtype=np.int64),
            np.asarray(pool_labels, dtype=np.int64),
            np.asarray(pool_distractor, dtype=bool),
        )

    @property
    def dim(self):
        return self.support.shape[1]

    def ground_truth(self):
        """Evaluation-only access to hidden labels."""
        return self._truth


@dataclass
class EmbeddingDataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: List[str] = field(default_factory=list)
    semantic: Optional[SemanticTable] = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise InputError("features and labels disagree on row count")
        if self.labels.size:
            present = np.unique(self.labels)
            if present[0] != 0 or present[-1] != present.size - 1:
                raise InputError("labels must be dense in [0, num_classes)")
        if not self.class_names:
            self.class_names = [str(c) for c in range(self.num_classes)]

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def dim(self):
        return self.features.shape[1]


# --------------------------------------------------------------------------
# synthetic data


def class_centers(n_classes, d, separation, rng):
    """Centres on a sphere of radius ``separation / sqrt(2)``.

    With ``n_classes <= d`` the directions are orthonormal, so every pair of
    centres sits exactly ``separation`` apart; otherwise random directions give
    that distance in expectation.
    """
    radius = separation / np.sqrt(2.0)
    G = rng.standard_normal((d, n_classes))
    if n_classes <= d:
        Q, _ = np.linalg.qr(G)
        dirs = Q.T
    else:
        dirs = (G / np.linalg.norm(G, axis=0)).T
    return radius * dirs


def semantic_map(d, d_t, semantic_seed):
    """Fixed linear map from visual centres to synthetic text vectors."""
    return substream(semantic_seed, "semantic-map").standard_normal((d_t, d)) / np.sqrt(d)


def synthetic_semantics(centers, d_t, semantic_seed, rng, noise=0.1):
    M = semantic_map(centers.shape[1], d_t, semantic_seed)
    return centers @ M.T + noise * rng.standard_normal((centers.shape[0], d_t))


def generate_synthetic_task(n_classes=None, d=32, separation=2.0, n_way=5, k_shot=1,
                            n_query=15, n_unlabeled=100, distractor_classes=0,
                            distractor_per_class=0, seed=0, d_t=None, semantic_seed=0):
    """Draw a fresh Gaussian-blob world and an episode from it.

    Samples are ``centre + N(0, I)``, so ``separation`` is measured in units of
    the within-class standard deviation. Distractor rows come from classes
    outside the ``n_way`` episode classes and are appended to the pool.
    """
    if n_classes is None:
        n_classes = n_way + distractor_classes
    if n_way < 2 or k_shot < 1 or n_query < 0 or n_unlabeled < 0 or d < 1:
        raise InputError("infeasible episode counts")
    if distractor_classes < 0 or distractor_per_class < 0:
        raise InputError("distractor counts must be nonnegative")
    if n_classes < n_way + distractor_classes:
        raise InputError("n_classes must cover episode and distractor classes")
    if separation < 0:
        raise InputError("separation must be nonnegative")

    rng = substream(seed, "synthetic-task")
    centers = class_centers(n_classes, d, separation, rng)
    order = rng.permutation(n_classes)
    chosen = order[:n_way]
    distract = order[n_way:n_way + distractor_classes]

    def draw(cls, count):
        return centers[cls] + rng.standard_normal((count, d))

    support = np.vstack([draw(c, k_shot) for c in chosen])
    support_labels = np.repeat(np.arange(n_way), k_shot)
    query = np.vstack([draw(c, n_query) for c in chosen]) if n_query else np.zeros((0, d))
    query_labels = np.repeat(np.arange(n_way), n_query)
    pool_parts = [draw(c, n_unlabeled) for c in chosen]
    pool_labels = [np.repeat(np.arange(n_way), n_unlabeled)]
    for c in distract:
        pool_parts.append(draw(c, distractor_per_class))
        pool_labels.append(np.full(distractor_per_class, -1))
    pool = np.vstack(pool_parts) if pool_parts else np.zeros((0, d))
    pool_labels = np.concatenate(pool_labels)

    semantic = None
    if d_t:
        t = synthetic_semantics(centers[chosen], d_t, semantic_seed, rng)
        semantic = SemanticTable(t, list(range(n_way)))

    return Episode(support, support_labels, query, pool, n_way, k_shot, seed,
                   class_ids=[int(c) for c in chosen], query_labels=query_labels,
                   pool_labels=pool_labels, pool_distractor=pool_labels < 0,
                   semantic=semantic)


def synthetic_prototype_pairs(n_classes, d, separation, d_t, per_class=50, seed=0,
                              semantic_seed=0):
    """(prototype, semantic vector) pairs from an independent base world.

    Shares the visual-to-text map with :func:`generate_synthetic_task` through
    ``semantic_seed``, so a network trained on these pairs transfers to
    episodes drawn with the same ``semantic_seed``.
    """
    rng = substream(seed, "synthetic-base")
    centers = class_centers(n_classes, d, separation, rng)
    protos = np.stack([(c + rng.standard_normal((per_class, d))).mean(axis=0) for c in centers])
    t = synthetic_semantics(centers, d_t, semantic_seed, rng)
    return protos, t


# --------------------------------------------------------------------------
# file formats


def _float_token(v):
    return np.format_float_positional(np.float32(v), unique=True, trim="-")


def save_embeddings(ds, path, format="csv"):
    path = Path(path)
    feats = np.asarray(ds.features, dtype=np.float32)
    if format == "csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label"] + [f"f{j}" for j in range(feats.shape[1])])
            for lab, row in zip(ds.labels, feats):
                w.writerow([int(lab)] + [_float_token(v) for v in row])
    elif format == "binary":
        n, d = feats.shape
        with path.open("wb") as fh:
            fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n, d))
            fh.write(np.asarray(ds.labels, dtype="<i4").tobytes())
            fh.write(feats.astype("<f4").tobytes())
    else:
        raise InputError(f"unknown embedding format {format!r}")


def _load_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if not header or header[0].strip() != "label":
            raise InputError(f"{path}: header must start with 'label'")
        d = len(header) - 1
        if d < 1:
            raise InputError(f"{path}: no feature columns")
        labels, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != d + 1:
                raise InputError(f"{path}: row {lineno} has {len(rec) - 1} features, expected {d}")
            try:
                lab = int(rec[0])
                vals = [float(v) for v in rec[1:]]
            except ValueError as exc:
                raise InputError(f"{path}: row {lineno}: {exc}") from None
            if not all(np.isfinite(vals)):
                raise InputError(f"{path}: row {lineno} contains a non-finite value")
            labels.append(lab)
            rows.append(vals)
    feats = np.asarray(rows, dtype=np.float32).reshape(len(rows), d)
    return feats, np.asarray(labels, dtype=np.int64)


def _load_binary(path):
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise InputError(f"{path}: truncated header")
    magic, version, n, d = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise InputError(f"{path}: bad magic bytes {magic!r}")
    if version != FORMAT_VERSION:
        raise InputError(f"{path}: unsupported format version {version}")
    expected = _HEADER.size + 4 * n + 4 * n * d
    if len(blob) != expected:
        raise InputError(f"{path}: expected {expected} bytes, found {len(blob)}")
    labels = np.frombuffer(blob, dtype="<i4", count=n, offset=_HEADER.size).astype(np.int64)
    feats = np.frombuffer(blob, dtype="<f4", count=n * d, offset=_HEADER.size + 4 * n)
    feats = feats.reshape(n, d).astype(np.float32)
    bad = ~np.all(np.isfinite(feats), axis=1)
    if bad.any():
        raise InputError(f"{path}: row {int(np.argmax(bad))} contains a non-finite value")
    return feats, labels


def load_embeddings(path, format=None, semantic_path=None):
    """Read a dataset; ``format`` is ``csv`` or ``binary`` (inferred from the suffix if omitted)."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: no such file")
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "binary"
    if format == "csv":
        feats, labels = _load_csv(path)
    elif format == "binary":
        feats, labels = _load_binary(path)
    else:
        raise InputError(f"unknown embedding format {format!r}")
    semantic = load_semantic_table(semantic_path) if semantic_path else None
    return EmbeddingDataset(feats, labels, semantic=semantic)


def load_semantic_table(path):
    """Sidecar CSV with header ``class_id,t0,t1,...``."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: no such file")
    ids, rows = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "class_id":
            raise InputError(f"{path}: header must start with 'class_id'")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise InputError(f"{path}: row {lineno} has the wrong number of fields")
            try:
                ids.append(int(rec[0]))
                rows.append([float(v) for v in rec[1:]])
            except ValueError as exc:
                raise InputError(f"{path}: row {lineno}: {exc}") from None
            if not all(np.isfinite(rows[-1])):
                raise InputError(f"{path}: row {lineno} contains a non-finite value")
    return SemanticTable(np.asarray(rows, dtype=np.float64).reshape(len(rows), -1), ids)


def save_semantic_table(table, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class_id"] + [f"t{j}" for j in range(table.vectors.shape[1])])
        for cid, row in zip(table.class_ids, table.vectors):
            w.writerow([cid] + [repr(float(v)) for v in row])


# --------------------------------------------------------------------------
# sampling


def sample_episode(ds, n_way=5, k_shot=1, n_query=15, n_unlabeled=100, distractor_classes=0,
                   distractor_per_class=0, seed=0):
    """Sample an episode without replacement from ``ds``."""
    rng = substream(seed, "episode")
    need = k_shot + n_query + n_unlabeled
    by_class: Dict[int, np.ndarray] = {c: np.flatnonzero(ds.labels == c) for c in range(ds.num_classes)}
    eligible = [c for c, rows in by_class.items() if rows.size >= need]
    if len(eligible) < n_way:
        raise InputError(f"only {len(eligible)} classes have {need} samples; need {n_way}")
    chosen = rng.choice(np.asarray(eligible), size=n_way, replace=False)
    rest = [c for c in range(ds.num_classes) if c not in set(chosen.tolist())
            and by_class[c].size >= distractor_per_class]
    if distractor_classes and len(rest) < distractor_classes:
        raise InputError("not enough classes left for distractors")
    distract = rng.choice(np.asarray(rest), size=distractor_classes, replace=False) if distractor_classes else []

    X = np.asarray(ds.features, dtype=np.float64)
    s_idx, q_idx, u_idx = [], [], []
    for c in chosen:
        rows = rng.permutation(by_class[int(c)])[:need]
        s_idx.append(rows[:k_shot])
        q_idx.append(rows[k_shot:k_shot + n_query])
        u_idx.append(rows[k_shot + n_query:])
    d_idx = [rng.permutation(by_class[int(c)])[:distractor_per_class] for c in distract]

    s_idx = np.concatenate(s_idx)
    q_idx = np.concatenate(q_idx)
    pool_idx = np.concatenate(u_idx + d_idx) if (u_idx or d_idx) else np.zeros(0, dtype=np.int64)
    pool_labels = np.concatenate([np.repeat(np.arange(n_way), n_unlabeled),
                                  np.full(distractor_per_class * len(distract), -1)])
    semantic = None
    if ds.semantic is not None:
        semantic = SemanticTable(ds.semantic.lookup([int(c) for c in chosen]), list(range(n_way)))
    ep = Episode(X[s_idx], np.repeat(np.arange(n_way), k_shot), X[q_idx], X[pool_idx],
                 n_way, k_shot, seed, class_ids=[int(c) for c in chosen],
                 query_labels=np.repeat(np.arange(n_way), n_query), pool_labels=pool_labels,
                 pool_distractor=pool_labels < 0, semantic=semantic)
    ep.source_indices = {"support": s_idx, "query": q_idx, "pool": pool_idx}
    return ep


# --------------------------------------------------------------------------
# K-means baseline


@dataclass
class KMeansResult:
    prototypes: np.ndarray
    assignments: np.ndarray  # over support rows then pool rows
    pool_accuracy: Optional[float] = None

    def pool_predictions(self, n_support):
        return self.assignments[n_support:]


def kmeans_cluster(support, labels, pool, iters=10, clamp_support=True):
    """Lloyd iterations seeded with support class means."""
    S = np.asarray(support, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    A = np.vstack([S, np.asarray(pool, dtype=np.float64).reshape(-1, S.shape[1])])
    C = int(y.max()) + 1
    P = np.stack([S[y == c].mean(axis=0) for c in range(C)])

    def nearest(P):
        d2 = ((A[:, None, :] - P[None, :, :]) ** 2).sum(axis=2)
        lab = np.argmin(d2, axis=1)
        if clamp_support:
            lab[: len(y)] = y
        return lab

    lab = nearest(P)
    for _ in range(iters):
        for c in range(C):
            members = A[lab == c]
            if members.shape[0]:
                P[c] = members.mean(axis=0)
        new = nearest(P)
        if np.array_equal(new, lab):
            break
        lab = new
    return KMeansResult(P, lab)


def kmeans_baseline(episode, iters=10, clamp_support=True):
    """K-means on an episode, scored on its non-distractor pool rows."""
    res = kmeans_cluster(episode.support, episode.support_labels, episode.pool, iters, clamp_support)
    truth = episode.ground_truth()
    pred = res.pool_predictions(len(episode.support_labels))
    real = ~truth.pool_distractor
    res.pool_accuracy = float(np.mean(pred[real] == truth.pool_labels[real])) if real.any() else float("nan")
    return res

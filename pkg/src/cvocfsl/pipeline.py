"""Test-time procedure for one episode.

``full`` runs: clustering on support and pool, semantic refinement of the
prototypes, restricted pseudo-labeling of the pool, support expansion, and
balanced label propagation to the queries. The other methods are ablations of
that chain and share its reporting.
"""
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import numpy as np

from .cst import CstConfig
from .cvoc import CvocConfig, build_dictionaries, query_logits, run_cvoc
from .episodes import SemanticTable, kmeans_cluster
from .errors import InputError
from .numerics import entropy, softmax_temperature
from .propagation import PropagationConfig, embedding_propagation, label_propagation
from .rng import substream
from .semantic import SinNetwork, refine_prototype

METHODS = ("cvoc", "cvoc+cst", "kmeans", "lp-only", "cvoc+lp", "full")


@dataclass
class PseudoLabelSet:
    indices: np.ndarray
    labels: np.ndarray
    entropies: np.ndarray
    threshold: float
    keep_percent: float

    def __len__(self):
        return int(self.indices.size)


@dataclass
class PipelineConfig:
    method: str = "full"
    cvoc: CvocConfig = field(default_factory=CvocConfig)
    cst: CstConfig = field(default_factory=CstConfig)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    keep_percent: float = 80.0
    blend: float = 0.9
    kmeans_iters: int = 10
    balanced_lp: bool = True
    # recompute pool logits from the refined prototypes before pseudo-labeling
    recompute_logits: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise InputError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not 0.0 <= self.keep_percent <= 100.0:
            raise InputError("keep_percent must lie in [0, 100]")
        if not 0.0 <= self.blend <= 1.0:
            raise InputError("blend weight s must lie in [0, 1]")

    def to_dict(self):
        return asdict(self)


@dataclass
class EpisodeReport:
    method: str
    seed: int
    query_accuracy: float
    pool_accuracy: float
    n_support: int
    n_query: int
    n_pool: int
    pseudo: Optional[Dict[str, float]]
    timings: Dict[str, float]
    config: Dict

    def to_dict(self):
        return asdict(self)


def restricted_pseudo_label(pool_logits, keep_percent=80.0, tau=0.1):
    """Keep the lowest-entropy ``floor(k% * u)`` pool rows with their argmax labels."""
    if not 0.0 <= keep_percent <= 100.0:
        raise InputError("keep_percent must lie in [0, 100]")
    L = np.atleast_2d(np.asarray(pool_logits, dtype=np.float64))
    u = L.shape[0]
    if u == 0:
        empty = np.zeros(0, dtype=np.int64)
        return PseudoLabelSet(empty, empty, np.zeros(0), float("nan"), keep_percent)
    H = entropy(softmax_temperature(L, tau))
    order = np.lexsort((np.arange(u), H))
    n_keep = math.floor(keep_percent * u / 100.0)
    kept = order[:n_keep]
    threshold = float(H[kept[-1]]) if n_keep else float("nan")
    return PseudoLabelSet(kept.astype(np.int64), np.argmax(L[kept], axis=1).astype(np.int64),
                          H[kept], threshold, keep_percent)


def expand_support(support, support_labels, pseudo, pool):
    """Append the selected pool rows, labelled by their pseudo-labels, to the support."""
    S = np.asarray(support, dtype=np.float64)
    U = np.asarray(pool, dtype=np.float64)
    idx = np.asarray(pseudo.indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= U.shape[0]):
        raise InputError("pseudo-label index out of range")
    if np.unique(idx).size != idx.size:
        raise InputError("duplicate pool index in pseudo-label set")
    X = np.vstack([S, U[idx].reshape(-1, S.shape[1])])
    y = np.concatenate([np.asarray(support_labels, dtype=np.int64), pseudo.labels])
    return X, y


def _smooth(episode, prop_cfg):
    ns, nu = len(episode.support), len(episode.pool)
    X = np.vstack([episode.support, episode.pool, episode.query])
    Z = embedding_propagation(X, prop_cfg)
    return Z[:ns], Z[ns:ns + nu], Z[ns + nu:]


def _pseudo_stats(pseudo, truth):
    if len(pseudo) == 0:
        return {"kept": 0, "precision": float("nan"), "distractor_fraction": float("nan"),
                "threshold": pseudo.threshold}
    true = truth.pool_labels[pseudo.indices]
    return {
        "kept": len(pseudo),
        "precision": float(np.mean(pseudo.labels == true)),
        "distractor_fraction": float(np.mean(truth.pool_distractor[pseudo.indices])),
        "threshold": pseudo.threshold,
    }


def _acc(pred, truth, mask=None):
    if mask is not None:
        pred, truth = pred[mask], truth[mask]
    return float(np.mean(pred == truth)) if truth.size else float("nan")


def evaluate_episode(episode, cfg=PipelineConfig(), sin: Optional[SinNetwork] = None,
                     semantic: Optional[SemanticTable] = None, seed=None):
    """Run ``cfg.method`` on ``episode`` and score it against the hidden labels."""
    seed = episode.seed if seed is None else int(seed)
    method = cfg.method
    if method == "full":
        semantic = semantic if semantic is not None else episode.semantic
        if sin is None or semantic is None:
            raise InputError("method 'full' needs a semantic injection network and semantic vectors")
        t_vecs = semantic.lookup(list(range(episode.n_way)))
        if t_vecs.shape[1] != sin.d_t or episode.dim != sin.d:
            raise InputError("semantic network dimensions do not match the episode")

    timings = {}
    clock = time.perf_counter()

    def tick(name):
        nonlocal clock
        now = time.perf_counter()
        timings[name] = now - clock
        clock = now

    S, U, Q = _smooth(episode, cfg.propagation)
    y = episode.support_labels
    C = episode.n_way
    tick("embedding_propagation")

    pool_pred = None
    query_pred = None
    pseudo_stats = None

    if method == "kmeans":
        km = kmeans_cluster(S, y, U, cfg.kmeans_iters, cfg.cvoc.clamp_support)
        pool_pred = km.assignments[len(y):]
        query_pred = np.argmin(((Q[:, None, :] - km.prototypes[None]) ** 2).sum(axis=2), axis=1)
        tick("clustering")
    elif method == "lp-only":
        X = np.vstack([S, U, Q])
        F = label_propagation(X, list(zip(range(len(y)), y)), C, cfg.propagation, cfg.balanced_lp)
        lab = F.argmax()
        pool_pred = lab[len(y):len(y) + len(U)]
        query_pred = lab[len(y) + len(U):]
        tick("label_propagation")
    else:
        cst_cfg = None if method == "cvoc" else cfg.cst
        res = run_cvoc(S, y, U, cfg.cvoc, cst_cfg, rng=substream(seed, "cst"))
        protos = res.prototypes.prototypes
        dicts = res.dictionaries
        pool_logits = res.query_logits
        tick("clustering")
        if method == "full":
            refined = np.stack([refine_prototype(protos[c], t_vecs[c], sin, cfg.blend) for c in range(C)])
            if cfg.recompute_logits:
                dicts = build_dictionaries(S, y, refined, cfg.cvoc.support_atoms)
                pool_logits = query_logits(dicts, U, cfg.cvoc.lam, cfg.cvoc.eps_log)
            tick("semantic_refinement")
        pool_pred = np.argmax(pool_logits, axis=1) if len(U) else np.zeros(0, dtype=np.int64)
        pseudo = restricted_pseudo_label(pool_logits, cfg.keep_percent, cfg.cvoc.tau)
        pseudo_stats = _pseudo_stats(pseudo, episode.ground_truth())
        tick("pseudo_labeling")
        if method in ("cvoc", "cvoc+cst"):
            query_pred = np.argmax(query_logits(dicts, Q, cfg.cvoc.lam, cfg.cvoc.eps_log), axis=1)
        else:
            S0, y0 = expand_support(S, y, pseudo, U)
            X = np.vstack([S0, Q])
            F = label_propagation(X, list(zip(range(len(y0)), y0)), C, cfg.propagation, cfg.balanced_lp)
            query_pred = F.argmax()[len(y0):]
            tick("label_propagation")

    truth = episode.ground_truth()
    real = ~truth.pool_distractor
    timings["total"] = float(sum(timings.values()))
    return EpisodeReport(
        method=method,
        seed=seed,
        query_accuracy=_acc(query_pred, truth.query_labels),
        pool_accuracy=_acc(pool_pred, truth.pool_labels, real),
        n_support=len(y),
        n_query=len(Q),
        n_pool=len(U),
        pseudo=pseudo_stats,
        timings=timings,
        config=cfg.to_dict(),
    )

"""Class-variance-optimised clustering.

Each class is represented by a factor dictionary: its support embeddings plus
its current prototype, as columns. A point's reconstruction distance to a class
is the ridge residual against that dictionary. Assignment minimises the
reconstruction distance shifted by intra/inter-class variance terms; prototypes
are refitted as member means and polished by the separation tuner.
"""
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .cst import ClusterSeparationTuner, CstConfig, classwise_terms
from .errors import InputError
from .numerics import as_matrix, reconstruction_distances, softmax_temperature
from .propagation import SoftLabelMatrix
from .rng import substream

CLASSWISE = "classwise"
EPISODE = "episode"


@dataclass(frozen=True)
class CvocConfig:
    lam: float = 0.01
    w_intra: float = 0.5
    w_inter: float = 0.5
    max_iters: int = 10
    variance_mode: str = CLASSWISE
    clamp_support: bool = True
    tol: float = 1e-4
    eps_log: float = 1e-8
    tau: float = 0.1
    # False drops the support columns, leaving the prototype as the only atom
    support_atoms: bool = True

    def __post_init__(self):
        if not self.lam > 0:
            raise InputError("lambda must be positive")
        if self.w_intra < 0 or self.w_inter < 0:
            raise InputError("variance weights must be nonnegative")
        if self.max_iters < 1:
            raise InputError("max_iters must be positive")
        if self.variance_mode not in (CLASSWISE, EPISODE):
            raise InputError(f"unknown variance_mode {self.variance_mode!r}")
        if not (self.tol > 0 and self.eps_log > 0 and self.tau > 0):
            raise InputError("tol, eps_log and tau must be positive")


@dataclass
class FactorDictionary:
    class_id: int
    columns: np.ndarray  # d x (K_c + 1)

    @property
    def prototype(self):
        return self.columns[:, -1]


@dataclass
class PrototypeSet:
    prototypes: np.ndarray  # C x d
    class_ids: List[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.class_ids:
            self.class_ids = list(range(self.prototypes.shape[0]))


@dataclass
class CvocResult:
    prototypes: PrototypeSet
    assignments: np.ndarray  # over support rows then pool rows
    query_logits: np.ndarray
    query_probs: SoftLabelMatrix
    iters_run: int
    dictionaries: List[FactorDictionary]

    @property
    def predictions(self):
        return np.argmax(self.query_logits, axis=1)


def build_factor_dictionary(support_of_class, prototype, class_id=0):
    S = np.asarray(support_of_class, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] < 1:
        raise InputError("a factor dictionary needs at least one support row")
    p = np.asarray(prototype, dtype=np.float64)
    if p.shape != (S.shape[1],):
        raise InputError("prototype dimension does not match support")
    return FactorDictionary(class_id, np.column_stack([S.T, p]))


def build_dictionaries(support, labels, prototypes, support_atoms=True):
    if not support_atoms:
        return [FactorDictionary(c, prototypes[c][:, None].copy()) for c in range(prototypes.shape[0])]
    return [build_factor_dictionary(support[labels == c], prototypes[c], c)
            for c in range(prototypes.shape[0])]


def reconstruction_matrix(dictionaries, points, lam):
    """``n x C`` matrix of reconstruction distances."""
    X = np.asarray(points, dtype=np.float64)
    return np.column_stack([reconstruction_distances(D.columns, X, lam) for D in dictionaries])


def class_variance_terms(support, labels, prototypes, mode=CLASSWISE):
    """Intra/inter variance terms; scalars in episode mode, length-C vectors classwise."""
    P = np.asarray(prototypes, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    intra, inter, counts = classwise_terms(P, support, y)
    if np.any(counts == 0):
        raise InputError("every class needs at least one support row")
    if mode == CLASSWISE:
        return intra, inter
    if mode == EPISODE:
        w = counts / counts.sum()
        return float(w @ intra), float(w @ inter)
    raise InputError(f"unknown variance_mode {mode!r}")


def combined_distance(d_rec, l_intra, l_inter, w_intra, w_inter):
    return d_rec + w_intra * l_intra - w_inter * l_inter


def assign_step(d_rec, l_intra, l_inter, cfg, support_labels=None):
    """Label every row of ``d_rec`` (n x C) by its minimal combined distance.

    When clamping, the first ``len(support_labels)`` rows keep their labels.
    Ties resolve to the lowest class index.
    """
    d = combined_distance(d_rec, np.asarray(l_intra), np.asarray(l_inter), cfg.w_intra, cfg.w_inter)
    lab = np.argmin(d, axis=1)
    if cfg.clamp_support and support_labels is not None:
        lab[: len(support_labels)] = support_labels
    return lab


def refit_prototypes(points, assignments, previous):
    """Member means; a class left empty keeps its previous prototype."""
    P = previous.copy()
    for c in range(P.shape[0]):
        members = points[assignments == c]
        if members.shape[0]:
            P[c] = members.mean(axis=0)
    return P


def query_logits(dictionaries, queries, lam=0.01, eps_log=1e-8):
    return -np.log(reconstruction_matrix(dictionaries, queries, lam) + eps_log)


def _check_episode(support, labels, pool):
    S = as_matrix(support, "support")
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (S.shape[0],):
        raise InputError("support labels must match support rows")
    pool = np.asarray(pool, dtype=np.float64).reshape(-1, S.shape[1])
    if not np.all(np.isfinite(pool)):
        raise InputError("pool contains non-finite entries")
    C = int(y.max()) + 1 if y.size else 0
    if C < 2:
        raise InputError("clustering needs at least two classes")
    if np.any(np.bincount(y, minlength=C) == 0) or y.min() < 0:
        raise InputError("every class needs at least one support row")
    return S, y, pool, C


def run_cvoc(support, labels, pool, cfg=CvocConfig(), cst_cfg: Optional[CstConfig] = None,
             seed=0, queries=None, rng=None):
    """Cluster ``support`` and ``pool`` jointly and score the query rows.

    ``queries`` defaults to the pool. CST is skipped when ``cst_cfg`` is None.
    """
    S, y, U, C = _check_episode(support, labels, pool)
    A = np.vstack([S, U])
    Q = U if queries is None else np.asarray(queries, dtype=np.float64).reshape(-1, S.shape[1])
    tuner = None
    if cst_cfg is not None:
        tuner = ClusterSeparationTuner(cst_cfg, rng if rng is not None else substream(seed, "cst"))

    P = np.stack([S[y == c].mean(axis=0) for c in range(C)])
    lab = None
    iters = 0
    for _ in range(cfg.max_iters):
        iters += 1
        dicts = build_dictionaries(S, y, P, cfg.support_atoms)
        d_rec = reconstruction_matrix(dicts, A, cfg.lam)
        l_intra, l_inter = class_variance_terms(S, y, P, cfg.variance_mode)
        lab = assign_step(d_rec, l_intra, l_inter, cfg, y)
        P_new = refit_prototypes(A, lab, P)
        if tuner is not None:
            P_new = tuner.step(P_new, S, y)
        shift = np.max(np.abs(P_new - P))
        P = P_new
        if shift < cfg.tol:
            break

    dicts = build_dictionaries(S, y, P, cfg.support_atoms)
    logits = query_logits(dicts, Q, cfg.lam, cfg.eps_log)
    probs = softmax_temperature(logits, cfg.tau)
    return CvocResult(
        prototypes=PrototypeSet(P),
        assignments=lab,
        query_logits=logits,
        query_probs=SoftLabelMatrix(probs, normalized=True),
        iters_run=iters,
        dictionaries=dicts,
    )

"""Graph smoothing of embeddings and diffusion of anchor labels.

Both operations build a Gaussian affinity ``exp(-||x_i - x_j||^2 / sigma^2)``
with a zero diagonal, normalise it symmetrically as ``D^-1/2 W D^-1/2`` and
apply the dense propagator ``(I - alpha * S)^-1``.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InputError
from .numerics import as_matrix, pairwise_sq_distances


@dataclass(frozen=True)
class PropagationConfig:
    alpha_ep: float = 0.5
    alpha_lp: float = 0.5
    knn_k: int = 10
    # None selects the median nonzero pairwise squared distance
    sigma: Optional[float] = None

    def __post_init__(self):
        for name in ("alpha_ep", "alpha_lp"):
            a = getattr(self, name)
            if not 0.0 <= a < 1.0:
                raise InputError(f"{name} must lie in [0, 1), got {a}")
        if int(self.knn_k) < 1:
            raise InputError(f"knn_k must be >= 1, got {self.knn_k}")
        if self.sigma is not None and not self.sigma > 0:
            raise InputError(f"sigma must be positive, got {self.sigma}")


@dataclass
class SoftLabelMatrix:
    scores: np.ndarray
    normalized: bool

    def argmax(self):
        return np.argmax(self.scores, axis=1)


def gaussian_affinity(D2, sigma=None):
    """Zero-diagonal Gaussian affinity from squared distances ``D2``."""
    if sigma is None:
        off = D2[~np.eye(D2.shape[0], dtype=bool)]
        off = off[off > 0]
        # degenerate graphs (all points identical) fall back to unit bandwidth
        sigma2 = float(np.median(off)) if off.size else 1.0
    else:
        sigma2 = float(sigma) ** 2
    W = np.exp(-D2 / sigma2)
    np.fill_diagonal(W, 0.0)
    return W


def symmetric_normalize(W):
    deg = W.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    return inv_sqrt[:, None] * W * inv_sqrt[None, :]


def knn_sparsify(W, D2, k):
    """Keep each row's ``k`` nearest neighbours, then symmetrise as ``W + W^T``."""
    n = W.shape[0]
    k = min(int(k), n - 1)
    if k <= 0:
        return np.zeros_like(W)
    D = D2.copy()
    np.fill_diagonal(D, np.inf)
    # stable sort keeps neighbour choice deterministic under ties
    nbrs = np.argsort(D, axis=1, kind="stable")[:, :k]
    mask = np.zeros_like(W, dtype=bool)
    mask[np.arange(n)[:, None], nbrs] = True
    Wk = np.where(mask, W, 0.0)
    return Wk + Wk.T


def _propagate(S, alpha, B):
    n = S.shape[0]
    if alpha == 0.0:
        return B.astype(np.float64, copy=True)
    return np.linalg.solve(np.eye(n) - alpha * S, B)


def embedding_propagation(X, cfg=PropagationConfig()):
    """Smooth the rows of ``X`` along a dense similarity graph."""
    X = as_matrix(X, "embeddings")
    if X.shape[0] < 1:
        raise InputError("embedding propagation needs at least one row")
    if cfg.alpha_ep == 0.0:
        return X.copy()
    W = gaussian_affinity(pairwise_sq_distances(X), cfg.sigma)
    return _propagate(symmetric_normalize(W), cfg.alpha_ep, X)


def seed_matrix(n, anchors, n_classes, balanced):
    idx = np.asarray([a[0] for a in anchors], dtype=np.int64)
    lab = np.asarray([a[1] for a in anchors], dtype=np.int64)
    if idx.size == 0:
        raise InputError("label propagation needs at least one anchor")
    if np.any((idx < 0) | (idx >= n)):
        raise InputError("anchor index out of range")
    if np.any((lab < 0) | (lab >= n_classes)):
        raise InputError("anchor class out of range")
    Y = np.zeros((n, n_classes))
    Y[idx, lab] = 1.0
    if balanced:
        counts = Y.sum(axis=0)
        Y[:, counts > 0] /= counts[counts > 0]
    return Y


def label_propagation(X, anchors, n_classes, cfg=PropagationConfig(), balanced=True,
                      normalize=True):
    """Diffuse anchor labels over a kNN graph of ``X``.

    ``anchors`` is a sequence of ``(row_index, class)`` pairs. With
    ``balanced`` each class column of the seed matrix carries unit total mass.
    Rows are normalised to sum to one, with a uniform row wherever no label
    mass arrived; pass ``normalize=False`` for the raw propagated scores.
    """
    X = as_matrix(X, "embeddings")
    n = X.shape[0]
    Y = seed_matrix(n, anchors, n_classes, balanced)
    D2 = pairwise_sq_distances(X)
    W = knn_sparsify(gaussian_affinity(D2, cfg.sigma), D2, cfg.knn_k)
    F = _propagate(symmetric_normalize(W), cfg.alpha_lp, Y)
    if not normalize:
        return SoftLabelMatrix(F, normalized=False)
    F = np.maximum(F, 0.0)
    tot = F.sum(axis=1, keepdims=True)
    out = np.full_like(F, 1.0 / n_classes)
    nz = tot[:, 0] > 0
    out[nz] = F[nz] / tot[nz]
    return SoftLabelMatrix(out, normalized=True)

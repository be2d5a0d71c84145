"""Dense small-matrix primitives.

Conventions: a dictionary ``F`` is a ``d x m`` matrix whose columns are basis
vectors; points are rows of an ``n x d`` array. All distances are squared
Euclidean.
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InputError


@dataclass(frozen=True)
class RidgeSolution:
    beta: np.ndarray
    residual_sq: float


def as_matrix(a, name="matrix"):
    """Coerce ``a`` to a finite float64 2-D array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise InputError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[1] < 1:
        raise InputError(f"{name} must have at least one column")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite entries")
    return arr


def as_vector(a, name="vector"):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 1:
        raise InputError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite entries")
    return arr


def _check_dictionary(F, lam):
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2 or F.shape[1] < 1:
        raise InputError(f"dictionary must be d x m with m >= 1, got shape {F.shape}")
    if not np.all(np.isfinite(F)):
        raise InputError("dictionary contains non-finite entries")
    if not lam > 0:
        raise InputError(f"lambda must be positive, got {lam}")
    return F


def _gram_factor(F, lam):
    gram = F.T @ F
    gram[np.diag_indices_from(gram)] += lam
    return cho_factor(gram, lower=False, check_finite=False)


def solve_ridge(F, x, lam):
    """Minimise ``||x - F b||^2 + lam ||b||^2`` via Cholesky on the normal equations."""
    F = _check_dictionary(F, lam)
    x = as_vector(x, "x")
    if x.shape[0] != F.shape[0]:
        raise InputError(f"dimension mismatch: F has {F.shape[0]} rows, x has {x.shape[0]}")
    beta = cho_solve(_gram_factor(F, lam), F.T @ x, check_finite=False)
    r = x - F @ beta
    return RidgeSolution(beta=beta, residual_sq=float(r @ r))


def reconstruction_distance(F, x, lam):
    return solve_ridge(F, x, lam).residual_sq


def reconstruction_distances(F, X, lam):
    """Vectorised :func:`reconstruction_distance` over the rows of ``X``."""
    F = _check_dictionary(F, lam)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != F.shape[0]:
        raise InputError(f"points must be n x {F.shape[0]}, got shape {X.shape}")
    if X.shape[0] == 0:
        return np.zeros(0)
    B = cho_solve(_gram_factor(F, lam), F.T @ X.T, check_finite=False)
    R = X.T - F @ B
    return np.einsum("ij,ij->j", R, R)


def softmax_temperature(logits, tau=1.0):
    """Softmax of ``logits / tau`` along the last axis (max-subtracted)."""
    if not tau > 0:
        raise InputError(f"tau must be positive, got {tau}")
    z = np.asarray(logits, dtype=np.float64) / tau
    if not np.all(np.isfinite(z)):
        raise InputError("logits must be finite")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def entropy(probs, atol=1e-6):
    """Shannon entropy (nats) along the last axis, with 0 log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0):
        raise InputError("probabilities must be nonnegative")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > atol):
        raise InputError("probabilities must sum to 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    H = -terms.sum(axis=-1)
    return np.maximum(H, 0.0)


def pairwise_sq_distances(A, B=None):
    """Matrix of ``||A_i - B_j||^2``; exactly symmetric with zero diagonal when ``B`` is omitted."""
    A = np.asarray(A, dtype=np.float64)
    same = B is None or B is A
    B = A if same else np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise InputError(f"dimension mismatch: {A.shape} vs {B.shape}")
    a2 = np.einsum("ij,ij->i", A, A)
    b2 = np.einsum("ij,ij->i", B, B)
    D = a2[:, None] + b2[None, :] - 2.0 * (A @ B.T)
    np.maximum(D, 0.0, out=D)
    if same:
        D = 0.5 * (D + D.T)
        np.fill_diagonal(D, 0.0)
    return D

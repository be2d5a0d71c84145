"""Accuracy, confidence intervals and the episodic loss combination."""
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InputError

Z95 = 1.96


@dataclass(frozen=True)
class LossWeights:
    w_cls: float = 1.0
    w_fs: float = 1.0
    eta: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise InputError(f"eta must lie in [0, 1], got {self.eta}")
        if self.w_cls < 0 or self.w_fs < 0:
            raise InputError("loss weights must be nonnegative")


def cross_entropy(logits, labels):
    """Mean negative log-softmax probability of the true class."""
    Z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64).ravel()
    if y.shape[0] != Z.shape[0]:
        raise InputError("one label per logit row is required")
    if np.any((y < 0) | (y >= Z.shape[1])):
        raise InputError("label out of range")
    lse = logsumexp(Z, axis=1)
    return float(np.mean(lse - Z[np.arange(len(y)), y]))


def episodic_loss(l_cvoc, l_lp, l_cls, w=LossWeights()):
    return w.w_cls * l_cls + w.w_fs * (w.eta * l_cvoc + (1.0 - w.eta) * l_lp)


def accuracy(preds, truth):
    p = np.asarray(preds)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise InputError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        return float("nan")
    return float(np.mean(p == t))


def mean_ci95(values):
    """Mean and 95% half-width ``1.96 * s / sqrt(n)`` with the sample (n-1) deviation."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        raise InputError("a confidence interval needs at least two values")
    return float(v.mean()), float(Z95 * v.std(ddof=1) / np.sqrt(v.size))


def paired_difference_ci95(a, b):
    """Mean of ``a - b`` over shared episodes and its 95% half-width."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError("paired samples must have equal length")
    return mean_ci95(a - b)

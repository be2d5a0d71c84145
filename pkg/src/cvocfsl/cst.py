"""Cluster Separation Tuner: firefly-style polishing of class prototypes.

Each iteration scores every prototype by a brightness that rewards compact,
well separated classes and penalises neighbours closer than a margin. Every
dimmer prototype is then pulled toward each brighter one, with a small uniform
exploration kick whose amplitude anneals geometrically.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InputError

EMPTY_CLASS_BRIGHTNESS = -1e6


@dataclass(frozen=True)
class CstConfig:
    eps_margin: float = 2.0
    beta0: float = 0.05
    gamma: float = 0.005
    alpha0: float = 0.02
    alpha_decay: float = 0.995
    iterations: int = 1
    w_intra: float = 0.5
    w_inter: float = 0.5

    def __post_init__(self):
        if not self.eps_margin > 0:
            raise InputError("eps_margin must be positive")
        for name in ("beta0", "gamma", "alpha0", "w_intra", "w_inter"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be nonnegative")
        if self.iterations < 0:
            raise InputError("iterations must be nonnegative")

    @classmethod
    def disabled(cls, **kw):
        """A tuner that never moves a prototype."""
        return cls(beta0=0.0, alpha0=0.0, **kw)


def classwise_terms(prototypes, support, labels):
    """Per-class mean squared distance of supports to their own / foreign prototypes.

    Returns ``(intra, inter, counts)``; classes without support get NaN terms.
    """
    P = np.asarray(prototypes, dtype=np.float64)
    S = np.asarray(support, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    C = P.shape[0]
    D2 = ((S[:, None, :] - P[None, :, :]) ** 2).sum(axis=2)
    intra = np.full(C, np.nan)
    inter = np.full(C, np.nan)
    counts = np.bincount(y, minlength=C)
    for c in range(C):
        rows = D2[y == c]
        if rows.shape[0] == 0:
            continue
        intra[c] = rows[:, c].mean()
        if C > 1:
            inter[c] = np.delete(rows, c, axis=1).mean()
        else:
            inter[c] = 0.0
    return intra, inter, counts


def brightness(c, prototypes, support, labels, cfg):
    return brightness_all(prototypes, support, labels, cfg)[c]


def brightness_all(prototypes, support, labels, cfg):
    P = np.asarray(prototypes, dtype=np.float64)
    intra, inter, counts = classwise_terms(P, support, labels)
    gaps = np.sqrt(((P[:, None, :] - P[None, :, :]) ** 2).sum(axis=2))
    B = np.empty(P.shape[0])
    for c in range(P.shape[0]):
        if counts[c] == 0:
            B[c] = EMPTY_CLASS_BRIGHTNESS
            continue
        near = np.delete(gaps[c], c)
        near = near[near < cfg.eps_margin]
        penalty = float(((cfg.eps_margin - near) ** 2).sum())
        B[c] = -cfg.w_intra * intra[c] + cfg.w_inter * inter[c] - penalty
    return B


class ClusterSeparationTuner:
    """Stateful tuner; ``alpha`` anneals across every iteration it runs."""

    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.rng = rng
        self.steps_taken = 0

    @property
    def alpha(self):
        return self.cfg.alpha0 * self.cfg.alpha_decay ** self.steps_taken

    def step(self, prototypes, support, labels):
        P = np.array(prototypes, dtype=np.float64, copy=True)
        C, d = P.shape
        for _ in range(self.cfg.iterations):
            B = brightness_all(P, support, labels, self.cfg)
            alpha = self.alpha
            for i in range(C):
                for j in range(C):
                    if B[i] < B[j]:
                        diff = P[j] - P[i]
                        attract = self.cfg.beta0 * np.exp(-self.cfg.gamma * float(diff @ diff))
                        kick = self.rng.uniform(-0.5, 0.5, size=d)
                        P[i] = P[i] + attract * diff + alpha * kick
            self.steps_taken += 1
        return P


def cst_step(prototypes, support, labels, cfg, rng):
    """Run ``cfg.iterations`` tuner iterations from a fresh ``alpha0``."""
    return ClusterSeparationTuner(cfg, rng).step(prototypes, support, labels)

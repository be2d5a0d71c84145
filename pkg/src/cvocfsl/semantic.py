"""Semantic injection network: a tanh encoder/decoder pair with hand-written gradients.

The encoder maps ``[prototype, text vector]`` to a joint embedding with the
prototype's dimension; the decoder reconstructs the concatenated input. The
training loss is the sum of three mean-absolute-error terms: joint embedding
vs prototype, reconstructed prototype vs prototype, reconstructed text vs text.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .errors import InputError
from .rng import substream

CHECKPOINT_VERSION = 1
ACTIVATION = "tanh"
PARAM_NAMES = ("enc_w1", "enc_b1", "enc_w2", "enc_b2", "dec_w1", "dec_b1", "dec_w2", "dec_b2")


@dataclass(frozen=True)
class SinTrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-4
    weight_decay: float = 1e-4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InputError("epochs and batch_size must be positive")
        if not self.lr > 0 or self.weight_decay < 0:
            raise InputError("lr must be positive and weight_decay nonnegative")


def _glorot(rng, fan_out, fan_in):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_out, fan_in))


class SinNetwork:
    """Encoder ``d+d_t -> h -> d`` and decoder ``d -> h -> d+d_t``."""

    def __init__(self, d, d_t, hidden=32, params: Optional[Dict[str, np.ndarray]] = None, seed=0):
        self.d, self.d_t, self.hidden = int(d), int(d_t), int(hidden)
        if min(self.d, self.d_t, self.hidden) < 1:
            raise InputError("network dimensions must be positive")
        if params is None:
            rng = substream(seed, "sin-init")
            n_in = self.d + self.d_t
            params = {
                "enc_w1": _glorot(rng, self.hidden, n_in),
                "enc_b1": np.zeros(self.hidden),
                "enc_w2": _glorot(rng, self.d, self.hidden),
                "enc_b2": np.zeros(self.d),
                "dec_w1": _glorot(rng, self.hidden, self.d),
                "dec_b1": np.zeros(self.hidden),
                "dec_w2": _glorot(rng, n_in, self.hidden),
                "dec_b2": np.zeros(n_in),
            }
        self.params = {k: np.asarray(params[k], dtype=np.float64) for k in PARAM_NAMES}
        self._check_shapes()

    def _check_shapes(self):
        n_in, h, d = self.d + self.d_t, self.hidden, self.d
        want = {"enc_w1": (h, n_in), "enc_b1": (h,), "enc_w2": (d, h), "enc_b2": (d,),
                "dec_w1": (h, d), "dec_b1": (h,), "dec_w2": (n_in, h), "dec_b2": (n_in,)}
        for k, shape in want.items():
            if self.params[k].shape != shape:
                raise InputError(f"{k} has shape {self.params[k].shape}, expected {shape}")
            if not np.all(np.isfinite(self.params[k])):
                raise InputError(f"{k} contains non-finite weights")

    def copy(self):
        return SinNetwork(self.d, self.d_t, self.hidden, {k: v.copy() for k, v in self.params.items()})

    def _inputs(self, P, t):
        P = np.asarray(P, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        single = P.ndim == 1
        P2, t2 = np.atleast_2d(P), np.atleast_2d(t)
        if P2.shape[1] != self.d or t2.shape[1] != self.d_t or P2.shape[0] != t2.shape[0]:
            raise InputError(f"expected prototypes of dim {self.d} and text vectors of dim {self.d_t}")
        return P2, t2, single

    def _forward(self, P, t):
        p = self.params
        u = np.hstack([P, t])
        h1 = np.tanh(u @ p["enc_w1"].T + p["enc_b1"])
        z = h1 @ p["enc_w2"].T + p["enc_b2"]
        h2 = np.tanh(z @ p["dec_w1"].T + p["dec_b1"])
        r = h2 @ p["dec_w2"].T + p["dec_b2"]
        return u, h1, z, h2, r

    def encode(self, P, t):
        P2, t2, single = self._inputs(P, t)
        z = self._forward(P2, t2)[2]
        return z[0] if single else z

    def forward(self, P, t):
        """Return ``(z, P_rec, t_rec)``."""
        P2, t2, single = self._inputs(P, t)
        _, _, z, _, r = self._forward(P2, t2)
        out = (z, r[:, : self.d], r[:, self.d:])
        return tuple(o[0] for o in out) if single else out

    def encode_jacobian(self, P, t):
        """``dz/dP`` at a single input, shape ``d x d``."""
        P2, t2, _ = self._inputs(P, t)
        u = np.hstack([P2, t2])[0]
        h1 = np.tanh(self.params["enc_w1"] @ u + self.params["enc_b1"])
        return self.params["enc_w2"] @ ((1.0 - h1 ** 2)[:, None] * self.params["enc_w1"][:, : self.d])

    def loss_and_grads(self, P, t):
        """Batch-mean losses ``(L_jep, L_fr, L_sr, L_s)`` and gradients of ``L_s``."""
        P2, t2, _ = self._inputs(P, t)
        B, d, d_t = P2.shape[0], self.d, self.d_t
        p = self.params
        u, h1, z, h2, r = self._forward(P2, t2)
        e_jep = z - P2
        e_fr = r[:, :d] - P2
        e_sr = r[:, d:] - t2
        losses = (np.abs(e_jep).mean(), np.abs(e_fr).mean(), np.abs(e_sr).mean())
        dz = np.sign(e_jep) / (d * B)
        dr = np.hstack([np.sign(e_fr) / (d * B), np.sign(e_sr) / (d_t * B)])

        g = {}
        g["dec_w2"] = dr.T @ h2
        g["dec_b2"] = dr.sum(axis=0)
        da2 = (dr @ p["dec_w2"]) * (1.0 - h2 ** 2)
        g["dec_w1"] = da2.T @ z
        g["dec_b1"] = da2.sum(axis=0)
        dz = dz + da2 @ p["dec_w1"]
        g["enc_w2"] = dz.T @ h1
        g["enc_b2"] = dz.sum(axis=0)
        da1 = (dz @ p["enc_w2"]) * (1.0 - h1 ** 2)
        g["enc_w1"] = da1.T @ u
        g["enc_b1"] = da1.sum(axis=0)
        return (*losses, sum(losses)), g

    def residuals(self, P, t):
        """All L1 residuals; gradient checks need them away from zero."""
        P2, t2, _ = self._inputs(P, t)
        _, _, z, _, r = self._forward(P2, t2)
        return np.concatenate([(z - P2).ravel(), (r[:, : self.d] - P2).ravel(), (r[:, self.d:] - t2).ravel()])


def sin_forward(net, P, t):
    return net.forward(P, t)


def sin_loss(net, P, t):
    return net.loss_and_grads(P, t)[0]


class AdamW:
    """Adaptive-moment updates with decoupled weight decay."""

    def __init__(self, params, lr, weight_decay, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.wd, self.b1, self.b2, self.eps = lr, weight_decay, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params[k] *= 1.0 - self.lr * self.wd
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _stack_pairs(dataset, name):
    if len(dataset) == 0:
        raise InputError(f"{name} dataset is empty")
    P = np.stack([np.asarray(p, dtype=np.float64) for p, _ in dataset])
    T = np.stack([np.asarray(t, dtype=np.float64) for _, t in dataset])
    return P, T


def sin_train(dataset, cfg=SinTrainConfig(), hidden=32, validation=None, net=None):
    """Train on ``(prototype, text vector)`` pairs with mini-batch AdamW.

    Returns the network state (after some update) with the lowest L_s on
    ``validation``, or on the training pairs when no validation set is given.
    """
    P, T = _stack_pairs(dataset, "training")
    if P.shape[0] < 2:
        raise InputError("training needs at least two classes")
    VP, VT = _stack_pairs(validation, "validation") if validation is not None else (P, T)
    if net is None:
        net = SinNetwork(P.shape[1], T.shape[1], hidden, seed=cfg.seed)
    else:
        net = net.copy()
    opt = AdamW(net.params, cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps)
    rng = substream(cfg.seed, "sin-batches")
    best, best_loss = None, np.inf
    n = P.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, grads = net.loss_and_grads(P[idx], T[idx])
            opt.step(net.params, grads)
        val = sin_loss(net, VP, VT)[3]
        if val < best_loss:
            best_loss, best = val, net.copy()
    return best


def refine_prototype(P, t, net, s=0.9):
    """Blend ``s * P + (1 - s) * E(P, t)``; ``s = 1`` returns ``P`` untouched."""
    if not 0.0 <= s <= 1.0:
        raise InputError(f"blend weight s must lie in [0, 1], got {s}")
    P = np.asarray(P, dtype=np.float64)
    if s == 1.0:
        return P.copy()
    return s * P + (1.0 - s) * net.encode(P, t)


def save_sin(net, path):
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(fh, format_version=np.int64(CHECKPOINT_VERSION),
                 dims=np.array([net.d, net.d_t, net.hidden], dtype=np.int64),
                 activation=np.array(ACTIVATION), **net.params)


def load_sin(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: no such checkpoint")
    try:
        with np.load(path, allow_pickle=False) as z:
            version = int(z["format_version"])
            if version != CHECKPOINT_VERSION:
                raise InputError(f"{path}: unsupported checkpoint version {version}")
            if str(z["activation"]) != ACTIVATION:
                raise InputError(f"{path}: unsupported activation {z['activation']}")
            d, d_t, h = (int(v) for v in z["dims"])
            params = {k: z[k].copy() for k in PARAM_NAMES}
    except (KeyError, ValueError, OSError) as exc:
        raise InputError(f"{path}: unreadable checkpoint ({exc})") from None
    return SinNetwork(d, d_t, h, params)

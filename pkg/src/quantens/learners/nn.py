"""Small numpy building blocks shared by the recurrent and attention models."""

from __future__ import annotations

import numpy as np


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def dropout_mask(rng, shape, rate: float, train: bool):
    """Inverted dropout mask, or ``None`` when nothing is dropped."""
    if not train or rate <= 0.0:
        return None
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def bce_with_logits(logits, y01):
    """Mean binary cross-entropy and its gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=float)
    loss = np.mean(np.maximum(z, 0) - z * y01 + np.log1p(np.exp(-np.abs(z))))
    grad = (sigmoid(z) - y01) / len(z)
    return float(loss), grad


def layer_norm(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return gamma * xhat + beta, (xhat, inv)


def layer_norm_backward(dy, gamma, cache):
    xhat, inv = cache
    red = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=red)
    dbeta = dy.sum(axis=red)
    dxhat = dy * gamma
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def softmax(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class TrainingDiverged(RuntimeError):
    pass


def fit_minibatch(params, X, y01, forward, backward, *, epochs, batch_size, lr, rng, label):
    """Adam over shuffled mini-batches; the last partial batch is kept.

    ``forward(params, Xb, train, rng) -> (logits, cache)`` and
    ``backward(params, cache, dlogits) -> grads``. Returns per-epoch mean loss.
    """
    opt = Adam(params, lr=lr)
    n = len(X)
    history = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            logits, cache = forward(params, X[idx], True, rng)
            loss, dlogits = bce_with_logits(logits, y01[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"{label}: loss became non-finite in epoch {epoch}")
            opt.step(params, backward(params, cache, dlogits))
            total += loss * len(idx)
        history.append(total / n)
    return history

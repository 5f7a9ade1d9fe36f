"""Stacked LSTM classifier with hand-written backpropagation through time.

Each cell computes, from z = [h_{t-1}, x_t] @ W + b split into four blocks,

    f = sigmoid(z_f), i = sigmoid(z_i), g = tanh(z_g), o = sigmoid(z_o)
    c_t = f * c_{t-1} + i * g
    h_t = o * tanh(c_t)

Layer outputs pass through inverted dropout while training; the last
layer's final hidden state feeds one sigmoid unit.
"""

from __future__ import annotations

import numpy as np

from .nn import dropout_mask, sigmoid, xavier_uniform

DEFAULTS = {
    "lookback": 5,
    "units": [32, 16],
    "dropout": 0.3,
    "learning_rate": 1e-3,
    "batch_size": 32,
    "epochs": 15,
}


def init_params(n_features: int, units, rng) -> dict:
    params = {}
    n_in = n_features
    for k, nh in enumerate(units):
        params[f"W{k}"] = xavier_uniform(rng, n_in + nh, 4 * nh)
        params[f"b{k}"] = np.zeros(4 * nh)
        n_in = nh
    params["W_out"] = xavier_uniform(rng, n_in, 1)
    params["b_out"] = np.zeros(1)
    return params


def _n_layers(params) -> int:
    return sum(1 for k in params if k.startswith("W") and k[1:].isdigit())


def forward(params, X, dropout=0.0, train=False, rng=None):
    """Logits for a batch of sequences ``X`` of shape (B, L, d)."""
    X = np.asarray(X, dtype=float)
    B, L, _ = X.shape
    inp = X
    layers = []
    n_layers = _n_layers(params)
    for k in range(n_layers):
        W, b = params[f"W{k}"], params[f"b{k}"]
        nh = b.shape[0] // 4
        h = np.zeros((B, nh))
        c = np.zeros((B, nh))
        steps = []
        H = np.empty((B, L, nh))
        for t in range(L):
            hx = np.concatenate([h, inp[:, t]], axis=1)
            z = hx @ W + b
            f = sigmoid(z[:, :nh])
            i = sigmoid(z[:, nh:2 * nh])
            g = np.tanh(z[:, 2 * nh:3 * nh])
            o = sigmoid(z[:, 3 * nh:])
            c_prev = c
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            H[:, t] = h
            steps.append((hx, f, i, g, o, c_prev, tc))
        last = k == n_layers - 1
        out = H[:, -1] if last else H
        mask = dropout_mask(rng, out.shape, dropout, train)
        if mask is not None:
            out = out * mask
        layers.append((steps, mask))
        inp = out
    logits = (inp @ params["W_out"] + params["b_out"])[:, 0]
    return logits, (layers, inp, L)


def backward(params, cache, dlogits) -> dict:
    layers, top, L = cache
    grads = {}
    dlogits = dlogits[:, None]
    grads["W_out"] = top.T @ dlogits
    grads["b_out"] = dlogits.sum(axis=0)
    d_out = dlogits @ params["W_out"].T
    n_layers = len(layers)
    for k in reversed(range(n_layers)):
        steps, mask = layers[k]
        W = params[f"W{k}"]
        nh = W.shape[1] // 4
        if mask is not None:
            d_out = d_out * mask
        B = d_out.shape[0]
        if k == n_layers - 1:
            dH = np.zeros((B, L, nh))
            dH[:, -1] = d_out
        else:
            dH = d_out
        dW = np.zeros_like(W)
        db = np.zeros(W.shape[1])
        n_in = W.shape[0] - nh
        dX = np.empty((B, L, n_in))
        dh_next = np.zeros((B, nh))
        dc_next = np.zeros((B, nh))
        for t in reversed(range(L)):
            hx, f, i, g, o, c_prev, tc = steps[t]
            dh = dH[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc**2)
            dz = np.concatenate(
                [
                    dc * c_prev * f * (1.0 - f),
                    dc * g * i * (1.0 - i),
                    dc * i * (1.0 - g**2),
                    dh * tc * o * (1.0 - o),
                ],
                axis=1,
            )
            dW += hx.T @ dz
            db += dz.sum(axis=0)
            dhx = dz @ W.T
            dh_next = dhx[:, :nh]
            dX[:, t] = dhx[:, nh:]
            dc_next = dc * f
        grads[f"W{k}"] = dW
        grads[f"b{k}"] = db
        d_out = dX
    return grads

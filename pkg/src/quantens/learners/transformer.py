"""Post-norm transformer encoder over a window of daily feature vectors.

Input rows are projected to the model width and summed with a sinusoidal
position code. Each block is multi-head scaled dot-product self-attention
(dropout on the attention weights), residual + layer norm, a ReLU
feed-forward layer (dropout on its output), residual + layer norm. The last
position's representation feeds one sigmoid unit.
"""

from __future__ import annotations

import numpy as np

from .nn import dropout_mask, layer_norm, layer_norm_backward, softmax, xavier_uniform

DEFAULTS = {
    "lookback": 10,
    "width": 32,
    "heads": 4,
    "blocks": 2,
    "ff_units": 64,
    "dropout": 0.2,
    "learning_rate": 1e-3,
    "batch_size": 32,
    "epochs": 10,
}


def positional_encoding(length: int, width: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(width)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / width)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def init_params(n_features: int, width: int, blocks: int, ff_units: int, rng) -> dict:
    p = {
        "W_in": xavier_uniform(rng, n_features, width),
        "b_in": np.zeros(width),
    }
    for k in range(blocks):
        for name in ("q", "k", "v", "o"):
            p[f"B{k}_W{name}"] = xavier_uniform(rng, width, width)
            p[f"B{k}_b{name}"] = np.zeros(width)
        p[f"B{k}_ln1_g"] = np.ones(width)
        p[f"B{k}_ln1_b"] = np.zeros(width)
        p[f"B{k}_W1"] = xavier_uniform(rng, width, ff_units)
        p[f"B{k}_b1"] = np.zeros(ff_units)
        p[f"B{k}_W2"] = xavier_uniform(rng, ff_units, width)
        p[f"B{k}_b2"] = np.zeros(width)
        p[f"B{k}_ln2_g"] = np.ones(width)
        p[f"B{k}_ln2_b"] = np.zeros(width)
    p["W_out"] = xavier_uniform(rng, width, 1)
    p["b_out"] = np.zeros(1)
    return p


def _n_blocks(params) -> int:
    return sum(1 for k in params if k.endswith("_Wq"))


def _split(x, heads):
    B, L, D = x.shape
    return x.reshape(B, L, heads, D // heads).transpose(0, 2, 1, 3)


def _merge(x):
    B, h, L, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, h * dk)


def attention_weights(params, x, block: int, heads: int) -> np.ndarray:
    """Softmax attention matrix (B, heads, L, L) of one block for inputs ``x``."""
    q = _split(x @ params[f"B{block}_Wq"] + params[f"B{block}_bq"], heads)
    k = _split(x @ params[f"B{block}_Wk"] + params[f"B{block}_bk"], heads)
    dk = q.shape[-1]
    return softmax(q @ k.transpose(0, 1, 3, 2) / np.sqrt(dk))


def forward(params, X, heads, dropout=0.0, train=False, rng=None):
    X = np.asarray(X, dtype=float)
    B, L, _ = X.shape
    D = params["W_in"].shape[1]
    x = X @ params["W_in"] + params["b_in"] + positional_encoding(L, D)
    caches = []
    for k in range(_n_blocks(params)):
        pre = f"B{k}_"
        q = _split(x @ params[pre + "Wq"] + params[pre + "bq"], heads)
        kk = _split(x @ params[pre + "Wk"] + params[pre + "bk"], heads)
        v = _split(x @ params[pre + "Wv"] + params[pre + "bv"], heads)
        scale = 1.0 / np.sqrt(q.shape[-1])
        P = softmax(q @ kk.transpose(0, 1, 3, 2) * scale)
        m_att = dropout_mask(rng, P.shape, dropout, train)
        Pd = P if m_att is None else P * m_att
        ctx = _merge(Pd @ v)
        a = ctx @ params[pre + "Wo"] + params[pre + "bo"]
        x1, ln1 = layer_norm(x + a, params[pre + "ln1_g"], params[pre + "ln1_b"])
        hpre = x1 @ params[pre + "W1"] + params[pre + "b1"]
        hid = np.maximum(hpre, 0.0)
        ff = hid @ params[pre + "W2"] + params[pre + "b2"]
        m_ff = dropout_mask(rng, ff.shape, dropout, train)
        if m_ff is not None:
            ff = ff * m_ff
        x2, ln2 = layer_norm(x1 + ff, params[pre + "ln2_g"], params[pre + "ln2_b"])
        caches.append((x, q, kk, v, P, m_att, Pd, ctx, x1, ln1, hpre, hid, m_ff, ln2, scale))
        x = x2
    last = x[:, -1]
    logits = (last @ params["W_out"] + params["b_out"])[:, 0]
    return logits, (X, caches, last, heads)


def backward(params, cache, dlogits) -> dict:
    X, caches, last, heads = cache
    g = {}
    dl = dlogits[:, None]
    g["W_out"] = last.T @ dl
    g["b_out"] = dl.sum(axis=0)
    B, L, _ = X.shape
    D = params["W_in"].shape[1]
    dx = np.zeros((B, L, D))
    dx[:, -1] = dl @ params["W_out"].T

    def lin(inp, dout, name_w, name_b):
        g[name_w] = inp.reshape(-1, inp.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])
        g[name_b] = dout.reshape(-1, dout.shape[-1]).sum(axis=0)
        return dout @ params[name_w].T

    for k in reversed(range(len(caches))):
        pre = f"B{k}_"
        x, q, kk, v, P, m_att, Pd, ctx, x1, ln1, hpre, hid, m_ff, ln2, scale = caches[k]
        dr2, g[pre + "ln2_g"], g[pre + "ln2_b"] = layer_norm_backward(dx, params[pre + "ln2_g"], ln2)
        dff = dr2 if m_ff is None else dr2 * m_ff
        dhid = lin(hid, dff, pre + "W2", pre + "b2")
        dhpre = dhid * (hpre > 0)
        dx1 = dr2 + lin(x1, dhpre, pre + "W1", pre + "b1")
        dr1, g[pre + "ln1_g"], g[pre + "ln1_b"] = layer_norm_backward(dx1, params[pre + "ln1_g"], ln1)
        dctx = _split(lin(ctx, dr1, pre + "Wo", pre + "bo"), heads)
        dPd = dctx @ v.transpose(0, 1, 3, 2)
        dv = Pd.transpose(0, 1, 3, 2) @ dctx
        dP = dPd if m_att is None else dPd * m_att
        dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True)) * scale
        dq = dS @ kk
        dk = dS.transpose(0, 1, 3, 2) @ q
        dx_new = dr1
        dx_new = dx_new + lin(x, _merge(dq), pre + "Wq", pre + "bq")
        dx_new = dx_new + lin(x, _merge(dk), pre + "Wk", pre + "bk")
        dx_new = dx_new + lin(x, _merge(dv), pre + "Wv", pre + "bv")
        dx = dx_new
    lin(X, dx, "W_in", "b_in")
    return g

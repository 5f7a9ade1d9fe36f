"""Random forest (Gini) and logistic-loss gradient boosting, both from scratch.

Trees are stored as flat node arrays; ``feature == -1`` marks a leaf.
Samples with ``x[feature] <= threshold`` go left.
"""

from __future__ import annotations

import math

import numpy as np

from .nn import sigmoid

RF_DEFAULTS = {
    "lookback": 5,
    "n_trees": 150,
    "max_depth": 15,
    "min_samples_split": 2,
}

GB_DEFAULTS = {
    "lookback": 5,
    "n_trees": 150,
    "max_depth": 6,
    "learning_rate": 0.1,
    "reg_lambda": 1.0,
    "min_child_weight": 1.0,
}


class _Builder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def add(self) -> int:
        for lst, v in ((self.feature, -1), (self.threshold, 0.0), (self.left, -1), (self.right, -1), (self.value, 0.0)):
            lst.append(v)
        return len(self.feature) - 1

    def arrays(self) -> dict:
        return {
            "feature": np.array(self.feature, dtype=np.int64),
            "threshold": np.array(self.threshold, dtype=float),
            "left": np.array(self.left, dtype=np.int64),
            "right": np.array(self.right, dtype=np.int64),
            "value": np.array(self.value, dtype=float),
        }


def _threshold(lo: float, hi: float) -> float:
    mid = lo + (hi - lo) / 2.0
    return lo if mid >= hi else mid


def _sorted_columns(X, idx, feats):
    cols = X[np.ix_(idx, feats)]
    order = np.argsort(cols, axis=0, kind="stable")
    return np.take_along_axis(cols, order, axis=0), order


def best_gini_split(X, y01, idx, feats):
    """Lowest weighted Gini impurity over all cut points of ``feats``.

    Returns ``(feature, threshold, impurity)`` or ``None`` if every
    candidate column is constant on ``idx``.
    """
    n = len(idx)
    vals, order = _sorted_columns(X, idx, feats)
    ys = y01[idx][order]
    pos_l = np.cumsum(ys, axis=0)[:-1]
    n_l = np.arange(1, n)[:, None]
    n_r = n - n_l
    pos_r = pos_l[-1:] + ys[-1:] - pos_l
    p_l = pos_l / n_l
    p_r = pos_r / n_r
    imp = (n_l * 2 * p_l * (1 - p_l) + n_r * 2 * p_r * (1 - p_r)) / n
    valid = vals[1:] > vals[:-1]
    if not valid.any():
        return None
    imp = np.where(valid, imp, np.inf)
    i, j = np.unravel_index(np.argmin(imp), imp.shape)
    return int(feats[j]), _threshold(vals[i, j], vals[i + 1, j]), float(imp[i, j])


def best_newton_split(X, g, h, idx, feats, reg_lambda, min_child_weight):
    """Maximum second-order gain G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l).

    Returns ``(feature, threshold, gain)`` or ``None`` when no cut point
    satisfies the child-weight constraint.
    """
    vals, order = _sorted_columns(X, idx, feats)
    gs = g[idx][order]
    hs = h[idx][order]
    G_l = np.cumsum(gs, axis=0)[:-1]
    H_l = np.cumsum(hs, axis=0)[:-1]
    G = gs.sum(axis=0)
    H = hs.sum(axis=0)
    G_r = G - G_l
    H_r = H - H_l
    gain = G_l**2 / (H_l + reg_lambda) + G_r**2 / (H_r + reg_lambda) - G**2 / (H + reg_lambda)
    valid = (vals[1:] > vals[:-1]) & (H_l >= min_child_weight) & (H_r >= min_child_weight)
    if not valid.any():
        return None
    gain = np.where(valid, gain, -np.inf)
    i, j = np.unravel_index(np.argmax(gain), gain.shape)
    return int(feats[j]), _threshold(vals[i, j], vals[i + 1, j]), float(gain[i, j])


def build_classification_tree(X, y01, idx, *, max_depth, min_samples_split, max_features, rng) -> dict:
    b = _Builder()
    d = X.shape[1]

    def grow(node_idx, depth):
        node = b.add()
        pos = float(y01[node_idx].sum())
        n = len(node_idx)
        b.value[node] = pos / n
        if depth >= max_depth or n < min_samples_split or pos == 0 or pos == n:
            return node
        feats = rng.choice(d, size=max_features, replace=False)
        split = best_gini_split(X, y01, node_idx, feats)
        if split is None:
            return node
        f, thr, _ = split
        go_left = X[node_idx, f] <= thr
        b.feature[node] = f
        b.threshold[node] = thr
        b.left[node] = grow(node_idx[go_left], depth + 1)
        b.right[node] = grow(node_idx[~go_left], depth + 1)
        return node

    grow(np.asarray(idx), 0)
    return b.arrays()


def build_regression_tree(X, g, h, *, max_depth, reg_lambda, min_child_weight, shrinkage) -> dict:
    """Newton-boosting tree; leaves hold ``-shrinkage * G / (H + lambda)``."""
    b = _Builder()
    feats = np.arange(X.shape[1])

    def grow(node_idx, depth):
        node = b.add()
        G = float(g[node_idx].sum())
        H = float(h[node_idx].sum())
        b.value[node] = -shrinkage * G / (H + reg_lambda)
        if depth >= max_depth or len(node_idx) < 2:
            return node
        split = best_newton_split(X, g, h, node_idx, feats, reg_lambda, min_child_weight)
        if split is None or split[2] <= 0:
            return node
        f, thr, _ = split
        go_left = X[node_idx, f] <= thr
        b.feature[node] = f
        b.threshold[node] = thr
        b.left[node] = grow(node_idx[go_left], depth + 1)
        b.right[node] = grow(node_idx[~go_left], depth + 1)
        return node

    grow(np.arange(len(X)), 0)
    return b.arrays()


def tree_apply(tree: dict, X) -> np.ndarray:
    """Leaf value reached by every row of ``X``."""
    X = np.atleast_2d(X)
    node = np.zeros(len(X), dtype=np.int64)
    feat = tree["feature"]
    while True:
        f = feat[node]
        inner = f >= 0
        if not inner.any():
            break
        rows = np.flatnonzero(inner)
        n = node[rows]
        left = X[rows, f[inner]] <= tree["threshold"][n]
        node[rows] = np.where(left, tree["left"][n], tree["right"][n])
    return tree["value"][node]


def tree_depth(tree: dict) -> int:
    def depth(i):
        if tree["feature"][i] < 0:
            return 0
        return 1 + max(depth(tree["left"][i]), depth(tree["right"][i]))

    return depth(0)


def fit_random_forest(X, y, hp: dict, seed: int) -> list:
    X = np.asarray(X, dtype=float)
    y01 = (np.asarray(y) > 0).astype(float)
    rng = np.random.default_rng(seed)
    n, d = X.shape
    max_features = max(1, math.ceil(math.sqrt(d)))
    trees = []
    for _ in range(hp["n_trees"]):
        boot = rng.integers(0, n, size=n)
        trees.append(
            build_classification_tree(
                X, y01, boot,
                max_depth=hp["max_depth"],
                min_samples_split=hp["min_samples_split"],
                max_features=max_features,
                rng=rng,
            )
        )
    return trees


def forest_proba(trees, X) -> np.ndarray:
    """Fraction of trees whose leaf votes up (leaf share of +1 at least one half)."""
    votes = np.zeros(len(np.atleast_2d(X)))
    for t in trees:
        votes += tree_apply(t, X) >= 0.5
    return votes / len(trees)


def log_loss(y01, margin) -> float:
    return float(np.mean(np.logaddexp(0.0, margin) - y01 * margin))


def fit_gradient_boost(X, y, hp: dict):
    """Returns ``(base_margin, trees, loss_history)``; history[k] is the loss after k trees."""
    X = np.asarray(X, dtype=float)
    y01 = (np.asarray(y) > 0).astype(float)
    prior = np.clip(y01.mean(), 1e-6, 1 - 1e-6)
    base = float(np.log(prior / (1 - prior)))
    margin = np.full(len(X), base)
    trees = []
    history = [log_loss(y01, margin)]
    for _ in range(hp["n_trees"]):
        p = sigmoid(margin)
        tree = build_regression_tree(
            X, p - y01, p * (1 - p),
            max_depth=hp["max_depth"],
            reg_lambda=hp["reg_lambda"],
            min_child_weight=hp["min_child_weight"],
            shrinkage=hp["learning_rate"],
        )
        margin = margin + tree_apply(tree, X)
        trees.append(tree)
        history.append(log_loss(y01, margin))
    return base, trees, history


def boost_margin(base, trees, X) -> np.ndarray:
    m = np.full(len(np.atleast_2d(X)), base)
    for t in trees:
        m = m + tree_apply(t, X)
    return m


def tree_to_record(tree: dict, i: int = 0) -> dict:
    if tree["feature"][i] < 0:
        return {"leaf_value": float(tree["value"][i])}
    return {
        "feature": int(tree["feature"][i]),
        "threshold": float(tree["threshold"][i]),
        "left": tree_to_record(tree, tree["left"][i]),
        "right": tree_to_record(tree, tree["right"][i]),
        "leaf_value": float(tree["value"][i]),
    }


def tree_from_record(rec: dict) -> dict:
    b = _Builder()

    def walk(r):
        node = b.add()
        b.value[node] = r["leaf_value"]
        if "feature" in r:
            b.feature[node] = r["feature"]
            b.threshold[node] = r["threshold"]
            b.left[node] = walk(r["left"])
            b.right[node] = walk(r["right"])
        return node

    walk(rec)
    return b.arrays()

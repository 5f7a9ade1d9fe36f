"""L2-regularised logistic regression fitted by full-batch gradient descent."""

from __future__ import annotations

import numpy as np

from .nn import sigmoid

DEFAULTS = {"lookback": 5, "C": 0.1, "max_iter": 5000, "tol": 1e-6}


class NonFiniteLoss(RuntimeError):
    pass


def loss_and_grad(w, b, X, y, C):
    """Mean log-loss plus ``||w||^2 / (2C)``; the bias is not penalised.

    ``y`` holds labels in {-1, +1}.
    """
    z = X @ w + b
    m = y * z
    loss = np.mean(np.logaddexp(0.0, -m)) + np.dot(w, w) / (2.0 * C)
    coef = -y * sigmoid(-m) / len(y)
    gw = X.T @ coef + w / C
    gb = coef.sum()
    return float(loss), gw, float(gb)


def fit(X, y, C=0.1, max_iter=5000, tol=1e-6):
    """Returns ``(w, b, iterations, final_loss)``."""
    X = np.asarray(X, dtype=float)
    y = np.where(np.asarray(y) > 0, 1.0, -1.0)
    n, d = X.shape
    # Step 1/L with L bounding the Hessian: 0.25 * sigma_max(X)^2 / n (+1 for bias) + 1/C.
    smax = np.linalg.norm(X, 2) if d else 0.0
    step = 1.0 / (0.25 * (smax**2 + n) / n + 1.0 / C)
    w = np.zeros(d)
    b = 0.0
    it = 0
    loss = float("nan")
    for it in range(1, max_iter + 1):
        loss, gw, gb = loss_and_grad(w, b, X, y, C)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"logistic loss became non-finite at iteration {it}")
        if np.sqrt(np.dot(gw, gw) + gb * gb) < tol:
            break
        w = w - step * gw
        b = b - step * gb
    return w, b, it, loss


def proba(w, b, X) -> np.ndarray:
    return sigmoid(np.atleast_2d(X) @ w + b)

"""Shared oracles for the test suite."""

import math
from fractions import Fraction

import numpy as np

from quantens import qsentiment as qs
from quantens.learners.nn import bce_with_logits


def rel_error(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)


def gradient_check(params, forward, backward, X, y01, h=1e-5):
    """Largest relative error between analytic and central-difference gradients, per parameter."""
    logits, cache = forward(params, X)
    _, dlogits = bce_with_logits(logits, y01)
    grads = backward(params, cache, dlogits)
    worst = {}
    for name, p in params.items():
        num = np.zeros_like(p)
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp = bce_with_logits(forward(params, X)[0], y01)[0]
            flat[i] = old - h
            lm = bce_with_logits(forward(params, X)[0], y01)[0]
            flat[i] = old
            num.reshape(-1)[i] = (lp - lm) / (2 * h)
        worst[name] = float(np.max(rel_error(grads[name], num)))
    return worst


def toy_sequences(seed, B=4, L=3, d=3):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(B, L, d)), (rng.random(B) < 0.5).astype(float)


# Dense 16x16 statevector oracle.

I2 = np.eye(2)


def dense_single(gate, qubit):
    """Kronecker product with qubit 0 as the least significant bit."""
    m = np.array([[1.0 + 0j]])
    for q in reversed(range(4)):
        m = np.kron(m, gate if q == qubit else I2)
    return m


def dense_cnot(control, target):
    m = np.zeros((16, 16))
    for k in range(16):
        j = k ^ (1 << target) if (k >> control) & 1 else k
        m[j, k] = 1.0
    return m


def rot(axis, a):
    c, s = math.cos(a / 2), math.sin(a / 2)
    if axis == "X":
        return np.array([[c, -1j * s], [-1j * s, c]])
    if axis == "Y":
        return np.array([[c, -s], [s, c]], dtype=complex)
    return np.array([[np.exp(-0.5j * a), 0], [0, np.exp(0.5j * a)]])


def dense_circuit(theta, x, entangle=True):
    psi = np.zeros(16, dtype=complex)
    psi[0] = 1
    for q in range(4):
        psi = dense_single(rot("Y", math.pi * x[q]), q) @ psi
    for layer in range(len(theta) // 12):
        for q in range(4):
            for a, axis in enumerate("XYZ"):
                psi = dense_single(rot(axis, theta[layer * 12 + q * 3 + a]), q) @ psi
        if entangle:
            for c, t in qs.RING:
                psi = dense_cnot(c, t) @ psi
    return psi


# Brute-force ensemble evaluator in exact rational arithmetic.

def _up(p):
    return 1 if Fraction(p) >= Fraction(1, 2) else -1


def oracle_strategy(kind, members, labels=None, k=7, threshold=0.52, window=30, architecture=None):
    """Per-day (label, tally, agree) lists plus the roster ids, or None when no member qualifies.

    ``members`` is a list of (symbol, arch, accuracy, p_up, confidence) tuples.
    """
    if kind == "Naive":
        roster = list(members)
    elif kind == "DatasetSpecific":
        roster = [m for m in members if m[1] == architecture]
    else:
        roster = [m for m in members if Fraction(m[2]) > Fraction(threshold)]
        if kind == "TopK":
            roster = sorted(roster, key=lambda m: (-Fraction(m[2]), m[0], m[1]))[:k]
    if not roster:
        return None
    n_days = len(roster[0][3])
    votes = [[_up(m[3][t]) for t in range(n_days)] for m in roster]
    out = []
    for t in range(n_days):
        f = [v[t] for v in votes]
        if kind in ("TopK", "MajorityVote", "DatasetSpecific", "Naive"):
            s = Fraction(sum(f))
        elif kind == "ConfidenceWeighted":
            s = sum((Fraction(m[2]) * Fraction(m[4][t]) * fi for m, fi in zip(roster, f)), Fraction(0))
        elif kind == "AdaptiveDynamic" and t >= window:
            s = Fraction(0)
            for v, fi in zip(votes, f):
                right = sum(1 for tau in range(t - window, t) if v[tau] == labels[tau])
                s += Fraction(right, window) * fi
        else:
            s = sum((Fraction(m[2]) * fi for m, fi in zip(roster, f)), Fraction(0))
        lab = 1 if s >= 0 else -1
        out.append((lab, sum(f), sum(1 for fi in f if fi == lab)))
    return sorted((m[0], m[1]) for m in roster), out


ORACLE_ARCHS = ("LSTM", "DecisionTransformer", "RandomForest", "GradientBoost", "Logistic")
ACC_GRID = (0.5, 0.52, 0.53, 0.55, 0.6, 0.75, 0.9, 1.0)
P_GRID = (0.0, 0.1, 0.25, 0.5, 0.6, 0.75, 0.9, 1.0)


def random_roster(rng, max_members=5, max_days=20):
    """Members with a mix of grid values (so ties occur) and continuous ones."""
    from quantens.ensemble import MemberRecord

    n = int(rng.integers(1, max_members + 1))
    days = int(rng.integers(1, max_days + 1))
    ids = rng.permutation([(s, a) for s in ("A", "B") for a in ORACLE_ARCHS])[:n]
    out = []
    for sym, arch in ids:
        acc = float(rng.choice(ACC_GRID)) if rng.random() < 0.7 else float(rng.uniform(0.45, 0.7))
        if rng.random() < 0.5:
            p = rng.choice(P_GRID, size=days)
        else:
            p = rng.random(days)
        out.append(MemberRecord(str(sym), str(arch), acc, p))
    labels = rng.choice([-1, 1], size=days)
    return out, labels


def oracle_mismatch(config, members, labels):
    """None when run_strategy agrees with the oracle, else a description of the first difference."""
    from quantens.ensemble import EnsembleError, run_strategy

    tuples = [(m.symbol, m.architecture, m.accuracy, list(m.p_up), list(m.confidence)) for m in members]
    want = oracle_strategy(config.kind, tuples, list(labels), config.k, config.filter_threshold,
                           config.window, config.architecture)
    try:
        got = run_strategy(config, members, labels=labels)
    except EnsembleError as exc:
        return None if want is None else f"{config.id}: unexpected error {exc}"
    if want is None:
        return f"{config.id}: expected an empty roster error"
    roster, days = want
    if list(got.roster) != roster:
        return f"{config.id}: roster {got.roster} != {roster}"
    for t, (lab, tally, agree) in enumerate(days):
        if (got.label[t], got.tally[t], got.agree_count[t]) != (lab, tally, agree):
            return f"{config.id} day {t}: {(got.label[t], got.tally[t], got.agree_count[t])} != {(lab, tally, agree)}"
    return None


def random_config(rng, members):
    from quantens.ensemble import STRATEGY_KINDS, StrategyConfig

    kind = str(rng.choice(STRATEGY_KINDS))
    arch = members[int(rng.integers(len(members)))].architecture if kind == "DatasetSpecific" else None
    return StrategyConfig(kind, k=int(rng.integers(1, 8)), filter_threshold=float(rng.choice([0.5, 0.52, 0.55, 0.6])),
                          architecture=arch, window=int(rng.integers(1, 12)))


SMALL_HP = {
    "LSTM": {"units": [4], "epochs": 2},
    "DecisionTransformer": {"width": 8, "heads": 2, "blocks": 1, "ff_units": 8, "epochs": 2},
    "RandomForest": {"n_trees": 5, "max_depth": 4},
    "GradientBoost": {"n_trees": 5, "max_depth": 3},
    "Logistic": {"max_iter": 300},
}


def small_config_doc(n_days=260, instruments=2, **extra):
    """A fast two-instrument synthetic pipeline config."""
    doc = {
        "instruments": [{"symbol": f"S{i}", "synthetic": {"n_days": n_days, "signal_strength": 0.6, "seed": 10 + i}}
                        for i in range(instruments)],
        "hyperparameters": SMALL_HP,
        "quantum": {"epochs": 3},
        "seed": 5,
    }
    doc.update(extra)
    return doc

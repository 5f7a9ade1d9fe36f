"""End-to-end acceptance checks. Each check prints one PASS/FAIL line."""

import itertools
import json
import math
import os
import time

import mpmath
import numpy as np
import pytest
from scipy import integrate

from helpers import (
    dense_circuit,
    gradient_check,
    oracle_mismatch,
    random_config,
    random_roster,
    rel_error,
    small_config_doc,
    toy_sequences,
)
from quantens import qsentiment as qs
from quantens.backtest import expected_daily_return
from quantens.cli import main
from quantens.config import config_from_dict
from quantens.ensemble import STRATEGY_KINDS, MemberRecord, StrategyConfig, smart_filter
from quantens.evalstat import accuracy, chi2_sf_1df, format_percent, mcnemar, wilson_ci
from quantens.features import QUANTUM_COLUMNS, build_feature_matrix
from quantens.learners import logistic, lstm, transformer
from quantens.pipeline import members_document, prepare_instruments, run_ensembles, run_pipeline, train_members


@pytest.fixture
def verdict(capsys):
    def _verdict(cid, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {cid}: {detail}")
        assert ok, detail
    return _verdict


def test_c1_parameter_shift_gradients(verdict):
    rng = np.random.default_rng(101)
    h = 1e-5
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        th = rng.uniform(-math.pi, math.pi, qs.N_PARAMS)
        x = rng.random(4)
        g = qs.param_shift_gradient(th, x)
        eye = np.eye(len(th))
        fd = np.array([(qs.mean_z(th + h * e, x) - qs.mean_z(th - h * e, x)) / (2 * h) for e in eye])
        worst = max(worst, float(np.max(np.abs(g - fd))))
    elapsed = time.perf_counter() - start
    verdict("1", worst < 1e-6 and elapsed < 10, f"max |shift - FD| = {worst:.2e}, {elapsed:.1f} s")


def test_c2_statevector_integrity(verdict):
    rng = np.random.default_rng(102)
    s = qs.zero_state()
    worst_norm = 0.0
    for _ in range(10_000):
        if rng.random() < 0.25:
            c, t = rng.choice(4, size=2, replace=False)
            s = qs.apply_cnot(s, int(c), int(t))
        else:
            s = qs.apply_rotation(s, "XYZ"[rng.integers(3)], rng.uniform(-math.pi, math.pi), int(rng.integers(4)))
        worst_norm = max(worst_norm, abs(np.linalg.norm(s) - 1.0))
    worst_dense = 0.0
    for _ in range(50):
        th = rng.uniform(-math.pi, math.pi, qs.N_PARAMS)
        x = rng.random(4)
        worst_dense = max(worst_dense, float(np.max(np.abs(qs.run_circuit(th, x) - dense_circuit(th, x)))))
    verdict("2", worst_norm < 1e-10 and worst_dense < 1e-12,
            f"norm drift {worst_norm:.1e} over 10^4 gates, dense oracle gap {worst_dense:.1e}")


def test_c3a_sentiment_at_origin(verdict):
    v = qs.sentiment(np.zeros(qs.N_PARAMS), np.zeros(4))
    verdict("3a", abs(v - math.tanh(1)) < 1e-12, f"theta=0, x=0 -> {v:.15f} (tanh(1) = {math.tanh(1):.15f})")


def test_c3b_sentiment_all_ones(verdict):
    # The encoded state |1111> is permuted by the CNOT ring (to |0011> after two
    # layers), so the faithful circuit gives mean <Z> = 0, not -1.
    v = qs.sentiment(np.zeros(qs.N_PARAMS), np.ones(4))
    verdict("3b", abs(v - math.tanh(-1)) < 1e-12,
            f"theta=0, x=(1,1,1,1) -> {v:.15f}; expected tanh(-1) = {math.tanh(-1):.15f}")


def test_c4_learner_gradients(verdict):
    X, y = toy_sequences(41, B=4, L=3, d=3)
    p_lstm = lstm.init_params(3, [2], np.random.default_rng(42))
    e_lstm = max(gradient_check(p_lstm, lambda p, x: lstm.forward(p, x), lstm.backward, X, y).values())
    p_dt = transformer.init_params(3, 8, 1, 16, np.random.default_rng(43))
    e_dt = max(gradient_check(p_dt, lambda p, x: transformer.forward(p, x, 2), transformer.backward, X, y).values())

    rng = np.random.default_rng(44)
    Xl = rng.normal(size=(25, 5))
    yl = np.where(rng.random(25) < 0.5, 1.0, -1.0)
    w, b, C, h = rng.normal(size=5), -0.2, 0.1, 1e-5
    _, gw, gb = logistic.loss_and_grad(w, b, Xl, yl, C)
    errs = []
    for i in range(5):
        e = np.eye(5)[i] * h
        num = (logistic.loss_and_grad(w + e, b, Xl, yl, C)[0] - logistic.loss_and_grad(w - e, b, Xl, yl, C)[0]) / (2 * h)
        errs.append(float(rel_error(gw[i], num)))
    num_b = (logistic.loss_and_grad(w, b + h, Xl, yl, C)[0] - logistic.loss_and_grad(w, b - h, Xl, yl, C)[0]) / (2 * h)
    errs.append(float(rel_error(gb, num_b)))
    e_lr = max(errs)
    verdict("4", e_lstm < 1e-4 and e_dt < 1e-4 and e_lr < 1e-6,
            f"worst relative error LSTM {e_lstm:.1e}, transformer {e_dt:.1e}, logistic {e_lr:.1e}")


def test_c5_ensemble_oracle(verdict):
    failures = []
    # Exhaustive: every label pattern for three members over three days.
    for acc in [(0.6, 0.6, 0.6), (0.9, 0.55, 0.55), (0.53, 0.52, 0.75)]:
        for pattern in itertools.product((0.2, 0.8), repeat=9):
            p = np.reshape(pattern, (3, 3))
            members = [MemberRecord(s, "LSTM", a, p[i]) for i, (s, a) in enumerate(zip("ABC", acc))]
            for kind in STRATEGY_KINDS:
                msg = oracle_mismatch(StrategyConfig(kind, k=2, architecture="LSTM", window=2), members,
                                      np.array([1, -1, 1]))
                if msg:
                    failures.append(msg)
    rng = np.random.default_rng(105)
    for _ in range(10_000):
        members, labels = random_roster(rng)
        msg = oracle_mismatch(random_config(rng, members), members, labels)
        if msg:
            failures.append(msg)
    verdict("5", not failures, f"{len(failures)} mismatches over exhaustive block + 10^4 random draws"
            + (f"; first: {failures[0]}" if failures else ""))


def _chi2_tail_quad(x):
    if x == 0:
        return 1.0
    val, _ = integrate.quad(lambda u: 2 * math.exp(-u * u / 2) / math.sqrt(2 * math.pi), math.sqrt(x), np.inf,
                            epsabs=1e-14, epsrel=1e-13)
    return val


def _wilson_mp(k, n):
    mpmath.mp.dps = 50
    z = mpmath.sqrt(2) * mpmath.erfinv(mpmath.mpf("0.95"))
    k, n = mpmath.mpf(k), mpmath.mpf(n)
    p = k / n
    d = 1 + z ** 2 / n
    c = (p + z ** 2 / (2 * n)) / d
    hw = z * mpmath.sqrt(p * (1 - p) / n + z ** 2 / (4 * n ** 2)) / d
    return max(float(c - hw), 0.0), min(float(c + hw), 1.0)


def test_c6_statistics_oracles(verdict):
    labels = np.ones(45, dtype=int)
    a = np.array([-1] * 30 + [1] * 15)
    res = mcnemar(a, -a, labels)
    p_gap = max(abs(chi2_sf_1df(x) - _chi2_tail_quad(x)) for x in np.linspace(0, 50, 1001))
    rng = np.random.default_rng(106)
    cases = [(0, 10), (5, 10), (10, 10), (172, 286)] + [(int(rng.integers(0, n + 1)), int(n))
                                                        for n in rng.integers(1, 3000, 300)]
    w_gap = max(max(abs(u - v) for u, v in zip(wilson_ci(k, n), _wilson_mp(k, n))) for k, n in cases)
    lo0 = wilson_ci(0, 10)[0]
    ok = res.chi2 == 5.0 and (res.n01, res.n10) == (30, 15) and p_gap < 1e-9 and w_gap < 1e-9 and lo0 == 0.0
    verdict("6", ok, f"McNemar chi2 {res.chi2}, chi2 tail gap {p_gap:.1e}, Wilson gap {w_gap:.1e}, (0,10) lower {lo0}")


def test_c7a_expected_daily_return(verdict):
    # The arithmetic gives -0.000119 (that is -0.0119% per day); the target literal is ten times smaller.
    v = expected_daily_return(0.6014, 0.0004, 0.0002)
    verdict("7a", abs(v - (-0.0000119)) < 1e-9, f"expected_daily_return(0.6014, 0.0004, 0.0002) = {v:.7f} "
            f"({100 * v:.4f}%/day); target -0.0000119")


def test_c7b_accuracy_rendering(verdict):
    preds = np.array([1] * 172 + [-1] * 114)
    s = format_percent(accuracy(preds, np.ones(286, dtype=int)))
    verdict("7b", s == "60.14%", f"accuracy(172, 286) renders as {s}")


def test_c7c_table_filter_counts(verdict):
    accs = [0.5704, 0.5699, 0.5507, 0.5439, 0.5385, 0.5372, 0.5326, 0.5292, 0.5223]
    roster = [MemberRecord(f"M{i}", "LSTM", a, [0.6]) for i, a in enumerate(accs)]
    roster += [MemberRecord(f"W{i:02d}", "Logistic", a, [0.6]) for i, a in enumerate(np.linspace(0.4406, 0.52, 26))]
    n52, n55 = len(smart_filter(roster, 0.52)), len(smart_filter(roster, 0.55))
    verdict("7c", (n52, n55) == (9, 3), f"35-member fixture: {n52} members above 0.52, {n55} above 0.55")


MODERATE_HP = {
    "LSTM": {"units": [8], "epochs": 3},
    "DecisionTransformer": {"width": 8, "heads": 2, "blocks": 1, "ff_units": 16, "epochs": 2},
    "RandomForest": {"n_trees": 15, "max_depth": 6},
    "GradientBoost": {"n_trees": 15, "max_depth": 3},
    "Logistic": {},
}


def test_c8_no_lookahead(verdict):
    doc = small_config_doc(n_days=300, hyperparameters=MODERATE_HP, quantum={"epochs": 5},
                           ensemble={"selection": "holdout", "adaptive_window": 10})
    cfg = config_from_dict(doc)
    ctx = prepare_instruments(cfg)
    full = train_members(ctx, cfg)
    outs = run_ensembles(members_document(ctx, cfg, full), cfg)
    rng = np.random.default_rng(108)
    positions = sorted(rng.choice(len(ctx.axis), size=20, replace=False))
    bad = []
    for pos in positions:
        t = int(ctx.axis[pos])
        series = [ctx.panel[s].head(t + 1) for s in ctx.symbols]
        cut = prepare_instruments(cfg, series=series, boundary=ctx.split.boundary_index, require_labels=False)
        if not np.array_equal(cut.axis, ctx.axis[:pos + 1]):
            bad.append(f"day {t}: axis differs")
            continue
        res = train_members(cut, cfg)
        for a, b in zip(full, res):
            if a.p_up[pos] != b.p_up[-1]:
                bad.append(f"day {t}: {a.symbol}_{a.architecture} {a.p_up[pos]!r} != {b.p_up[-1]!r}")
        cut_outs = run_ensembles(members_document(cut, cfg, res), cfg)
        for sid, out in outs.items():
            if isinstance(out, Exception):
                continue
            if out.label[pos] != cut_outs[sid].label[-1]:
                bad.append(f"day {t}: {sid} label differs")
    verdict("8", not bad, f"{len(positions)} truncated replays, 10 members and {len(outs)} strategies each: "
            + (f"{len(bad)} differences, first {bad[0]}" if bad else "all identical"))


def test_c9_planted_signal(verdict, tmp_path):
    doc = {"instruments": [{"symbol": "PLANT", "synthetic": {"n_days": 600, "signal_strength": 0.65, "seed": 9}}],
           "seed": 9}
    cfg = config_from_dict(doc)
    jobs = min(4, os.cpu_count() or 1)
    start = time.perf_counter()
    run_pipeline(cfg, tmp_path, jobs=jobs)
    elapsed = time.perf_counter() - start
    report = json.loads((tmp_path / "report.json").read_text())
    accs = {m["model"]: m["test_accuracy"] for m in report["members"]}
    above = sum(a > 0.55 for a in accs.values())
    topk = next(s for s in report["strategies"] if s["strategy"].startswith("TopK"))
    median = float(np.median(list(accs.values())))
    ok = above >= 3 and topk["accuracy"] >= median and elapsed < 600
    detail = ", ".join(f"{k.split('_', 1)[1]} {v:.3f}" for k, v in sorted(accs.items()))
    verdict("9", ok, f"{above}/5 members above 0.55 ({detail}); {topk['strategy']} {topk['accuracy']:.3f} vs "
            f"median {median:.3f}; {elapsed:.0f} s with {jobs} job(s)")


@pytest.fixture(scope="module")
def small_cfg_path(tmp_path_factory):
    d = tmp_path_factory.mktemp("acc")
    p = d / "cfg.json"
    p.write_text(json.dumps(small_config_doc(ablation={"top": 4})))
    return p


def test_c10_determinism(verdict, small_cfg_path, tmp_path, capsys):
    codes = [main(["run", "--config", str(small_cfg_path), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    capsys.readouterr()
    a = (tmp_path / "a" / "report.json").read_bytes()
    b = (tmp_path / "b" / "report.json").read_bytes()
    verdict("10", codes == [0, 0] and a == b, f"exit codes {codes}; report.json {len(a)} bytes, identical={a == b}")


def test_c11_ablation_integrity(verdict, small_cfg_path, tmp_path, capsys):
    cfg = config_from_dict(json.loads(small_cfg_path.read_text()))
    ablated = prepare_instruments(cfg, quantum=True).ablated()
    off = prepare_instruments(cfg, quantum=False)
    same_features = all(
        ablated.matrices[s].X.tobytes() == off.matrices[s].X.tobytes()
        == build_feature_matrix(off.panel[s]).X.tobytes() and not off.matrices[s].X[:, list(QUANTUM_COLUMNS)].any()
        for s in off.symbols)
    pairs = [("S0", "Logistic"), ("S1", "LSTM")]
    lean = cfg.replace(architectures=tuple(a for _, a in pairs))
    same_preds = all(x.p_up.tobytes() == y.p_up.tobytes()
                     for x, y in zip(train_members(ablated, lean), train_members(off, lean)))
    assert main(["ablate", "--config", str(small_cfg_path), "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    rows = json.loads((tmp_path / "ablation.json").read_text())["rows"]
    schema = bool(rows) and all({"model", "acc_without", "acc_with", "gain", "n01", "n10", "p"} <= set(r)
                                and r["gain"] == r["acc_with"] - r["acc_without"] and 0 <= r["p"] <= 1
                                for r in rows)
    verdict("11", same_features and same_preds and schema,
            f"features bit-identical={same_features}, predictions bit-identical={same_preds}, "
            f"{len(rows)} ablation rows with paired deltas and McNemar p={schema}")

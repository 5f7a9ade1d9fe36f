import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import oracle_mismatch, random_config, random_roster
from quantens.ensemble import (
    STRATEGY_KINDS,
    EnsembleError,
    MemberRecord,
    StrategyConfig,
    accuracy_weighted,
    adaptive_weights,
    confidence_weighted,
    dataset_specific,
    majority_vote,
    prediction_correlation,
    run_strategy,
    smart_filter,
    top_k,
)

TABLE_ONE = [
    ("VIX", "LSTM", 0.5704), ("VIX", "DecisionTransformer", 0.5699), ("IWM", "RandomForest", 0.5507),
    ("VIX", "Logistic", 0.5439), ("SP500", "DecisionTransformer", 0.5385), ("IWM", "Logistic", 0.5372),
    ("IWM", "LSTM", 0.5326), ("SP500", "LSTM", 0.5292), ("XLK", "LSTM", 0.5223),
]


def _member(sym, arch, acc, p=(0.7,)):
    return MemberRecord(sym, arch, acc, np.asarray(p, dtype=float))


def _table_one_roster():
    rows = [_member(*r) for r in TABLE_ONE]
    # 26 more below the line, 17 of them above a coin flip.
    rng = np.random.default_rng(0)
    for i, a in enumerate(np.linspace(0.5005, 0.5199, 17)):
        rows.append(_member(f"F{i:02d}", "GradientBoost", float(a)))
    for i, a in enumerate(rng.uniform(0.4406, 0.5, 9)):
        rows.append(_member(f"W{i:02d}", "RandomForest", float(a)))
    return rows


class TestFilter:
    def test_table_one_counts(self):
        roster = _table_one_roster()
        assert len(roster) == 35
        assert len(smart_filter(roster, 0.52)) == 9
        assert len(smart_filter(roster, 0.55)) == 3
        assert len(smart_filter(roster, 0.50)) == 26

    def test_strict_boundary(self):
        assert smart_filter([_member("A", "LSTM", 0.52), _member("B", "LSTM", 0.52)], 0.52) == []
        assert smart_filter([_member("A", "LSTM", 0.9)], 1.0) == []

    def test_order_preserved(self):
        r = [_member("B", "LSTM", 0.6), _member("A", "LSTM", 0.7)]
        assert smart_filter(r, 0.52) == r

    def test_empty_input(self):
        with pytest.raises(EnsembleError):
            smart_filter([], 0.52)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.floats(0.5, 0.99), st.floats(0.5, 0.99))
    def test_nested(self, accs, t1, t2):
        lo, hi = sorted((t1, t2))
        r = [_member(f"S{i}", "LSTM", a) for i, a in enumerate(accs)]
        assert set(m.id for m in smart_filter(r, hi)) <= set(m.id for m in smart_filter(r, lo))


class TestTopK:
    def test_table_one_top7(self):
        chosen = top_k(smart_filter(_table_one_roster(), 0.52), 7)
        assert {m.name for m in chosen} == {f"{s}_{a}" for s, a, _ in TABLE_ONE[:7]}

    def test_tie_break(self):
        r = [_member("B", "LSTM", 0.6), _member("A", "Logistic", 0.6), _member("A", "LSTM", 0.6)]
        assert [m.id for m in top_k(r, 2)] == [("A", "LSTM"), ("A", "Logistic")]

    def test_k_too_large(self):
        with pytest.raises(EnsembleError):
            top_k([_member("A", "LSTM", 0.6)], 2)

    def test_k1_equals_best_member(self):
        rng = np.random.default_rng(1)
        r = [MemberRecord(f"S{i}", "LSTM", a, rng.random(30)) for i, a in enumerate([0.55, 0.61, 0.58])]
        out = run_strategy(StrategyConfig("TopK", k=1), r)
        np.testing.assert_array_equal(out.label, r[1].labels)


class TestRules:
    def test_majority(self):
        assert majority_vote([1, 1, -1]) == 1
        assert majority_vote([1, -1]) == 1
        assert majority_vote([-1] * 7) == -1
        with pytest.raises(EnsembleError):
            majority_vote([])

    def test_confidence_weighted(self):
        assert confidence_weighted([0.6, 0.6], [1.0, 0.1], [1, -1]) == 1
        assert confidence_weighted([0.6, 0.6], [0.0, 0.0], [-1, -1]) == 1
        assert confidence_weighted([0.3], [0.2], [-1]) == -1

    def test_accuracy_weighted(self):
        assert accuracy_weighted([0.9, 0.4, 0.4], [1, -1, -1]) == 1
        assert accuracy_weighted([0.55] * 3, [1, -1, -1]) == majority_vote([1, -1, -1])
        assert accuracy_weighted([0.2], [-1]) == -1

    def test_exact_tie_is_positive(self):
        # 0.1 + 0.2 and 0.3 are different doubles; the sign must come from their exact values.
        exact = Fraction(0.1) + Fraction(0.2) - Fraction(0.3)
        assert accuracy_weighted([0.1, 0.2, 0.3], [1, 1, -1]) == (1 if exact >= 0 else -1)
        assert accuracy_weighted([0.25, 0.25, 0.5], [1, 1, -1]) == 1

    def test_adaptive_weights(self):
        correct = np.zeros((2, 40), dtype=bool)
        correct[0, :] = True
        correct[1, 10:25] = True
        np.testing.assert_array_equal(adaptive_weights(correct, 40), [1.0, 0.5])
        with pytest.raises(EnsembleError):
            adaptive_weights(correct, 29)

    def test_adaptive_incremental_matches_recompute(self):
        rng = np.random.default_rng(3)
        correct = rng.random((4, 120)) < 0.55
        w = correct[:, :30].sum(axis=1)
        for t in range(30, 120):
            np.testing.assert_array_equal(adaptive_weights(correct, t), w / 30)
            w = w + correct[:, t] - correct[:, t - 30]

    def test_dataset_specific(self):
        r = [_member("A", "LSTM", 0.4, [0.9]), _member("B", "LSTM", 0.4, [0.8]), _member("C", "LSTM", 0.4, [0.1]),
             _member("D", "Logistic", 0.9, [0.0])]
        out = dataset_specific(r, "LSTM")
        assert out.label[0] == 1 and out.roster_size == 3
        solo = dataset_specific(r, "Logistic")
        assert solo.label[0] == -1


class TestRunStrategy:
    def test_no_qualifying(self):
        with pytest.raises(EnsembleError, match="no qualifying"):
            run_strategy(StrategyConfig("MajorityVote"), [_member("A", "LSTM", 0.5)])

    def test_misaligned_axis(self):
        a = MemberRecord("A", "LSTM", 0.6, [0.6, 0.4], np.array([0, 1]))
        b = MemberRecord("B", "LSTM", 0.6, [0.6, 0.4], np.array([1, 2]))
        with pytest.raises(EnsembleError):
            run_strategy(StrategyConfig("MajorityVote"), [a, b])

    def test_adaptive_needs_labels(self):
        with pytest.raises(EnsembleError):
            run_strategy(StrategyConfig("AdaptiveDynamic"), [_member("A", "LSTM", 0.6)])

    @pytest.mark.parametrize("kind", STRATEGY_KINDS)
    def test_single_member(self, kind):
        m = MemberRecord("A", "LSTM", 0.7, np.random.default_rng(5).random(40))
        cfg = StrategyConfig(kind, architecture="LSTM")
        out = run_strategy(cfg, [m], labels=np.ones(40, dtype=int))
        np.testing.assert_array_equal(out.label, m.labels)
        assert np.all(out.agree_count == 1)

    def test_table_one_topk_vs_manual(self):
        rng = np.random.default_rng(7)
        r = [MemberRecord(s, a, acc, rng.random(25)) for s, a, acc in TABLE_ONE]
        out = run_strategy(StrategyConfig("TopK", k=7), r)
        chosen = [m for m in r if m.accuracy >= 0.5326]
        manual = np.where(np.sum([m.labels for m in chosen], axis=0) >= 0, 1, -1)
        np.testing.assert_array_equal(out.label, manual)

    def test_csv(self, tmp_path):
        import datetime as dt

        m = MemberRecord("A", "LSTM", 0.7, [0.8, 0.2])
        out = run_strategy(StrategyConfig("MajorityVote"), [m])
        out.to_csv(tmp_path / "s.csv", [dt.date(2021, 1, 4), dt.date(2021, 1, 5)])
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "date,strategy,label,score,agree_count,roster_size"
        assert lines[2].startswith("2021-01-05,MajorityVote,-1,")

    def test_filtered_beats_naive(self):
        rng = np.random.default_rng(11)
        n = 400
        y = rng.choice([-1, 1], size=n)
        members = []
        for i in range(5):
            right = rng.random(n) < 0.65
            f = np.where(right, y, -y)
            members.append(MemberRecord(f"S{i}", "LSTM", 0.65, np.where(f > 0, 0.8, 0.2)))
        for i in range(20):
            members.append(MemberRecord(f"W{i:02d}", "Logistic", 0.5, np.where(rng.random(n) < 0.5, 0.8, 0.2)))
        naive = run_strategy(StrategyConfig("Naive"), members)
        topk = run_strategy(StrategyConfig("TopK", k=7), members)
        assert np.mean(topk.label == y) >= np.mean(naive.label == y)
        assert topk.roster_size == 5


class TestOracle:
    def test_exhaustive_three_members(self):
        # Every label pattern of three members over three days, at accuracies that tie.
        accs = [(0.6, 0.6, 0.6), (0.9, 0.55, 0.55), (0.53, 0.52, 0.75)]
        levels = (0.2, 0.8)
        for acc in accs:
            for pattern in itertools.product(levels, repeat=9):
                p = np.reshape(pattern, (3, 3))
                members = [MemberRecord(s, "LSTM", a, p[i]) for i, (s, a) in enumerate(zip("ABC", acc))]
                for kind in STRATEGY_KINDS:
                    cfg = StrategyConfig(kind, k=2, architecture="LSTM", window=2)
                    assert oracle_mismatch(cfg, members, np.array([1, -1, 1])) is None

    def test_random_draws(self):
        rng = np.random.default_rng(2024)
        for _ in range(2000):
            members, labels = random_roster(rng)
            cfg = random_config(rng, members)
            assert oracle_mismatch(cfg, members, labels) is None


class TestProperties:
    @pytest.mark.parametrize("seed", range(5))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        members, labels = random_roster(rng, max_members=5, max_days=20)
        for kind in STRATEGY_KINDS:
            cfg = StrategyConfig(kind, k=3, filter_threshold=0.5, architecture=members[0].architecture, window=4)
            try:
                a = run_strategy(cfg, members, labels=labels)
            except EnsembleError:
                continue
            b = run_strategy(cfg, members[::-1], labels=labels)
            np.testing.assert_array_equal(a.label, b.label)
            assert a.roster == b.roster

    @given(st.lists(st.floats(0.53, 1.0), min_size=1, max_size=5), st.booleans(),
           st.lists(st.floats(0, 1), min_size=5, max_size=5))
    @settings(max_examples=100, deadline=None)
    def test_unanimity(self, accs, up, conf):
        # Zero confidence makes every weighted score 0, which resolves to +1.
        p = [0.5 + 0.5 * max(c, 0.01) * (1 if up else -1) for c in conf[:len(accs)]]
        members = [MemberRecord(f"S{i}", "LSTM", a, [p[i]] * 12) for i, a in enumerate(accs)]
        for kind in STRATEGY_KINDS:
            out = run_strategy(StrategyConfig(kind, architecture="LSTM", window=3), members,
                               labels=np.array([1, -1] * 6))
            assert np.all(out.label == (1 if up else -1))

    def test_monotone(self):
        # Flipping one member toward the day's winner never moves the output away from it.
        accs = (0.53, 0.6, 0.75, 0.9)
        days = 3
        labels = np.array([1, -1, 1])
        for pattern in itertools.product((0.3, 0.7), repeat=len(accs) * days):
            p = np.reshape(pattern, (len(accs), days))
            members = [MemberRecord(f"S{i}", "LSTM", a, p[i]) for i, a in enumerate(accs)]
            t = days - 1
            for kind in ("TopK", "MajorityVote", "AccuracyWeighted", "ConfidenceWeighted", "AdaptiveDynamic"):
                cfg = StrategyConfig(kind, k=3, window=2)
                base = run_strategy(cfg, members, labels=labels).label[t]
                for i in range(len(accs)):
                    if (p[i, t] >= 0.5) == (base > 0):
                        continue
                    q = p.copy()
                    q[i, t] = 1 - q[i, t]
                    flipped = [MemberRecord(f"S{j}", "LSTM", a, q[j]) for j, a in enumerate(accs)]
                    assert run_strategy(cfg, flipped, labels=labels).label[t] == base


class TestCorrelation:
    def test_identical_and_complement(self):
        a = np.array([1, -1, 1, 1, -1])
        assert prediction_correlation(a, a) == 1.0
        assert prediction_correlation(a, -a) == -1.0

    def test_phi_table(self):
        # (a, b, c, d) = (40, 10, 10, 40): both up 40, up/down 10, down/up 10, both down 40.
        a = np.array([1] * 40 + [1] * 10 + [-1] * 10 + [-1] * 40)
        b = np.array([1] * 40 + [-1] * 10 + [1] * 10 + [-1] * 40)
        assert prediction_correlation(a, b) == pytest.approx(0.6, abs=1e-15)
        assert (40 * 40 - 10 * 10) / math.sqrt(50 * 50 * 50 * 50) == pytest.approx(0.6)

    def test_constant_series(self):
        c = np.ones(5)
        assert prediction_correlation(c, c) == 1.0
        with pytest.raises(EnsembleError):
            prediction_correlation(c, -c)
        with pytest.raises(EnsembleError):
            prediction_correlation(c, np.array([1, -1, 1, 1, 1]))
        with pytest.raises(EnsembleError):
            prediction_correlation([1], [1])

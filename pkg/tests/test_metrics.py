import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dktplus.data import Dataset, InteractionSequence
from dktplus.metrics import (MetricsReport, UndefinedAUCError, auc, auc_current, auc_next, consistency_m,
                             correctness_matrix, full_report)
from dktplus.objective import waviness

from conftest import random_sequences


def pair_auc(scores, labels):
    """O(n^2) oracle: P(score+ > score-) + P(tie)/2."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_auc_examples():
    assert auc([0.9, 0.1], [1, 0]) == 1.0
    assert auc([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    with pytest.raises(UndefinedAUCError):
        auc([0.1, 0.2], [1, 1])


def test_auc_random_oracle(rng):
    s = rng.random(20)
    l = rng.integers(0, 2, 20)
    l[:2] = [0, 1]
    assert abs(auc(s, l) - pair_auc(s, l)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=40))
def test_auc_ties_against_oracle(pairs):
    scores = [p[0] / 5 for p in pairs]
    labels = [p[1] for p in pairs]
    if len(set(labels)) < 2:
        return
    assert abs(auc(scores, labels) - pair_auc(scores, labels)) <= 1e-12


def test_auc_properties(rng):
    s = rng.random(50)
    l = rng.integers(0, 2, 50)
    l[:2] = [0, 1]
    assert auc(np.exp(3 * s) - 7, l) == auc(s, l)
    assert auc(s, l) + auc(s, 1 - l) == pytest.approx(1.0, abs=1e-15)


def test_auc_pools_label_noise_and_constant():
    seqs = [InteractionSequence((0, 1, 2, 0), (1, 0, 1, 0)), InteractionSequence((2, 1), (0, 1))]
    tr = []
    for s in seqs:
        Y = np.full((len(s), 3), 0.5)
        for t in range(len(s) - 1):
            Y[t, s.questions[t + 1]] = 0.1 + 0.8 * s.answers[t + 1]
            Y[t, s.questions[t]] = 0.1 + 0.8 * s.answers[t]
        tr.append(Y)
    assert auc_next(tr, seqs) == 1.0 and auc_current(tr, seqs) == 1.0
    flat = [np.full((len(s), 3), 0.5) for s in seqs]
    assert auc_next(flat, seqs) == 0.5 and auc_current(flat, seqs) == 0.5


def test_auc_pools_two_students_oracle():
    seqs = [InteractionSequence((0, 1, 1), (1, 0, 1)), InteractionSequence((1, 0, 0), (0, 0, 1))]
    Y0 = np.array([[0.2, 0.7], [0.4, 0.6], [0.9, 0.9]])
    Y1 = np.array([[0.3, 0.1], [0.8, 0.5], [0.1, 0.1]])
    # next: (Y0[0,1], 0), (Y0[1,1], 1), (Y1[0,0], 0), (Y1[1,0], 1)
    assert auc_next([Y0, Y1], seqs) == pair_auc([0.7, 0.6, 0.3, 0.8], [0, 1, 0, 1])
    # current: (Y0[0,0], 1), (Y0[1,1], 0), (Y1[0,1], 0), (Y1[1,0], 0)
    assert auc_current([Y0, Y1], seqs) == pair_auc([0.2, 0.6, 0.1, 0.8], [1, 0, 0, 0])


def test_consistency_hand_example():
    seq = [InteractionSequence((0, 0, 0), (1, 1, 0))]
    Y = np.array([[0.5], [0.6], [0.9]])
    m1, m2 = consistency_m([Y], seq)
    assert m1 == 0.0
    assert m2 == pytest.approx(-0.1, abs=1e-15)


def test_consistency_sign_cases_and_flip(rng):
    up = np.array([[0.3], [0.5]])
    assert consistency_m([up], [InteractionSequence((0, 0), (1, 1))]) == pytest.approx((1.0, 0.2))
    assert consistency_m([up], [InteractionSequence((0, 0), (1, 0))]) == pytest.approx((-1.0, -0.2))
    seqs = random_sequences(rng, 5, 3)
    tr = [rng.random((len(s), 3)) for s in seqs]
    flipped = [InteractionSequence(s.questions, tuple(1 - a for a in s.answers)) for s in seqs]
    m1, m2 = consistency_m(tr, seqs)
    f1, f2 = consistency_m(tr, flipped)
    assert f1 == -m1 and f2 == pytest.approx(-m2, abs=1e-15)


def test_correctness_matrix_examples():
    ds = Dataset((InteractionSequence((32, 33), (1, 0)),), 40)
    cm = correctness_matrix(ds, 32, 33)
    assert cm.counts == ((0, 1), (0, 0))
    assert correctness_matrix(ds, 33, 32).total == 0
    with pytest.raises(ValueError):
        correctness_matrix(ds, 40, 0)


def test_correctness_matrix_brute_force(rng):
    seqs = random_sequences(rng, 30, 3, t_max=12)
    ds = Dataset(tuple(seqs), 3)
    cm = correctness_matrix(ds, 1, 2)
    counts = [[0, 0], [0, 0]]
    for s in seqs:
        for t in range(len(s) - 1):
            if s.questions[t] == 1 and s.questions[t + 1] == 2:
                counts[1 - s.answers[t]][1 - s.answers[t + 1]] += 1
    assert [list(r) for r in cm.counts] == counts
    assert sum(cm.row_totals) == sum(cm.col_totals) == cm.total
    table = cm.format_table()
    assert str(cm.total) in table and "Next = s2" in table


def test_full_report_degenerate():
    seqs = [InteractionSequence((0, 1, 1), (1, 0, 1)), InteractionSequence((1, 0), (0, 1))]
    r = full_report([np.full((len(s), 2), 0.5) for s in seqs], seqs, 2)
    assert (r.auc_n, r.auc_c, r.w1, r.w2, r.m1, r.m2) == (0.5, 0.5, 0.0, 0.0, 0.0, 0.0)


def test_full_report_matches_scripted_oracle(rng):
    seqs = random_sequences(rng, 8, 4)
    tr = [rng.random((len(s), 4)) for s in seqs]
    r = full_report(tr, seqs, 4)
    # independent scalar loops
    sn, ln, sc, lc = [], [], [], []
    l1 = l2 = 0.0
    m1 = m2 = 0.0
    N = 0
    for Y, s in zip(tr, seqs):
        for t in range(len(s) - 1):
            sn.append(Y[t, s.questions[t + 1]]); ln.append(s.answers[t + 1])
            sc.append(Y[t, s.questions[t]]); lc.append(s.answers[t])
            d = Y[t + 1] - Y[t]
            l1 += np.abs(d).sum(); l2 += (d * d).sum()
            q = s.questions[t + 1]
            delta = Y[t + 1, q] - Y[t, q]
            sign = 1 if s.answers[t + 1] == 1 else -1
            m1 += sign * np.sign(delta); m2 += sign * delta
            N += 1
    assert abs(r.auc_n - pair_auc(sn, ln)) <= 1e-12
    assert abs(r.auc_c - pair_auc(sc, lc)) <= 1e-12
    assert r.w1 == pytest.approx(l1 / (4 * N), rel=1e-13)
    assert r.w2 == pytest.approx(np.sqrt(l2 / (4 * N)), rel=1e-13)
    assert r.m1 == pytest.approx(m1 / N, abs=1e-15) and r.m2 == pytest.approx(m2 / N, rel=1e-12)
    assert (r.n_pairs_n, r.n_pairs_c) == (N, N)


def test_full_report_composition_bitwise(rng):
    seqs = random_sequences(rng, 6, 3)
    tr = [rng.random((len(s), 3)) for s in seqs]
    r = full_report(tr, seqs, 3)
    assert r.auc_n == auc_next(tr, seqs) and r.auc_c == auc_current(tr, seqs)
    assert (r.w1, r.w2) == waviness(tr, 3)
    assert (r.m1, r.m2) == consistency_m(tr, seqs)


def test_report_text_roundtrip_and_mean():
    a = MetricsReport(0.81, 0.9, 0.01, 0.02, 0.3, 0.001, 10, 10)
    b = MetricsReport(0.79, 0.7, 0.03, 0.04, 0.5, 0.003, 5, 5)
    assert MetricsReport.from_text(a.to_text()) == a
    assert a.to_text().splitlines()[0] == "auc_n=0.81"
    m = MetricsReport.mean([a, b])
    assert m.auc_n == pytest.approx(0.8) and m.m2 == pytest.approx(0.002) and m.n_pairs_n == 15
    assert a.selection_score() == pytest.approx(0.81 + 0.9 + 0.3 + 0.001)

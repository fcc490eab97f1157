"""Acceptance criteria, each at its stated tolerance.

Every check prints a single PASS/FAIL line (also collected into the terminal
summary). The synthetic-data runs take a few minutes on one CPU core.
"""

import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from dktplus import trainer
from dktplus.cli import main
from dktplus.data import Batch, SimConfig, generate_simulated, read_triplet_file, split_train_test
from dktplus.metrics import auc, auc_current, auc_next, consistency_m, full_report
from dktplus.model import ModelConfig, predict
from dktplus.objective import PROB_EPS, BatchLossReport, LossConfig, next_step_loss, total_loss, waviness
from dktplus.trainer import TrainConfig, evaluate, gradient_check, train
from dktplus.viz import HeatmapExport

from conftest import ACCEPTANCE, random_sequences

DKT = LossConfig(0.0, 0.0, 0.0)
DKT_PLUS_SIM = LossConfig(0.20, 0.001, 10.0)
DKT_PLUS_ASSIST = LossConfig(0.1, 0.003, 3.0)


def check(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def pair_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    return sum((p > n) + 0.5 * (p == n) for p in pos for n in neg) / (len(pos) * len(neg))


# 1. gradient correctness

def test_c1_gradient_check():
    start = time.perf_counter()
    worst = {}
    for cfg in (DKT, DKT_PLUS_ASSIST):
        errs = []
        for seed in range(4):
            for kind, H in (("lstm", 6), ("lstm", 3), ("vanilla", 5)):
                model = ModelConfig(hidden_size=H, cell_kind=kind, dropout_rate=0.5)
                errs.append(gradient_check(model, cfg, seed=seed, num_skills=5 - seed % 2, max_len=6))
        worst[cfg.as_tuple()] = max(errs)
    elapsed = time.perf_counter() - start
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 30
    check("1 gradient check", ok,
          ", ".join(f"{k} max rel err {v:.2e}" for k, v in worst.items()) + f"; {elapsed:.1f}s (< 30s)")


# 2. metric oracle equivalence

def test_c2_auc_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(200):
        n = int(rng.integers(2, 60))
        # a third of the instances use coarse scores so ties are common
        scores = rng.integers(0, 5, n) / 4 if i % 3 == 0 else rng.random(n)
        labels = rng.integers(0, 2, n)
        labels[:2] = (0, 1)
        worst = max(worst, abs(auc(scores, labels) - pair_auc(scores, labels)))
    check("2a auc vs pair-counting oracle", worst <= 1e-12, f"200 instances, max |diff| {worst:.1e} (<= 1e-12)")


def test_c2_full_report_components():
    rng = np.random.default_rng(7)
    seqs = random_sequences(rng, 12, 5, t_max=10)
    traces = [rng.random((len(s), 5)) for s in seqs]
    r = full_report(traces, seqs, 5)
    bitwise = (r.auc_n == auc_next(traces, seqs) and r.auc_c == auc_current(traces, seqs)
               and (r.w1, r.w2) == waviness(traces, 5) and (r.m1, r.m2) == consistency_m(traces, seqs))
    # scalar-loop reimplementation
    sn, ln, sc, lc, l1, l2, m1, m2, N = [], [], [], [], [], [], [], [], 0
    for Y, s in zip(traces, seqs):
        for t in range(len(s) - 1):
            sn.append(Y[t, s.questions[t + 1]]); ln.append(s.answers[t + 1])
            sc.append(Y[t, s.questions[t]]); lc.append(s.answers[t])
            d = Y[t + 1] - Y[t]
            l1.extend(np.abs(d)); l2.extend(d * d)
            q = s.questions[t + 1]
            sign = 1.0 if s.answers[t + 1] else -1.0
            m1.append(sign * np.sign(Y[t + 1, q] - Y[t, q])); m2.append(sign * (Y[t + 1, q] - Y[t, q]))
            N += 1
    import math
    oracle = (pair_auc(sn, ln), pair_auc(sc, lc), math.fsum(l1) / (5 * N), math.sqrt(math.fsum(l2) / (5 * N)),
              math.fsum(m1) / N, math.fsum(m2) / N)
    got = (r.auc_n, r.auc_c, r.w1, r.w2, r.m1, r.m2)
    diff = max(abs(a - b) for a, b in zip(got, oracle))
    check("2b full_report composition", bitwise and diff <= 1e-12,
          f"bitwise vs component functions: {bitwise}; max |diff| vs scalar oracle {diff:.1e}")


# 3. simulated-5 qualitative reproduction

SIM_MODEL = ModelConfig(hidden_size=200)
SIM_TRAIN = TrainConfig(optimizer="adam", learning_rate=0.01, max_epochs=40, patience=5, seed=0)


@pytest.fixture(scope="module")
def simulated_runs():
    ds = generate_simulated(SimConfig(seed=1))
    tr, te = split_train_test(ds, 0.2, seed=0)
    fit, val = split_train_test(tr, 0.2, seed=1)
    out = {}
    for name, cfg in (("dkt", DKT), ("dkt+", DKT_PLUS_SIM)):
        start = time.perf_counter()
        params, hist = train(fit, val, SIM_MODEL, cfg, SIM_TRAIN)
        out[name] = (params, evaluate(params, te, SIM_MODEL), time.perf_counter() - start, hist.best_epoch)
    out["test"] = te
    return out


def _fmt(rep):
    return f"auc_n={rep.auc_n:.4f} auc_c={rep.auc_c:.4f} w1={rep.w1:.4f} m1={rep.m1:.4f}"


@pytest.mark.slow
def test_c3a_dkt_auc_range(simulated_runs):
    rep = simulated_runs["dkt"][1]
    check("3a DKT auc_n in [0.72, 0.90]", 0.72 <= rep.auc_n <= 0.90, _fmt(rep))


@pytest.mark.slow
def test_c3b_auc_n_preserved(simulated_runs):
    a, b = simulated_runs["dkt"][1], simulated_runs["dkt+"][1]
    d = b.auc_n - a.auc_n
    check("3b DKT+ auc_n within 0.02 of DKT", abs(d) <= 0.02, f"diff {d:+.4f}")


@pytest.mark.slow
def test_c3c_reconstruction(simulated_runs):
    a, b = simulated_runs["dkt"][1], simulated_runs["dkt+"][1]
    d = b.auc_c - a.auc_c
    check("3c DKT+ auc_c >= DKT auc_c + 0.05", d >= 0.05, f"DKT {a.auc_c:.4f} DKT+ {b.auc_c:.4f} diff {d:+.4f}")


@pytest.mark.slow
def test_c3d_waviness(simulated_runs):
    a, b = simulated_runs["dkt"][1], simulated_runs["dkt+"][1]
    ratio = b.w1 / a.w1
    check("3d DKT+ w1 <= 0.7 x DKT w1", ratio <= 0.7, f"DKT {a.w1:.5f} DKT+ {b.w1:.5f} ratio {ratio:.3f}")


@pytest.mark.slow
def test_c3e_consistency(simulated_runs):
    a, b = simulated_runs["dkt"][1], simulated_runs["dkt+"][1]
    check("3e DKT+ m1 > DKT m1", b.m1 > a.m1, f"DKT {a.m1:.4f} DKT+ {b.m1:.4f}")


@pytest.mark.slow
def test_c3_runtime_and_heatmap(simulated_runs):
    total = simulated_runs["dkt"][2] + simulated_runs["dkt+"][2]
    check("3 runtime <= 20 min", total <= 20 * 60, f"{total:.0f}s for both models")
    seq = simulated_runs["test"].sequences[0]
    smooth = {}
    for name in ("dkt", "dkt+"):
        Y = predict(simulated_runs[name][0], SIM_MODEL, [seq])[0]
        smooth[name] = HeatmapExport.from_outputs(Y, seq).mean_adjacent_change()
    check("3 heatmap smoother under DKT+", smooth["dkt+"] < smooth["dkt"],
          f"mean adjacent change DKT {smooth['dkt']:.5f} DKT+ {smooth['dkt+']:.5f}")


# 4. regularizer monotonicity

@pytest.mark.slow
def test_c4_w1_monotone():
    sweep = (0.0, 0.03, 0.3, 1.0)
    means = []
    for lam in sweep:
        ws = []
        for seed in range(3):
            ds = generate_simulated(SimConfig(n_students=1000, seed=100 + seed))
            tr, te = split_train_test(ds, 0.2, seed=seed)
            model = ModelConfig(hidden_size=100, seed=seed)
            cfg = TrainConfig(optimizer="adam", max_epochs=6, seed=seed, early_stopping=False)
            params, _ = train(tr, None, model, LossConfig(0.0, lam, 0.0), cfg)
            ws.append(evaluate(params, te, model).w1)
        means.append(float(np.mean(ws)))
    ok = all(a > b for a, b in zip(means, means[1:]))
    check("4 test w1 strictly decreasing in lambda_w1", ok,
          ", ".join(f"{l:g}: {m:.5f}" for l, m in zip(sweep, means)))


# 5. baseline identity

def test_c5a_total_equals_next_bitwise():
    rng = np.random.default_rng(5)
    bad = 0
    for _ in range(200):
        M = int(rng.integers(1, 8))
        seqs = random_sequences(rng, int(rng.integers(1, 6)), M)
        traces = [rng.random((len(s), M)) for s in seqs]
        if total_loss(traces, seqs, DKT).total != next_step_loss(traces, seqs):
            bad += 1
    check("5a total == next_step_loss bitwise at (0,0,0)", bad == 0, f"{bad} mismatches in 200 random instances")


def _plain_loss(Y, batch, cfg):
    # plain next-step cross-entropy only
    T = batch.T
    mask = np.arange(T - 1)[:, None] + 1 < batch.lengths[None, :]
    t, b = np.nonzero(mask)
    q, a = batch.questions[t + 1, b], batch.answers[t + 1, b]
    p = np.clip(Y[t, b, q], PROB_EPS, 1 - PROB_EPS)
    loss = float(np.sum(-(a * np.log(p) + (1.0 - a) * np.log1p(-p))) / len(t))
    return BatchLossReport(loss, 0.0, 0.0, 0.0, 0.0, loss, len(t))


def _plain_grads(Y, batch, cfg, n_terms=None):
    T = batch.T
    mask = np.arange(T - 1)[:, None] + 1 < batch.lengths[None, :]
    t, b = np.nonzero(mask)
    q, a = batch.questions[t + 1, b], batch.answers[t + 1, b]
    p = np.clip(Y[t, b, q], PROB_EPS, 1 - PROB_EPS)
    dY = np.zeros_like(Y)
    dY[t, b, q] += (p - a) / (p * (1.0 - p)) / len(t)
    return dY


def test_c5b_training_identical_without_regularizer_paths(monkeypatch):
    ds = generate_simulated(SimConfig(n_students=120, n_exercises=10, n_concepts=2, seed=3))
    tr, va = split_train_test(ds, 0.25, seed=0)
    model = ModelConfig(hidden_size=16, seed=4)
    cfg = TrainConfig(optimizer="sgd", learning_rate=0.1, max_epochs=4, batch_size=16, seed=6)
    full = train(tr, va, model, DKT, cfg)
    calls = []

    def counted(fn):
        def wrapper(*a, **k):
            calls.append(fn.__name__)
            return fn(*a, **k)
        return wrapper

    monkeypatch.setattr(trainer, "batch_loss", counted(_plain_loss))
    monkeypatch.setattr(trainer, "batch_output_grads", counted(_plain_grads))
    plain = train(tr, va, model, DKT, cfg)
    assert "_plain_loss" in calls and "_plain_grads" in calls
    same = all(a.tobytes() == b.tobytes() for a, b in zip(full[0].arrays(), plain[0].arrays()))
    same_hist = full[1].to_text() == plain[1].to_text()
    check("5b (0,0,0) training == plain-DKT build byte-for-byte", same and same_hist,
          f"parameters identical: {same}; history identical: {same_hist}")


# 6. reproducibility

def test_c6_cmd_train_reproducible(tmp_path):
    data = tmp_path / "sim.txt"
    assert main(["simulate", "--out", str(data), "--students", "200", "--exercises", "20", "--seed", "9"]) == 0
    flags = ["--hidden-size", "32", "--max-epochs", "3", "--optimizer", "adam", "--seed", "5",
             "--lambda-r", "0.1", "--lambda-w1", "0.003", "--lambda-w2", "3.0"]
    for run in ("a", "b"):
        assert main(["train", "--data", str(data), "--out", str(tmp_path / run), *flags]) == 0
    same = {name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
            for name in ("model.ckpt", "report.txt", "history.txt")}
    check("6 cmd_train byte-identical reruns", all(same.values()), str(same))


# 7. real data (only when supplied)

ASSIST = os.environ.get("DKTPLUS_ASSIST2009")


@pytest.mark.skipif(not ASSIST, reason="set DKTPLUS_ASSIST2009 to a triplet-format ASSIST2009 file")
def test_c7_assist2009(capsys):
    capsys.readouterr()
    assert main(["matrix", "--data", ASSIST, "--skill-a", "32", "--skill-b", "33"]) == 0
    ds = read_triplet_file(Path(ASSIST))
    from dktplus.metrics import correctness_matrix
    cm = correctness_matrix(ds, 32, 33)
    check("7 ASSIST2009 correctness matrix s32 -> s33", cm.counts == ((1543, 159), (81, 367)) and cm.total == 2510,
          f"counts {cm.counts} total {cm.total}")
    tr, te = split_train_test(ds, 0.2, seed=0)
    fit, val = split_train_test(tr, 0.2, seed=1)
    reps = {}
    for name, cfg in (("dkt", DKT), ("dkt+", DKT_PLUS_ASSIST)):
        params, _ = train(fit, val, SIM_MODEL, cfg, SIM_TRAIN)
        reps[name] = evaluate(params, te, SIM_MODEL)
    a, b = reps["dkt"], reps["dkt+"]
    # directional only; no numeric tolerance is promised
    print(f"ASSIST2009 DKT {_fmt(a)} | DKT+ {_fmt(b)}")
    check("7 ASSIST2009 directional effects", b.auc_c > a.auc_c and b.w1 < a.w1 and b.w2 < a.w2 and b.m1 > a.m1
          and b.m2 > a.m2, f"DKT {_fmt(a)} | DKT+ {_fmt(b)}")

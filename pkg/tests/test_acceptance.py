"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

    pytest -s -v tests/test_acceptance.py

Criteria 4 and 5 train every model on three 60-demo synthetic datasets and
take several minutes on one core.
"""

import json
import time
from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest

from dlfd import baselines as bl
from dlfd import pipeline as pl
from dlfd.bagging import aggregate
from dlfd.cli import main
from dlfd.dataset import WindowedDemo, split
from dlfd.ekf import EkfConfig, ekf_step, fit, init_filter
from dlfd.metrics import regression_metrics
from dlfd.rmlp import RmlpConfig, RmlpNetwork, forward_step, init_network, output_jacobian, set_weights, \
    weights_vector, zero_state
from dlfd.tasksim import SimConfig, run_episode, simulate_dataset

DATASET_SEEDS = (1, 2, 3)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return emit


def _linear(n_in, n_out, w):
    return RmlpNetwork(RmlpConfig((n_in, n_out), bias=False), w)


# ---------------------------------------------------------------- 1

def test_c1_rls_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 4))
    Y = X @ rng.normal(size=(2, 4)).T + 0.1 * rng.normal(size=(200, 2))
    W0 = rng.normal(0, 0.1, size=(2, 4))
    eps, eta = 0.1, 0.01
    d = WindowedDemo("lin", X, Y, np.arange(200), 1)
    out, _ = fit(_linear(4, 2, W0.reshape(-1)), [d], EkfConfig(epsilon=eps, eta=eta, q=0.0, epochs=1,
                                                               shuffle_demos=False))
    lam = eps / eta
    W = np.linalg.solve(X.T @ X + lam * np.eye(4), X.T @ Y + lam * W0.T).T
    err = np.max(np.abs(out.weights.reshape(2, 4) - W))
    dt = time.perf_counter() - t0
    assert report(1, err < 1e-8 and dt < 1.0, f"max|w - w_ridge| = {err:.2e} (< 1e-8), {dt:.3f}s (< 1s)")


# ---------------------------------------------------------------- 2

def test_c2_scalar_recursion(report):
    net = _linear(1, 1, np.zeros(1))
    ks = init_filter(net, EkfConfig(epsilon=1.0, eta=1.0, q=0.0))
    rs = zero_state(net)
    ws, Ps = [float(ks.w_hat[0])], [float(ks.P[0, 0])]
    for _ in range(2):
        ks, rs, _ = ekf_step(ks, net, rs, np.array([1.0]), np.array([1.0]))
        ws.append(float(ks.w_hat[0]))
        Ps.append(float(ks.P[0, 0]))
    eps = np.finfo(float).eps
    want_w, want_P = [0.0, 0.5, 2 / 3], [1.0, 0.5, 1 / 3]
    err = max(max(abs(a - b) for a, b in zip(ws, want_w)), max(abs(a - b) for a, b in zip(Ps, want_P)))
    assert report(2, err <= eps, f"w = {ws}, P = {Ps}, max error {err:.1e} (<= {eps:.1e})")


# ---------------------------------------------------------------- 3

RMLP_ARCHS = [((3, 5, 2), frozenset(), 1), ((3, 5, 2), None, 1), ((3, 5, 2), None, 2), ((3, 5, 2), None, 3),
              ((4, 3, 3, 2), frozenset({2}), 3), ((4, 3, 3, 2), None, 3), ((2, 3), frozenset(), 2)]
CELL_ARCHS = [("feedforward", (6, 5, 2)), ("feedforward", (6, 4, 3, 2)), ("simple_rnn", (3, 4, 2)),
              ("gru", (3, 4, 2)), ("lstm", (3, 4, 2))]


def _rel(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1e-6, np.abs(a) + np.abs(b))))


def _rmlp_fd(net, state, x, h=1e-5):
    steps = [inp for inp, _ in state.history]
    start = state.history[0][1] if state.history else state.activations
    w0 = weights_vector(net)

    def run(w):
        n = set_weights(net, w)
        s = type(state)(start, ())
        for inp in steps:
            _, s = forward_step(n, s, inp)
        return forward_step(n, s, x)[0]

    J = np.zeros((net.n_w, net.config.n_outputs))
    for i in range(net.n_w):
        w = w0.copy()
        w[i] += h
        yp = run(w)
        w[i] -= 2 * h
        J[i] = (yp - run(w)) / (2 * h)
    return J


def _cell_fd(m, X, T, lam, h=1e-4):
    # fourth-order central stencil: the two-point rule at small h leaves
    # roundoff of ~1e-10, which swamps gradient entries near 1e-7
    g = np.zeros(m.n_w)
    for i in range(m.n_w):
        def loss(d):
            w = m.weights.copy()
            w[i] += d
            return bl.loss_and_grad(m, X, T, lam, w)[0]

        g[i] = (loss(-2 * h) - 8 * loss(-h) + 8 * loss(h) - loss(2 * h)) / (12 * h)
    return g


def test_c3_gradient_checks(report):
    t0 = time.perf_counter()
    worst, count = 0.0, 0
    rng = np.random.default_rng(2024)
    for sizes, rec, depth in RMLP_ARCHS:
        for trial in range(20):
            net = init_network(RmlpConfig(sizes, recurrent_layers=rec, bptt_depth=depth, init_std=0.4, seed=trial))
            s = zero_state(net)
            for _ in range(depth - 1):
                _, s = forward_step(net, s, rng.normal(size=sizes[0]))
            x = rng.normal(size=sizes[0])
            worst = max(worst, _rel(output_jacobian(net, s, x), _rmlp_fd(net, s, x)))
            count += 1
    for kind, sizes in CELL_ARCHS:
        for trial in range(20):
            m = bl.init_model(kind, sizes, trial)
            m = m.with_weights(m.weights + rng.normal(0, 0.3, m.n_w))
            X = rng.normal(size=(4, 3, sizes[0]) if m.recurrent else (4, sizes[0]))
            T = rng.normal(size=(4, sizes[-1]))
            lam = 0.05 if trial % 2 else 0.0
            worst = max(worst, _rel(bl.loss_and_grad(m, X, T, lam)[1], _cell_fd(m, X, T, lam)))
            count += 1
    dt = time.perf_counter() - t0
    assert report(3, worst < 1e-4 and dt < 30,
                  f"{count} instances, worst relative error {worst:.2e} (< 1e-4), {dt:.1f}s (< 30s)")


# ---------------------------------------------------------------- 4 and 5

@lru_cache(maxsize=None)
def _dataset(seed):
    return simulate_dataset(60, seed)


@lru_cache(maxsize=None)
def _test_loss(seed, model, ensemble=1):
    demos = _dataset(seed)
    spec = pl.TrainSpec(model=model, N=3, ensemble=ensemble, split_seed=seed, seed=seed)
    trained = pl.train(demos, spec)
    rep, _ = pl.evaluate(trained, pl.prepare(demos, spec.N, seed).windows["test"], model)
    return rep.loss


def test_c4_ordering(report):
    t0 = time.perf_counter()
    losses = {m: [_test_loss(s, m) for s in DATASET_SEEDS] for m in pl.MODEL_NAMES}
    dt = time.perf_counter() - t0
    med = {m: float(np.median(v)) for m, v in losses.items()}
    checks = {
        "KF-RMLP <= RNN": med["kf_rmlp"] <= med["rnn"],
        "RNN <= FF": med["rnn"] <= med["feedforward"],
        "RNN < FF": med["rnn"] < med["feedforward"],
        "GRU < FF": med["gru"] < med["feedforward"],
        "LSTM < FF": med["lstm"] < med["feedforward"],
        "runtime < 600s": dt < 600,
    }
    table = ", ".join(f"{m} {med[m]:.3e}" for m in pl.MODEL_NAMES)
    failed = [k for k, ok in checks.items() if not ok]
    ok = not failed
    report(4, ok, f"median test Loss: {table}; {dt:.0f}s" + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert ok, f"per-seed losses {losses}"


def test_c5_bagging(report):
    rng = np.random.default_rng(5)
    sigma2 = 0.7
    law = {}
    for m in (2, 4, 5):
        preds = rng.normal(0.0, np.sqrt(sigma2), size=(10_000, m, 1, 1))
        means = np.array([aggregate(p)[0][0, 0] for p in preds])
        law[m] = means.var(ddof=1) / (sigma2 / m)
    law_ok = all(abs(r - 1) <= 0.1 for r in law.values())
    single = [_test_loss(s, "gru") for s in DATASET_SEEDS]
    ens = [_test_loss(s, "gru", 5) for s in DATASET_SEEDS]
    ens_ok = float(np.median(ens)) <= float(np.median(single))
    ratios = ", ".join(f"m={m}: {r:.3f}" for m, r in law.items())
    report(5, law_ok and ens_ok,
           f"var(mean)/(sigma^2/m) {ratios} (within 0.9..1.1); median test Loss GRU-ensemble(5) "
           f"{np.median(ens):.3e} vs GRU {np.median(single):.3e} (per seed {['%.2e' % x for x in ens]} "
           f"vs {['%.2e' % x for x in single]})")
    assert law_ok and ens_ok


# ---------------------------------------------------------------- 6

def test_c6_metrics(report):
    r = regression_metrics(np.array([[0.1, 0.0, -0.02]]), np.zeros((1, 3)))
    hand = max(abs(r.mae - 0.1), abs(r.ae - 0.04), abs(r.loss - 0.0104 / 3), abs(r.pct_gt_threshold - 200 / 3) / 100)
    hand_ok = hand <= 1e-12 and round(r.loss, 7) == 0.0034667 and round(r.pct_gt_threshold, 2) == 66.67
    rng = np.random.default_rng(6)
    mismatches = 0
    for _ in range(1000):
        shape = tuple(rng.integers(1, 8, size=2))
        P, T = rng.normal(0, 0.02, shape), rng.normal(0, 0.02, shape)
        e = [p - t for p, t in zip(P.ravel(), T.ravel())]
        a = [abs(x) for x in e]
        got = regression_metrics(P, T)
        exact = got.mae == max(a) and got.pct_gt_threshold == 100.0 * sum(x > 0.01 for x in a) / len(a)
        close = abs(got.ae - sum(a) / len(a)) <= 1e-15 and abs(got.loss - sum(x * x for x in e) / len(e)) <= 1e-15
        mismatches += not (exact and close)
    ok = hand_ok and mismatches == 0
    assert report(6, ok, f"hand example error {hand:.1e} (<= 1e-12); brute-force mismatches {mismatches}/1000")


# ---------------------------------------------------------------- 7

def test_c7_expert_competence(report):
    t0 = time.perf_counter()
    cfg = SimConfig(noise_std=0.0)
    tol = 0.01 * cfg.needle_radius
    good = worse = 0
    for seed in range(100):
        e = run_episode(replace(cfg, seed=seed)).final_exit_error
        f = run_episode(replace(cfg, seed=seed, expert_gain=0.0)).final_exit_error
        good += e < tol
        worse += f > e
    dt = time.perf_counter() - t0
    ok = good >= 95 and worse >= 95 and dt < 120
    assert report(7, ok, f"exit error < 1% radius in {good}/100; frozen arm worse in {worse}/100; "
                         f"{dt:.1f}s (< 120s)")


# ---------------------------------------------------------------- 8

def _run_pipeline(root, monkeypatch):
    monkeypatch.chdir(root)
    assert main(["simulate", "--demos", "10", "--seed", "8", "--out", "data"]) == 0
    assert main(["train", "--model", "kf_rmlp", "--data", "data", "--out", "model", "--epochs", "2",
                 "--seed", "4", "--split-seed", "1"]) == 0
    assert main(["eval", "--model", "model", "--data", "data", "--out", "eval"]) == 0
    files = {}
    for p in sorted(root.rglob("*")):
        if not p.is_file():
            continue
        rel = str(p.relative_to(root))
        if p.name == "manifests.jsonl":
            recs = [json.loads(l) for l in p.read_text().splitlines()]
            for r in recs:
                r.pop("timestamp")
                r.pop("duration_s")
            files[rel] = json.dumps(recs, sort_keys=True).encode()
        else:
            files[rel] = p.read_bytes()
    return files


def test_c8_pipeline_determinism(report, tmp_path, monkeypatch):
    runs = []
    for name in ("run1", "run2"):
        (tmp_path / name).mkdir()
        runs.append(_run_pipeline(tmp_path / name, monkeypatch))
    a, b = runs
    differ = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    ok = not differ and len(a) > 20
    assert report(8, ok, f"{len(a)} files compared, {len(differ)} differ" + (f": {differ}" if differ else ""))


# ---------------------------------------------------------------- 9

def test_c9_split_arithmetic(report):
    demos = list(range(60))
    sizes = {}
    for seed in range(20):
        fit_d, val_d, test_d = split(demos, seed)
        sizes[(len(test_d), len(val_d), len(fit_d))] = sizes.get((len(test_d), len(val_d), len(fit_d)), 0) + 1
        assert sorted(fit_d + val_d + test_d) == demos
    ok = list(sizes) == [(12, 14, 34)]
    assert report(9, ok, f"test/val/fit sizes over 20 split seeds: {sorted(sizes)}")

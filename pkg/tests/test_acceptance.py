"""Acceptance suite: one test per criterion, each ending in a PASS line.

The digit-scale protocol (criterion 7) runs on real digit IDX files when
present (see synthdata.find_real_mnist) and otherwise on a synthetic
image-blob pool written through the same IDX loader path.
"""

import time

import numpy as np

import graphoed as g
from graphoed import data_io
from graphoed.design import bayesian_design, eval_bayesian, eval_frequentist
from graphoed.estimator import DesignState, build_normal_matrix, estimate_labels
from graphoed.sparse_linalg import ProbeSet, SolverHandle, dense_oracle
from graphoed.active_loop import LoopRunner

import synthdata

#: per-iteration batches of the protocol runs, validated by criterion 8
PROTOCOL_BATCHES: list[dict] = []


def _report(criterion, detail):
    print(f"[acceptance] criterion {criterion}: PASS ({detail})")


def run_validated(dataset, config, oracle):
    """Drive a run while independently checking every batch's invariants.

    Labeled-twice and query-once hold for every policy; the neighbor
    exclusion is a property of design-based selection only (the random
    baselines sample without it, by definition).
    """
    runner = LoopRunner(dataset, config)
    queried: set[int] = set()
    initial = True
    while not runner.finished:
        batch = list(runner.pending)
        labeled_before = set(runner.state.labeled_indices.tolist())
        assert not set(batch) & labeled_before, "selected an already-labeled index"
        assert not set(batch) & queried, "oracle queried twice for one index"
        if config.policy == "a-optimal" and not initial:
            # initial seeding is random per class, not design-selected
            for i in batch:
                neighbors = {int(j) for j in runner.graph.neighbors[i]}
                assert not neighbors & (set(batch) - {i}), "selected adjacent pair"
        queried.update(batch)
        PROTOCOL_BATCHES.append({"batch": batch, "n": dataset.n, "policy": config.policy})
        runner.submit(oracle.answer_batch(batch))
        initial = False
    return runner


def test_criterion_1_dense_oracle_equivalence():
    rng = np.random.default_rng(100)
    start = time.monotonic()
    worst = 0.0
    for trial in range(20):
        n = int(rng.integers(30, 201))
        C = int(rng.integers(2, 5))
        ds = data_io.make_blobs_2d(n, C, seed=trial)
        graph = g.build_knn_graph(ds, min(6, n - 1))
        L = g.build_regularizer(g.build_laplacian(graph), 1e-2, 2)
        state = DesignState.empty(n, C)
        labeled = rng.choice(n, size=int(rng.integers(C, max(C + 1, n // 4))), replace=False)
        for i in labeled:
            state.record_label(int(i), int(ds.true_labels[i]))
        alpha = float(rng.uniform(0.5, 2.0))
        estimate = estimate_labels(L, state, alpha)
        H = np.diag(state.w) + alpha * L.toarray()
        for c in range(C):
            expect = np.linalg.solve(H, state.w * state.observed[:, c])
            num = np.linalg.norm(estimate.scores[:, c] - expect)
            den = max(np.linalg.norm(expect), 1e-30)
            worst = max(worst, num / den)
        assert worst <= 1e-8
    elapsed = time.monotonic() - start
    assert elapsed < 10.0
    _report(1, f"20 datasets, worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_hutchinson_correctness():
    import scipy.sparse as sp

    # exactness on the identity for arbitrary probe sets
    n = 64
    eye = SolverHandle(sp.eye_array(n, format="csr"))
    for seed in range(5):
        probes = ProbeSet.rademacher(n, int(np.random.default_rng(seed).integers(1, 50)), seed)
        assert g.estimate_trace_inverse(eye, probes) == n

    # fixed SPD, n=100, N=2000 seeded probes: within 5% of the dense trace
    rng = np.random.default_rng(7)
    A = sp.random_array((100, 100), density=0.1, rng=rng)
    A = sp.csr_array(A + A.T + sp.diags_array(np.full(100, 12.0)))
    exact = dense_oracle(A).trace
    handle = SolverHandle(A)
    est = g.estimate_trace_inverse(handle, ProbeSet.rademacher(100, 2000, seed=42))
    rel = abs(est - exact) / exact
    assert rel <= 0.05

    # unbiasedness: 50 probe seeds average within 3 standard errors
    estimates = [
        g.estimate_trace_inverse(handle, ProbeSet.rademacher(100, 50, seed=s))
        for s in range(50)
    ]
    mean = float(np.mean(estimates))
    se = float(np.std(estimates, ddof=1) / np.sqrt(len(estimates)))
    assert abs(mean - exact) <= 3 * se
    _report(2, f"N=2000 rel err {rel:.3%}; 50-seed mean off by {abs(mean-exact)/se:.2f} SE")


def test_criterion_3_bias_variance_decomposition():
    start = time.monotonic()
    ds = data_io.make_blobs_2d(50, 2, seed=13)
    graph = g.build_knn_graph(ds, 5)
    L = g.build_regularizer(g.build_laplacian(graph), 1e-2, 2)
    alpha, sigma = 1.0, 1e-2
    rng = np.random.default_rng(5)
    state = DesignState.empty(50, 1)
    for i in rng.choice(50, size=12, replace=False):
        state.record_label(int(i), 0)
    # single reference vector: the class-0 indicator, the scalar-form identity
    y = (ds.true_labels == 0).astype(np.float64)[:, None]

    predicted = g.expected_error(L, state, alpha, sigma, y)

    H = np.diag(state.w) + alpha * L.toarray()
    Hinv = np.linalg.inv(H)
    w = state.w
    draws = 10_000
    noise = sigma * rng.standard_normal((draws, 50)) * w  # noise only where sampled
    clean = Hinv @ (w * y[:, 0])
    noisy_part = noise @ Hinv.T  # per draw: Hinv @ (w*eps) since (w*eps)=noise row
    err = (y[:, 0] - clean)[None, :] - noisy_part
    sq = (err**2).sum(axis=1)
    se = sq.std(ddof=1) / np.sqrt(draws)
    gap = abs(sq.mean() - predicted.total)
    assert gap <= 3 * se, f"MC {sq.mean():.6f} vs predicted {predicted.total:.6f}"
    elapsed = time.monotonic() - start
    assert elapsed < 30.0
    _report(3, f"10k draws, off by {gap / se:.2f} SE, {elapsed:.1f}s")


def test_criterion_4_bayesian_trace_identity():
    rng = np.random.default_rng(17)
    worst = 0.0
    for trial in range(10):
        ds = data_io.make_blobs_2d(50, 2, seed=200 + trial)
        graph = g.build_knn_graph(ds, int(rng.integers(3, 8)))
        L = g.build_regularizer(
            g.build_laplacian(graph), float(rng.uniform(1e-3, 1e-1)), 2
        )
        w = rng.uniform(0, 1, 50)
        alpha = float(rng.uniform(0.5, 2.0))
        H = build_normal_matrix(L, w, alpha).toarray()
        Hinv = np.linalg.inv(H)
        H2 = Hinv @ Hinv
        lhs = alpha * np.trace(H2 @ L.toarray()) + np.trace(H2 @ np.diag(w))
        rhs = np.trace(Hinv)
        worst = max(worst, abs(lhs - rhs) / abs(rhs))
    assert worst <= 1e-10
    _report(4, f"10 (L, w) pairs, worst rel err {worst:.2e}")


def test_criterion_5_gradient_correctness():
    ds = data_io.make_blobs_2d(60, 3, seed=23)
    graph = g.build_knn_graph(ds, 5)
    L = g.build_regularizer(g.build_laplacian(graph), 1e-2, 2)
    n = 60
    rng = np.random.default_rng(3)
    w = rng.uniform(0.05, 0.95, n)
    y_est = rng.standard_normal((n, 3)) * 0.4
    obs = np.zeros((n, 3))
    probes = ProbeSet.rademacher(n, 10, seed=11)
    worst = 0.0

    def check(value_fn, gradient):
        nonlocal worst
        top = np.argsort(-np.abs(gradient))[:10]
        for i in top:
            h = 1e-5 * max(1.0, abs(w[i]))
            wp, wm = w.copy(), w.copy()
            wp[i] += h
            wm[i] -= h
            fd = (value_fn(wp) - value_fn(wm)) / (2 * h)
            rel = abs(fd - gradient[i]) / max(abs(fd), 1e-12)
            worst = max(worst, rel)
            assert rel <= 1e-4

    ev_f = eval_frequentist(L, DesignState(w=w, observed=obs), y_est, 1.0, 1e-2, 0.1,
                            probes=probes)
    check(
        lambda wv: eval_frequentist(L, DesignState(w=wv, observed=obs), y_est,
                                    1.0, 1e-2, 0.1, probes=probes).value,
        ev_f.gradient,
    )
    ev_b = eval_bayesian(L, w, 1.0, 0.05, probes=probes)
    check(lambda wv: eval_bayesian(L, np.clip(wv, 0, 1), 1.0, 0.05, probes=probes).value,
          ev_b.gradient)
    _report(5, f"both objectives, worst rel err {worst:.2e} on top-10 components")


def test_criterion_6_2d_experiment():
    start = time.monotonic()
    errors = {"a-optimal": [], "random": []}
    for seed in range(10):
        ds = data_io.make_blobs_2d(1000, 3, seed=seed)
        oracle = g.SimulatedOracle(ds.true_labels, 3, seed=seed)
        for policy in errors:
            config = g.LoopConfig(
                budget=300, batch_size=3, policy=policy, seed=seed, initial_per_class=1,
            )
            runner = run_validated(ds, config, oracle)
            errors[policy].append(1.0 - runner.records[-1].clustering_accuracy)
    mean_a = float(np.mean(errors["a-optimal"]))
    mean_r = float(np.mean(errors["random"]))
    elapsed = time.monotonic() - start
    assert mean_a <= mean_r, f"a-optimal error {mean_a:.4f} vs random {mean_r:.4f}"
    assert elapsed < 300.0
    _report(6, f"mean error a-optimal {mean_a:.4f} <= random {mean_r:.4f}, {elapsed:.0f}s")


def test_criterion_7_digit_scale(tmp_path):
    start = time.monotonic()
    real = synthdata.find_real_mnist()
    accs = {"a-optimal": [], "balanced-random": []}
    for seed in range(3):
        if real is not None:
            images_path, labels_path = real
        else:
            images_path, labels_path = synthdata.make_image_blob_idx(tmp_path, seed)
        ds = data_io.load_idx_mnist(images_path, labels_path, subset_n=5000, seed=seed)
        ds50, _ = data_io.pca_reduce(ds, 50)
        assert ds50.n == 5000 and ds50.m == 50
        oracle = g.SimulatedOracle(ds50.true_labels, ds50.class_count, seed=seed)
        for policy in accs:
            config = g.LoopConfig(
                budget=520, batch_size=5, policy=policy, seed=seed, initial_per_class=2,
            )
            runner = run_validated(ds50, config, oracle)
            accs[policy].append(runner.records[-1].clustering_accuracy)
    mean_a = float(np.mean(accs["a-optimal"]))
    mean_b = float(np.mean(accs["balanced-random"]))
    elapsed = time.monotonic() - start
    assert mean_a >= mean_b, f"a-optimal {mean_a:.4f} vs balanced {mean_b:.4f}"
    assert elapsed < 1200.0
    source = "real digits" if real else "synthetic image blobs"
    _report(7, f"{source}: a-optimal {mean_a:.4f} >= balanced {mean_b:.4f}, {elapsed:.0f}s")


def test_criterion_8_selection_invariants():
    # run_validated asserted, batch by batch, during criteria 6 and 7:
    # nothing labeled twice, nothing adjacent within a batch, one oracle
    # query per index per run
    assert len(PROTOCOL_BATCHES) > 100, "protocol runs did not execute"
    _report(8, f"{len(PROTOCOL_BATCHES)} batches validated during criteria 6 and 7")


def test_criterion_9_single_point_bayesian_optimality():
    pts = np.stack([np.arange(20, dtype=float), np.zeros(20)], axis=1)
    graph = g.build_knn_graph(pts, 1)
    L = g.build_regularizer(g.build_laplacian(graph), 1e-2, 2)
    w = bayesian_design(L, alpha=1.0, beta=0.0, budget=1)
    chosen = np.flatnonzero(w > 0)
    assert len(chosen) == 1
    traces = np.array([
        dense_oracle(build_normal_matrix(L, np.eye(20)[i], 1.0)).trace for i in range(20)
    ])
    # the 20-node path is mirror-symmetric, so indices 9 and 10 tie to
    # within floating-point noise; optimality is trace-level
    assert traces[chosen[0]] <= traces.min() * (1 + 1e-9)
    _report(9, f"picked {chosen[0]}, trace {traces[chosen[0]]:.6f} = brute-force min")

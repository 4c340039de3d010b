"""A-optimal design objectives, their gradients in w, and batch selection.

Two objectives over the label weights w, both built on H(w) = diag(w) + alpha*L:

* estimated-error (label-dependent): alpha^2 ||H^-1 L y||^2
  + sigma^2 trace(diag(w) H^-2 diag(w)) + beta ||w||_1, with y taken from the
  current estimate;
* posterior-trace (label-free): trace(H^-1) + beta ||w||_1 on the box
  0 <= w <= 1.

Everything differentiates through dH/dw_i = e_i e_i^T.  Each evaluation is a
deterministic function of w for a fixed probe seed, so gradients match finite
differences of the same evaluation and line searches are well-posed.  Small
problems (n <= DENSE_LIMIT) are evaluated exactly through a dense inverse when
no probes are supplied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DesignError
from .estimator import DesignState, build_normal_matrix
from .sparse_linalg import DENSE_LIMIT, ProbeSet, SolverHandle

#: default probe count for in-loop objective evaluations
DEFAULT_PROBES = 20


@dataclass(frozen=True)
class DesignObjectiveEval:
    """Objective value, gradient, and the (bias_sq, variance, l1) split."""

    value: float
    gradient: np.ndarray
    parts: tuple[float, float, float]
    probe_seed: int | None = None


@dataclass
class SelectionBatch:
    """Greedy non-adjacent picks ranked by |gradient|."""

    indices: list[int]
    scores: list[float]
    excluded: list[int]
    requested: int
    pool_exhausted: bool = False

    @property
    def truncated(self) -> bool:
        return len(self.indices) < self.requested


def _dense_inverse(H) -> np.ndarray:
    inv = np.linalg.inv(H.toarray())
    return 0.5 * (inv + inv.T)


def eval_frequentist(L, state: DesignState, y_est: np.ndarray, alpha: float,
                     sigma: float, beta: float, probes: ProbeSet | None = None,
                     solver: SolverHandle | None = None) -> DesignObjectiveEval:
    """Estimated bias^2 + variance + L1 cost at the current weights.

    With probes the variance piece is the Hutchinson form
    (sigma^2/N) sum_j ||H^-1 diag(w) v_j||^2; without probes it is evaluated
    exactly (dense, small n only).  Gradient components:

    * bias: -2 alpha^2 sum_c u_c * p_c with u_c = H^-1 L y_c, p_c = H^-1 u_c
    * variance (per probe): (sigma^2/N) * 2 q (v - z) with z = H^-1 diag(w) v,
      q = H^-1 z
    * L1: +beta (w >= 0 keeps the penalty smooth)
    """
    y_est = np.asarray(y_est, dtype=np.float64)
    if y_est.ndim == 1:
        y_est = y_est[:, None]
    w = state.w
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    n = state.n
    H = build_normal_matrix(L, w, alpha)
    handle = solver if solver is not None else SolverHandle(H)

    u = handle.solve(L @ y_est)              # (n, C)
    p = handle.solve(u)
    bias_sq = float(alpha**2 * (u**2).sum())
    grad_bias = -2.0 * alpha**2 * (u * p).sum(axis=1)

    if probes is not None:
        v = probes.vectors.T                 # (n, N)
        z = handle.solve(w[:, None] * v)
        q = handle.solve(z)
        variance = float(sigma**2 * (z**2).sum() / probes.count)
        grad_var = (sigma**2 / probes.count) * 2.0 * (q * (v - z)).sum(axis=1)
        probe_seed = probes.seed
    else:
        if n > DENSE_LIMIT:
            raise ValueError(f"probes required for n={n} > {DENSE_LIMIT}")
        inv = _dense_inverse(H)
        h2 = inv @ inv
        variance = float(sigma**2 * (w**2 @ np.diag(h2)))
        grad_var = sigma**2 * (2.0 * w * np.diag(h2) - 2.0 * ((inv * h2) @ (w**2)))
        probe_seed = None

    l1 = float(beta * w.sum())
    gradient = grad_bias + grad_var + beta
    value = bias_sq + variance + l1
    return DesignObjectiveEval(
        value=value,
        gradient=gradient,
        parts=(bias_sq, variance, l1),
        probe_seed=probe_seed,
    )


def eval_bayesian(L, w: np.ndarray, alpha: float, beta: float,
                  probes: ProbeSet | None = None,
                  solver: SolverHandle | None = None) -> DesignObjectiveEval:
    """Posterior-trace objective trace(H^-1) + beta ||w||_1 on 0 <= w <= 1.

    Gradient of the trace part is -diag(H^-2); with probes this becomes
    -(1/N) sum_j (H^-1 v_j)_i^2, the exact gradient of the probe estimate.
    """
    w = np.asarray(w, dtype=np.float64)
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("weights must lie in [0, 1]")
    n = len(w)
    H = build_normal_matrix(L, w, alpha)
    handle = solver if solver is not None else SolverHandle(H)

    if probes is not None:
        v = probes.vectors.T
        z = handle.solve(v)
        trace_est = float((v * z).sum() / probes.count)
        grad_trace = -(z**2).sum(axis=1) / probes.count
        probe_seed = probes.seed
    else:
        if n > DENSE_LIMIT:
            raise ValueError(f"probes required for n={n} > {DENSE_LIMIT}")
        inv = _dense_inverse(H)
        trace_est = float(np.trace(inv))
        grad_trace = -(inv**2).sum(axis=1)
        probe_seed = None

    l1 = float(beta * w.sum())
    return DesignObjectiveEval(
        value=trace_est + l1,
        gradient=grad_trace + beta,
        parts=(0.0, trace_est, l1),
        probe_seed=probe_seed,
    )


def top_k_indices(w: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest weights, ties broken toward the lower index."""
    order = np.lexsort((np.arange(len(w)), -w))
    return order[:k]


def minimize_trace_objective(L, alpha: float, beta: float,
                             max_pg_iterations: int = 200,
                             probes: ProbeSet | None = None,
                             trace_history: list | None = None) -> np.ndarray:
    """Projected gradient descent on the box [0, 1]^n with backtracking.

    beta must be positive: the trace term alone always rewards more weight,
    so without the L1 cost the box solution saturates at all-ones.  When
    ``trace_history`` is given, every accepted objective value is appended.
    """
    n = L.shape[0]
    if beta <= 0:
        raise DesignError("the continuous design needs beta > 0 to sparsify")

    def evaluate(w):
        return eval_bayesian(L, w, alpha, beta, probes=probes)

    w = np.zeros(n)
    ev = evaluate(w)
    if trace_history is not None:
        trace_history.append(ev.value)
    step = 1.0 / max(float(np.abs(ev.gradient).max()), 1e-12)
    stalls = 0
    for _ in range(max_pg_iterations):
        accepted = False
        s = step
        while s > 1e-16:
            w_new = np.clip(w - s * ev.gradient, 0.0, 1.0)
            delta = w_new - w
            if not np.any(delta):
                break
            ev_new = evaluate(w_new)
            # sufficient decrease for projected gradient steps
            if ev_new.value <= ev.value - 1e-4 / s * float(delta @ delta):
                accepted = True
                break
            s *= 0.5
        if not accepted:
            break
        if ev_new.value >= ev.value:
            stalls += 1
            if stalls >= 10:
                raise DesignError(
                    f"objective stalled at {ev.value:.6e} for 10 accepted steps"
                )
        else:
            stalls = 0
        move = float(np.abs(w_new - w).max())
        w, ev = w_new, ev_new
        if trace_history is not None:
            trace_history.append(ev.value)
        step = s * 1.5
        if move <= 1e-10:
            break
    return w


def _greedy_budget_design(L, alpha: float, beta: float, budget: int,
                          probes: ProbeSet | None) -> np.ndarray:
    """Forward selection of full-weight points against the trace objective.

    Adding point p at weight 1 changes trace(H^-1) by exactly
    -(H^-2)_pp / (1 + (H^-1)_pp) (rank-one update), so each sweep scores every
    candidate from the inverse diagonal pair; the dense path keeps the inverse
    updated in place, the large-n path estimates both diagonals from one probe
    batch per sweep.  Selection stops early once the best trace gain no longer
    pays for the L1 cost beta of another label.
    """
    n = L.shape[0]
    w = np.zeros(n)
    budget = min(int(budget), n)
    if n <= DENSE_LIMIT:
        inv = _dense_inverse(build_normal_matrix(L, w, alpha))
        for _ in range(budget):
            d1 = inv.diagonal()
            d2 = (inv**2).sum(axis=1)
            gain = d2 / (1.0 + d1)
            gain[w > 0] = -np.inf
            pick = int(gain.argmax())
            if not np.isfinite(gain[pick]) or gain[pick] <= beta:
                break
            w[pick] = 1.0
            u = inv[:, pick].copy()
            inv -= np.outer(u, u) / (1.0 + d1[pick])
    else:
        if probes is None:
            probes = ProbeSet.rademacher(n, DEFAULT_PROBES, 0)
        v = probes.vectors.T
        for _ in range(budget):
            handle = SolverHandle(build_normal_matrix(L, w, alpha))
            z = handle.solve(v)
            d1 = np.maximum((v * z).sum(axis=1) / probes.count, 1e-12)
            d2 = (z**2).sum(axis=1) / probes.count
            gain = d2 / (1.0 + d1)
            gain[w > 0] = -np.inf
            pick = int(gain.argmax())
            if not np.isfinite(gain[pick]) or gain[pick] <= beta:
                break
            w[pick] = 1.0
    return w


def bayesian_design(L, alpha: float = 1.0, beta: float = 0.0,
                    budget: int | None = None, max_pg_iterations: int = 200,
                    probes: ProbeSet | None = None, probe_seed: int = 0) -> np.ndarray:
    """Label-free A-optimal design: which points to label before seeing labels.

    Without a budget, the continuous box-constrained problem (beta-sparsified)
    is solved by projected gradient descent.  With a budget the returned
    design is discrete: greedy forward selection of ``budget`` full-weight
    points against the exact trace objective.  Thresholding the continuous
    solution to its top entries does not survive the relaxation gap — on a
    path graph the spread-out continuous optimum peaks at the variance-heavy
    endpoints while the best single full-weight label sits at the center — so
    discretization re-ranks candidates by their true trace reduction.
    """
    n = L.shape[0]
    if budget is None and beta <= 0:
        raise DesignError("need a budget or beta > 0 to sparsify the design")
    if budget is not None and budget < 1:
        raise DesignError(f"budget must be >= 1, got {budget}")
    if probes is None and n > DENSE_LIMIT:
        probes = ProbeSet.rademacher(n, DEFAULT_PROBES, probe_seed)
    if budget is not None:
        return _greedy_budget_design(L, alpha, beta, budget, probes)
    return minimize_trace_objective(L, alpha, beta, max_pg_iterations, probes=probes)


def select_batch(graph, state: DesignState, objective_eval: DesignObjectiveEval,
                 batch_size: int) -> SelectionBatch:
    """Greedily pick unlabeled points by |gradient|, suppressing graph
    neighbors of every pick for the rest of the batch.  Ties break toward the
    lower index."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    scores = np.abs(objective_eval.gradient)
    eligible = ~state.labeled_mask
    if not eligible.any():
        return SelectionBatch(
            indices=[], scores=[], excluded=[], requested=batch_size, pool_exhausted=True,
        )
    excluded: list[int] = []
    picked: list[int] = []
    picked_scores: list[float] = []
    for _ in range(batch_size):
        masked = np.where(eligible, scores, -np.inf)
        best = int(masked.argmax())
        if not eligible[best]:
            break
        picked.append(best)
        picked_scores.append(float(scores[best]))
        eligible[best] = False
        for nb in graph.neighbors[best]:
            nb = int(nb)
            if eligible[nb]:
                excluded.append(nb)
                eligible[nb] = False
    batch = SelectionBatch(
        indices=picked, scores=picked_scores, excluded=excluded, requested=batch_size,
    )
    validate_batch(graph, state, batch)
    return batch


def validate_batch(graph, state: DesignState, batch: SelectionBatch):
    """Assert the selection invariants: nothing labeled, nothing mutually adjacent."""
    chosen = set(batch.indices)
    if len(chosen) != len(batch.indices):
        raise DesignError(f"duplicate indices in batch: {batch.indices}")
    for i in batch.indices:
        if state.w[i] > 0:
            raise DesignError(f"selected already-labeled index {i}")
        for nb in graph.neighbors[i]:
            if int(nb) != i and int(nb) in chosen:
                raise DesignError(f"selected adjacent pair ({i}, {int(nb)})")


def write_design_scores_jsonl(path, gradient: np.ndarray, excluded) -> None:
    """One JSON object per sample: index, |gradient| score, exclusion flag."""
    excluded = set(int(i) for i in excluded)
    scores = np.abs(np.asarray(gradient))
    with open(path, "w") as fh:
        for i, s in enumerate(scores):
            fh.write(json.dumps({"index": i, "score": float(s), "excluded": i in excluded}) + "\n")

"""Regularized label estimation: scores, pseudo-labels, certainty, uncertainty.

For each class c the score column solves (diag(w) + alpha*L) s_c = diag(w) d_c
with one-hot targets d.  The same normal matrix H = diag(w) + alpha*L also
carries the error model: its inverse is the covariance of the estimated
labels, whose diagonal we export as per-sample uncertainty, and the expected
squared error splits into a bias term alpha^2 ||H^-1 L y||^2 plus a variance
term sigma^2 trace(diag(w) H^-2 diag(w)).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .sparse_linalg import DENSE_LIMIT, ProbeSet, SolverHandle, dense_oracle, estimate_diag_inverse

CERTAINTY_EPS = 1e-12


@dataclass
class DesignState:
    """Labeling weights and observations for one run.

    ``w[i] > 0`` exactly when sample i has been labeled; the adaptive loop
    keeps labeled weights at 1.  ``observed`` rows outside the labeled set are
    ignored by the estimator (their weight is zero).
    """

    w: np.ndarray          # (n,) nonnegative
    observed: np.ndarray   # (n, C)
    iteration: int = 0

    @classmethod
    def empty(cls, n: int, class_count: int) -> "DesignState":
        return cls(w=np.zeros(n), observed=np.zeros((n, class_count)), iteration=0)

    @property
    def n(self) -> int:
        return len(self.w)

    @property
    def class_count(self) -> int:
        return self.observed.shape[1]

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.w > 0

    @property
    def labeled_indices(self) -> np.ndarray:
        return np.flatnonzero(self.w > 0)

    @property
    def label_count(self) -> int:
        return int(np.count_nonzero(self.w))

    def record_label(self, index: int, row: np.ndarray | int):
        """Mark one sample labeled (weight 1) with its observed target row."""
        if np.isscalar(row) or np.ndim(row) == 0:
            onehot = np.zeros(self.class_count)
            onehot[int(row)] = 1.0
            row = onehot
        self.w[index] = 1.0
        self.observed[index] = row


@dataclass
class LabelEstimate:
    """Per-class scores plus the derived pseudo-labels and display quantities."""

    scores: np.ndarray                      # (n, C)
    pseudo_labels: np.ndarray               # (n,) argmax, ties to lowest class
    certainty: np.ndarray                   # (n,) in [1/C, 1]
    uncertainty_diag: np.ndarray | None = None  # (n,) diag of H^-1

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @property
    def class_count(self) -> int:
        return self.scores.shape[1]


def build_normal_matrix(L, w: np.ndarray, alpha: float) -> sp.csr_array:
    """H = diag(w) + alpha*L; SPD whenever alpha > 0 and L is SPD."""
    H = (sp.diags_array(w, format="csr") + alpha * L).tocsr()
    H.sort_indices()
    return H


def certainty_from_scores(scores: np.ndarray) -> np.ndarray:
    """Max share of the clamped score row; uniform 1/C when the row is ~zero."""
    C = scores.shape[1]
    clamped = np.clip(scores, 0.0, 1.0)
    row_sum = clamped.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = clamped.max(axis=1) / row_sum
    return np.where(row_sum < CERTAINTY_EPS, 1.0 / C, ratio)


def estimate_labels(L, state: DesignState, alpha: float,
                    solver: SolverHandle | None = None) -> LabelEstimate:
    """Solve the regularized least-squares system per class.

    A pre-factored solver for the matching H may be passed to share the
    factorization with design evaluation in the same iteration.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    n, C = state.observed.shape
    if state.label_count == 0:
        scores = np.zeros((n, C))
    else:
        handle = solver if solver is not None else SolverHandle(build_normal_matrix(L, state.w, alpha))
        rhs = state.w[:, None] * state.observed
        scores = handle.solve(rhs)
    pseudo = scores.argmax(axis=1)
    return LabelEstimate(
        scores=scores,
        pseudo_labels=pseudo.astype(np.int64),
        certainty=certainty_from_scores(scores),
    )


@dataclass(frozen=True)
class ExpectedError:
    bias_sq: float
    variance: float

    @property
    def total(self) -> float:
        return self.bias_sq + self.variance


def expected_error(L, state: DesignState, alpha: float, sigma: float,
                   y_ref: np.ndarray, probes: ProbeSet | None = None,
                   solver: SolverHandle | None = None) -> ExpectedError:
    """Bias/variance split of the expected squared label error.

    ``y_ref`` stands in for the unknown truth: ground truth in tests, the
    current estimate inside the adaptive loop.  Each reference column is an
    independently observed target, so the noise variance enters once per
    column; with a single column this is exactly the scalar decomposition.
    The variance trace is computed through a dense inverse up to
    n <= DENSE_LIMIT and stochastically (probes required) above that.
    """
    y_ref = np.asarray(y_ref, dtype=np.float64)
    if y_ref.ndim == 1:
        y_ref = y_ref[:, None]
    n = state.n
    H = build_normal_matrix(L, state.w, alpha)
    handle = solver if solver is not None else SolverHandle(H)

    u = handle.solve(L @ y_ref)
    bias_sq = float(alpha**2 * (u**2).sum())

    if n <= DENSE_LIMIT:
        inv = dense_oracle(H).inverse
        h2_diag = (inv**2).sum(axis=1)  # diag(H^-2) for symmetric H
        variance = float(sigma**2 * (state.w**2 @ h2_diag))
    else:
        if probes is None:
            raise ValueError(f"probes required for stochastic variance at n={n}")
        z = handle.solve(state.w[:, None] * probes.vectors.T)
        variance = float(sigma**2 * (z**2).sum() / probes.count)
    variance *= y_ref.shape[1]
    return ExpectedError(bias_sq=bias_sq, variance=variance)


def attach_uncertainty(estimate: LabelEstimate, handle: SolverHandle,
                       probes: ProbeSet | None = None) -> LabelEstimate:
    """Return a copy of the estimate carrying diag(H^-1); exact when small."""
    if handle.n <= DENSE_LIMIT:
        diag = dense_oracle(handle.matrix).diag
    else:
        if probes is None:
            raise ValueError(f"probes required for stochastic diagonal at n={handle.n}")
        diag = estimate_diag_inverse(handle, probes)
    return replace(estimate, uncertainty_diag=diag)

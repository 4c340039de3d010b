"""SPD sparse solvers plus stochastic trace/diagonal estimators for inverses.

A factored :class:`SolverHandle` is immutable: repeated solves reuse the
factorization (direct path) or the cached preconditioner (PCG path).  Trace
and diagonal estimation follow the Hutchinson scheme with Rademacher probes:
trace(A^-1) ~ (1/N) sum_j v_j . (A^-1 v_j).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError

#: above this dimension the auto strategy switches from the direct
#: factorization to Jacobi-preconditioned CG
DIRECT_LIMIT = 20_000

#: largest dimension the dense oracle will accept
DENSE_LIMIT = 500

DIAG_FLOOR = 1e-12


@dataclass(frozen=True)
class ProbeSet:
    """Seeded Rademacher (+-1) probe vectors; bit-identical regeneration."""

    count: int
    seed: int
    vectors: np.ndarray  # (count, n)

    @classmethod
    def rademacher(cls, n: int, count: int, seed: int) -> "ProbeSet":
        rng = np.random.default_rng(seed)
        vectors = rng.integers(0, 2, size=(count, n)).astype(np.float64) * 2.0 - 1.0
        return cls(count=count, seed=seed, vectors=vectors)

    def __post_init__(self):
        if not np.all(np.abs(self.vectors) == 1.0):
            raise ValueError("probe entries must be exactly +-1")


class SolverHandle:
    """Reusable solver for one SPD sparse matrix.

    Strategies: ``direct-cholesky`` factors once via SuperLU in symmetric
    mode and reuses the factorization across solves; ``pcg-jacobi`` runs
    conjugate gradients with a diagonal preconditioner to a relative-residual
    tolerance.  ``auto`` picks direct up to ``DIRECT_LIMIT`` rows.
    """

    def __init__(self, matrix, strategy: str = "auto", tolerance: float = 1e-10,
                 max_iterations: int | None = None):
        self.matrix = sp.csr_array(matrix)
        self.n = self.matrix.shape[0]
        if not 0.0 < tolerance < 1.0:
            raise ValueError(f"tolerance must lie in (0, 1), got {tolerance}")
        self.tolerance = tolerance
        self.max_iterations = max_iterations if max_iterations is not None else 10 * self.n
        if strategy == "auto":
            strategy = "direct-cholesky" if self.n <= DIRECT_LIMIT else "pcg-jacobi"
        if strategy not in ("direct-cholesky", "pcg-jacobi"):
            raise ValueError(f"unknown strategy {strategy!r}")
        self.strategy = strategy
        if strategy == "direct-cholesky":
            try:
                self._factor = spla.splu(
                    self.matrix.tocsc(),
                    permc_spec="MMD_AT_PLUS_A",
                    options={"SymmetricMode": True},
                )
            except RuntimeError as exc:
                raise SolverError(f"factorization failed: {exc}") from exc
            self._precond = None
        else:
            diag = self.matrix.diagonal()
            if np.any(diag <= 0):
                raise SolverError("matrix diagonal not positive; not SPD")
            inv_diag = 1.0 / diag
            self._precond = spla.LinearOperator(
                (self.n, self.n), matvec=lambda x: inv_diag * x
            )
            self._factor = None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve A z = rhs for one vector or a matrix of stacked columns."""
        rhs = np.asarray(rhs, dtype=np.float64)
        single = rhs.ndim == 1
        cols = rhs[:, None] if single else rhs
        if cols.shape[0] != self.n:
            raise ValueError(f"rhs has {cols.shape[0]} rows, expected {self.n}")
        if self._factor is not None:
            out = self._factor.solve(cols)
        else:
            out = np.empty_like(cols)
            for j in range(cols.shape[1]):
                out[:, j] = self._pcg(cols[:, j])
        return out[:, 0] if single else out

    def _pcg(self, b: np.ndarray) -> np.ndarray:
        x, info = spla.cg(
            self.matrix,
            b,
            rtol=self.tolerance,
            atol=0.0,
            maxiter=self.max_iterations,
            M=self._precond,
        )
        if info > 0:
            residual = float(np.linalg.norm(self.matrix @ x - b))
            raise SolverError(
                f"PCG did not converge within {self.max_iterations} iterations",
                residual=residual,
            )
        if info < 0:
            raise SolverError(f"PCG failed with status {info}")
        return x


def estimate_trace_inverse(handle: SolverHandle, probes: ProbeSet) -> float:
    """Hutchinson estimate of trace(A^-1); deterministic given (handle, probes)."""
    v = probes.vectors.T  # (n, N)
    z = handle.solve(v)
    return float((v * z).sum() / probes.count)


def estimate_diag_inverse(handle: SolverHandle, probes: ProbeSet) -> np.ndarray:
    """Normalized Hutchinson estimate of diag(A^-1).

    The true diagonal of an SPD inverse is positive, so non-positive
    estimates are clamped to a small floor (with a warning).
    """
    v = probes.vectors.T
    z = handle.solve(v)
    numer = (v * z).sum(axis=1)
    denom = (v * v).sum(axis=1)
    est = numer / denom
    bad = int((est <= 0).sum())
    if bad:
        warnings.warn(
            f"{bad} non-positive diagonal estimates clamped to {DIAG_FLOOR}",
            stacklevel=2,
        )
    return np.maximum(est, DIAG_FLOOR)


class UpdatableSolver:
    """Solver for H0 + sum_{i in S} e_i e_i^T, growing S without refactoring.

    The adaptive loop only ever raises weights from 0 to 1, so each iteration
    is a diagonal rank-k update of the initially factored matrix.  Solves go
    through the Woodbury identity: with Z = H0^-1 U and the capacitance
    C = I + Z[S, :],

        x = y - Z C^-1 y[S],   y = H0^-1 b.

    Adding a batch costs one multi-column solve against the base
    factorization plus a dense refactor of the (k x k) capacitance.
    """

    def __init__(self, base: SolverHandle):
        self.base = base
        self.n = base.n
        self.indices: list[int] = []
        self._z = np.empty((self.n, 0))
        self._cap_lu = None

    def add_indices(self, indices):
        fresh = [int(i) for i in indices if int(i) not in set(self.indices)]
        if not fresh:
            return
        cols = np.zeros((self.n, len(fresh)))
        cols[fresh, np.arange(len(fresh))] = 1.0
        self._z = np.hstack([self._z, self.base.solve(cols)])
        self.indices.extend(fresh)
        cap = np.eye(len(self.indices)) + self._z[self.indices, :]
        cap = 0.5 * (cap + cap.T)
        self._cap_lu = scipy.linalg.cho_factor(cap)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        y = self.base.solve(rhs)
        if not self.indices:
            return y
        single = y.ndim == 1
        ycols = y[:, None] if single else y
        correction = self._z @ scipy.linalg.cho_solve(self._cap_lu, ycols[self.indices, :])
        out = ycols - correction
        return out[:, 0] if single else out


@dataclass(frozen=True)
class DenseInverse:
    """Machine-precision inverse/trace/diagonal, for tests and small exact paths."""

    inverse: np.ndarray
    trace: float
    diag: np.ndarray


def dense_oracle(matrix) -> DenseInverse:
    if sp.issparse(matrix):
        n = matrix.shape[0]
        if n > DENSE_LIMIT:
            raise ValueError(f"dense oracle refuses n={n} > {DENSE_LIMIT}")
        dense = matrix.toarray()
    else:
        dense = np.asarray(matrix, dtype=np.float64)
        if dense.shape[0] > DENSE_LIMIT:
            raise ValueError(f"dense oracle refuses n={dense.shape[0]} > {DENSE_LIMIT}")
    inv = np.linalg.inv(dense)
    inv = 0.5 * (inv + inv.T)
    return DenseInverse(inverse=inv, trace=float(np.trace(inv)), diag=inv.diagonal().copy())

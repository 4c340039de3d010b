"""Adaptive labeling loop: estimate, evaluate the design, query, re-estimate.

One :class:`LoopRunner` owns a run: it builds the graph and regularizer once,
keeps the labeling state, and advances one batch at a time.  ``run_loop``
drives it against a simulated oracle; the HTTP service drives the same runner
interactively, parking between batches while a human answers.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data_io import Dataset, RunRecord, format_pseudo_label_csv
from .design import (
    DEFAULT_PROBES,
    SelectionBatch,
    bayesian_design,
    eval_frequentist,
    select_batch,
)
from .errors import ConfigError, DataError
from .estimator import (
    DesignState,
    LabelEstimate,
    attach_uncertainty,
    build_normal_matrix,
    estimate_labels,
)
from .graph import build_knn_graph, build_laplacian, build_regularizer
from .sparse_linalg import DENSE_LIMIT, ProbeSet, SolverHandle, UpdatableSolver

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

POLICIES = ("a-optimal", "random", "balanced-random", "bayesian-one-shot")


@dataclass(frozen=True)
class Hyperparams:
    """Model and design knobs; defaults are the standard experiment values."""

    tau: float = 1e-2
    eta: int = 2
    alpha: float = 1.0
    sigma: float = 1e-2
    beta: float = 0.0
    k_neighbors: int = 10
    probe_count: int = DEFAULT_PROBES

    def validate(self):
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.eta < 1:
            raise ConfigError(f"eta must be a positive integer, got {self.eta}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be nonnegative, got {self.sigma}")
        if self.k_neighbors < 1:
            raise ConfigError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if self.probe_count < 1:
            raise ConfigError(f"probe_count must be >= 1, got {self.probe_count}")


@dataclass(frozen=True)
class LoopConfig:
    """Everything a run needs besides the dataset itself."""

    budget: int
    batch_size: int = 1
    policy: str = "a-optimal"
    seed: int = 0
    initial_per_class: int = 1
    initial_indices: tuple[int, ...] | None = None
    certainty_stop: float | None = None
    hyperparams: Hyperparams = field(default_factory=Hyperparams)

    def validate(self):
        self.hyperparams.validate()
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.budget < 1:
            raise ConfigError(f"budget must be >= 1, got {self.budget}")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}, expected one of {POLICIES}")
        if self.initial_indices is None and self.initial_per_class < 1:
            raise ConfigError("need initial_per_class >= 1 or explicit initial_indices")


_HYPER_KEYS = ("tau", "eta", "alpha", "sigma", "beta", "k_neighbors", "probe_count")
_CONFIG_KEYS = (
    "budget", "batch_size", "policy", "seed", "initial_per_class",
    "initial_indices", "certainty_stop",
)


def load_loop_config(path) -> LoopConfig:
    """Read a flat TOML key/value file mirroring the config fields."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"no such config file: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw, source=str(path))


def config_from_dict(raw: dict, source: str = "config") -> LoopConfig:
    raw = {k: v for k, v in raw.items() if v is not None}
    unknown = set(raw) - set(_HYPER_KEYS) - set(_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"{source}: unknown keys {sorted(unknown)}")
    if "budget" not in raw:
        raise ConfigError(f"{source}: budget is required")
    hyper = {k: raw[k] for k in _HYPER_KEYS if k in raw}
    main = {k: raw[k] for k in _CONFIG_KEYS if k in raw}
    if "initial_indices" in main:
        main["initial_indices"] = tuple(int(i) for i in main["initial_indices"])
    try:
        config = LoopConfig(hyperparams=Hyperparams(**hyper), **main)
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    config.validate()
    return config


def config_to_dict(config: LoopConfig) -> dict:
    hp = config.hyperparams
    return {
        "budget": config.budget,
        "batch_size": config.batch_size,
        "policy": config.policy,
        "seed": config.seed,
        "initial_per_class": config.initial_per_class,
        "initial_indices": list(config.initial_indices) if config.initial_indices else None,
        "certainty_stop": config.certainty_stop,
        "tau": hp.tau,
        "eta": hp.eta,
        "alpha": hp.alpha,
        "sigma": hp.sigma,
        "beta": hp.beta,
        "k_neighbors": hp.k_neighbors,
        "probe_count": hp.probe_count,
    }


class SimulatedOracle:
    """Answers from ground truth, optionally perturbed by Gaussian noise on
    the one-hot target row.  Answers are deterministic per (seed, index)."""

    kind = "simulated"

    def __init__(self, true_labels: np.ndarray, class_count: int,
                 noise_sigma: float = 0.0, seed: int = 0):
        self.true_labels = np.asarray(true_labels, dtype=np.int64)
        self.class_count = class_count
        self.noise_sigma = noise_sigma
        self.seed = seed

    def answer(self, index: int) -> int:
        return int(self.true_labels[index])

    def observed_row(self, index: int) -> np.ndarray:
        row = np.zeros(self.class_count)
        row[self.true_labels[index]] = 1.0
        if self.noise_sigma > 0:
            rng = np.random.default_rng([self.seed, int(index)])
            row = row + self.noise_sigma * rng.standard_normal(self.class_count)
        return row

    def answer_batch(self, indices) -> dict[int, np.ndarray]:
        return {int(i): self.observed_row(int(i)) for i in indices}


class InteractiveOracle:
    """Query queue answered externally (by a human through the HTTP service)."""

    kind = "interactive"

    def __init__(self):
        self.pending: list[int] = []
        self.inbox: dict[int, int] = {}

    def ask(self, indices):
        self.pending = [int(i) for i in indices]
        self.inbox = {}

    def submit(self, index: int, label: int):
        if index not in self.pending:
            raise DataError(f"index {index} is not pending")
        if index in self.inbox:
            raise DataError(f"index {index} already answered")
        self.inbox[index] = label

    @property
    def complete(self) -> bool:
        return len(self.inbox) == len(self.pending) and bool(self.pending)


def initialize(dataset: Dataset, config: LoopConfig,
               rng: np.random.Generator | None = None) -> list[int]:
    """Choose the initial query indices.

    Explicit indices win outright (with a warning when they do not cover all
    classes).  Otherwise, with ground truth available, ``initial_per_class``
    samples are drawn per class; without ground truth the same total is drawn
    uniformly, since class-stratified seeding needs labels.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if config.initial_indices is not None:
        indices = [int(i) for i in config.initial_indices]
        if len(set(indices)) != len(indices):
            raise ConfigError(f"initial_indices contain duplicates: {indices}")
        for i in indices:
            if not 0 <= i < dataset.n:
                raise ConfigError(f"initial index {i} outside pool of size {dataset.n}")
        if dataset.true_labels is not None:
            covered = set(dataset.true_labels[indices].tolist())
            if len(covered) < dataset.class_count:
                import warnings

                warnings.warn(
                    f"explicit initial labels cover {len(covered)} of "
                    f"{dataset.class_count} classes",
                    stacklevel=2,
                )
        return indices
    per_class = config.initial_per_class
    if dataset.true_labels is not None:
        picks = []
        for c in range(dataset.class_count):
            pool = np.flatnonzero(dataset.true_labels == c)
            if len(pool) < per_class:
                raise DataError(
                    f"class {c} has {len(pool)} samples, need {per_class} initial labels"
                )
            picks.append(rng.choice(pool, size=per_class, replace=False))
        return sorted(int(i) for i in np.concatenate(picks))
    total = per_class * dataset.class_count
    return sorted(int(i) for i in rng.choice(dataset.n, size=total, replace=False))


def baseline_select(policy: str, state: DesignState, dataset: Dataset,
                    batch_size: int, rng: np.random.Generator) -> SelectionBatch:
    """Label-agnostic controls: uniform random, or class-balanced random.

    The balanced policy peeks at ground truth by design; it is an evaluation
    control, not a usable strategy on unlabeled pools.
    """
    unlabeled = np.flatnonzero(~state.labeled_mask)
    requested = batch_size
    if len(unlabeled) == 0:
        return SelectionBatch([], [], [], requested, pool_exhausted=True)
    if policy == "random":
        take = min(batch_size, len(unlabeled))
        picks = rng.choice(unlabeled, size=take, replace=False)
        return SelectionBatch([int(i) for i in picks], [0.0] * take, [], requested)
    if policy == "balanced-random":
        if dataset.true_labels is None:
            raise DataError("balanced-random needs ground-truth labels")
        labels = dataset.true_labels
        counts = np.zeros(dataset.class_count, dtype=np.int64)
        labeled_idx = state.labeled_indices
        if len(labeled_idx):
            counts += np.bincount(labels[labeled_idx], minlength=dataset.class_count)
        available = {
            c: list(np.flatnonzero((labels == c) & ~state.labeled_mask))
            for c in range(dataset.class_count)
        }
        picks = []
        for _ in range(batch_size):
            open_classes = [c for c in range(dataset.class_count) if available[c]]
            if not open_classes:
                break
            c = min(open_classes, key=lambda c: (counts[c], c))
            chosen = available[c].pop(int(rng.integers(len(available[c]))))
            picks.append(int(chosen))
            counts[c] += 1
        return SelectionBatch(picks, [0.0] * len(picks), [], requested)
    raise ConfigError(f"not a baseline policy: {policy!r}")


def clustering_accuracy(estimate: LabelEstimate, dataset: Dataset) -> float:
    """Fraction of pool points whose pseudo-label matches the ground truth."""
    if dataset.true_labels is None:
        raise DataError("clustering accuracy needs ground-truth labels")
    return float((estimate.pseudo_labels == dataset.true_labels).mean())


class LoopRunner:
    """Stepwise driver for one adaptive run.

    Life cycle: construction computes the graph and regularizer and proposes
    the initial queries via :attr:`pending`; each :meth:`submit` call answers
    the whole pending batch, re-estimates, records the iteration, and proposes
    the next batch until the budget is spent or the pool is exhausted.
    """

    def __init__(self, dataset: Dataset, config: LoopConfig, quiet: bool = True):
        config.validate()
        self.dataset = dataset
        self.config = config
        self.hp = config.hyperparams
        self.quiet = quiet
        self.graph = build_knn_graph(dataset, self.hp.k_neighbors)
        laplacian = build_laplacian(self.graph)
        self.L = build_regularizer(laplacian, self.hp.tau, self.hp.eta)
        self.state = DesignState.empty(dataset.n, dataset.class_count)
        self.estimate = estimate_labels(self.L, self.state, self.hp.alpha)
        self.records: list[RunRecord] = []
        self.queried: set[int] = set()
        self.finished = False
        self.last_eval = None
        self.last_batch: SelectionBatch | None = None
        self._one_shot_queue: list[int] = []
        self._initial_done = False
        self._solver: UpdatableSolver | None = None
        self.pending: list[int] = initialize(dataset, config)
        if config.budget < len(self.pending):
            raise ConfigError(
                f"budget {config.budget} is below the initial label count {len(self.pending)}"
            )
        self._mark_queried(self.pending)

    # -- bookkeeping ---------------------------------------------------

    def _mark_queried(self, indices):
        for i in indices:
            if i in self.queried:
                raise DataError(f"index {i} queried twice in one run")
            self.queried.add(i)

    def _iteration_rng(self, salt: int = 0) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, self.state.iteration, salt])

    def _probe_seed(self) -> int:
        # rotate the probe seed between iterations, fixed within one
        return self.config.seed * 100_003 + self.state.iteration

    def _current_solver(self, new_indices):
        """Solver for H at the current weights.

        Small pools refactor from scratch; larger pools factor the initial H
        once and fold each batch in as a diagonal low-rank update, which keeps
        per-iteration cost at a handful of extra solves.
        """
        if self.dataset.n <= DENSE_LIMIT:
            return SolverHandle(build_normal_matrix(self.L, self.state.w, self.hp.alpha))
        if self._solver is None:
            base = SolverHandle(build_normal_matrix(self.L, self.state.w, self.hp.alpha))
            self._solver = UpdatableSolver(base)
        else:
            self._solver.add_indices(new_indices)
        return self._solver

    # -- the loop ------------------------------------------------------

    def submit(self, answers: dict[int, int | np.ndarray]) -> RunRecord:
        """Answer the whole pending batch and advance one iteration."""
        if self.finished:
            raise ConfigError("run already finished")
        if set(answers) != set(self.pending):
            raise DataError(
                f"answers must cover exactly the pending batch {sorted(self.pending)}"
            )
        start = time.monotonic()
        for index, answer in answers.items():
            if np.isscalar(answer) or np.ndim(answer) == 0:
                if not 0 <= int(answer) < self.dataset.class_count:
                    raise DataError(f"class {answer} outside [0, {self.dataset.class_count})")
            self.state.record_label(int(index), answer)
        batch_indices = list(self.pending)
        self.pending = []
        # the initial batch is iteration 0; each later batch advances the counter
        if self._initial_done:
            self.state.iteration += 1
        else:
            self._initial_done = True

        handle = self._current_solver(batch_indices)
        self.estimate = estimate_labels(self.L, self.state, self.hp.alpha, solver=handle)
        self._maybe_finish()
        if not self.finished:
            self._propose_next(handle)
            if not self.pending:
                self.finished = True
        record = RunRecord(
            iteration=self.state.iteration,
            labeled_count=self.state.label_count,
            clustering_accuracy=(
                clustering_accuracy(self.estimate, self.dataset)
                if self.dataset.true_labels is not None
                else None
            ),
            selected_indices=batch_indices,
            wall_time_ms=int((time.monotonic() - start) * 1000),
        )
        self.records.append(record)
        if not self.quiet:
            acc = record.clustering_accuracy
            acc_txt = "n/a" if acc is None else f"{acc:.4f}"
            print(
                f"iteration={record.iteration} labeled={record.labeled_count} "
                f"accuracy={acc_txt}",
                flush=True,
            )
        return record

    def _maybe_finish(self):
        if self.state.label_count >= self.config.budget:
            self.finished = True
        elif not (~self.state.labeled_mask).any():
            self.finished = True
        elif (
            self.config.certainty_stop is not None
            and float(self.estimate.certainty.min()) >= self.config.certainty_stop
        ):
            self.finished = True

    def _propose_next(self, handle: SolverHandle):
        remaining = self.config.budget - self.state.label_count
        request = min(self.config.batch_size, remaining)
        policy = self.config.policy
        if policy == "a-optimal":
            probes = None
            if self.dataset.n > DENSE_LIMIT:
                probes = ProbeSet.rademacher(self.dataset.n, self.hp.probe_count, self._probe_seed())
            ev = eval_frequentist(
                self.L,
                self.state,
                self.estimate.scores,
                self.hp.alpha,
                self.hp.sigma,
                self.hp.beta,
                probes=probes,
                solver=handle,
            )
            self.last_eval = ev
            batch = select_batch(self.graph, self.state, ev, request)
        elif policy in ("random", "balanced-random"):
            batch = baseline_select(policy, self.state, self.dataset, request, self._iteration_rng())
        elif policy == "bayesian-one-shot":
            batch = self._one_shot_batch(remaining)
        else:
            raise ConfigError(f"unknown policy {policy!r}")
        self.last_batch = batch
        self.pending = list(batch.indices)
        self._mark_queried(self.pending)

    def _one_shot_batch(self, remaining: int) -> SelectionBatch:
        """Label-free design computed once, then consumed in a single batch."""
        if not self._one_shot_queue:
            probes = None
            if self.dataset.n > DENSE_LIMIT:
                probes = ProbeSet.rademacher(
                    self.dataset.n, self.hp.probe_count, self._probe_seed()
                )
            w = bayesian_design(
                self.L,
                alpha=self.hp.alpha,
                beta=self.hp.beta,
                budget=remaining,
                probes=probes,
            )
            queue = [int(i) for i in np.flatnonzero(w > 0) if self.state.w[i] == 0]
            if not queue:
                return SelectionBatch([], [], [], remaining, pool_exhausted=True)
            self._one_shot_queue = queue
        take = self._one_shot_queue[:remaining]
        self._one_shot_queue = self._one_shot_queue[len(take):]
        return SelectionBatch(take, [0.0] * len(take), [], remaining)

    def finalize(self, probe_count: int | None = None) -> LabelEstimate:
        """Attach the uncertainty diagonal to the current estimate."""
        probes = None
        if self.dataset.n > DENSE_LIMIT:
            handle = self._solver if self._solver is not None else self._current_solver([])
            count = probe_count if probe_count is not None else max(self.hp.probe_count, 200)
            probes = ProbeSet.rademacher(self.dataset.n, count, self._probe_seed())
        else:
            handle = SolverHandle(build_normal_matrix(self.L, self.state.w, self.hp.alpha))
        self.estimate = attach_uncertainty(self.estimate, handle, probes)
        return self.estimate


def run_loop(dataset: Dataset, config: LoopConfig,
             oracle: SimulatedOracle, quiet: bool = True):
    """Drive a full run against a simulated oracle.

    Returns (final estimate with uncertainty, design state, record list).
    """
    if len(oracle.true_labels) != dataset.n:
        raise DataError("oracle size does not match dataset")
    runner = LoopRunner(dataset, config, quiet=quiet)
    while not runner.finished:
        runner.submit(oracle.answer_batch(runner.pending))
    estimate = runner.finalize()
    return estimate, runner.state, runner.records


# --- run-state persistence --------------------------------------------------


@dataclass
class RunState:
    """Everything the export and the resumable service need from a run."""

    state: DesignState
    estimate: LabelEstimate
    class_count: int
    ids: np.ndarray
    label_values: np.ndarray
    display_xy: np.ndarray | None = None
    pending: tuple[int, ...] = ()
    config_dict: dict | None = None

    def export_csv(self) -> str:
        return format_pseudo_label_csv(
            ids=self.ids,
            pseudo_labels=self.estimate.pseudo_labels,
            certainty=self.estimate.certainty,
            uncertainty=self.estimate.uncertainty_diag,
            labeled_mask=self.state.labeled_mask,
            label_values=self.label_values,
        )


def save_run_state(path, run_state: RunState):
    meta = {
        "class_count": run_state.class_count,
        "iteration": run_state.state.iteration,
        "pending": [int(i) for i in run_state.pending],
        "config": run_state.config_dict,
        "has_uncertainty": run_state.estimate.uncertainty_diag is not None,
        "has_display": run_state.display_xy is not None,
    }
    arrays = {
        "w": run_state.state.w,
        "observed": run_state.state.observed,
        "scores": run_state.estimate.scores,
        "pseudo_labels": run_state.estimate.pseudo_labels,
        "certainty": run_state.estimate.certainty,
        "ids": run_state.ids,
        "label_values": run_state.label_values,
        "meta_json": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
    }
    if run_state.estimate.uncertainty_diag is not None:
        arrays["uncertainty_diag"] = run_state.estimate.uncertainty_diag
    if run_state.display_xy is not None:
        arrays["display_xy"] = run_state.display_xy
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_run_state(path) -> RunState:
    try:
        with np.load(path) as npz:
            data = {k: npz[k] for k in npz.files}
    except (FileNotFoundError, OSError, ValueError) as exc:
        raise DataError(f"cannot read run state {path}: {exc}") from exc
    try:
        meta = json.loads(bytes(data["meta_json"]).decode())
        state = DesignState(
            w=data["w"], observed=data["observed"], iteration=int(meta["iteration"])
        )
        estimate = LabelEstimate(
            scores=data["scores"],
            pseudo_labels=data["pseudo_labels"],
            certainty=data["certainty"],
            uncertainty_diag=data.get("uncertainty_diag"),
        )
        return RunState(
            state=state,
            estimate=estimate,
            class_count=int(meta["class_count"]),
            ids=data["ids"],
            label_values=data["label_values"],
            display_xy=data.get("display_xy"),
            pending=tuple(meta.get("pending", ())),
            config_dict=meta.get("config"),
        )
    except KeyError as exc:
        raise DataError(f"run state {path} is missing field {exc}") from exc

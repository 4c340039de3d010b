"""Pool-dataset loading, synthetic generation, and run-artifact serialization.

Datasets are plain in-memory arrays: a feature matrix, optional ground-truth
labels (remapped to a dense 0..C-1 range), and optional 2D display
coordinates for the labeling UI.  Loaders are deterministic given
(path, seed).
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """A pool of samples to be pseudo-labeled.

    Attributes
    ----------
    features : (n, m) float array
    class_count : number of classes C (>= 2)
    true_labels : optional (n,) int array with dense values in [0, C)
    display_xy : optional (n, 2) array of plotting coordinates
    ids : stable sample indices 0..n-1
    label_values : original label value for each dense class index, kept so
        exports can round-trip non-contiguous label sets such as {3, 7, 9}
    """

    features: np.ndarray
    class_count: int
    true_labels: np.ndarray | None = None
    display_xy: np.ndarray | None = None
    ids: np.ndarray = field(default=None)  # type: ignore[assignment]
    label_values: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DataError("features must be a 2D (n, m) array")
        if self.true_labels is not None:
            self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        if self.display_xy is not None:
            self.display_xy = np.asarray(self.display_xy, dtype=np.float64)
        if self.ids is None:
            self.ids = np.arange(self.n, dtype=np.int64)
        if self.label_values is None:
            self.label_values = np.arange(self.class_count, dtype=np.int64)
        else:
            self.label_values = np.asarray(self.label_values, dtype=np.int64)
        self.validate()

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def m(self) -> int:
        return self.features.shape[1]

    def validate(self):
        if self.class_count < 2:
            raise DataError(f"need at least 2 classes, got {self.class_count}")
        if self.n < self.class_count:
            raise DataError(
                f"need n >= class_count, got n={self.n}, C={self.class_count}"
            )
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain NaN or Inf")
        if self.true_labels is not None:
            if self.true_labels.shape != (self.n,):
                raise DataError("true_labels length does not match features")
            if self.true_labels.min() < 0 or self.true_labels.max() >= self.class_count:
                raise DataError("true_labels outside [0, class_count)")
            present = np.unique(self.true_labels)
            if len(present) != self.class_count:
                missing = sorted(set(range(self.class_count)) - set(present.tolist()))
                raise DataError(f"classes {missing} have no samples")
        if self.display_xy is not None and self.display_xy.shape != (self.n, 2):
            raise DataError("display_xy must have shape (n, 2)")


def _remap_labels(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map arbitrary integer labels onto a dense 0..C-1 range.

    Returns (dense_labels, original_values) where original_values[c] is the
    raw label that class c stands for.
    """
    values, dense = np.unique(raw, return_inverse=True)
    return dense.astype(np.int64), values.astype(np.int64)


def load_csv(path, has_labels: bool = False, class_count: int | None = None) -> Dataset:
    """Load a comma-separated pool file.

    An optional header row is detected by a non-numeric first row.  When
    ``has_labels`` is set the last column is taken as an integer label and
    remapped to a dense range.  For unlabeled files ``class_count`` must be
    supplied by the caller (the pool itself cannot reveal it).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    rows: list[list[str]] = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if row:
                rows.append(row)
    if rows and not _is_numeric_row(rows[0]):
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")

    width = len(rows[0])
    parsed = np.empty((len(rows), width), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {i + 1} has {len(row)} columns, expected {width}")
        try:
            parsed[i] = [float(v) for v in row]
        except ValueError as exc:
            raise DataError(f"{path}: row {i + 1}: {exc}") from exc

    if has_labels:
        if width < 2:
            raise DataError(f"{path}: need at least one feature column plus labels")
        raw_labels = parsed[:, -1]
        if not np.all(raw_labels == np.round(raw_labels)):
            raise DataError(f"{path}: label column is not integer-valued")
        dense, values = _remap_labels(raw_labels.astype(np.int64))
        if len(values) < 2:
            raise DataError(f"{path}: labels contain a single class")
        features = parsed[:, :-1]
        ds = Dataset(
            features=features,
            class_count=len(values),
            true_labels=dense,
            label_values=values,
            display_xy=features if features.shape[1] == 2 else None,
        )
        return ds
    features = parsed
    return Dataset(
        features=features,
        class_count=class_count if class_count is not None else 2,
        display_xy=features if features.shape[1] == 2 else None,
    )


def _is_numeric_row(row: list[str]) -> bool:
    try:
        for v in row:
            float(v)
    except ValueError:
        return False
    return True


def _read_idx(path, expected_magic: int) -> tuple[np.ndarray, tuple[int, ...]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    blob = path.read_bytes()
    if len(blob) < 4:
        raise DataError(f"{path}: truncated header")
    magic = struct.unpack(">I", blob[:4])[0]
    if magic != expected_magic:
        raise DataError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise DataError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", blob[4:header_len])
    count = int(np.prod(dims))
    body = blob[header_len:]
    if len(body) != count:
        raise DataError(f"{path}: expected {count} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8), dims


def write_idx_images(path, images: np.ndarray):
    """Write a (n, rows, cols) uint8 array in the big-endian IDX image format."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def stratified_subsample(labels: np.ndarray, subset_n: int, seed: int) -> np.ndarray:
    """Pick ``subset_n`` indices with per-class counts balanced within one.

    Classes are filled in increasing label order; any remainder after the
    even split goes to the lowest class indices.  Deterministic given seed.
    """
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    base, extra = divmod(subset_n, len(classes))
    take = []
    for rank, c in enumerate(classes):
        pool = np.flatnonzero(labels == c)
        want = base + (1 if rank < extra else 0)
        if want > len(pool):
            raise DataError(f"class {c} has only {len(pool)} samples, need {want}")
        take.append(rng.choice(pool, size=want, replace=False))
    idx = np.concatenate(take)
    idx.sort()
    return idx


def load_idx_mnist(images_path, labels_path, subset_n: int | None = None, seed: int = 0) -> Dataset:
    """Load an IDX image/label pair, flattening pixels to [0, 1] features.

    With ``subset_n`` a seeded class-stratified subsample of that size is
    returned instead of the full pool.
    """
    pixels, dims = _read_idx(images_path, IDX_IMAGES_MAGIC)
    if len(dims) != 3:
        raise DataError(f"{images_path}: expected 3 dimensions, got {len(dims)}")
    n, rows, cols = dims
    raw_labels, label_dims = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if label_dims[0] != n:
        raise DataError(
            f"count mismatch: {n} images vs {label_dims[0]} labels"
        )
    features = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    dense, values = _remap_labels(raw_labels.astype(np.int64))
    if subset_n is not None:
        idx = stratified_subsample(dense, subset_n, seed)
        features = features[idx]
        dense = dense[idx]
    return Dataset(
        features=features,
        class_count=len(values),
        true_labels=dense,
        label_values=values,
    )


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Factor A with A @ A.T = cov; accepts semidefinite covariances."""
    cov = np.asarray(cov, dtype=np.float64)
    if cov.shape != (2, 2) or not np.allclose(cov, cov.T, atol=1e-12):
        raise DataError("covariances must be symmetric 2x2 matrices")
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < -1e-12:
        raise DataError(f"covariance has negative eigenvalue {vals.min():.3e}")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def make_blobs_2d(n: int, C: int, means=None, covariances=None, seed: int = 0) -> Dataset:
    """Gaussian-mixture pool in 2D with n split as evenly as possible over C classes.

    Default geometry: class means on a radius-2 circle with anisotropic
    covariances rotated per class, overlapping enough that the labeling
    strategy matters.
    """
    if n < C:
        raise DataError(f"need n >= C, got n={n}, C={C}")
    angles = 2.0 * np.pi * np.arange(C) / C
    if means is None:
        means = 2.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    means = np.asarray(means, dtype=np.float64)
    if covariances is None:
        covariances = []
        for t in angles + np.pi / 4:
            rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
            covariances.append(rot @ np.diag([1.5, 0.6]) @ rot.T)
    if len(means) != C or len(covariances) != C:
        raise DataError("need one mean and one covariance per class")

    rng = np.random.default_rng(seed)
    base, extra = divmod(n, C)
    feats, labels = [], []
    for c in range(C):
        count = base + (1 if c < extra else 0)
        factor = _psd_factor(covariances[c])
        z = rng.standard_normal((count, 2))
        feats.append(means[c] + z @ factor.T)
        labels.append(np.full(count, c, dtype=np.int64))
    features = np.concatenate(feats)
    return Dataset(
        features=features,
        class_count=C,
        true_labels=np.concatenate(labels),
        display_xy=features,
    )


def pca_reduce(dataset: Dataset, target_dim: int) -> tuple[Dataset, np.ndarray]:
    """Project features onto the top principal components of the centered data.

    Returns the reduced dataset together with the explained-variance ratio of
    each retained component.  Component signs are fixed so the largest-magnitude
    loading is positive, making the projection deterministic.
    """
    n, m = dataset.features.shape
    if target_dim > min(n, m):
        raise DataError(f"target_dim {target_dim} exceeds min(n, m) = {min(n, m)}")
    centered = dataset.features - dataset.features.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    flip = np.sign(vt[np.arange(len(vt)), np.abs(vt).argmax(axis=1)])
    flip[flip == 0] = 1.0
    vt = vt * flip[:, None]
    projected = centered @ vt[:target_dim].T
    total = float((s**2).sum())
    ratios = (s[:target_dim] ** 2) / total if total > 0 else np.zeros(target_dim)

    display = dataset.display_xy
    if display is None and target_dim >= 2:
        display = projected[:, :2].copy()
    reduced = Dataset(
        features=projected,
        class_count=dataset.class_count,
        true_labels=None if dataset.true_labels is None else dataset.true_labels.copy(),
        display_xy=display,
        ids=dataset.ids.copy(),
        label_values=dataset.label_values.copy(),
    )
    return reduced, ratios


# --- run artifacts ---------------------------------------------------------


@dataclass
class RunRecord:
    """One adaptive-loop iteration, serialized as a JSONL line."""

    iteration: int
    labeled_count: int
    clustering_accuracy: float | None
    selected_indices: list[int]
    wall_time_ms: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "iteration": self.iteration,
                "labeled_count": self.labeled_count,
                "clustering_accuracy": self.clustering_accuracy,
                "selected_indices": [int(i) for i in self.selected_indices],
                "wall_time_ms": self.wall_time_ms,
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        obj = json.loads(line)
        return cls(
            iteration=obj["iteration"],
            labeled_count=obj["labeled_count"],
            clustering_accuracy=obj["clustering_accuracy"],
            selected_indices=list(obj["selected_indices"]),
            wall_time_ms=obj["wall_time_ms"],
        )


def write_run_records(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_run_records(path) -> list[RunRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                records.append(RunRecord.from_json(line))
    prev = -1
    for rec in records:
        if rec.labeled_count < prev:
            raise DataError("labeled_count decreases across records")
        prev = rec.labeled_count
    return records


def format_pseudo_label_csv(
    ids: np.ndarray,
    pseudo_labels: np.ndarray,
    certainty: np.ndarray,
    uncertainty: np.ndarray | None,
    labeled_mask: np.ndarray,
    label_values: np.ndarray | None = None,
) -> str:
    """Render the pseudo-label export table; labels are written as their
    original (pre-remap) values when a mapping is given."""
    out = io.StringIO()
    out.write("id,pseudo_label,certainty,uncertainty,is_oracle_labeled\n")
    shown = pseudo_labels if label_values is None else np.asarray(label_values)[pseudo_labels]
    for i in range(len(ids)):
        unc = "" if uncertainty is None else format(float(uncertainty[i]), ".12g")
        out.write(
            f"{int(ids[i])},{int(shown[i])},{format(float(certainty[i]), '.12g')},"
            f"{unc},{int(bool(labeled_mask[i]))}\n"
        )
    return out.getvalue()


def write_pseudo_label_csv(path, **kwargs):
    Path(path).write_text(format_pseudo_label_csv(**kwargs))

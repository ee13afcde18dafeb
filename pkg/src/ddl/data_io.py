"""Dataset loading (IDX, delimited text), synthetic planted data and splits."""

from __future__ import annotations

import csv
import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .classifiers import ClassifierBank, one_hot_labels

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    """Base class for malformed input data."""


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


class RaggedRowsError(DataError):
    pass


class NonNumericError(DataError):
    pass


class NonFiniteError(DataError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Samples as columns of a ``(d, N)`` array with integer class labels."""

    samples: np.ndarray
    labels: np.ndarray
    class_count: int
    provenance: str = ""

    def __post_init__(self):
        Y = np.asarray(self.samples, dtype=float)
        y = np.asarray(self.labels).reshape(-1)
        if Y.ndim != 2 or Y.shape[1] < 1:
            raise DataError("a dataset needs a (d, N) sample array with N >= 1")
        if y.shape != (Y.shape[1],):
            raise DataError(f"{y.size} labels for {Y.shape[1]} samples")
        if not np.all(np.isfinite(Y)):
            raise NonFiniteError("samples contain NaN or Inf")
        if not np.all(y == np.round(y)):
            raise DataError("labels must be integers")
        y = y.astype(np.int64)
        if y.min() < 0 or y.max() >= self.class_count:
            raise DataError(f"labels must lie in [0, {self.class_count})")
        object.__setattr__(self, "samples", Y)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "class_count", int(self.class_count))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def n_features(self) -> int:
        return self.samples.shape[0]

    def label_matrix(self) -> np.ndarray:
        """The ``(C, N)`` +-1 label matrix."""
        return one_hot_labels(self.labels, self.class_count)

    def subset(self, idx, provenance=None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.samples[:, idx], self.labels[idx], self.class_count,
                       self.provenance if provenance is None else provenance)

    def centered(self) -> "Dataset":
        return Dataset(self.samples - self.samples.mean(axis=1, keepdims=True), self.labels,
                       self.class_count, self.provenance + "+centered")


def _open(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"{what}: expected {n} bytes, got {len(buf)}")
    return buf


def read_idx_images(path) -> np.ndarray:
    """Raw ``(n, rows, cols)`` uint8 array from an IDX image file."""
    with _open(path) as fh:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, f"{path} header"))
        if magic != IDX_IMAGES_MAGIC:
            raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
        data = _read_exact(fh, n * rows * cols, f"{path} pixels")
    return np.frombuffer(data, dtype=np.uint8).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with _open(path) as fh:
        magic, n = struct.unpack(">II", _read_exact(fh, 8, f"{path} header"))
        if magic != IDX_LABELS_MAGIC:
            raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
        data = _read_exact(fh, n, f"{path} labels")
    return np.frombuffer(data, dtype=np.uint8).copy()


def load_idx(images_path, labels_path, n_classes: int | None = None) -> Dataset:
    """MNIST-style IDX pair.  Pixels are scaled to [0, 1] and flattened row-major."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if images.shape[0] == 0:
        raise DataError("IDX files hold no samples")
    Y = images.reshape(images.shape[0], -1).T.astype(float) / 255.0
    C = int(labels.max()) + 1 if n_classes is None else n_classes
    return Dataset(Y, labels.astype(np.int64), C, f"idx:{os.path.basename(images_path)}")


def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_delimited(path, delimiter: str = ",", label_column: int = 0,
                   n_classes: int | None = None) -> Dataset:
    """Numeric table with one sample per row and an integer label column.

    A first row containing non-numeric cells is taken as a header and skipped.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter) if r]
    if rows and not all(_is_number(c) for c in rows[0]):
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0])
    for n, r in enumerate(rows):
        if len(r) != width:
            raise RaggedRowsError(f"{path}: row {n} has {len(r)} cells, expected {width}")
    try:
        table = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise NonNumericError(f"{path}: {exc}") from None
    if not np.all(np.isfinite(table)):
        raise NonFiniteError(f"{path}: table contains NaN or Inf")
    if not -width <= label_column < width:
        raise DataError(f"label column {label_column} out of range for {width} columns")
    labels = table[:, label_column]
    feats = np.delete(table, label_column % width, axis=1)
    if not np.all(labels == np.round(labels)) or labels.min() < 0:
        raise DataError(f"{path}: labels must be non-negative integers")
    labels = labels.astype(np.int64)
    C = int(labels.max()) + 1 if n_classes is None else n_classes
    return Dataset(feats.T, labels, C, f"csv:{os.path.basename(path)}")


def save_delimited(dataset: Dataset, path, delimiter: str = ",") -> None:
    """Write label first, then features, 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        for i in range(dataset.n_samples):
            w.writerow([str(int(dataset.labels[i]))]
                       + [format(v, ".17g") for v in dataset.samples[:, i]])


def write_idx(images, labels, images_path, labels_path) -> None:
    """Write uint8 ``(n, rows, cols)`` images and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())


@dataclass(frozen=True)
class SyntheticSpec:
    d: int = 30
    K_true: int = 40
    C: int = 3
    N: int = 600
    T_true: int = 3
    noise_std: float = 0.05
    label_noise_rate: float = 0.0
    seed: int = 0
    margin: float = 0.2

    def __post_init__(self):
        for name in ("d", "K_true", "C", "N", "T_true"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.T_true > self.K_true:
            raise ValueError("T_true cannot exceed K_true")
        if self.C < 2:
            raise ValueError("need at least two classes")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not 0 <= self.label_noise_rate < 1:
            raise ValueError("label_noise_rate must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class SyntheticTruth:
    dictionary: np.ndarray
    codes: np.ndarray  # (K_true, N)
    classifiers: ClassifierBank
    clean_labels: np.ndarray
    flipped: np.ndarray  # bool mask of samples whose label was corrupted


MAX_REJECTIONS = 100_000


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, SyntheticTruth]:
    """Planted-model data: ``y = D x + noise`` with labels from linear classifiers.

    Codes have ``T_true`` nonzeros of magnitude U[0.5, 1.5] with random sign.
    The label is the top-scoring planted classifier; a code is redrawn until
    the top score beats the runner-up by ``spec.margin``.  Then a
    ``label_noise_rate`` fraction of labels (Bernoulli per sample) is moved to
    a different, uniformly chosen class.
    """
    rng = np.random.default_rng(spec.seed)
    D = rng.standard_normal((spec.d, spec.K_true))
    D /= np.linalg.norm(D, axis=0)
    W = rng.standard_normal((spec.K_true, spec.C))
    bias = np.zeros(spec.C)
    X = np.zeros((spec.K_true, spec.N))
    labels = np.empty(spec.N, dtype=np.int64)
    tries = 0
    for i in range(spec.N):
        while True:
            tries += 1
            if tries > MAX_REJECTIONS:
                raise RuntimeError("could not reach the label margin; lower spec.margin")
            idx = rng.choice(spec.K_true, spec.T_true, replace=False)
            x = np.zeros(spec.K_true)
            x[idx] = rng.uniform(0.5, 1.5, spec.T_true) * rng.choice([-1.0, 1.0], spec.T_true)
            s = W.T @ x + bias
            top2 = np.sort(s)[-2:]
            if top2[1] - top2[0] >= spec.margin:
                break
        X[:, i] = x
        labels[i] = int(np.argmax(s))
    Y = D @ X
    if spec.noise_std > 0:
        Y = Y + spec.noise_std * rng.standard_normal(Y.shape)
    clean = labels.copy()
    flipped = rng.random(spec.N) < spec.label_noise_rate
    shift = rng.integers(1, spec.C, size=spec.N)
    labels = np.where(flipped, (clean + shift) % spec.C, clean)
    data = Dataset(Y, labels, spec.C, f"synthetic:seed={spec.seed}")
    truth = SyntheticTruth(D, X, ClassifierBank(W, bias, "square"), clean, flipped)
    return data, truth


def _half_up(v):
    return int(np.floor(v + 0.5))


def _stratified_quota(counts, test_fraction):
    """Per-class test sizes: ``round(f * N)`` in total, each within 1 of ``f * n_c``.

    Largest-remainder allocation; ties go to the lower class index.  Every
    class keeps at least one sample on each side.
    """
    target = test_fraction * counts
    quota = np.floor(target).astype(int)
    extra = _half_up(test_fraction * counts.sum()) - quota.sum()
    order = np.argsort(-(target - quota), kind="stable")
    quota[order[:max(extra, 0)]] += 1
    return np.clip(quota, 1, counts - 1)


def split(dataset: Dataset, test_fraction: float, seed: int = 0, stratified: bool = True):
    """Disjoint train/test split; returns ``(train, test)``.

    The test side gets ``round(test_fraction * N)`` samples.  Stratified
    splits share them out over classes by largest remainder, so each class
    ``c`` sends ``test_fraction * n_c`` samples, rounded up or down.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    N = dataset.n_samples
    if stratified:
        members = [np.flatnonzero(dataset.labels == c) for c in range(dataset.class_count)]
        present = [m for m in members if m.size]
        for c, m in enumerate(members):
            if m.size == 1:
                raise ValueError(f"class {c} has fewer than 2 samples; cannot stratify")
        quota = _stratified_quota(np.array([m.size for m in present]), test_fraction)
        test = [rng.permutation(m)[:q] for m, q in zip(present, quota)]
        test_idx = np.sort(np.concatenate(test))
    else:
        n_test = int(np.clip(_half_up(test_fraction * N), 1, N - 1))
        test_idx = np.sort(rng.permutation(N)[:n_test])
    train_mask = np.ones(N, dtype=bool)
    train_mask[test_idx] = False
    train_idx = np.flatnonzero(train_mask)
    return (dataset.subset(train_idx, dataset.provenance + ":train"),
            dataset.subset(test_idx, dataset.provenance + ":test"))

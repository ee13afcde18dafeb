"""Label prediction and evaluation for trained models.

Two rules are offered.  ``fast`` codes the test sample once by plain sparse
coding and scores every class hypothesis ``j`` by the classification cost it
implies, ``-sum_j' Omega(l(j)_j' (w_j'^T x + b_j')) / gamma_j'`` with
``l(j)`` the +-1 label vector of class ``j``.  ``full`` solves one DSC
problem per hypothesis and scores by the joint cost
``-(||y - D x||^2 / (2 sigma^2) + sum_j' Omega(.) / gamma_j')`` with a
test-time noise level ``sigma`` (1 unless set).  Robust variants code over
``[D | I]`` so a few gross pixel errors can be absorbed by identity atoms;
those coefficients never reach the classifiers.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dsc import DscProblem, dsc_solve
from .sparse_coding import SparseCode, _encode_csc
from .trainer import DdlModel

FAST = "fast"
FULL = "full"
DEFAULT_MAX_BYTES = 1 << 30
METRICS_SCHEMA_VERSION = 1


class MemoryBudgetError(MemoryError):
    """The identity-augmented dictionary would not fit the memory budget."""


@dataclass(frozen=True)
class PredictOptions:
    """Test-time settings.

    ``T_test`` defaults to the model's training budget.  ``e_budget`` extra
    selections are allowed when ``robust`` so that identity atoms do not eat
    into the budget for dictionary atoms.  ``max_bytes`` bounds the Gram
    matrix of the augmented dictionary.  ``sigma`` is the noise level assumed
    for a test sample by the ``full`` rule; the ``fast`` rule ignores it.
    """

    mode: str = FAST
    robust: bool = False
    T_test: int | None = None
    e_budget: int = 0
    max_bytes: int = DEFAULT_MAX_BYTES
    sigma: float = 1.0

    def __post_init__(self):
        mode = {"fasttsc": FAST, "fulldsc": FULL}.get(str(self.mode).lower(), str(self.mode).lower())
        if mode not in (FAST, FULL):
            raise ValueError(f"mode must be 'fast' or 'full', got {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if self.T_test is not None and self.T_test < 1:
            raise ValueError("T_test must be >= 1")
        if self.e_budget < 0:
            raise ValueError("e_budget must be >= 0")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")

    def budget(self, model: DdlModel) -> int:
        T = model.config.T if self.T_test is None else self.T_test
        return T + (self.e_budget if self.robust else 0)


@dataclass
class _Coder:
    """Effective dictionary, its Gram matrix and zero-padded classifier rows."""

    D: np.ndarray
    gram: np.ndarray
    K: int  # number of real atoms; later columns are identity atoms
    T: int


def _coder(model: DdlModel, opts: PredictOptions) -> _Coder:
    D = model.dictionary
    d, K = D.shape
    T = opts.budget(model)
    gram_DD = D.T @ D
    if not opts.robust:
        return _Coder(D, gram_DD, K, min(T, K))
    n = K + d
    need = 8 * (n * n + d * n)
    if need > opts.max_bytes:
        raise MemoryBudgetError(
            f"robust coding needs about {need / 2**20:.0f} MiB for d={d}, K={K}; "
            f"budget is {opts.max_bytes / 2**20:.0f} MiB")
    D_aug = np.hstack([D, np.eye(d)])
    gram = np.empty((n, n))
    gram[:K, :K] = gram_DD
    gram[:K, K:] = D.T
    gram[K:, :K] = D
    gram[K:, K:] = np.eye(d)
    return _Coder(D_aug, gram, K, min(T, n))


def _check_signals(model, Y):
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.ndim != 2 or Y.shape[0] != model.n_features:
        raise ValueError(f"samples have dimension {Y.shape[0]}, model expects {model.n_features}")
    if not np.all(np.isfinite(Y)):
        raise ValueError("samples contain non-finite values")
    return Y


def class_scores(model: DdlModel, x: SparseCode) -> np.ndarray:
    """Fast-rule score of every class hypothesis for the code ``x`` of the real atoms."""
    return _scores(model, model.classifiers.weights[x.indices].T @ x.values
                   + model.classifiers.biases)


def _scores(model, s):
    """``s`` are raw decision values, shape ``(C,)`` or ``(C, N)``."""
    loss = model.loss
    g = model.gamma.reshape((-1,) + (1,) * (np.ndim(s) - 1))
    pos = loss.value(s) / g  # cost of classifier j' when it should fire
    neg = loss.value(-s) / g  # cost when it should not
    # hypothesis j flips classifier j from "negative" to "positive"
    return -(np.sum(neg, axis=0) - neg + pos)


def _split_code(code: SparseCode, K: int) -> tuple[SparseCode, SparseCode]:
    real = code.indices < K
    return (SparseCode(code.indices[real], code.values[real], K),
            SparseCode(code.indices[~real] - K, code.values[~real], code.ambient_dim - K))


def _full_one(model, coder, y, x0, sigma):
    C = model.n_classes
    W = model.classifiers.weights
    b = model.classifiers.biases
    n = coder.D.shape[1]
    Wp = np.zeros((n, C))
    Wp[:coder.K] = W
    best = None
    scores = np.empty(C)
    for j in range(C):
        lab = -np.ones(C)
        lab[j] = 1.0
        prob = DscProblem(coder.D, y, Wp * lab, b * lab, model.gamma, model.loss, coder.T,
                          sigma, gram=coder.gram)
        x = dsc_solve(prob, x0, model.config.p_max, model.config.stop_rel_change)
        r = y - coder.D[:, x.indices] @ x.values
        cls = float(np.sum(model.loss.value(prob.margins(x)) / model.gamma))
        scores[j] = -(0.5 * float(r @ r) / sigma**2 + cls)
        if best is None or scores[j] > scores[best[0]]:
            best = (j, x)
    return best[1], scores


def predict_batch(model: DdlModel, Y, opts: PredictOptions | None = None, *, n_jobs: int = 1):
    """Predict every column of ``Y``.

    Returns
    -------
    classes : (N,) int array
    scores : (C, N) array
    codes : list of SparseCode over the effective dictionary (``K + d``
        atoms when robust, the last ``d`` being identity atoms)
    """
    opts = opts or PredictOptions()
    Y = _check_signals(model, Y)
    coder = _coder(model, opts)
    indptr, indices, values = _encode_csc(coder.D, Y, coder.T, None, coder.gram, n_jobs, None)
    n = coder.D.shape[1]
    codes = [SparseCode(indices[indptr[i]:indptr[i + 1]], values[indptr[i]:indptr[i + 1]], n)
             for i in range(Y.shape[1])]
    if opts.mode == FAST:
        X = np.zeros((coder.K, Y.shape[1]))
        for i, c in enumerate(codes):
            real = c.indices < coder.K
            X[c.indices[real], i] = c.values[real]
        scores = _scores(model, model.classifiers.scores(X))
    else:
        def run(i):
            return _full_one(model, coder, Y[:, i], codes[i], opts.sigma)

        if n_jobs > 1 and Y.shape[1] > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                out = list(pool.map(run, range(Y.shape[1])))
        else:
            out = [run(i) for i in range(Y.shape[1])]
        codes = [c for c, _ in out]
        scores = np.column_stack([s for _, s in out])
    return np.argmax(scores, axis=0), scores, codes


def predict(model: DdlModel, y, opts: PredictOptions | None = None):
    """Class of a single sample.

    Returns
    -------
    label : int
        Highest-scoring class, the lowest index among ties.
    scores : (C,) array
    code : SparseCode
        Code over the model's ``K`` atoms; identity coefficients of robust
        coding are dropped.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError("predict takes one sample; use predict_batch for several")
    classes, scores, codes = predict_batch(model, y[:, None], opts)
    return int(classes[0]), scores[:, 0], _split_code(codes[0], model.n_atoms)[0]


@dataclass
class Metrics:
    error_rate: float
    per_class_error: np.ndarray  # NaN for classes absent from the test set
    confusion: np.ndarray  # rows: true class, columns: predicted class
    mean_residual: float
    predictions: np.ndarray
    runtime_ms: float = 0.0
    extra: dict = field(default_factory=dict)

    def csv_header(self) -> list[str]:
        C = self.confusion.shape[0]
        return (["dataset", "mode", "robust", "K", "T", "loss", "error_rate"]
                + [f"per_class_error_{j}" for j in range(C)] + ["runtime_ms"])

    def csv_row(self, dataset: str, opts: PredictOptions, model: DdlModel) -> list:
        T = model.config.T if opts.T_test is None else opts.T_test
        return ([dataset, opts.mode, int(opts.robust), model.n_atoms, T, model.loss.name,
                 repr(float(self.error_rate))]
                + [repr(float(e)) for e in self.per_class_error]
                + [f"{self.runtime_ms:.3f}"])

    def to_csv(self, dataset: str, opts: PredictOptions, model: DdlModel) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_header())
        w.writerow(self.csv_row(dataset, opts, model))
        return buf.getvalue()


def _class_indices(labels, C, N):
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape != (C, N):
            raise ValueError(f"label matrix shape {labels.shape}, expected {(C, N)}")
        return np.argmax(labels == 1, axis=0)
    labels = labels.reshape(-1).astype(int)
    if labels.shape != (N,):
        raise ValueError(f"{labels.size} labels for {N} samples")
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError("label out of range")
    return labels


def confusion_metrics(true, pred, C) -> tuple[float, np.ndarray, np.ndarray]:
    """Error rate, per-class error rates and the confusion matrix."""
    true = np.asarray(true, dtype=int)
    pred = np.asarray(pred, dtype=int)
    conf = np.zeros((C, C), dtype=np.int64)
    np.add.at(conf, (true, pred), 1)
    totals = conf.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(totals > 0, 1.0 - np.diag(conf) / totals, np.nan)
    return float(np.mean(true != pred)), per_class, conf


def evaluate(model: DdlModel, Y_test, labels, opts: PredictOptions | None = None, *,
             n_jobs: int = 1) -> Metrics:
    """Test-set error, per-class errors, confusion matrix and mean residual norm.

    ``labels`` is either a class-index vector or a ``(C, N)`` +-1 matrix.
    """
    opts = opts or PredictOptions()
    Y = _check_signals(model, Y_test)
    N = Y.shape[1]
    if N == 0:
        raise ValueError("empty test set")
    true = _class_indices(labels, model.n_classes, N)
    t0 = time.perf_counter()
    pred, _, codes = predict_batch(model, Y, opts, n_jobs=n_jobs)
    runtime = 1e3 * (time.perf_counter() - t0)
    D = model.dictionary
    if opts.robust:
        D = np.hstack([D, np.eye(D.shape[0])])
    res = [float(np.linalg.norm(Y[:, i] - D[:, c.indices] @ c.values)) for i, c in enumerate(codes)]
    err, per_class, conf = confusion_metrics(true, pred, model.n_classes)
    return Metrics(err, per_class, conf, float(np.mean(res)), pred, runtime)

"""One-vs-all linear classifiers on sparse codes.

Each class gets an independent linear classifier ``(w_j, b_j)`` that
minimises ``sum_i Omega(l_i (w^T x_i + b)) + ridge * ||w||^2``.  Additive
boosting of linear weak learners lands in the same linear family, so the
loss is minimised directly with damped Newton steps (IRLS).
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .losses import EXPONENTIAL, LOGISTIC, LossKind, as_loss
from .sparse_coding import SparseCode

MAX_ITER = 200
MAX_HALVINGS = 30
# norm of w beyond which an unregularised fit is treated as diverging
DIVERGENCE_NORM = 1e8


class ConvergenceError(RuntimeError):
    """The classifier objective has no finite minimiser."""


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class ClassifierBank:
    """Column ``j`` of ``weights`` and entry ``j`` of ``biases`` classify class ``j``."""

    weights: np.ndarray  # (K, C)
    biases: np.ndarray  # (C,)
    loss: LossKind

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=float)
        b = np.asarray(self.biases, dtype=float).reshape(-1)
        if W.ndim != 2 or W.shape[1] < 1 or b.shape != (W.shape[1],):
            raise ValueError(f"inconsistent classifier shapes {W.shape} and {b.shape}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("classifier parameters must be finite")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "loss", as_loss(self.loss))

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.weights.shape[0]

    def scores(self, X) -> np.ndarray:
        """Decision values ``W^T X + b`` for a dense ``(K, N)`` code matrix."""
        return self.weights.T @ np.asarray(X, dtype=float) + self.biases[:, None]


def check_labels(L, strict: bool = False) -> np.ndarray:
    """Validate a ``(C, N)`` matrix over {-1, +1}.

    With ``strict`` every column must hold exactly one +1.
    """
    L = np.asarray(L)
    if L.ndim != 2:
        raise ValueError("label matrix must be 2-D (classes x samples)")
    if not np.all((L == 1) | (L == -1)):
        raise ValueError("label matrix entries must be -1 or +1")
    if strict and not np.all((L == 1).sum(axis=0) == 1):
        raise ValueError("each column must contain exactly one +1")
    return L.astype(float)


def one_hot_labels(labels, n_classes: int) -> np.ndarray:
    """Class indices to a ``(C, N)`` +-1 label matrix."""
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError("label out of range")
    L = -np.ones((n_classes, labels.size))
    L[labels, np.arange(labels.size)] = 1.0
    return L


def _objective(loss, Xa, y, theta, reg):
    z = y * (Xa @ theta)
    return float(np.sum(loss.value(z)) + theta @ (reg * theta))


def train_classifier(codes, labels_row, loss, ridge: float | None = None, *, full_output=False):
    """Fit one linear classifier on fixed codes.

    Parameters
    ----------
    codes : (K, N) array
    labels_row : (N,) array of +-1
    loss : LossKind or name
    ridge : float, optional
        Penalty on ``||w||^2`` (the bias is not penalised).  Defaults to
        ``1e-6 * N``.

    Returns
    -------
    w : (K,) array
    b : float
    info : dict, only with ``full_output``
        ``converged``, ``iterations``, ``grad_norm`` and the objective trace.

    Raises
    ------
    ConvergenceError
        For an exponential or logistic fit with ``ridge == 0`` whose labels
        are all identical or whose weights diverge: no minimiser exists.
    """
    loss = as_loss(loss)
    X = np.ascontiguousarray(codes, dtype=float)  # BLAS results depend on layout
    y = np.asarray(labels_row, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[1] != y.size:
        raise ValueError(f"codes {X.shape} and labels {y.shape} disagree")
    K, N = X.shape
    if N < 1:
        raise ValueError("need at least one sample")
    if not np.all((y == 1) | (y == -1)):
        raise ValueError("labels must be -1 or +1")
    if ridge is None:
        ridge = 1e-6 * N
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    unbounded_family = loss.name in (EXPONENTIAL, LOGISTIC)
    if ridge == 0 and unbounded_family and np.all(y == y[0]):
        raise ConvergenceError("labels are all identical and ridge=0: the loss has no minimiser")

    Xa = np.vstack([X, np.ones((1, N))]).T  # (N, K+1)
    reg = np.full(K + 1, float(ridge))
    reg[-1] = 0.0
    theta = np.zeros(K + 1)
    f = _objective(loss, Xa, y, theta, reg)
    trace = [f]
    tol = 1e-8 * N
    converged = False
    it = 0
    gnorm = np.inf
    for it in range(1, MAX_ITER + 1):
        z = y * (Xa @ theta)
        g = Xa.T @ (y * loss.d1(z)) + 2.0 * reg * theta
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            converged = True
            it -= 1
            break
        h = np.asarray(loss.d2(z))
        Hm = (Xa * h[:, None]).T @ Xa
        Hm[np.diag_indices_from(Hm)] += 2.0 * reg
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", linalg.LinAlgWarning)
                step = linalg.solve(Hm, g, assume_a="pos")
        except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError):
            # singular Hessian (unused atoms, ridge 0): minimum-norm step
            step = linalg.lstsq(Hm, g)[0]
        t = 1.0
        for _ in range(MAX_HALVINGS):
            cand = theta - t * step
            fc = _objective(loss, Xa, y, cand, reg)
            if fc <= f:
                break
            t *= 0.5
        else:
            # no decrease along the Newton direction
            break
        theta, f = cand, fc
        trace.append(f)
        if ridge == 0 and unbounded_family and np.linalg.norm(theta) > DIVERGENCE_NORM:
            raise ConvergenceError("classifier weights diverge: data separable with ridge=0")
    else:
        z = y * (Xa @ theta)
        g = Xa.T @ (y * loss.d1(z)) + 2.0 * reg * theta
        gnorm = float(np.linalg.norm(g))
        converged = gnorm <= tol
    if ridge == 0 and unbounded_family and np.all(y * (Xa @ theta) > 0):
        # every margin positive: scaling theta up always lowers the loss
        raise ConvergenceError("data are separable and ridge=0: the loss has no minimiser")
    if not converged:
        warnings.warn(f"classifier training stopped with gradient norm {gnorm:.3g}",
                      ConvergenceWarning, stacklevel=2)
    w, b = theta[:K].copy(), float(theta[K])
    if full_output:
        return w, b, {"converged": converged, "iterations": it, "grad_norm": gnorm,
                      "trace": trace}
    return w, b


def train_all(codes, L, loss, ridge: float | None = None, *, n_jobs: int = 1) -> ClassifierBank:
    """Train one classifier per row of ``L``; rows are fitted independently."""
    loss = as_loss(loss)
    L = check_labels(L)
    X = np.ascontiguousarray(codes, dtype=float)  # BLAS results depend on layout

    def fit(j):
        return train_classifier(X, L[j], loss, ridge)

    if n_jobs > 1 and L.shape[0] > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            fits = list(pool.map(fit, range(L.shape[0])))
    else:
        fits = [fit(j) for j in range(L.shape[0])]
    W = np.column_stack([w for w, _ in fits]) if fits else np.zeros((X.shape[0], 0))
    b = np.array([b for _, b in fits])
    return ClassifierBank(W, b, loss)


def decision_values(bank: ClassifierBank, x: SparseCode) -> np.ndarray:
    """Unsigned scores ``w_j^T x + b_j`` for every class."""
    if x.ambient_dim != bank.n_atoms:
        raise ValueError(f"code dimension {x.ambient_dim} != classifier dimension {bank.n_atoms}")
    return bank.weights[x.indices].T @ x.values + bank.biases

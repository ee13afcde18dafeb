"""Traditional sparse coding (TSC) with orthogonal matching pursuit.

Dictionaries are plain ``(d, K)`` float arrays with unit-norm columns.  Codes
are returned as :class:`SparseCode` objects; the trainer works with the dense
``(K, N)`` code matrix through :func:`encode_matrix`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _backend

NORM_TOL = 1e-9
DEFAULT_REL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SparseCode:
    """A K-dimensional vector stored by its nonzero entries.

    ``indices`` are strictly increasing atom indices, ``values`` the
    matching (nonzero) coefficients.
    """

    indices: np.ndarray
    values: np.ndarray
    ambient_dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp).reshape(-1)
        val = np.asarray(self.values, dtype=float).reshape(-1)
        if idx.shape != val.shape:
            raise ValueError("indices and values differ in length")
        if idx.size:
            if np.any(np.diff(idx) <= 0):
                raise ValueError("indices must be strictly increasing")
            if idx[0] < 0 or idx[-1] >= self.ambient_dim:
                raise ValueError("index out of range")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        object.__setattr__(self, "ambient_dim", int(self.ambient_dim))

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def to_dense(self) -> np.ndarray:
        x = np.zeros(self.ambient_dim)
        x[self.indices] = self.values
        return x

    @classmethod
    def from_dense(cls, x) -> "SparseCode":
        x = np.asarray(x, dtype=float).reshape(-1)
        idx = np.flatnonzero(x)
        return cls(idx, x[idx], x.size)

    @classmethod
    def empty(cls, K: int) -> "SparseCode":
        return cls(np.zeros(0, dtype=np.intp), np.zeros(0), K)

    def __eq__(self, other):
        if not isinstance(other, SparseCode):
            return NotImplemented
        return (
            self.ambient_dim == other.ambient_dim
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        pairs = ", ".join(f"{i}: {v:.6g}" for i, v in zip(self.indices, self.values))
        return f"SparseCode({{{pairs}}}, K={self.ambient_dim})"


def normalize_columns(D) -> np.ndarray:
    D = np.array(D, dtype=float)
    norms = np.linalg.norm(D, axis=0)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero column")
    return D / norms


def check_dictionary(D, tol: float = NORM_TOL) -> np.ndarray:
    """Validate a dictionary and return it as a float array."""
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] < 1 or D.shape[1] < 1:
        raise ValueError(f"dictionary must be a non-empty 2-D array, got shape {D.shape}")
    if not np.all(np.isfinite(D)):
        raise ValueError("dictionary has non-finite entries")
    norms = np.linalg.norm(D, axis=0)
    bad = np.flatnonzero(np.abs(norms - 1.0) > tol)
    if bad.size:
        raise ValueError(f"dictionary columns {bad[:5].tolist()} are not unit norm")
    return D


def codes_to_matrix(codes, K: int | None = None) -> np.ndarray:
    """Stack a list of codes into a dense ``(K, N)`` matrix."""
    if K is None:
        if not codes:
            raise ValueError("K is required for an empty code list")
        K = codes[0].ambient_dim
    X = np.zeros((K, len(codes)))
    for i, c in enumerate(codes):
        if c.ambient_dim != K:
            raise ValueError("codes have mixed ambient dimensions")
        X[c.indices, i] = c.values
    return X


def matrix_to_codes(X) -> list[SparseCode]:
    X = np.asarray(X, dtype=float)
    return [SparseCode.from_dense(X[:, i]) for i in range(X.shape[1])]


def _check_budget(T, K):
    T = int(T)
    if T < 0:
        raise ValueError("sparsity budget T must be >= 0")
    if T > K:
        raise ValueError(f"sparsity budget T={T} exceeds atom count K={K}")
    return T


def _tolerances(Y, residual_tol):
    if residual_tol is None:
        # fsum is exactly rounded, so the tolerance does not depend on batch layout
        return DEFAULT_REL_TOL * np.sqrt([math.fsum(Y[:, i] * Y[:, i]) for i in range(Y.shape[1])])
    if residual_tol < 0:
        raise ValueError("residual_tol must be >= 0")
    return np.full(Y.shape[1], float(residual_tol))


def _encode_csc(D, Y, T, residual_tol, gram, n_jobs, backend):
    D = check_dictionary(D)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[0] != D.shape[0]:
        raise ValueError(f"signals of shape {Y.shape} do not match dictionary {D.shape}")
    if not np.all(np.isfinite(Y)):
        raise ValueError("signals contain non-finite values")
    T = _check_budget(T, D.shape[1])
    if gram is None:
        gram = D.T @ D
    tol = _tolerances(Y, residual_tol)
    kern = _backend.get_kernel(backend)
    N = Y.shape[1]
    if n_jobs is None or n_jobs <= 1 or N < 2:
        return kern.omp_batch(D, gram, Y, T, tol)
    bounds = np.linspace(0, N, min(n_jobs, N) + 1).astype(int)
    chunks = [(bounds[j], bounds[j + 1]) for j in range(len(bounds) - 1)]
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(
            pool.map(
                lambda ab: kern.omp_batch(D, gram, np.ascontiguousarray(Y[:, ab[0]:ab[1]]), T, tol[ab[0]:ab[1]]),
                chunks,
            )
        )
    indptr = [np.zeros(1, dtype=np.intp)]
    offset = 0
    for p in parts:
        indptr.append(p[0][1:] + offset)
        offset += p[0][-1]
    return (
        np.concatenate(indptr),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
    )


def batch_encode(D, signals, T, residual_tol=None, *, gram=None, n_jobs=1, backend=None):
    """Encode each column of ``signals`` with OMP.

    The Gram matrix ``D^T D`` is computed once and shared by all samples.
    Results are identical to calling :func:`omp_encode` column by column,
    whatever ``n_jobs`` is.

    Parameters
    ----------
    D : (d, K) array with unit-norm columns
    signals : (d, N) array
    T : int
        Maximum number of atoms per code.
    residual_tol : float, optional
        Stop early once the residual norm drops to this value.  Defaults to
        ``1e-9 * ||signal||`` per sample.

    Returns
    -------
    list of SparseCode
    """
    D = np.asarray(D, dtype=float)
    K = D.shape[1] if D.ndim == 2 else 0
    indptr, indices, values = _encode_csc(D, signals, T, residual_tol, gram, n_jobs, backend)
    return [
        SparseCode(indices[indptr[i]:indptr[i + 1]], values[indptr[i]:indptr[i + 1]], K)
        for i in range(indptr.size - 1)
    ]


def encode_matrix(D, Y, T, residual_tol=None, *, gram=None, n_jobs=1, backend=None) -> np.ndarray:
    """Like :func:`batch_encode` but returns the dense ``(K, N)`` code matrix."""
    D = np.asarray(D, dtype=float)
    indptr, indices, values = _encode_csc(D, Y, T, residual_tol, gram, n_jobs, backend)
    N = indptr.size - 1
    X = np.zeros((D.shape[1], N))
    cols = np.repeat(np.arange(N), np.diff(indptr))
    X[indices, cols] = values
    return X


def omp_encode(D, signal, T, residual_tol=None, *, backend=None) -> SparseCode:
    """Greedy sparse code of one signal with at most ``T`` atoms.

    At each step the atom most correlated with the residual is added (lowest
    index on ties) and all coefficients are refit by least squares.

    >>> D = np.eye(3)
    >>> omp_encode(D, np.array([0.0, 2.0, 0.0]), 1)
    SparseCode({1: 2}, K=3)
    """
    signal = np.asarray(signal, dtype=float)
    if signal.ndim != 1:
        raise ValueError("signal must be a 1-D vector")
    return batch_encode(D, signal[:, None], T, residual_tol, backend=backend)[0]


def reconstruction_error(D, code: SparseCode, signal) -> float:
    """Squared residual norm ``||signal - D x||^2``."""
    D = np.asarray(D, dtype=float)
    signal = np.asarray(signal, dtype=float)
    if code.ambient_dim != D.shape[1] or signal.shape != (D.shape[0],):
        raise ValueError("dimension mismatch between dictionary, code and signal")
    r = signal - D[:, code.indices] @ code.values
    return float(r @ r)

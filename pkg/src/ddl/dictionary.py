"""Dictionary initialisation and the weighted single-sweep KSVD update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FROM_SAMPLES = "samples"
GAUSSIAN = "gaussian"

POWER_MIN_ITER = 25
POWER_MAX_ITER = 1000
POWER_TOL = 1e-10
_ZERO = 1e-12


@dataclass(frozen=True)
class InitScheme:
    """How to draw the starting dictionary.

    ``samples`` picks training samples spread uniformly over the classes;
    ``gaussian`` draws i.i.d. standard normal atoms.  Both normalise columns.
    """

    variant: str = FROM_SAMPLES
    seed: int = 0

    def __post_init__(self):
        v = str(self.variant).lower()
        v = {"fromsamples": FROM_SAMPLES, "from_samples": FROM_SAMPLES,
             "gaussianrandom": GAUSSIAN, "gaussian_random": GAUSSIAN}.get(v, v)
        if v not in (FROM_SAMPLES, GAUSSIAN):
            raise ValueError(f"unknown init scheme {self.variant!r}")
        object.__setattr__(self, "variant", v)


def _per_class_quota(K, counts):
    """Split ``K`` atoms over classes: floor(K/C) each, remainder round-robin."""
    C = len(counts)
    quota = np.full(C, K // C)
    quota[: K % C] += 1
    # a class short of samples hands its surplus to the next classes in order
    surplus = 0
    for j in range(C):
        quota[j] += surplus
        surplus = max(0, quota[j] - counts[j])
        quota[j] -= surplus
    j = 0
    while surplus > 0:
        room = counts[j] - quota[j]
        take = min(room, surplus)
        quota[j] += take
        surplus -= take
        j += 1
    return quota


def init_dictionary(Y, L, K: int, scheme: InitScheme | None = None) -> np.ndarray:
    """Starting dictionary with ``K`` unit-norm atoms.

    Parameters
    ----------
    Y : (d, N) array
    L : (C, N) +-1 label matrix, or None (treated as one class)
    K : int
    scheme : InitScheme
    """
    scheme = scheme or InitScheme()
    Y = np.asarray(Y, dtype=float)
    d, N = Y.shape
    if K < 1:
        raise ValueError("K must be >= 1")
    rng = np.random.default_rng(scheme.seed)
    if scheme.variant == GAUSSIAN:
        D = rng.standard_normal((d, K))
        return D / np.linalg.norm(D, axis=0)

    if K > N:
        raise ValueError(f"cannot draw K={K} atoms from N={N} samples")
    norms = np.linalg.norm(Y, axis=0)
    if L is None:
        classes = [np.arange(N)]
    else:
        L = np.asarray(L)
        owner = np.argmax(L == 1, axis=0)
        owner[~np.any(L == 1, axis=0)] = -1
        classes = [np.flatnonzero(owner == j) for j in range(L.shape[0])]
    usable = [c[norms[c] > 0] for c in classes]  # zero samples cannot become atoms
    if sum(len(c) for c in usable) < K:
        raise ValueError("not enough nonzero samples to draw the dictionary from")
    quota = _per_class_quota(K, [len(c) for c in usable])
    picks = [rng.choice(c, size=q, replace=False) for c, q in zip(usable, quota) if q > 0]
    idx = np.concatenate(picks)
    return Y[:, idx] / norms[idx]


def _sign_fix(u, v):
    nz = np.flatnonzero(np.abs(u) > _ZERO * max(np.abs(u).max(), 1.0))
    if nz.size and u[nz[0]] < 0:
        return -u, -v
    return u, v


def rank_one(E, u0=None):
    """Leading singular triplet ``(u, s, v)`` of ``E`` by power iteration.

    Starts from ``u0`` when given (the previous atom, in KSVD) and falls back
    to a full SVD if the iteration has not settled after ``POWER_MAX_ITER``
    steps.  The first clearly nonzero entry of ``u`` is made positive.
    """
    E = np.asarray(E, dtype=float)
    if u0 is None or not np.any(u0):
        u = E[:, np.argmax(np.linalg.norm(E, axis=0))].copy()
    else:
        u = np.asarray(u0, dtype=float).copy()
    nu = np.linalg.norm(u)
    if nu == 0:
        return u, 0.0, np.zeros(E.shape[1])
    u /= nu
    converged = False
    v = E.T @ u
    for it in range(POWER_MAX_ITER):
        v = E.T @ u
        nv = np.linalg.norm(v)
        if nv == 0:
            break
        u_new = E @ (v / nv)
        nu = np.linalg.norm(u_new)
        if nu == 0:
            break
        u_new /= nu
        change = np.linalg.norm(u_new - u)
        u = u_new
        if it + 1 >= POWER_MIN_ITER and change <= POWER_TOL:
            converged = True
            break
    if not converged:
        U, S, Vt = np.linalg.svd(E, full_matrices=False)
        u, s, v = U[:, 0], S[0], Vt[0]
        u, v = _sign_fix(u, v)
        return u, float(s), v
    v = E.T @ u
    s = float(np.linalg.norm(v))
    v = v / s if s > 0 else v
    u, v = _sign_fix(u, v)
    return u, s, v


def weighted_cost(D, Y, X, weights) -> float:
    """``sum_i weights_i^2 ||y_i - D x_i||^2``."""
    R = (np.asarray(Y) - np.asarray(D) @ np.asarray(X)) * np.asarray(weights)
    return float(np.sum(R * R))


def ksvd_update(D, Y, X, weights=None):
    """One KSVD sweep over all atoms with per-sample weights.

    Samples and their codes are scaled by ``weights`` (``1/sigma_i`` in DDL)
    so the sweep minimises ``sum_i weights_i^2 ||y_i - D x_i||^2``.  Atom
    ``k`` and the coefficients of the samples using it are replaced by the
    best rank-one fit of the weighted residual without atom ``k``.  Supports
    are unchanged.  An atom no sample uses is replaced by the normalised
    sample with the largest weighted residual.

    Returns
    -------
    D_new : (d, K) array
    X_new : (K, N) array
    """
    D = np.array(D, dtype=float)
    Y = np.asarray(Y, dtype=float)
    X = np.array(X, dtype=float)
    K = D.shape[1]
    N = Y.shape[1]
    if X.shape != (K, N) or Y.shape[0] != D.shape[0]:
        raise ValueError(f"shapes D{D.shape}, Y{Y.shape}, X{X.shape} are inconsistent")
    w = np.ones(N) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    if w.shape != (N,) or np.any(w <= 0):
        raise ValueError("weights must be N positive numbers")

    Yw = Y * w
    Xw = X * w
    R = Yw - D @ Xw  # weighted residual, kept current through the sweep
    taken = np.zeros(N, dtype=bool)
    for k in range(K):
        users = np.flatnonzero(Xw[k])
        if users.size == 0:
            res = np.einsum("ij,ij->j", R, R)
            res[taken] = -1.0
            i = int(np.argmax(res))
            ny = np.linalg.norm(Y[:, i])
            if res[i] > 0 and ny > 0:
                D[:, k] = Y[:, i] / ny
                taken[i] = True
            continue
        E = R[:, users] + np.outer(D[:, k], Xw[k, users])
        u, s, v = rank_one(E, D[:, k])
        if s == 0:
            continue
        D[:, k] = u
        Xw[k, users] = s * v
        R[:, users] = E - np.outer(u, Xw[k, users])
    return D, Xw / w

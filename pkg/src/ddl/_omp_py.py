"""Pure numpy Batch-OMP kernel (fallback for the compiled ``_omp_ext``).

Both modules expose the same two functions with the same semantics:

``omp_gram(gram, lowrank, scale, inv_norms, corr, bnorm2, T, tol2)``
    Greedy l0 solver on an implicit dictionary ``Phi`` that is known only
    through its Gram matrix

        Phi^T Phi = diag(inv_norms) (scale * gram + lowrank lowrank^T) diag(inv_norms)

    and the correlations ``corr = Phi^T b`` with ``bnorm2 = ||b||^2``.
    Returns ``(support, coefs)`` in selection order.

``omp_batch(D, gram, Y, T, tol)``
    Plain OMP of each column of ``Y`` on ``D`` (``gram = D^T D``), ``tol``
    holding absolute residual-norm tolerances per column.  Returns CSC
    arrays ``(indptr, indices, values)``, indices sorted per column.
"""

import numpy as np
from scipy.linalg import solve_triangular

# Cholesky pivots at or below this are treated as singular.
SINGULAR = 1e-12


def omp_gram(gram, lowrank, scale, inv_norms, corr, bnorm2, T, tol2):
    K = corr.shape[0]
    alpha = corr.copy()
    selected = np.zeros(K, dtype=bool)
    chol = np.zeros((T, T))
    gsel = np.zeros((K, T))
    support = []
    x = np.empty(0)
    err2 = bnorm2
    n = 0
    while n < T:
        if err2 <= tol2:
            break
        mag = np.abs(alpha)
        mag[selected] = -1.0
        k = int(np.argmax(mag))  # first maximum wins ties
        if mag[k] <= 0.0:
            break
        gcol = inv_norms * inv_norms[k] * (scale * gram[k] + lowrank @ lowrank[k])
        if n > 0:
            w = solve_triangular(chol[:n, :n], gcol[support], lower=True)
            v = gcol[k] - w @ w
        else:
            w = None
            v = gcol[k]
        if v <= SINGULAR:
            v += SINGULAR
            if v <= SINGULAR:
                break
        if w is not None:
            chol[n, :n] = w
        chol[n, n] = np.sqrt(v)
        gsel[:, n] = gcol
        support.append(k)
        selected[k] = True
        n += 1
        c = corr[support]
        t = solve_triangular(chol[:n, :n], c, lower=True)
        x = solve_triangular(chol[:n, :n].T, t, lower=False)
        alpha = corr - gsel[:, :n] @ x
        err2 = max(bnorm2 - x @ c, 0.0)
    return np.asarray(support, dtype=np.intp), x


def omp_batch(D, gram, Y, T, tol):
    K = D.shape[1]
    N = Y.shape[1]
    empty = np.zeros((K, 0))
    ones = np.ones(K)
    indptr = np.zeros(N + 1, dtype=np.intp)
    indices = []
    values = []
    for i in range(N):
        y = Y[:, i]
        # column-wise reduction keeps each correlation independent of batch size
        corr = (D * y[:, None]).sum(axis=0)
        bnorm2 = float((y * y).sum())
        idx, coef = omp_gram(gram, empty, 1.0, ones, corr, bnorm2, T, tol[i] * tol[i])
        order = np.argsort(idx)
        idx, coef = idx[order], coef[order]
        keep = coef != 0.0
        indices.append(idx[keep])
        values.append(coef[keep])
        indptr[i + 1] = indptr[i] + int(keep.sum())
    if N:
        return indptr, np.concatenate(indices).astype(np.intp), np.concatenate(values)
    return indptr, np.zeros(0, dtype=np.intp), np.zeros(0)

"""Discriminative sparse coding (DSC).

Minimises, over codes with at most ``T`` nonzeros,

    ||b - A x||^2 + 2 * sum_j Omega(g_j^T x + beta_j) / gamma_j

with ``A = D / sigma``, ``b = y / sigma``, ``g_j = l_j w_j`` and
``beta_j = l_j b_j``.  Each Newton step replaces every Omega by its
second-order expansion, which turns the problem into ordinary sparse coding
on the stacked system ``[b; H delta] ~ [A; H G^T] x``.  That system is never
formed: its Gram matrix is ``A^T A + (G H)(G H)^T`` and the OMP kernel takes
the low-rank part directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .losses import LossKind, as_loss
from .sparse_coding import DEFAULT_REL_TOL, SparseCode, _check_budget

H_FLOOR = 1e-12
DEFAULT_P_MAX = 100
DEFAULT_STOP = 1e-4


@dataclass(frozen=True, eq=False)
class DscProblem:
    """One DSC instance.

    ``dictionary`` and ``signal`` are the unscaled ``D`` and ``y``; ``A`` and
    ``b`` are derived from them with ``sigma``.  ``gram`` (``D^T D``) and
    ``correlation`` (``D^T y``) may be passed in to share work across many
    problems on the same dictionary.
    """

    dictionary: np.ndarray
    signal: np.ndarray
    signed_weights: np.ndarray  # G, (K, C)
    bias_offsets: np.ndarray  # l_j * b_j, (C,)
    gamma: np.ndarray
    loss: LossKind
    sparsity: int
    sigma: float = 1.0
    gram: np.ndarray | None = field(default=None, repr=False)
    correlation: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        D = np.asarray(self.dictionary, dtype=float)
        y = np.asarray(self.signal, dtype=float)
        if D.ndim != 2 or y.shape != (D.shape[0],):
            raise ValueError(f"signal shape {y.shape} does not match dictionary {D.shape}")
        K = D.shape[1]
        G = np.asarray(self.signed_weights, dtype=float)
        if G.ndim == 1 and G.size == 0:
            G = G.reshape(K, 0)
        if G.ndim != 2 or G.shape[0] != K:
            raise ValueError(f"classifier matrix must have {K} rows, got shape {G.shape}")
        C = G.shape[1]
        bias = np.asarray(self.bias_offsets, dtype=float).reshape(-1)
        gamma = np.asarray(self.gamma, dtype=float).reshape(-1)
        if bias.shape != (C,) or gamma.shape != (C,):
            raise ValueError("bias_offsets and gamma must have one entry per classifier")
        if np.any(gamma <= 0):
            raise ValueError("gamma must be strictly positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        _check_budget(self.sparsity, K)
        gram = D.T @ D if self.gram is None else np.asarray(self.gram, dtype=float)
        corr = D.T @ y if self.correlation is None else np.asarray(self.correlation, dtype=float)
        for name, val in [("dictionary", D), ("signal", y), ("signed_weights", G),
                          ("bias_offsets", bias), ("gamma", gamma)]:
            object.__setattr__(self, name, val)
        object.__setattr__(self, "loss", as_loss(self.loss))
        object.__setattr__(self, "sparsity", int(self.sparsity))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "gram", gram)
        object.__setattr__(self, "correlation", corr)

    @classmethod
    def from_labels(cls, D, y, weights, biases, labels, gamma, loss, T, sigma=1.0, **kw):
        """Build a problem from unsigned classifiers and a +-1 label vector."""
        labels = np.asarray(labels, dtype=float)
        W = np.asarray(weights, dtype=float)
        return cls(D, y, W * labels, np.asarray(biases, dtype=float) * labels,
                   gamma, loss, T, sigma, **kw)

    @property
    def A(self) -> np.ndarray:
        return self.dictionary / self.sigma

    @property
    def b(self) -> np.ndarray:
        return self.signal / self.sigma

    @property
    def n_atoms(self) -> int:
        return self.dictionary.shape[1]

    @property
    def n_classes(self) -> int:
        return self.signed_weights.shape[1]

    def margins(self, x: SparseCode) -> np.ndarray:
        return self.signed_weights[x.indices].T @ x.values + self.bias_offsets


@dataclass(frozen=True)
class NewtonState:
    """Quadratic model of the classification terms around ``x``."""

    x: SparseCode
    delta: np.ndarray  # bias-adjusted regression targets for G^T x
    H_diag: np.ndarray
    objective: float


@dataclass(frozen=True)
class DscResult:
    code: SparseCode
    iterations: int
    objective: float
    initial_objective: float
    trace: tuple = ()


def _check_code(prob: DscProblem, x: SparseCode):
    if x.ambient_dim != prob.n_atoms:
        raise ValueError(f"code has dimension {x.ambient_dim}, problem has K={prob.n_atoms}")


def dsc_objective(prob: DscProblem, x: SparseCode) -> float:
    """Value of the DSC cost at ``x`` (factor 2 on the classification part)."""
    _check_code(prob, x)
    r = (prob.signal - prob.dictionary[:, x.indices] @ x.values) / prob.sigma
    cost = float(r @ r)
    if prob.n_classes:
        z = prob.margins(x)
        cost += 2.0 * float(np.sum(prob.loss.value(z) / prob.gamma))
    return cost


def newton_linearize(prob: DscProblem, x_prev: SparseCode, *, f: float | None = None) -> NewtonState:
    """Second-order model of each classification term around ``x_prev``.

    With ``z_p`` the current margin, ``Omega(z)`` is replaced by
    ``0.5 * Omega_2(z_p) * (z - (z_p - Omega_12(z_p)))^2``, so the targets are
    ``delta_j = z_p - Omega_12(z_p) - beta_j`` and the row weights are
    ``H_jj = sqrt(Omega_2(z_p) / gamma_j)``; then
    ``2 * Omega(z)/gamma ~ (H_jj * (delta_j - g_j^T x))^2 + const``.
    ``H_jj`` is floored at ``H_FLOOR``; on floored rows ``delta_j`` is moved
    so the model keeps the true slope ``Omega_1(z_p) / gamma_j``.
    """
    _check_code(prob, x_prev)
    z = prob.margins(x_prev)
    loss = prob.loss
    if z.size:
        # square roots taken separately: Omega_2 / gamma can overflow
        H = np.sqrt(np.asarray(loss.d2(z))) / np.sqrt(prob.gamma)
        floored = H < H_FLOOR
        delta = z - np.asarray(loss.ratio12(z)) - prob.bias_offsets
        if np.any(floored):
            # keep the slope of the model when the curvature is clamped:
            # H^2 (z - beta - delta) must still equal Omega_1 / gamma
            H = np.where(floored, H_FLOOR, H)
            i = np.flatnonzero(floored)
            delta = delta.copy()
            slope = np.asarray(loss.d1(z[i])) / (prob.gamma[i] * H_FLOOR**2)
            delta[i] = z[i] - prob.bias_offsets[i] - slope
    else:
        delta = np.zeros(0)
        H = np.zeros(0)
    return NewtonState(x_prev, delta, H, dsc_objective(prob, x_prev) if f is None else f)


def _stacked_step(prob: DscProblem, state: NewtonState, kern) -> SparseCode:
    """Solve the stacked sparse coding problem for one Newton step.

    Both blocks are divided by the largest row weight, which leaves the
    minimiser and every greedy selection unchanged but keeps the normal
    equations finite when ``H`` is huge (exponential loss at very negative
    margins).
    """
    root_s = 1.0 / prob.sigma
    scale = max(root_s, float(state.H_diag.max())) if state.H_diag.size else root_s
    s = max((root_s / scale) ** 2, np.finfo(float).tiny)
    H = state.H_diag / scale
    U = prob.signed_weights * H  # (K, C): H G^T, transposed
    t = H * state.delta
    corr = s * prob.correlation + U @ t
    norms2 = s * np.diag(prob.gram) + np.einsum("kc,kc->k", U, U)
    inv = 1.0 / np.sqrt(norms2)
    rhs2 = s * float(prob.signal @ prob.signal) + float(t @ t)
    tol2 = (DEFAULT_REL_TOL * DEFAULT_REL_TOL) * rhs2
    idx, coef = kern.omp_gram(prob.gram, np.ascontiguousarray(U), s, inv, inv * corr,
                              rhs2, prob.sparsity, tol2)
    idx = np.asarray(idx, dtype=np.intp)
    vals = np.asarray(coef) * inv[idx]
    order = np.argsort(idx)
    idx, vals = idx[order], vals[order]
    keep = vals != 0.0
    return SparseCode(idx[keep], vals[keep], prob.n_atoms)


def _key(x: SparseCode):
    return x.indices.tobytes() + x.values.tobytes()


def _rel_change(new: SparseCode, old: SparseCode) -> float:
    a, b = new.to_dense(), old.to_dense()
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def dsc_solve(prob: DscProblem, x0: SparseCode | None = None, p_max: int = DEFAULT_P_MAX,
              stop_rel_change: float = DEFAULT_STOP, *, full_output: bool = False,
              backend=None):
    """Iterated Newton / sparse coding solver for a DSC problem.

    Returns the lowest-objective iterate seen, ``x0`` included, so the result
    is never worse than the starting point even when a greedy step is.  With
    the square loss the quadratic model is exact and a single step is taken.

    Parameters
    ----------
    prob : DscProblem
    x0 : SparseCode, optional
        Warm start; the empty code by default.
    p_max : int
        Maximum number of Newton steps.
    stop_rel_change : float
        Stop once ``||x_new - x_old|| / max(||x_old||, 1e-12)`` falls to this.
    full_output : bool
        Also return a :class:`DscResult` with iteration count and trace.
    """
    if p_max < 1:
        raise ValueError("p_max must be >= 1")
    if x0 is None:
        x0 = SparseCode.empty(prob.n_atoms)
    _check_code(prob, x0)
    kern = _backend.get_kernel(backend)

    x = x0
    f0 = dsc_objective(prob, x0)
    best, best_f = x0, f0
    trace = [f0]
    seen = {_key(x0)}
    p = 0
    while p < p_max:
        state = newton_linearize(prob, x, f=trace[-1])
        x_new = _stacked_step(prob, state, kern)
        p += 1
        f = dsc_objective(prob, x_new)
        trace.append(f)
        if f < best_f:
            best, best_f = x_new, f
        change = _rel_change(x_new, x)
        x = x_new
        if prob.loss.is_quadratic or change <= stop_rel_change:
            break
        # a step depends only on the current code, so a repeat means the
        # remaining iterations would only revisit codes already seen
        key = _key(x_new)
        if key in seen:
            break
        seen.add(key)
    if full_output:
        return best, DscResult(best, p, best_f, f0, tuple(trace))
    return best

"""Discriminative dictionary learning: the alternating MAP optimisation.

One outer iteration updates, in order: the codes of labeled samples by DSC
(unlabeled samples by plain sparse coding), the classifiers, the dictionary
by one weighted KSVD sweep, then the per-sample noise levels ``sigma`` and
per-class cost levels ``gamma`` in closed form.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .classifiers import ClassifierBank, check_labels, train_all
from .dictionary import InitScheme, init_dictionary, ksvd_update, weighted_cost
from .dsc import DscProblem, dsc_solve
from .losses import LossKind, as_loss
from .sparse_coding import SparseCode, encode_matrix, matrix_to_codes

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-8
GAMMA_FLOOR = 1e-8


class TrainingError(RuntimeError):
    """Training produced a non-finite objective."""


@dataclass(frozen=True)
class TrainConfig:
    K: int
    T: int
    loss: LossKind = field(default_factory=lambda: LossKind("logistic"))
    q_max: int = 20
    p_max: int = 100
    stop_rel_change: float = 1e-4
    ridge: float | None = None
    init: str = "gaussian"
    seed: int = 0
    sigma_floor: float = SIGMA_FLOOR
    gamma_floor: float = GAMMA_FLOOR

    def __post_init__(self):
        object.__setattr__(self, "loss", as_loss(self.loss))
        if self.K < 1 or self.T < 1:
            raise ValueError("K and T must be >= 1")
        if self.T > self.K:
            raise ValueError("T cannot exceed K")
        if self.q_max < 0:
            raise ValueError("q_max must be >= 0")
        if self.p_max < 1:
            raise ValueError("p_max must be >= 1")
        if self.stop_rel_change < 0:
            raise ValueError("stop_rel_change must be >= 0")
        if self.ridge is not None and self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        if not (self.sigma_floor > 0 and self.gamma_floor > 0):
            raise ValueError("floors must be > 0")
        InitScheme(self.init, self.seed)  # validates the variant

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = self.loss.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["loss"] = LossKind.from_dict(d["loss"]) if isinstance(d["loss"], dict) else d["loss"]
        return cls(**d)


@dataclass(eq=False)
class DdlModel:
    dictionary: np.ndarray  # (d, K)
    classifiers: ClassifierBank
    codes: np.ndarray  # (K, N) training codes
    sigma: np.ndarray  # (N,)
    gamma: np.ndarray  # (C,)
    config: TrainConfig
    objective_trace: np.ndarray  # one Eq.-3 value per recorded iteration
    objective_parts: np.ndarray = None  # (len(trace), 4): rep, rep log, cls, cls log
    kind: str = "ddl"
    best_iteration: int = 0
    labeled_mask: np.ndarray | None = None

    @property
    def n_features(self) -> int:
        return self.dictionary.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.dictionary.shape[1]

    @property
    def n_classes(self) -> int:
        return self.classifiers.n_classes

    @property
    def loss(self) -> LossKind:
        return self.classifiers.loss

    def sparse_codes(self) -> list[SparseCode]:
        return matrix_to_codes(self.codes)


def _mask(mask, N):
    if mask is None:
        return np.ones(N, dtype=bool)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if mask.shape != (N,):
        raise ValueError("semi-supervised mask must have one entry per sample")
    if not mask.any():
        raise ValueError("at least one sample must be labeled")
    return mask


def _rep_terms(Y, D, X, sigma, floor):
    Y = np.asarray(Y, dtype=float)
    sigma = np.maximum(np.asarray(sigma, dtype=float), floor)
    R = Y - D @ X
    rep = float(np.sum(np.einsum("ij,ij->j", R, R) / (2.0 * sigma**2)))
    return rep, float((Y.shape[0] + 2) * np.sum(np.log(sigma)))


def _cls_terms(L, bank, X, gamma, gamma_floor):
    gamma = np.maximum(np.asarray(gamma, dtype=float), gamma_floor)
    n = L.shape[1]
    costs = np.sum(bank.loss.value(L * bank.scores(X)), axis=1)
    return float(np.sum(costs / gamma)), float((n + 1) * np.sum(np.log(gamma)))


def map_terms(Y, L, model: DdlModel) -> np.ndarray:
    """The four parts of the MAP cost: representation fit, ``(M+2) sum ln sigma``,
    weighted classification cost, ``(N+1) sum ln gamma``.

    Classification parts only cover labeled samples.
    """
    cfg = model.config
    mask = _mask(model.labeled_mask, np.asarray(Y).shape[1])
    rep, rep_log = _rep_terms(Y, model.dictionary, model.codes, model.sigma, cfg.sigma_floor)
    L = np.asarray(L, dtype=float)
    cls, cls_log = _cls_terms(L[:, mask], model.classifiers, model.codes[:, mask],
                              model.gamma, cfg.gamma_floor)
    return np.array([rep, rep_log, cls, cls_log])


def map_objective(Y, L, model: DdlModel) -> float:
    """Negative log posterior (up to a constant) of ``model`` on ``(Y, L)``:

    ``sum_i ||y_i - D x_i||^2 / (2 sigma_i^2) + (M+2) sum_i ln sigma_i
    + sum_j sum_i Omega(L_ji (w_j^T x_i + b_j)) / gamma_j + (N+1) sum_j ln gamma_j``

    with ``sigma`` and ``gamma`` clipped at the configured floors.
    """
    return float(np.sum(map_terms(Y, L, model)))


def update_sigma(Y, D, X, floor: float = SIGMA_FLOOR) -> np.ndarray:
    """Closed-form ``sigma_i = sqrt(||y_i - D x_i||^2 / (M + 2))``, floored."""
    Y = np.asarray(Y, dtype=float)
    R = Y - np.asarray(D) @ np.asarray(X)
    s = np.sqrt(np.einsum("ij,ij->j", R, R) / (Y.shape[0] + 2))
    return np.maximum(s, floor)


def update_gamma(L, bank: ClassifierBank, X, loss=None, floor: float = GAMMA_FLOOR) -> np.ndarray:
    """Closed-form ``gamma_j = sum_i Omega(L_ji (w_j^T x_i + b_j)) / (N + 1)``, floored."""
    L = np.asarray(L, dtype=float)
    loss = bank.loss if loss is None else as_loss(loss)
    costs = np.sum(loss.value(L * bank.scores(X)), axis=1)
    return np.maximum(costs / (L.shape[1] + 1), floor)


def _dsc_codes(Y, L, D, X, bank, sigma, gamma, cfg, mask, n_jobs, backend):
    """Per-sample code update: DSC for labeled, plain OMP for unlabeled samples."""
    gram = D.T @ D
    DtY = D.T @ Y
    K, N = X.shape
    X_new = np.zeros_like(X)
    lab = np.flatnonzero(mask)
    unl = np.flatnonzero(~mask)
    if unl.size:
        X_new[:, unl] = encode_matrix(D, Y[:, unl], cfg.T, gram=gram, n_jobs=n_jobs,
                                      backend=backend)

    W, b, loss = bank.weights, bank.biases, bank.loss

    def solve(i):
        prob = DscProblem(D, Y[:, i], W * L[:, i], b * L[:, i], gamma, loss, cfg.T,
                          sigma[i], gram=gram, correlation=DtY[:, i])
        x0 = SparseCode.from_dense(X[:, i])
        return dsc_solve(prob, x0, cfg.p_max, cfg.stop_rel_change, backend=backend)

    if n_jobs > 1 and lab.size > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            codes = list(pool.map(solve, lab, chunksize=max(1, lab.size // (4 * n_jobs))))
    else:
        codes = [solve(i) for i in lab]
    for i, c in zip(lab, codes):
        X_new[c.indices, i] = c.values
    return X_new


def _check_inputs(Y, L, mask):
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[1] < 1:
        raise ValueError("Y must be a (d, N) array with N >= 1")
    if not np.all(np.isfinite(Y)):
        raise ValueError("Y contains non-finite values")
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[1] != Y.shape[1]:
        raise ValueError(f"label matrix shape {L.shape} does not match {Y.shape[1]} samples")
    mask = _mask(mask, Y.shape[1])
    check_labels(L[:, mask])
    return Y, L, mask


def _init_labels(L, mask):
    """Labels used to spread initial atoms over classes; unlabeled columns own no class."""
    L0 = L.copy()
    L0[:, ~mask] = -1.0
    return L0


def _finite(f, what):
    if not np.isfinite(f):
        raise TrainingError(f"non-finite objective {f} after {what}")


def train(Y, L, config: TrainConfig, *, semi_supervised_mask=None, n_jobs: int = 1,
          backend=None) -> DdlModel:
    """Learn dictionary, codes, classifiers, sigma and gamma jointly.

    Parameters
    ----------
    Y : (d, N) array
        Training samples as columns.
    L : (C, N) array over {-1, +1}
        Label matrix; columns of unlabeled samples are ignored.
    config : TrainConfig
    semi_supervised_mask : (N,) bool array, optional
        True for labeled samples.  Unlabeled samples are coded without the
        classification terms and do not enter classifier training.
    n_jobs : int
        Threads for the per-sample updates.  Results do not depend on it.

    Returns
    -------
    DdlModel
        The iterate with the lowest MAP objective; ``objective_trace`` holds
        the objective after initialisation and after every iteration.
    """
    Y, L, mask = _check_inputs(Y, L, semi_supervised_mask)
    cfg = config
    loss = cfg.loss
    if cfg.K > Y.shape[1] and cfg.init == "samples":
        raise ValueError(f"K={cfg.K} exceeds the number of samples {Y.shape[1]}")

    D = init_dictionary(Y, _init_labels(L, mask), cfg.K, InitScheme(cfg.init, cfg.seed))
    X = encode_matrix(D, Y, cfg.T, n_jobs=n_jobs, backend=backend)
    sigma = update_sigma(Y, D, X, cfg.sigma_floor)
    Ll = L[:, mask]
    bank = train_all(X[:, mask], Ll, loss, cfg.ridge, n_jobs=n_jobs)
    gamma = update_gamma(Ll, bank, X[:, mask], floor=cfg.gamma_floor)

    def terms():
        rep, rep_log = _rep_terms(Y, D, X, sigma, cfg.sigma_floor)
        cls, cls_log = _cls_terms(Ll, bank, X[:, mask], gamma, cfg.gamma_floor)
        return [rep, rep_log, cls, cls_log]

    parts = [terms()]
    f = float(np.sum(parts[0]))
    _finite(f, "initialisation")
    best = (f, 0, D, X, bank, sigma, gamma)
    log.info("iter 0: objective %.6g", f)
    for q in range(1, cfg.q_max + 1):
        X = _dsc_codes(Y, L, D, X, bank, sigma, gamma, cfg, mask, n_jobs, backend)
        bank = train_all(X[:, mask], Ll, loss, cfg.ridge, n_jobs=n_jobs)
        D, X = ksvd_update(D, Y, X, 1.0 / sigma)
        sigma = update_sigma(Y, D, X, cfg.sigma_floor)
        gamma = update_gamma(Ll, bank, X[:, mask], floor=cfg.gamma_floor)
        parts.append(terms())
        f_prev, f = f, float(np.sum(parts[-1]))
        _finite(f, f"iteration {q}")
        log.info("iter %d: objective %.6g", q, f)
        if f < best[0]:
            best = (f, q, D, X, bank, sigma, gamma)
        if abs(f_prev - f) <= cfg.stop_rel_change * max(abs(f_prev), 1e-12):
            break

    parts = np.array(parts)
    _, q_best, D, X, bank, sigma, gamma = best
    return DdlModel(D, bank, X, sigma, gamma, cfg, parts.sum(axis=1), parts, "ddl", q_best,
                    None if mask.all() else mask.copy())


def train_baseline(Y, L, config: TrainConfig, *, n_jobs: int = 1, backend=None) -> DdlModel:
    """Decoupled reference: unsupervised KSVD, then classifiers on its codes.

    Runs ``q_max`` rounds of (sparse coding, KSVD sweep) from the same
    initial dictionary as :func:`train`.  A re-encoded sample keeps its
    previous code when the new greedy code fits worse, so the representation
    cost never goes up.  The objective trace records the representation cost
    per round.
    """
    Y, L, mask = _check_inputs(Y, L, None)
    cfg = config
    D = init_dictionary(Y, _init_labels(L, mask), cfg.K, InitScheme(cfg.init, cfg.seed))
    X = encode_matrix(D, Y, cfg.T, n_jobs=n_jobs, backend=backend)
    ones = np.ones(Y.shape[1])
    trace = [weighted_cost(D, Y, X, ones)]
    for _ in range(cfg.q_max):
        D, X = ksvd_update(D, Y, X, ones)
        X_new = encode_matrix(D, Y, cfg.T, n_jobs=n_jobs, backend=backend)
        r_old = np.einsum("ij,ij->j", Y - D @ X, Y - D @ X)
        r_new = np.einsum("ij,ij->j", Y - D @ X_new, Y - D @ X_new)
        better = r_new <= r_old
        X = np.where(better, X_new, X)
        trace.append(weighted_cost(D, Y, X, ones))
    sigma = update_sigma(Y, D, X, cfg.sigma_floor)
    bank = train_all(X, L, cfg.loss, cfg.ridge, n_jobs=n_jobs)
    gamma = update_gamma(L, bank, X, floor=cfg.gamma_floor)
    model = DdlModel(D, bank, X, sigma, gamma, cfg, np.array(trace), None, "baseline",
                     len(trace) - 1)
    model.objective_parts = np.zeros((len(trace), 4))
    model.objective_parts[:, 0] = trace
    return model


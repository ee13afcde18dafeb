import numpy as np
import pytest

from ddl.dsc import DscProblem, dsc_objective, dsc_solve, newton_linearize
from ddl.losses import LossKind
from ddl.sparse_coding import SparseCode, omp_encode

from conftest import unit_dictionary
from oracles import best_support, dense_dsc_objective, stacked_square

LOSSES = ["square", "exp", "logistic", "hinge"]


def random_problem(rng, d=6, K=8, C=2, T=2, loss="square", gamma=None, sigma=1.0):
    D = unit_dictionary(rng, d, K)
    y = rng.standard_normal(d)
    G = rng.standard_normal((K, C))
    beta = 0.3 * rng.standard_normal(C)
    gamma = rng.uniform(0.5, 2.0, C) if gamma is None else np.full(C, float(gamma))
    return DscProblem(D, y, G, beta, gamma, loss, T, sigma)


def test_objective_hand_value():
    prob = DscProblem(np.eye(3), np.zeros(3), np.ones((3, 1)), [0.0], [2.0], "square", 1)
    assert dsc_objective(prob, SparseCode.empty(3)) == pytest.approx(1.0)


@pytest.mark.parametrize("loss", LOSSES)
def test_objective_matches_dense_oracle(rng, loss):
    prob = random_problem(rng, loss=loss, sigma=0.7)
    x = np.zeros(8)
    x[[1, 6]] = [0.4, -1.1]
    want = dense_dsc_objective(prob.dictionary, prob.signal, prob.signed_weights,
                               prob.bias_offsets, prob.gamma, LossKind(loss), x, 0.7)
    assert dsc_objective(prob, SparseCode.from_dense(x)) == pytest.approx(want, rel=1e-13)


def test_objective_large_gamma_limit(rng):
    prob = random_problem(rng, gamma=1e15)
    x = SparseCode([0, 3], [0.5, 0.2], 8)
    r = prob.b - prob.A @ x.to_dense()
    assert dsc_objective(prob, x) == pytest.approx(r @ r, rel=1e-12)


def test_linearize_square_targets_and_weights(rng):
    prob = random_problem(rng, loss="square")
    for x in (SparseCode.empty(8), SparseCode([2, 5], [1.0, -0.3], 8)):
        st = newton_linearize(prob, x)
        np.testing.assert_allclose(st.delta, 1.0 - prob.bias_offsets, rtol=1e-14)
        np.testing.assert_allclose(st.H_diag, np.sqrt(2.0 / prob.gamma), rtol=1e-14)


def test_linearize_exponential_at_zero_margin():
    gamma = np.array([0.5, 4.0])
    beta = np.array([0.25, -1.0])
    # zero code, margins equal the biases; choose G so margins are 0 with beta folded
    prob = DscProblem(np.eye(3), np.zeros(3), np.zeros((3, 2)), np.zeros(2), gamma, "exp", 1)
    st = newton_linearize(prob, SparseCode.empty(3))
    np.testing.assert_allclose(st.delta, [1.0, 1.0])
    np.testing.assert_allclose(st.H_diag, np.sqrt(1.0 / gamma))
    prob_b = DscProblem(np.eye(3), np.zeros(3), np.zeros((3, 2)), beta, gamma, "exp", 1)
    st_b = newton_linearize(prob_b, SparseCode.empty(3))
    z = beta
    np.testing.assert_allclose(st_b.delta, z + 1.0 - beta)


@pytest.mark.parametrize("loss", LOSSES)
def test_linearization_reproduces_taylor_expansion(rng, loss):
    """2 Omega/gamma and (H (delta - g^T x))^2 share slope and curvature at x_prev."""
    prob = random_problem(rng, loss=loss, C=3)
    x = SparseCode([1, 4], [0.3, -0.7], 8)
    st = newton_linearize(prob, x)
    z = prob.margins(x)
    resid = st.delta - (z - prob.bias_offsets)  # delta - g^T x at x_prev
    lk = LossKind(loss)
    # d/dz of (H (delta - (z - beta)))^2 = -2 H^2 resid ; target 2 Omega_1 / gamma
    np.testing.assert_allclose(-2 * st.H_diag**2 * resid, 2 * lk.d1(z) / prob.gamma, rtol=1e-10)
    np.testing.assert_allclose(2 * st.H_diag**2, 2 * lk.d2(z) / prob.gamma, rtol=1e-12)
    assert np.all(st.H_diag > 0)


def test_linearize_floor_keeps_slope():
    # huge margin under the exponential loss underflows Omega_2
    prob = DscProblem(np.eye(2), np.zeros(2), np.array([[1.0], [0.0]]), [0.0], [1.0], "exp", 1)
    x = SparseCode([0], [800.0], 2)
    st = newton_linearize(prob, x)
    assert st.H_diag[0] == pytest.approx(1e-12)
    z = 800.0
    slope = -2 * st.H_diag[0] ** 2 * (st.delta[0] - z)
    assert slope == pytest.approx(2 * LossKind("exp").d1(z), rel=1e-9, abs=0)


def test_no_classifiers_reduces_to_tsc(rng, backend):
    D = unit_dictionary(rng, 10, 20)
    y = rng.standard_normal(10)
    prob = DscProblem(D, y, np.zeros((20, 0)), [], [], "logistic", 3)
    st = newton_linearize(prob, SparseCode.empty(20))
    assert st.delta.size == 0 and st.H_diag.size == 0
    x, ref = dsc_solve(prob, backend=backend), omp_encode(D, y, 3, backend=backend)
    assert x.indices.tolist() == ref.indices.tolist()
    np.testing.assert_allclose(x.values, ref.values, rtol=1e-12)


def test_square_stacked_system_is_exact(rng):
    for _ in range(10):
        prob = random_problem(rng, sigma=rng.uniform(0.3, 2))
        M, rhs = stacked_square(prob.dictionary, prob.signal, prob.signed_weights,
                                prob.bias_offsets, prob.gamma, prob.sigma)
        st = newton_linearize(prob, SparseCode.empty(8))
        np.testing.assert_allclose(np.vstack([prob.A, (prob.signed_weights * st.H_diag).T]), M)
        np.testing.assert_allclose(np.concatenate([prob.b, st.H_diag * st.delta]), rhs)
        x = rng.standard_normal(8) * (rng.random(8) < 0.5)
        r = rhs - M @ x
        # the constant of the expansion is zero for the square loss
        assert dsc_objective(prob, SparseCode.from_dense(x)) == pytest.approx(r @ r, rel=1e-12)


def test_square_one_newton_step(rng, backend):
    for _ in range(20):
        prob = random_problem(rng)
        _, info = dsc_solve(prob, full_output=True, backend=backend)
        assert info.iterations == 1


@pytest.mark.filterwarnings("error::RuntimeWarning")
def test_huge_row_weights_stay_finite(backend):
    # exponential loss far on the wrong side: Omega_2 / gamma is near the
    # largest double, so the unscaled normal equations would overflow
    D = np.eye(3)
    y = np.array([0.1, 0.2, 0.0])
    G = np.array([[1.0], [0.5], [0.0]])
    prob = DscProblem(D, y, G, [0.0], [1e-4], "exp", 2, sigma=0.05)
    x0 = SparseCode([0], [-690.0], 3)
    x, info = dsc_solve(prob, x0, p_max=5, full_output=True, backend=backend)
    assert np.all(np.isfinite(x.values))
    assert np.all(np.isfinite(info.trace))
    assert info.objective < dsc_objective(prob, x0)
    # one Newton step moves the margin by +1 exactly along the dominant row
    step = newton_linearize(prob, x0)
    assert step.delta[0] == pytest.approx(-689.0)


@pytest.mark.parametrize("loss", LOSSES)
def test_never_worse_than_start(rng, loss, backend):
    for _ in range(10):
        prob = random_problem(rng, d=10, K=20, C=3, T=3, loss=loss)
        x0 = omp_encode(prob.dictionary, prob.signal, 3)
        x, info = dsc_solve(prob, x0, full_output=True, backend=backend)
        assert info.objective <= dsc_objective(prob, x0)
        assert info.objective == pytest.approx(dsc_objective(prob, x))
        assert x.nnz <= 3


def test_greedy_step_reaches_stacked_omp(rng, backend):
    """For the square loss the single step is OMP on the stacked system."""
    prob = random_problem(rng, d=10, K=20, C=3, T=3)
    M, rhs = stacked_square(prob.dictionary, prob.signal, prob.signed_weights,
                            prob.bias_offsets, prob.gamma)
    norms = np.linalg.norm(M, axis=0)
    ref = omp_encode(M / norms, rhs, 3)
    x = dsc_solve(prob, backend=backend)
    assert x.indices.tolist() == ref.indices.tolist()
    np.testing.assert_allclose(x.values, ref.values / norms[ref.indices], rtol=1e-9)


def test_exhaustive_oracle_agreement_rate(rng):
    """DSC is greedy; report how often it hits the exhaustive optimum."""
    hits = 0
    for _ in range(30):
        prob = random_problem(rng)
        M, rhs = stacked_square(prob.dictionary, prob.signal, prob.signed_weights,
                                prob.bias_offsets, prob.gamma)
        best, _, _ = best_support(M, rhs, 2)
        f = dsc_objective(prob, dsc_solve(prob))
        assert f >= best * (1 - 1e-10)
        hits += abs(f - best) <= 1e-8 * abs(best)
    assert hits >= 1


def test_huge_gamma_matches_omp(rng, backend):
    for _ in range(10):
        prob = random_problem(rng, d=10, K=20, C=3, T=3, loss="logistic", gamma=1e12)
        x = dsc_solve(prob, backend=backend)
        ref = omp_encode(prob.dictionary, prob.signal, 3)
        assert x.indices.tolist() == ref.indices.tolist()
        np.testing.assert_allclose(x.values, ref.values, atol=1e-8)


def test_errors(rng):
    prob = random_problem(rng)
    with pytest.raises(ValueError):
        dsc_solve(prob, p_max=0)
    with pytest.raises(ValueError):
        dsc_objective(prob, SparseCode.empty(7))
    with pytest.raises(ValueError):
        DscProblem(np.eye(3), np.zeros(3), np.ones((3, 1)), [0.0], [0.0], "square", 1)
    with pytest.raises(ValueError):
        DscProblem(np.eye(3), np.zeros(4), np.ones((3, 1)), [0.0], [1.0], "square", 1)
    with pytest.raises(ValueError):
        DscProblem(np.eye(3), np.zeros(3), np.ones((2, 1)), [0.0], [1.0], "square", 1)


@pytest.mark.parametrize("loss", ["exp", "logistic", "hinge"])
def test_backends_agree(rng, loss):
    from ddl import _backend
    if len(_backend.BACKENDS) < 2:
        pytest.skip("compiled kernel not built")
    for _ in range(10):
        prob = random_problem(rng, d=10, K=20, C=3, T=3, loss=loss)
        a = dsc_solve(prob, backend="cython")
        b = dsc_solve(prob, backend="python")
        assert a.indices.tolist() == b.indices.tolist()
        np.testing.assert_allclose(a.values, b.values, rtol=1e-8, atol=1e-10)

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from sataris import conic
from sataris.conic import Affine, ConicProblem, hermitian_real_embedding, solve

from conftest import crandn


def rand_herm(rng, n):
    A = crandn(rng, n, n)
    return (A + A.conj().T) / 2


def test_embedding_identity():
    assert np.array_equal(hermitian_real_embedding(np.eye(3)), np.eye(6))


def test_embedding_indefinite():
    U = np.linalg.qr(crandn(np.random.default_rng(0), 2, 2))[0]
    H = U @ np.diag([1.0, -1.0]) @ U.conj().T
    ev = np.linalg.eigvalsh(hermitian_real_embedding(H))
    assert ev.min() < -0.5
    assert np.allclose(np.sort(ev), [-1, -1, 1, 1], atol=1e-12)


def test_embedding_trace_identity():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = rng.integers(1, 6)
        A, B = rand_herm(rng, n), rand_herm(rng, n)
        lhs = np.trace(hermitian_real_embedding(A) @ hermitian_real_embedding(B))
        assert lhs == pytest.approx(2 * np.real(np.trace(A @ B.conj().T)), rel=1e-12, abs=1e-12)
        assert np.trace(hermitian_real_embedding(A)) == pytest.approx(2 * np.trace(A).real)


def test_embedding_rejects_non_hermitian():
    with pytest.raises(ValueError):
        hermitian_real_embedding(np.array([[1, 2], [0, 1]]))
    with pytest.raises(ValueError):
        hermitian_real_embedding(np.ones((2, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_embedding_psd_iff(seed, n):
    rng = np.random.default_rng(seed)
    H = rand_herm(rng, n)
    a = np.linalg.eigvalsh(H).min() >= -1e-12
    b = np.linalg.eigvalsh(hermitian_real_embedding(H)).min() >= -1e-12
    assert a == b


def test_affine_arithmetic():
    x, y = Affine([0], [1.0]), Affine([1], [1.0])
    e = 2 * x - (y + 1) / 2 + 3
    assert e.value(np.array([1.0, 4.0])) == pytest.approx(2 - 2.5 + 3)
    assert (1 - x).value(np.array([5.0, 0])) == -4


def test_min_trace_unit_diagonal():
    prob = ConicProblem()
    X = prob.hermitian(3)
    for i in range(3):
        prob.eq(X.diag(i), 1.0)
    prob.minimize(X.trace())
    sol = solve(prob)
    assert sol.ok and sol.objective == pytest.approx(3.0, abs=1e-7)


def test_max_log2():
    prob = ConicProblem()
    x, t = prob.scalar(), prob.scalar()
    prob.ge(x, 0.0)
    prob.le(x, 3.0)
    prob.log_ge(t, 1 + x)
    prob.maximize(t / math.log(2))
    sol = solve(prob)
    assert sol.ok
    assert sol.value(t) / math.log(2) == pytest.approx(2.0, abs=1e-7)
    assert sol.value(x) == pytest.approx(3.0, abs=1e-6)


def test_sdp_against_grid():
    # max Re Tr(C X) over 2x2 Hermitian PSD X with unit diagonal: X = [[1, z], [z*, 1]], |z| <= 1
    rng = np.random.default_rng(2)
    for _ in range(5):
        C = rand_herm(rng, 2)
        prob = ConicProblem()
        X = prob.hermitian(2)
        prob.eq(X.diag(0), 1.0)
        prob.eq(X.diag(1), 1.0)
        prob.maximize(X.inner(C))
        sol = solve(prob)
        r = np.linspace(0, 1, 201)[:, None]
        a = np.linspace(0, 2 * np.pi, 721)[None, :]
        z = r * np.exp(1j * a)
        grid = C[0, 0].real + C[1, 1].real + 2 * np.real(C[0, 1] * np.conj(z))
        assert sol.ok and sol.objective == pytest.approx(grid.max(), abs=1e-3)
        Xv = X.value(sol.x)
        assert np.linalg.eigvalsh(Xv).min() >= -1e-7
        assert np.allclose(np.diag(Xv), 1, atol=1e-7)


def test_complex_sdp_max_eigenvalue():
    rng = np.random.default_rng(3)
    C = rand_herm(rng, 4)
    prob = ConicProblem()
    X = prob.hermitian(4)
    prob.eq(X.trace(), 1.0)
    prob.maximize(X.inner(C))
    sol = solve(prob)
    assert sol.ok and sol.objective == pytest.approx(np.linalg.eigvalsh(C).max(), abs=1e-6)


def test_log_of_affine_matches_golden_section():
    rng = np.random.default_rng(4)
    for _ in range(10):
        a, b, c, lam = rng.uniform(0.5, 3), rng.uniform(0.1, 2), rng.uniform(1, 4), rng.uniform(0, 0.5)
        f = lambda x: np.log(a * x + b) + np.log(c - x) - lam * x
        ref = minimize_scalar(lambda x: -f(x), bounds=(0, c - 1e-12), method="bounded",
                              options=dict(xatol=1e-12))
        prob = ConicProblem()
        x, t1, t2 = prob.scalar(), prob.scalar(), prob.scalar()
        prob.ge(x, 0.0)
        prob.log_ge(t1, a * x + b)
        prob.log_ge(t2, c - x)
        prob.maximize(t1 + t2 - lam * x)
        sol = solve(prob)
        assert sol.ok and sol.objective == pytest.approx(-ref.fun, abs=1e-6)


def test_soc_and_rsoc():
    prob = ConicProblem()
    x, y = prob.scalar(), prob.scalar()
    prob.soc(1.0, [x, y])
    prob.maximize(x + y)
    sol = solve(prob)
    assert sol.ok and sol.objective == pytest.approx(math.sqrt(2), abs=1e-7)
    prob = ConicProblem()
    x = prob.scalar()
    prob.rsoc(2.0, 8.0, [x])            # x^2 <= 16
    prob.maximize(x)
    assert solve(prob).objective == pytest.approx(4.0, abs=1e-6)


def test_exp_le():
    prob = ConicProblem()
    t = prob.scalar()
    prob.exp_le(t, 5.0)
    prob.maximize(t)
    assert solve(prob).objective == pytest.approx(math.log(5), abs=1e-7)


def test_infeasible_detected():
    prob = ConicProblem()
    x = prob.scalar()
    prob.ge(x, 1.0)
    prob.le(x, 0.0)
    prob.minimize(x)
    sol = solve(prob)
    assert sol.status == conic.INFEASIBLE and not sol.ok


def test_iteration_limit_reported():
    prob = ConicProblem()
    X = prob.hermitian(4)
    prob.eq(X.trace(), 1.0)
    prob.maximize(X.inner(rand_herm(np.random.default_rng(5), 4)))
    sol = solve(prob, max_iters=1)
    assert sol.status in (conic.ITERATION_LIMIT, conic.NUMERICAL_FAILURE)
    assert not sol.ok


def test_deterministic_and_violation_bound():
    rng = np.random.default_rng(6)
    C = rand_herm(rng, 3)

    def build():
        prob = ConicProblem()
        X = prob.hermitian(3)
        for i in range(3):
            prob.eq(X.diag(i), 1.0)
        t = prob.scalar()
        prob.log_ge(t, X.inner(C @ C.conj().T) + 1)
        prob.maximize(t)
        return prob, X

    (p1, X1), (p2, _) = build(), build()
    s1, s2 = solve(p1), solve(p2)
    assert s1.status == s2.status == conic.OPTIMAL
    assert abs(s1.objective - s2.objective) <= 1e-9
    Xv = X1.value(s1.x)
    assert np.linalg.eigvalsh(Xv).min() >= -10 * 1e-8 * max(1, np.abs(Xv).max())
    assert np.max(np.abs(np.diag(Xv) - 1)) <= 10 * 1e-8
    assert s1.violation <= 1e-5

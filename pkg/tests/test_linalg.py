import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cwgap import linalg
from cwgap.errors import ConfigError, NotSPDError, UsageError


def test_eigen_examples():
    assert np.allclose(linalg.eigen_sym(np.eye(3)).values, [1, 1, 1], atol=1e-14)
    assert np.allclose(linalg.eigen_sym([[0, 0.5], [0.5, 0]]).values, [0.5, -0.5], atol=1e-14)
    assert np.array_equal(linalg.eigen_sym(np.diag([3.0, 1, 2])).values, [3, 2, 1])


def test_eigen_random_reconstruction():
    g = np.random.default_rng(0)
    for _ in range(100):
        n = int(g.integers(1, 13))
        B = g.normal(size=(n, n))
        A = B + B.T
        w, V = linalg.eigen_sym(A, "jacobi")
        scale = np.linalg.norm(A)
        assert np.max(np.abs((V * w) @ V.T - A)) <= 1e-9 * np.max(np.abs(A))
        assert np.max(np.abs(V.T @ V - np.eye(n))) <= 1e-10
        for i in range(n):
            assert np.linalg.norm(A @ V[:, i] - w[i] * V[:, i]) <= 1e-10 * scale
        assert np.all(np.diff(w) <= 0)


def test_eigen_matches_lapack_at_jacobi_limit():
    g = np.random.default_rng(1)
    B = g.normal(size=(96, 96))
    A = B + B.T
    assert np.max(np.abs(linalg.eigen_sym(A, "jacobi").values - np.linalg.eigvalsh(A)[::-1])) < 1e-10


def test_eigen_rejects_asymmetric_and_huge():
    with pytest.raises(UsageError):
        linalg.eigen_sym([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ConfigError):
        linalg.as_square(np.zeros((linalg.MAX_DIM + 1, linalg.MAX_DIM + 1)))


def test_cholesky_examples():
    assert np.array_equal(linalg.cholesky_spd(np.eye(2)), np.eye(2))
    L = linalg.cholesky_spd([[4.0, 2.0], [2.0, 3.0]])
    assert np.allclose(L, [[2, 0], [1, math.sqrt(2)]], atol=1e-15)
    with pytest.raises(NotSPDError):
        linalg.cholesky_spd([[1.0, 2.0], [2.0, 1.0]])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10 ** 6), st.floats(-3, 3))
def test_cholesky_iff_positive_eigen(n, seed, shift):
    g = np.random.default_rng(seed)
    B = g.normal(size=(n, n))
    A = B @ B.T / n + shift * np.eye(n)
    lam_min = linalg.eigen_sym(A).values[-1]
    if abs(lam_min) < 1e-9:
        return
    try:
        L = linalg.cholesky_spd(A)
        ok = True
        assert np.allclose(L @ L.T, A, atol=1e-10)
    except NotSPDError:
        ok = False
    assert ok == (lam_min > 0)


def test_solves_and_inverse():
    g = np.random.default_rng(2)
    B = g.normal(size=(6, 6))
    A = B @ B.T + 6 * np.eye(6)
    L = linalg.cholesky_spd(A)
    b = g.normal(size=6)
    assert np.allclose(A @ linalg.cho_solve(L, b), b, atol=1e-12)
    assert np.allclose(A @ linalg.cho_inverse(L), np.eye(6), atol=1e-12)
    S = linalg.sym_sqrt(A)
    assert np.allclose(S @ S, A, atol=1e-10)
    assert np.allclose(linalg.sym_sqrt(A, inverse=True) @ S, np.eye(6), atol=1e-10)


def test_two_norm_examples():
    assert linalg.two_norm(np.zeros((3, 3))) == 0.0
    assert abs(linalg.two_norm(np.diag([2.0, -3.0])) - 3) < 1e-9
    assert abs(linalg.two_norm([[0.0, 1.0], [0.0, 0.0]]) - 1) < 1e-9


def test_two_norm_symmetric_matches_eigen():
    g = np.random.default_rng(3)
    for n in range(2, 12):
        B = g.normal(size=(n, n))
        A = B + B.T
        w = linalg.eigen_sym(A).values
        ref = max(abs(w[0]), abs(w[-1]))
        assert abs(linalg.two_norm(A) - ref) <= 1e-9 * ref

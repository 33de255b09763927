import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biloop.exceptions import ContractError, SingularMatrixError
from biloop.numerics import matvec, random_spd, solve_spd, symmetrize


def test_matvec_examples():
    np.testing.assert_array_equal(matvec(np.eye(2), [3.0, 4.0]), [3.0, 4.0])
    np.testing.assert_array_equal(matvec(np.diag([2.0, 1.0]), [1.0, 1.0]), [2.0, 1.0])
    np.testing.assert_array_equal(matvec([[1.0, 2.0], [3.0, 4.0]], [1.0, 1.0]), [3.0, 7.0])


def test_matvec_does_not_mutate():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    v = np.array([1.0, -1.0])
    A0, v0 = A.copy(), v.copy()
    matvec(A, v)
    np.testing.assert_array_equal(A, A0)
    np.testing.assert_array_equal(v, v0)


def test_matvec_dimension_mismatch():
    with pytest.raises(ContractError):
        matvec(np.eye(3), [1.0, 2.0])


def test_matvec_rejects_nan():
    with pytest.raises(ContractError):
        matvec(np.eye(2), [np.nan, 1.0])


@pytest.mark.parametrize(
    "A, b, expected",
    [
        (np.eye(2), [1.0, 2.0], [1.0, 2.0]),
        (np.diag([2.0, 1.0]), [1.0, 1.0], [0.5, 1.0]),
        (np.diag([2.0, 1.0]), [0.0, 0.0], [0.0, 0.0]),
    ],
)
def test_solve_spd_examples(A, b, expected):
    np.testing.assert_allclose(solve_spd(A, b), expected, rtol=0, atol=1e-15)


def test_solve_spd_rejects_indefinite():
    with pytest.raises(SingularMatrixError):
        solve_spd(np.diag([1.0, -1.0]), [1.0, 1.0])


def test_solve_spd_rejects_nonsymmetric():
    with pytest.raises(ContractError):
        solve_spd(np.array([[2.0, 1.0], [0.0, 2.0]]), [1.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_matvec_linear(dim, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((dim, dim))
    u, v = rng.standard_normal(dim), rng.standard_normal(dim)
    np.testing.assert_allclose(matvec(A, u + v), matvec(A, u) + matvec(A, v), rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 50), st.integers(0, 2**31 - 1))
def test_solve_spd_recovers_rhs(dim, seed):
    rng = np.random.default_rng(seed)
    Bm = rng.standard_normal((dim, dim))
    A = symmetrize(Bm.T @ Bm + np.eye(dim))
    b = rng.standard_normal(dim)
    v = solve_spd(A, b)
    assert np.linalg.norm(A @ v - b) <= 1e-10 * np.linalg.norm(b)


@pytest.mark.parametrize("dim", [1, 5, 40, 200])
def test_solve_spd_residual_contract(dim):
    rng = np.random.default_rng(dim)
    A = random_spd(dim, rng, 1.0, 10.0)
    b = rng.standard_normal(dim)
    v = solve_spd(A, b)
    assert np.linalg.norm(A @ v - b) <= 1e-12 * (1 + np.linalg.norm(b))


def test_random_spd_spectrum():
    A = random_spd(4, np.random.default_rng(0), 1.0, 10.0)
    np.testing.assert_array_equal(A, A.T)
    np.testing.assert_allclose(np.linalg.eigvalsh(A), [1.0, 4.0, 7.0, 10.0], atol=1e-12)

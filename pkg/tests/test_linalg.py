import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggmom import chain, linalg


def naive_matmul(a, b):
    n, m = len(a), len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            for k in range(len(b)):
                out[i][j] += a[i][k] * b[k][j]
    return np.array(out)


def test_matmul_identity():
    M = np.array([[1.5, -2.0], [0.25, 4.0]])
    np.testing.assert_array_equal(linalg.matmul(np.eye(2), M), M)


def test_matmul_permutation_swaps_columns():
    out = linalg.matmul([[1, 2], [3, 4]], [[0, 1], [1, 0]])
    np.testing.assert_array_equal(out, [[2, 1], [4, 3]])


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
    np.testing.assert_allclose(linalg.matmul(a, b), naive_matmul(a, b), rtol=0, atol=1e-12)


def test_matmul_dimension_mismatch():
    with pytest.raises(ValueError):
        linalg.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        linalg.invert([[1.0, np.nan], [0.0, 1.0]])


def test_invert_identity_and_diagonal():
    np.testing.assert_array_equal(linalg.invert(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(linalg.invert(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))


def test_invert_needs_pivoting():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(linalg.invert(a), a)


def test_invert_singular():
    with pytest.raises(linalg.SingularMatrixError):
        linalg.invert([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(linalg.SingularMatrixError):
        linalg.invert(np.zeros((2, 2)))


def test_singularity_is_scale_relative():
    # tiny but perfectly conditioned
    a = 1e-20 * np.array([[2.0, 1.0], [1.0, 3.0]])
    np.testing.assert_allclose(a @ linalg.invert(a), np.eye(2), atol=1e-10)


def test_invert_lambda_matches_sherman_morrison():
    mu, N = np.array([0.5, 0.5]), 3
    Lam = N * (np.diag(mu) + (N - 1) * np.outer(mu, mu))
    # closed form by hand: (1/3) * (diag(2, 2) - (2/3) * ones)
    expected = (np.diag([2.0, 2.0]) - 2.0 / 3.0 * np.ones((2, 2))) / 3.0
    np.testing.assert_allclose(linalg.invert(Lam), expected, atol=1e-12)
    np.testing.assert_allclose(chain.second_moment_inverse(mu, N), expected, atol=1e-12)


def test_solve_linear():
    np.testing.assert_allclose(linalg.solve_linear(np.eye(3), [1.0, 2.0, 3.0]), [1, 2, 3])
    np.testing.assert_allclose(linalg.solve_linear(np.diag([2.0, 5.0]), [4.0, 10.0]), [2, 2])


def test_solve_linear_residual(rng):
    a = rng.normal(size=(6, 6)) + 6 * np.eye(6)
    b = rng.normal(size=6)
    x = linalg.solve_linear(a, b)
    assert np.max(np.abs(a @ x - b)) < 1e-10


def test_solve_linear_shape_errors():
    with pytest.raises(ValueError):
        linalg.solve_linear(np.eye(2), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        linalg.solve_linear(np.ones((2, 3)), [1.0, 2.0])


well_conditioned = st.integers(min_value=1, max_value=8).flatmap(
    lambda n: st.lists(st.floats(-1, 1), min_size=n * n, max_size=n * n).map(
        lambda v, n=n: np.array(v).reshape(n, n) + (n + 1) * np.eye(n)
    )
)


@settings(max_examples=60, deadline=None)
@given(well_conditioned)
def test_invert_properties(a):
    inv = linalg.invert(a)
    assert np.max(np.abs(a @ inv - np.eye(a.shape[0]))) < 1e-10
    assert np.max(np.abs(linalg.invert(inv) - a)) < 1e-8


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(0.01, 1.0), min_size=1, max_size=10),
    st.integers(min_value=1, max_value=10_000),
)
def test_sherman_morrison_equivalence(weights, N):
    mu = np.array(weights) / np.sum(weights)
    Lam = N * (np.diag(mu) + (N - 1) * np.outer(mu, mu))
    closed = (np.diag(1.0 / mu) - (N - 1) / N * np.ones((mu.size, mu.size))) / N
    np.testing.assert_allclose(linalg.invert(Lam), closed, rtol=0, atol=1e-10 * max(1.0, np.abs(closed).max()))

import numpy as np
import pytest

from margin_engine.errors import DimensionError, EmptyInputError, NonFiniteError
from margin_engine.linalg import as_matrix, as_vector, matmul, matrix_norm, spectral_norm

from .conftest import jacobi_singular_values


def test_matmul_identity_and_hand_arithmetic():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), m), m)
    assert np.array_equal(matmul(m, np.ones((2, 1))), np.array([[3.0], [7.0]]))


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError, match="2x3 by 2x2"):
        matmul(np.ones((2, 3)), np.ones((2, 2)))


def test_constructors_reject_bad_input():
    with pytest.raises(NonFiniteError):
        as_matrix([[1.0, np.nan]])
    with pytest.raises(DimensionError):
        as_matrix([1.0, 2.0])
    with pytest.raises(NonFiniteError):
        as_vector([np.inf])
    assert as_vector([1, 2]).dtype == np.float64


def test_norm_examples():
    assert spectral_norm(np.diag([3.0, -1.0])) == pytest.approx(3.0, rel=1e-12)
    assert matrix_norm(np.array([[0.0, 2.0], [0.0, 0.0]]), "frobenius") == 2.0
    assert spectral_norm(np.zeros((3, 2))) == 0.0


def test_grouped_norms_by_column():
    m = np.array([[3.0, -1.0], [4.0, 0.0]])
    assert matrix_norm(m, "two_one") == pytest.approx(5.0 + 1.0)
    assert matrix_norm(m, "one_two") == pytest.approx(np.sqrt(7.0**2 + 1.0**2))
    assert matrix_norm(m, "one_inf") == pytest.approx(4.0)
    assert matrix_norm(m, "one_inf", transpose=True) == pytest.approx(7.0)


def test_unknown_or_empty():
    with pytest.raises(ValueError):
        matrix_norm(np.eye(2), "nuclear")
    with pytest.raises(EmptyInputError):
        matrix_norm(np.zeros((0, 3)), "frobenius")


def test_spectral_norm_matches_jacobi_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        rows, cols = rng.integers(1, 21, size=2)
        m = rng.standard_normal((rows, cols))
        expected = jacobi_singular_values(m)[0]
        assert spectral_norm(m) == pytest.approx(expected, rel=1e-8)


def test_spectral_norm_is_deterministic():
    m = np.random.default_rng(1).standard_normal((7, 4))
    assert spectral_norm(m) == spectral_norm(m)


def test_spectral_norm_below_frobenius():
    rng = np.random.default_rng(31)
    for _ in range(30):
        m = rng.normal(size=tuple(rng.integers(1, 9, size=2)))
        assert spectral_norm(m) <= matrix_norm(m, "frobenius") * (1 + 1e-12)


@pytest.mark.parametrize("c", [-3.5, 0.25, 7.0])
def test_spectral_norm_scale_equivariance(c):
    m = np.random.default_rng(5).normal(size=(6, 4))
    assert spectral_norm(c * m) == pytest.approx(abs(c) * jacobi_singular_values(m)[0], rel=1e-9)
    assert spectral_norm(c * m) == pytest.approx(abs(c) * spectral_norm(m), rel=1e-9)

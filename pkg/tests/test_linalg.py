import numpy as np
import pytest

from dni_lab.errors import NonFiniteError, ShapeError, UndefinedCorrelationError
from dni_lab.linalg import (
    Rng,
    add,
    as_matrix,
    check_finite,
    column_space_projector,
    frobenius_norm,
    matmul,
    pearson,
    relative_error,
    transpose,
)


def test_matmul_checks_shapes():
    a = np.ones((2, 3))
    assert matmul(a, np.ones((3, 4))).shape == (2, 4)
    with pytest.raises(ShapeError) as excinfo:
        matmul(a, np.ones((2, 4)))
    assert "(2, 3)" in str(excinfo.value) and "(2, 4)" in str(excinfo.value)


def test_add_and_transpose():
    a = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(transpose(a), a.T)
    assert transpose(a).flags["C_CONTIGUOUS"]
    with pytest.raises(ShapeError):
        add(a, a.T)


def test_as_matrix_rejects_vectors():
    assert as_matrix([[1, 2]]).dtype == np.float64
    with pytest.raises(ShapeError):
        as_matrix([1.0, 2.0])


def test_frobenius_norm():
    assert frobenius_norm(np.array([[3.0, 4.0]])) == 5.0


def test_check_finite_names_quantity():
    check_finite("ok", np.zeros((2, 2)))
    with pytest.raises(NonFiniteError, match="SG target"):
        check_finite("SG target", np.array([[1.0, np.nan]]))


def test_pearson():
    u = np.array([1.0, 2.0, 3.0, 4.0])
    assert pearson(u, 2 * u + 1) == pytest.approx(1.0)
    assert pearson(u, -u) == pytest.approx(-1.0)
    with pytest.raises(UndefinedCorrelationError):
        pearson(u, np.ones(4))
    with pytest.raises(ShapeError):
        pearson(u, u[:3])


def test_rng_is_deterministic_per_key():
    a = Rng(9).child(1, 2).gaussian(3, 3)
    b = Rng(9).child(1, 2).gaussian(3, 3)
    c = Rng(9).child(1, 3).gaussian(3, 3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_rng_choice_without_replacement():
    idx = Rng(0).choice(10, 10)
    assert sorted(idx.tolist()) == list(range(10))


def test_relative_error_floor():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)


def test_column_space_projector_is_idempotent():
    m = Rng(2).gaussian(5, 2)
    p = column_space_projector(m)
    np.testing.assert_allclose(p @ p, p, atol=1e-12)
    np.testing.assert_allclose(p @ m, m, atol=1e-12)


def test_rng_gaussian_moments():
    sample = Rng(11).gaussian(100000, 1)
    assert abs(sample.mean()) < 0.05
    assert abs(sample.var() - 1.0) < 0.05


def test_matmul_transpose_and_associativity():
    rng = Rng(4)
    a, b, c = rng.child(0).gaussian(3, 4), rng.child(1).gaussian(4, 5), rng.child(2).gaussian(5, 2)
    np.testing.assert_allclose(transpose(matmul(a, b)), matmul(transpose(b), transpose(a)), atol=1e-12)
    np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), atol=1e-12)


def test_pearson_is_symmetric_and_affine_invariant():
    rng = Rng(6)
    u, v = rng.child(0).gaussian(50, 1).ravel(), rng.child(1).gaussian(50, 1).ravel()
    r = pearson(u, v)
    assert pearson(v, u) == pytest.approx(r, abs=1e-12)
    assert pearson(3.0 * u + 2.0, v) == pytest.approx(r, abs=1e-12)
    assert pearson(u, 0.5 * v - 7.0) == pytest.approx(r, abs=1e-12)

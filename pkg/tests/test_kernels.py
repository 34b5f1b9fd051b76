import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal

from fairkernel.exceptions import DimensionMismatchError, NotPSDError, ValidationError
from fairkernel.kernels import (
    KernelMatrix,
    as_kernel,
    check_psd,
    is_psd,
    linear_kernel,
    rbf_cross_kernel,
    rbf_kernel,
)

features = st.integers(1, 12).flatmap(lambda n: st.integers(1, 4).flatmap(
    lambda d: arrays(np.float64, (n, d), elements=st.floats(-5, 5))))


def test_rbf_unit_diagonal(rng):
    K = rbf_kernel(rng.standard_normal((7, 3)), 0.3)
    assert_array_equal(np.diag(K.data), np.ones(7))


def test_rbf_small_gamma_is_all_ones(rng):
    K = rbf_kernel(rng.standard_normal((6, 2)), 1e-12)
    assert_allclose(K.data, 1.0, atol=1e-9)


def test_rbf_hand_value():
    K = rbf_kernel(np.array([[0.0, 0.0], [1.0, 1.0]]), 0.5)
    assert K.data[0, 1] == pytest.approx(np.exp(-1.0), rel=1e-15)


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_rbf_rejects_non_finite(bad):
    X = np.ones((3, 2))
    X[1, 1] = bad
    with pytest.raises(ValidationError):
        rbf_kernel(X)


@pytest.mark.parametrize("gamma", [0.0, -1.0, np.nan])
def test_rbf_rejects_bad_gamma(gamma):
    with pytest.raises(ValidationError):
        rbf_kernel(np.ones((2, 2)), gamma)


@given(features, st.floats(1e-3, 5.0))
def test_rbf_symmetric_and_psd(X, gamma):
    K = rbf_kernel(X, gamma)
    assert_array_equal(K.data, K.data.T)
    assert is_psd(K)


@given(features, st.floats(1e-3, 5.0))
def test_cross_on_itself_matches_square(X, gamma):
    assert_allclose(rbf_cross_kernel(X, X, gamma).data, rbf_kernel(X, gamma).data,
                    rtol=0, atol=1e-12)


def test_cross_single_training_point_reproduces_row(rng):
    X = rng.standard_normal((5, 2))
    K = rbf_kernel(X, 0.7)
    row = rbf_cross_kernel(X[3:4], X, 0.7)
    assert_allclose(row.data[0], K.data[3], atol=1e-12)


def test_cross_matches_scalar_loop(rng):
    Xt, Xs, g = rng.standard_normal((3, 2)), rng.standard_normal((5, 2)), 0.4
    expected = np.array([[np.exp(-g * sum((a - b) ** 2)) for b in Xs] for a in Xt])
    assert_allclose(rbf_cross_kernel(Xt, Xs, g).data, expected, rtol=1e-13)


def test_cross_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        rbf_cross_kernel(np.ones((2, 3)), np.ones((4, 2)))


def test_cross_and_square_share_fingerprint(rng):
    X = rng.standard_normal((6, 2))
    assert rbf_kernel(X, 0.1).fingerprint == rbf_cross_kernel(X[:2], X, 0.1).fingerprint
    assert rbf_kernel(X, 0.1).fingerprint != rbf_kernel(X, 0.2).fingerprint


def test_linear_identity_rows():
    assert_array_equal(linear_kernel(np.eye(2)).data, np.eye(2))


def test_linear_single_row():
    assert_array_equal(linear_kernel(np.array([[1.0, 2.0]])).data, [[5.0]])


def test_linear_matches_scalar_loop(rng):
    A, B = rng.standard_normal((4, 3)), rng.standard_normal((6, 3))
    expected = np.array([[sum(a * b) for b in B] for a in A])
    K = linear_kernel(A, B)
    assert K.kind == "cross"
    assert_allclose(K.data, expected, rtol=1e-12)


def test_linear_reproduces_gram(rng):
    G = rng.standard_normal((8, 8))
    GGt = G @ G.T
    assert np.linalg.norm(linear_kernel(G).data - GGt) <= 1e-10 * np.linalg.norm(GGt)


def test_linear_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        linear_kernel(np.ones((2, 3)), np.ones((2, 2)))


def test_check_psd_rejects_indefinite():
    with pytest.raises(NotPSDError):
        check_psd(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_check_psd_rejects_asymmetric():
    with pytest.raises(NotPSDError):
        check_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_kernel_matrix_validation():
    with pytest.raises(DimensionMismatchError):
        KernelMatrix(np.ones((2, 3)), kind="square")
    with pytest.raises(ValidationError):
        KernelMatrix(np.ones((2, 2)), kind="other")


def test_as_kernel_fingerprints_square_only(rng):
    A = rng.standard_normal((3, 3))
    assert as_kernel(A @ A.T).fingerprint is not None
    assert as_kernel(A, kind="cross").fingerprint is None

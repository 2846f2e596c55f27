import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from singletrack.eigen import (
    EigenvalueConvergenceError,
    characteristic_polynomial,
    eigenvalues,
    max_mismatch,
    qr_eigenvalues,
    sort_eigenvalues,
)


def test_characteristic_polynomial_companion():
    # Companion matrix of (x-1)(x-2)(x-3) = x^3 - 6x^2 + 11x - 6.
    C = np.array([[6.0, -11.0, 6.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    np.testing.assert_allclose(characteristic_polynomial(C), [1, -6, 11, -6], atol=1e-12)
    np.testing.assert_allclose(eigenvalues(C), [3, 2, 1], atol=1e-12)


def test_rotation_generator():
    lam = eigenvalues(np.array([[0.0, -2.0], [2.0, 0.0]]))
    np.testing.assert_allclose(lam, [-2j, 2j], atol=1e-14)


@pytest.mark.parametrize("M", [np.eye(4), 3.0 * np.eye(3), np.array([[2.0, 1.0], [0.0, 2.0]]),
                               np.diag([1.0, 1.0, -2.0, -2.0])])
def test_repeated_eigenvalues(M):
    np.testing.assert_allclose(np.sort_complex(eigenvalues(M)), np.sort_complex(np.linalg.eigvals(M)), atol=1e-7)


def test_zero_and_empty():
    np.testing.assert_array_equal(eigenvalues(np.zeros((3, 3))), np.zeros(3))
    assert eigenvalues(np.zeros((0, 0))).size == 0


def test_input_validation():
    with pytest.raises(ValueError, match="square"):
        eigenvalues(np.zeros((2, 3)))
    with pytest.raises(ValueError, match="4x4"):
        eigenvalues(np.eye(5))
    with pytest.raises(ValueError, match="non-finite"):
        eigenvalues(np.array([[np.nan]]))


def test_conjugate_symmetry_exact():
    rng = np.random.default_rng(3)
    for _ in range(50):
        lam = eigenvalues(rng.normal(size=(4, 4)))
        np.testing.assert_array_equal(np.sort_complex(lam), np.sort_complex(np.conj(lam)))


def test_sort_order():
    z = sort_eigenvalues([-1 + 2j, 0.5, -1 - 2j])
    np.testing.assert_array_equal(z, [0.5, -1 - 2j, -1 + 2j])


def test_max_mismatch():
    assert max_mismatch([1, 2j], [2j, 1 + 1e-3]) == pytest.approx(1e-3)
    with pytest.raises(ValueError):
        max_mismatch([1], [1, 2])


def test_agrees_with_lapack_on_random_matrices():
    rng = np.random.default_rng(0)
    worst = max(max_mismatch(eigenvalues(M), qr_eigenvalues(M)) for M in rng.normal(size=(300, 4, 4)))
    assert worst <= 1e-8


@settings(max_examples=150, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(-100, 100, allow_subnormal=False)))
def test_property_roots_are_eigenvalues(M):
    try:
        lam = eigenvalues(M)
    except EigenvalueConvergenceError:
        # Refusing is allowed; returning an unverified root is not.
        return
    scale = max(1.0, np.abs(M).max())
    assert np.sum(lam) == pytest.approx(np.trace(M), abs=1e-8 * scale * 4)
    assert max_mismatch(lam, np.linalg.eigvals(M)) <= 1e-5 * scale

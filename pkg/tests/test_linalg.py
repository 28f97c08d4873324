import math

import numpy as np
import pytest
from scipy.stats import ortho_group

from dynamics.errors import ConvergenceError, NearDefectiveError, NumericalError
from utils.linalg import (
    ScaledProduct,
    apply_kron2,
    apply_swap2,
    eig_sorted,
    leading_eigenvalue,
    power_iteration,
    scaled_multiply,
    svd_sorted,
)


def _random_complex(n, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


# ========== SCALED PRODUCTS ==========

def test_identity_product():
    acc = ScaledProduct.identity(4)
    assert acc.t == 0 and acc.log_scale == 0.0
    np.testing.assert_array_equal(acc.matrix(), np.eye(4))


def test_from_matrix_normalizes_largest_column():
    m = np.diag([3.0, 1.0, 0.5]).astype(complex)
    acc = ScaledProduct.from_matrix(m)
    assert acc.log_scale == pytest.approx(math.log(3.0))
    np.testing.assert_allclose(acc.matrix(), m, atol=1e-14)


def test_core_must_be_normalized():
    with pytest.raises(ValueError):
        ScaledProduct(2 * np.eye(3))


def test_non_finite_core_is_rejected():
    m = np.eye(2, dtype=complex)
    m[1, 0] = np.nan
    with pytest.raises(NumericalError):
        ScaledProduct.from_matrix(m)


def test_core_is_read_only():
    acc = ScaledProduct.identity(2)
    with pytest.raises(ValueError):
        acc.core[0, 0] = 2


def test_scaled_multiply_matches_direct_product():
    acc = ScaledProduct.identity(5)
    direct = np.eye(5, dtype=complex)
    for seed in range(6):
        q = _random_complex(5, seed)
        acc = scaled_multiply(acc, q)
        direct = q @ direct
    assert acc.t == 6
    np.testing.assert_allclose(acc.matrix(), direct, rtol=1e-10, atol=1e-10 * np.abs(direct).max())


def test_long_products_do_not_overflow():
    acc = ScaledProduct.identity(3)
    for _ in range(5000):
        acc = scaled_multiply(acc, 2 * np.eye(3))
    assert acc.log_scale == pytest.approx(5000 * math.log(2), rel=1e-12)
    np.testing.assert_allclose(acc.core, np.eye(3), atol=1e-12)


def test_scaled_multiply_shape_mismatch():
    with pytest.raises(ValueError):
        scaled_multiply(ScaledProduct.identity(3), np.eye(4))


def test_scaled_multiply_needs_square_step():
    with pytest.raises(ValueError):
        scaled_multiply(ScaledProduct.identity(3), np.ones((4, 3)))


# ========== DECOMPOSITIONS ==========

def test_eigenvalues_sorted_by_modulus():
    snapshot = eig_sorted(np.diag([1.0, -3.0, 2j]))
    np.testing.assert_allclose(snapshot.eigenvalues, [-3.0, 2j, 1.0])


def test_equal_moduli_break_ties_by_real_part():
    snapshot = eig_sorted(np.diag([1j, 1.0, -1.0]))
    np.testing.assert_allclose(snapshot.eigenvalues, [1.0, 1j, -1.0])


def test_left_and_right_modes_reconstruct_the_matrix():
    m = _random_complex(6, 3)
    snapshot = eig_sorted(m, with_left=True)
    assert not snapshot.flagged
    assert snapshot.residual < 1e-8
    np.testing.assert_allclose(snapshot.reconstruct(), m, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(snapshot.right_modes, axis=0), 1.0)


def test_reconstruct_needs_left_modes():
    with pytest.raises(ValueError):
        eig_sorted(np.eye(2)).reconstruct()


def test_defective_matrix_is_flagged():
    jordan = np.array([[1.0, 1.0], [0.0, 1.0]])
    with pytest.raises(NearDefectiveError):
        eig_sorted(jordan, with_left=True)
    assert eig_sorted(jordan, with_left=True, strict=False).flagged


def test_eig_needs_square_matrix():
    with pytest.raises(ValueError):
        eig_sorted(np.ones((2, 3)))


def test_singular_values_descending():
    snapshot = svd_sorted(np.diag([0.5, 4.0, 2.0]))
    np.testing.assert_allclose(snapshot.singular_values, [4.0, 2.0, 0.5])
    assert snapshot.ratio() == pytest.approx(0.5)


# ========== KRONECKER OPERATORS ==========

def test_apply_kron2_matches_explicit_kron():
    a, b = _random_complex(3, 1), _random_complex(3, 2)
    v = _random_complex(3, 4).reshape(-1)
    np.testing.assert_allclose(apply_kron2(a, b, v), np.kron(a, b) @ v, atol=1e-12)


def test_apply_kron2_rejects_wrong_length():
    with pytest.raises(ValueError):
        apply_kron2(np.eye(3), np.eye(3), np.ones(8))


def test_apply_swap2_exchanges_tensor_legs():
    x, y = np.arange(3.0), np.array([1.0, -1.0, 2.0])
    np.testing.assert_allclose(apply_swap2(np.kron(x, y)), np.kron(y, x))


# ========== EIGENSOLVERS ==========

def _dominant_operator(n=30):
    q = ortho_group.rvs(n, random_state=5)
    values = np.concatenate(([5.0], np.linspace(-2.0, 2.0, n - 1)))
    return q @ np.diag(values) @ q.T


def test_power_iteration_finds_spectral_radius():
    m = np.diag([3.0, 1.0, 0.5])
    result = power_iteration(lambda v: m @ v, np.ones(3), tol=1e-14)
    assert result.converged
    assert result.value == pytest.approx(3.0, rel=1e-10)


def test_power_iteration_raises_when_iterations_run_out():
    m = np.diag([1.0, 0.999])
    with pytest.raises(ConvergenceError) as info:
        power_iteration(lambda v: m @ v, np.ones(2), tol=1e-16, max_iter=2)
    assert info.value.iterations == 2


@pytest.mark.parametrize("method", ["dense", "arnoldi", "power"])
def test_leading_eigenvalue_methods_agree(method):
    m = _dominant_operator()
    value = leading_eigenvalue(lambda v: m @ v, 30, method=method, tol=1e-14, max_iter=10_000)
    assert value == pytest.approx(5.0, rel=1e-7)


def test_small_operators_are_solved_densely():
    assert leading_eigenvalue(lambda v: 2 * v, 3, method="power") == pytest.approx(2.0)


def test_unknown_solver():
    with pytest.raises(ValueError):
        leading_eigenvalue(lambda v: v, 10, method="lanczos")


def test_dense_limit_is_enforced():
    with pytest.raises(ValueError):
        leading_eigenvalue(lambda v: v, 50, method="dense", dense_limit=10)

import numpy as np
import pytest

from lspkit.errors import ContractViolation, UnsupportedSize
from lspkit.numerics import (
    frobenius_norm,
    load_matrix,
    matmul,
    numerical_rank,
    save_matrix,
    spectral_norm,
    svd_thin,
)

from .consts import MATMUL_SMALL


def test_matmul_small_cases():
    a, b, expected = (np.array(x) for x in MATMUL_SMALL)
    assert np.array_equal(matmul(a, b), expected)

    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), m), m)


def test_matmul_triple_loop_oracle():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((5, 4))
    b = rng.standard_normal((4, 3))
    oracle = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(4):
                oracle[i, j] += a[i, k] * b[k, j]
    assert np.allclose(matmul(a, b), oracle, rtol=1e-12, atol=1e-12)


def test_matmul_mismatch():
    with pytest.raises(ContractViolation):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_associative():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a, b, c = (rng.standard_normal(s) for s in [(4, 6), (6, 5), (5, 3)])
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        assert frobenius_norm(left - right) <= 1e-9 * frobenius_norm(left)


def test_frobenius_norm():
    assert frobenius_norm(np.array([[3.0, 4.0]])) == 5.0
    assert frobenius_norm(np.zeros((3, 3))) == 0.0

    a = np.random.default_rng(3).standard_normal((8, 8))
    oracle = sum(x * x for x in a.ravel()) ** 0.5
    assert frobenius_norm(a) == pytest.approx(oracle, rel=1e-12)


def test_spectral_norm():
    assert spectral_norm(np.diag([3.0, 1.0])).value == pytest.approx(3.0, rel=1e-9)
    assert spectral_norm(np.eye(5)).value == pytest.approx(1.0, rel=1e-9)

    zero = spectral_norm(np.zeros((3, 2)))
    assert zero.value == 0.0 and zero.converged

    a = np.random.default_rng(4).standard_normal((6, 4))
    result = spectral_norm(a)
    assert result.converged
    assert abs(result.value - svd_thin(a).s[0]) <= 1e-8 * result.value


def test_spectral_norm_rejects_bad_tol():
    with pytest.raises(ContractViolation):
        spectral_norm(np.eye(2), tol=0.0)


def test_norm_inequalities():
    rng = np.random.default_rng(5)
    for _ in range(10):
        a = rng.standard_normal((7, 5)) @ rng.standard_normal((5, 6))
        two = spectral_norm(a).value
        fro = frobenius_norm(a)
        rank = numerical_rank(a)
        assert two <= fro * (1 + 1e-9)
        assert fro <= np.sqrt(rank) * two * (1 + 1e-9)


def test_svd_small_cases():
    assert np.allclose(svd_thin(np.diag([2.0, 1.0])).s, [2.0, 1.0])

    u = np.array([1.0, 2.0, 2.0])
    v = np.array([3.0, 4.0])
    s = svd_thin(np.outer(u, v)).s
    assert s[0] == pytest.approx(15.0, rel=1e-12)
    assert abs(s[1]) <= 1e-12


@pytest.mark.parametrize("shape", [(8, 5), (5, 8), (6, 6), (1, 4), (9, 1)])
def test_svd_reconstruction(shape):
    a = np.random.default_rng(6).standard_normal(shape)
    U, s, V = svd_thin(a)
    k = min(shape)
    assert U.shape == (shape[0], k) and V.shape == (shape[1], k)
    assert np.all(s >= 0) and np.all(np.diff(s) <= 0)
    assert frobenius_norm(U.T @ U - np.eye(k)) <= 1e-8
    assert frobenius_norm(V.T @ V - np.eye(k)) <= 1e-8
    assert frobenius_norm(U @ np.diag(s) @ V.T - a) <= 1e-8 * frobenius_norm(a)


def test_svd_rank_deficient_completes_u():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 4))
    U, s, V = svd_thin(a)
    assert numerical_rank(a) == 2
    assert frobenius_norm(U.T @ U - np.eye(4)) <= 1e-8
    assert frobenius_norm(U @ np.diag(s) @ V.T - a) <= 1e-8 * frobenius_norm(a)


def test_svd_permutation_invariant():
    rng = np.random.default_rng(8)
    a = rng.standard_normal((7, 5))
    permuted = a[rng.permutation(7)][:, rng.permutation(5)]
    assert np.allclose(svd_thin(a).s, svd_thin(permuted).s, atol=1e-9)


def test_svd_size_guard():
    with pytest.raises(UnsupportedSize):
        svd_thin(np.zeros((513, 513)))


def test_matrix_csv_round_trip(tmp_path):
    a = np.random.default_rng(9).standard_normal((4, 3))
    save_matrix(tmp_path / "a.csv", a)
    assert np.array_equal(load_matrix(tmp_path / "a.csv"), a)

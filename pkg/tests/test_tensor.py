import numpy as np
import pytest

from tmmkit.tensor import (
    CapacityError,
    DenseTensor,
    jacobi_singular_values,
    matricize,
    numeric_rank,
    tensor_product,
)


def test_tensor_product_basis_vectors():
    a = DenseTensor(np.array([1.0, 0.0]))
    b = DenseTensor(np.array([0.0, 1.0]))
    out = tensor_product(a, b)
    assert out.order == 2
    np.testing.assert_array_equal(out.entries, [[0.0, 1.0], [0.0, 0.0]])


def test_tensor_product_scalar_scaling():
    scalar = DenseTensor(np.array(2.0))
    vec = DenseTensor(np.array([3.0, 4.0]))
    out = tensor_product(scalar, vec)
    np.testing.assert_array_equal(out.entries, [6.0, 8.0])


def test_tensor_product_keeps_simplex():
    a = DenseTensor(np.array([0.5, 0.5]), is_distribution=True)
    b = DenseTensor(np.array([0.3, 0.7]), is_distribution=True)
    out = tensor_product(a, b)
    np.testing.assert_allclose(out.entries, [[0.15, 0.35], [0.15, 0.35]])
    assert out.is_distribution
    assert abs(out.entries.sum() - 1.0) < 1e-12


def test_tensor_product_budget_guard():
    big = DenseTensor(np.zeros((2,) * 12))
    mid = DenseTensor(np.zeros((2,) * 13))
    with pytest.raises(CapacityError):
        tensor_product(big, mid)


def test_distribution_flag_validation():
    with pytest.raises(ValueError):
        DenseTensor(np.array([0.5, 0.6]), is_distribution=True)
    with pytest.raises(ValueError):
        DenseTensor(np.array([-0.1, 1.1]), is_distribution=True)


def test_matricize_identity_on_matrices():
    m = np.arange(6, dtype=float).reshape(2, 3)
    np.testing.assert_array_equal(matricize(DenseTensor(m)), m)


def test_matricize_index_formula():
    # Entry at 1-indexed (2,1,1,2) with all dims 2, located via
    # row = 1 + sum_i (d_{2i-1}-1) prod_{j>i} M_{2j-1}, analogously for cols.
    d = (2, 1, 1, 2)
    dims = (2, 2, 2, 2)
    row = 1 + (d[0] - 1) * dims[2] + (d[2] - 1) * 1
    col = 1 + (d[1] - 1) * dims[3] + (d[3] - 1) * 1
    assert (row, col) == (3, 2)
    arr = np.zeros(dims)
    arr[1, 0, 0, 1] = 5.0
    m = matricize(DenseTensor(arr))
    assert m[row - 1, col - 1] == 5.0
    assert np.count_nonzero(m) == 1


def test_matricize_rejects_odd_order():
    with pytest.raises(ValueError):
        matricize(DenseTensor(np.zeros((2, 2, 2))))


def test_matricize_kronecker_identity():
    rng = np.random.default_rng(0)
    for _ in range(10):
        a = DenseTensor(rng.normal(size=(2, 3)))
        b = DenseTensor(rng.normal(size=(3, 2)))
        lhs = matricize(tensor_product(a, b))
        rhs = np.kron(matricize(a), matricize(b))
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    # and brute-force over every index on a fixed small case
    a = DenseTensor(rng.normal(size=(2, 2)))
    b = DenseTensor(rng.normal(size=(2, 2)))
    prod = tensor_product(a, b)
    m = matricize(prod)
    for idx in np.ndindex(*prod.dims):
        d = [i + 1 for i in idx]
        row = (d[0] - 1) * 2 + (d[2] - 1)
        col = (d[1] - 1) * 2 + (d[3] - 1)
        assert m[row, col] == prod.entries[idx]


def test_matricize_linearity():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(2, 3, 2, 3))
    b = rng.normal(size=(2, 3, 2, 3))
    alpha, beta = 0.7, -2.5
    lhs = matricize(DenseTensor(alpha * a + beta * b))
    rhs = alpha * matricize(DenseTensor(a)) + beta * matricize(DenseTensor(b))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_numeric_rank_identity_zero_and_rank1():
    assert numeric_rank(np.eye(3), tol=1e-9) == 3
    assert numeric_rank(np.zeros((3, 3))) == 0
    rng = np.random.default_rng(2)
    u, v = rng.normal(size=8), rng.normal(size=8)
    assert numeric_rank(np.outer(u, v)) == 1


def test_numeric_rank_requires_positive_tol():
    with pytest.raises(ValueError):
        numeric_rank(np.eye(2), tol=0.0)


def test_jacobi_singular_values_match_lapack():
    rng = np.random.default_rng(3)
    for shape in [(4, 4), (6, 3), (3, 7)]:
        m = rng.normal(size=shape)
        ours = jacobi_singular_values(m)
        ref = np.linalg.svd(m, compute_uv=False)
        np.testing.assert_allclose(ours, ref, rtol=1e-10, atol=1e-12)


def test_matricization_rank_bounds_cp_rank():
    # The matricization rank of any tensor expanded from Z rank-1 terms is at
    # most Z.
    from tmmkit.factorization import expand_cp, random_cp

    rng = np.random.default_rng(4)
    for _ in range(10):
        z = int(rng.integers(1, 5))
        params = random_cp(4, 3, z, 1, rng)
        rank = numeric_rank(matricize(expand_cp(params, 0)))
        assert rank <= z

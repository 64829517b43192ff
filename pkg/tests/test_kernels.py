import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from boundaryrd.kernels import (
    basis,
    basis_biv,
    basis_dim,
    index_of,
    indices_of_degree,
    kernel_profile,
    kernel_weight,
    multi_indices,
    support_distance,
)

from oracles import kernel_value, monomials


def test_basis_order_p2():
    assert_array_equal(basis_biv([2.0, 3.0], 2), [1, 2, 3, 4, 9, 6])


@pytest.mark.parametrize("p", range(5))
def test_basis_dim_matches_indices(p):
    assert basis_dim(p) == len(multi_indices(p)) == (p + 1) * (p + 2) // 2
    assert basis_dim(p, d=1) == p + 1
    assert list(multi_indices(p)) == monomials(p)


def test_index_lookup():
    assert index_of((1, 1), 2) == 5
    assert index_of((3,), 4) == 3
    assert indices_of_degree(2) == ((2, 0), (0, 2), (1, 1))
    with pytest.raises(ValueError):
        index_of((5,), 2)


def test_basis_dispatch():
    u = np.array([[0.5], [2.0]])
    assert_allclose(basis(u, 2), [[1, 0.5, 0.25], [1, 2, 4]])


@pytest.mark.parametrize("kernel,at0", [("triangular", 1.0), ("epanechnikov", 0.75), ("uniform", 0.5)])
def test_profile_values(kernel, at0):
    assert kernel_profile(0.0, kernel) == at0
    assert kernel_profile(1.5, kernel) == 0.0


def test_radial_kernel_value():
    # offset (0.5, 0.5) with h=10: r = 0.0707, weight (1 - r) / 100
    w = kernel_weight([0.5, 0.5], 10.0, "triangular", "rad")
    assert_allclose(w, (1 - np.sqrt(0.005)) / 100, rtol=1e-15)


@pytest.mark.parametrize("kernel", ["triangular", "epanechnikov", "uniform"])
@pytest.mark.parametrize("kernel_type", ["prod", "rad"])
def test_kernel_weight_matches_loop(kernel, kernel_type):
    rng = np.random.default_rng(3)
    u = rng.uniform(-1, 1, size=(50, 2))
    h = np.array([0.7, 0.4])
    got = kernel_weight(u, h, kernel, kernel_type)
    want = [kernel_value(list(r), h, kernel, kernel_type) for r in u]
    assert_allclose(got, want, rtol=1e-14)


def test_kernel_weight_rejects_nonpositive_h():
    with pytest.raises(ValueError):
        kernel_weight([0.1, 0.1], [1.0, 0.0])


def test_support_distance():
    u = np.array([[3.0, -4.0]])
    assert support_distance(u, "prod")[0] == 4.0
    assert support_distance(u, "rad")[0] == 5.0
    assert support_distance(u, "prod", scale=[3.0, 8.0])[0] == 1.0

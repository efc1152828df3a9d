import numpy as np
import pytest
from math import comb

from ocppe.basis import BasisSpec, expand_basis, expand_basis_ddot


def test_expand_basis_example():
    # z = (d, x1, x2) = (2, 1, 3): linear, squares, then pairwise products.
    v = expand_basis(BasisSpec(2, True), 2.0, [1.0, 3.0])
    np.testing.assert_allclose(v, [2, 1, 3, 4, 1, 9, 2, 6, 3])


def test_ddot_example():
    dv = expand_basis_ddot(BasisSpec(2, True), 2.0, [1.0, 3.0])
    np.testing.assert_allclose(dv, [1, 0, 0, 4, 0, 0, 1, 3, 0])


@pytest.mark.parametrize("degree", [1, 2, 3])
@pytest.mark.parametrize("inter", [True, False])
def test_dimension_formula(degree, inter):
    spec = BasisSpec(degree, inter)
    for p in (1, 4, 30):
        q = p + 1
        expect = comb(q + degree, degree) - 1 if inter else q * degree
        assert spec.dimension(p) == expect == len(spec.terms(p))
    assert BasisSpec().dimension(30) == 527


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_ddot_matches_central_differences(degree, rng):
    spec = BasisSpec(degree, True)
    d = rng.standard_normal(20)
    x = rng.standard_normal((20, 3))
    b = spec.fit(d, x)
    h = 1e-5
    fd = (b.design(d + h, x) - b.design(d - h, x)) / (2 * h)
    np.testing.assert_allclose(b.ddesign(d, x), fd, rtol=1e-7, atol=1e-7)


def test_drop_collinear_removes_duplicates_and_constants(rng):
    d = rng.standard_normal(50)
    x = np.column_stack([rng.integers(0, 2, 50), np.ones(50)]).astype(float)
    b = BasisSpec(2, True, drop_collinear=True).fit(d, x)
    names = b.names()
    # x1^2 == x1 for binary x1, and every term in the constant x2 duplicates something.
    assert "x1^2" not in names and "x2" not in names
    B = b.design(d, x)
    assert np.linalg.matrix_rank(np.column_stack([np.ones(50), B])) == B.shape[1] + 1


def test_invalid_degree():
    with pytest.raises(ValueError):
        BasisSpec(4)

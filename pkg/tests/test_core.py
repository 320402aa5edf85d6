import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmirror.core import (
    CPoly,
    InvalidArgument,
    Quiver,
    char_poly,
    eigenvalues,
    generic_complex,
    generic_hbar,
    lstsq_solve,
    multiset_match,
    poly_dilate,
    poly_from_roots,
    poly_roots,
    rng_from_seed,
)


def test_poly_from_roots_empty():
    p = poly_from_roots([], leading=1)
    assert p.degree == 0
    assert p(17.0) == 1.0


def test_poly_from_roots_hand_expansion():
    p = poly_from_roots([2, 3], leading=1)
    assert np.allclose(p.coeffs, [6, -5, 1])


def test_poly_from_roots_conjugate_pair():
    p = poly_from_roots([1j, -1j], leading=2)
    assert np.allclose(p.coeffs, [2, 0, 2])


def test_poly_from_roots_zero_leading():
    with pytest.raises(InvalidArgument):
        poly_from_roots([1.0], leading=0)


def test_poly_dilate_linear():
    hbar = 0.7 + 0.2j
    p = CPoly([-1.5, 1.0])  # z - 1.5
    q = poly_dilate(p, hbar)
    assert np.allclose(q.coeffs, [-1.5, hbar])


def test_poly_dilate_quadratic():
    p = CPoly([1.0, 0.0, 1.0])  # z^2 + 1
    q = poly_dilate(p, 2.0)
    assert np.allclose(q.coeffs, [1.0, 0.0, 4.0])


def test_poly_dilate_constant():
    p = CPoly([3.0])
    assert np.allclose(poly_dilate(p, 5.0).coeffs, [3.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=5), st.integers(min_value=1, max_value=10**6))
def test_dilate_root_scaling_property(nroots, seed):
    # dilate(prod (z - r), q) = q^n prod (z - r/q)
    rng = rng_from_seed(seed)
    roots = generic_complex(rng, nroots) if nroots else []
    q = generic_complex(rng)
    lead = generic_complex(rng)
    left = poly_dilate(poly_from_roots(roots, lead), q)
    right = poly_from_roots([r / q for r in roots], lead * q ** nroots)
    assert np.allclose(left.coeffs, right.coeffs)


def test_trim_keeps_zero_poly_empty():
    p = CPoly([0.0, 0.0])
    assert p.is_zero()
    assert p.degree == -1


def test_poly_mul_div_roundtrip():
    a = CPoly([1.0, 2.0, 1.0])
    b = CPoly([-3.0, 1.0])
    quo, rem = (a * b).divmod(b)
    assert rem.is_zero()
    assert np.allclose(quo.coeffs, a.coeffs)


def test_char_poly_identity():
    p = char_poly(np.eye(2))
    assert np.allclose(p.coeffs, [1.0, -2.0, 1.0])  # (u-1)^2


def test_char_poly_diagonal():
    a, b = 1.3 + 0.1j, -0.4 + 2.0j
    p = char_poly(np.diag([a, b]))
    assert np.allclose(p.coeffs, [a * b, -(a + b), 1.0])


def test_char_poly_hand_cofactor():
    A = np.array([[3.0, 1.0], [-2.0, 0.0]])
    p = char_poly(A)
    assert np.allclose(p.coeffs, [2.0, -3.0, 1.0])  # u^2 - 3u + 2


def test_char_poly_nonsquare_rejected():
    with pytest.raises(InvalidArgument):
        char_poly(np.ones((2, 3)))


def test_eigenvalues_diagonal():
    vals = eigenvalues(np.diag([1.0, 2.0, 3.0]))
    ok, _ = multiset_match(vals, [1.0, 2.0, 3.0], tol=1e-9)
    assert ok


def test_eigenvalues_hand_quadratic():
    vals = eigenvalues(np.array([[3.0, 1.0], [-2.0, 0.0]]))
    ok, _ = multiset_match(vals, [1.0, 2.0], tol=1e-9)
    assert ok


def test_eigenvalues_nilpotent():
    vals = eigenvalues(np.array([[0.0, 1.0], [0.0, 0.0]]))
    assert np.allclose(vals, [0.0, 0.0])


def test_eigenvalues_block_diag_property():
    rng = rng_from_seed(7)
    A = generic_complex(rng, 9).reshape(3, 3)
    B = generic_complex(rng, 16).reshape(4, 4)
    blk = np.zeros((7, 7), dtype=complex)
    blk[:3, :3] = A
    blk[3:, 3:] = B
    combined = np.concatenate([eigenvalues(A), eigenvalues(B)])
    ok, err = multiset_match(eigenvalues(blk), combined, tol=1e-9)
    assert ok, err


def test_char_poly_root_residual_property():
    rng = rng_from_seed(11)
    for _ in range(5):
        n = int(rng.integers(2, 8))
        A = generic_complex(rng, n * n).reshape(n, n)
        p = char_poly(A)
        vals = poly_roots(p)
        bound = 1e-9 * (1.0 + np.linalg.norm(A)) ** n
        assert np.max(np.abs(p(vals))) < bound


def test_lstsq_identity():
    res = lstsq_solve(np.eye(3), [1.0, 2.0, 3.0])
    assert np.allclose(res.x, [1, 2, 3])
    assert res.residual < 1e-12
    assert not res.rank_deficient


def test_lstsq_mean_of_two_points():
    res = lstsq_solve(np.array([[1.0], [1.0]]), [1.0, 3.0])
    assert np.allclose(res.x, [2.0])
    assert abs(res.residual - np.sqrt(2.0)) < 1e-12


def test_lstsq_consistent_vandermonde():
    rng = rng_from_seed(3)
    coeffs = generic_complex(rng, 4)
    pts = generic_complex(rng, 9)
    V = np.vander(pts, 4, increasing=True)
    b = V @ coeffs
    res = lstsq_solve(V, b)
    assert res.residual < 1e-12
    assert np.allclose(res.x, coeffs)


def test_lstsq_rank_deficiency_flagged():
    A = np.array([[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]])
    res = lstsq_solve(A, [1.0, 1.0, 1.0])
    assert res.rank_deficient


def test_lstsq_residual_zero_iff_in_span():
    A = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    inside = lstsq_solve(A, [1.0, 2.0, 0.0])
    outside = lstsq_solve(A, [1.0, 2.0, 0.5])
    assert inside.residual < 1e-11
    assert outside.residual > 0.1


def test_multiset_match_tolerates_permutation():
    rng = rng_from_seed(5)
    a = generic_complex(rng, 6)
    b = a[::-1].copy()
    ok, err = multiset_match(a, b, tol=1e-12)
    assert ok and err < 1e-14


def test_multiset_match_detects_mismatch():
    ok, _ = multiset_match([1.0, 2.0], [1.0, 2.5], tol=1e-8)
    assert not ok


def test_generic_complex_modulus_band():
    rng = rng_from_seed(17)
    vals = generic_complex(rng, 500)
    mods = np.abs(vals)
    assert mods.min() >= 0.6 and mods.max() <= 1.8


def test_generic_hbar_avoids_roots_of_unity():
    rng = rng_from_seed(23)
    for _ in range(20):
        h = generic_hbar(rng)
        powers = h ** np.arange(1, 13)
        assert np.min(np.abs(powers - 1.0)) >= 0.05


def test_quiver_shape_checks():
    with pytest.raises(InvalidArgument):
        Quiver((0,), (1,))
    with pytest.raises(InvalidArgument):
        Quiver((1,), (0,))
    q = Quiver((1, 2), (0, 3))
    assert q.n == 2 and q.is_valid()


def test_quiver_validity_is_a_check_not_a_constructor_error():
    q = Quiver((2, 1), (0, 3))  # 2v_1 = 4 > v_2 + w_1 = 1
    assert not q.is_valid()

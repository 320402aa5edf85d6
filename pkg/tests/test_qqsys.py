import numpy as np
import pytest
from itertools import permutations

from qmirror import qqsys
from qmirror.branes import full_flag, grassmannian, section_degrees, xkl
from qmirror.bethe import ModelParams, SolveOptions, build_system, solve
from qmirror.core import (
    CPoly,
    InvalidArgument,
    Quiver,
    generic_complex,
    generic_hbar,
    multiset_match,
    poly_from_roots,
    rng_from_seed,
)
from qmirror.qqsys import (
    ChainInconsistent,
    DDInconsistent,
    Degenerate,
    IllConditioned,
    QQData,
    WronskianMismatch,
    backlund_qq,
    dd_scale,
    extend_chain,
    f_poly,
    from_solution,
    reconstruct_polys,
    solve_qminus,
    wronskian_extract,
)


def _generic_params(q, seed):
    rng = rng_from_seed(seed)
    return ModelParams(
        a=tuple(tuple(generic_complex(rng, w)) for w in q.w),
        xi=tuple(generic_complex(rng, q.n + 1)),
        hbar=generic_hbar(rng),
    )


def _raw_solutions(q, p, seed=3, starts=500):
    return solve(build_system(q, p, form="raw"), SolveOptions(seed=seed, starts=starts))


def _solved(q, seed, starts=500):
    p = _generic_params(q, seed)
    sols = _raw_solutions(q, p, starts=starts)
    assert sols, "no Bethe solutions found"
    return p, sols


def _coeff_err(x: CPoly, y: CPoly) -> float:
    d = x - y
    return 0.0 if d.is_zero() else float(np.linalg.norm(d.coeffs))


# -- Q^- from one node --------------------------------------------------------


def tp1_params(hbar=1 / 3):
    return ModelParams(a=((1.0, 2.0),), xi=(1.0, 0.37 + 0.41j), hbar=hbar)


def tp1_raw_roots(p):
    # cleared form of prod (s - h a)/(s - a) = (xi_2/xi_1) h^{w + 0 - v}
    a1, a2 = p.a[0]
    h = p.hbar
    k = (p.xi[1] / p.xi[0]) * h ** (2 - 1)
    lhs = np.polymul([1, -h * a1], [1, -h * a2])
    rhs = k * np.polymul([1, -a1], [1, -a2])
    return np.roots(lhs - rhs)


def test_tp1_qminus_identity_at_roots():
    p = tp1_params()
    for s in tp1_raw_roots(p):
        qm, res = solve_qminus([poly_from_roots((s,))], p, 1)
        assert res < 1e-9
        assert qm.degree == 1


def test_tp1_qminus_residual_off_root():
    p = tp1_params()
    s = tp1_raw_roots(p)[0] + 0.05
    _, res = solve_qminus([poly_from_roots((s,))], p, 1)
    assert res > 1e-3


def test_trivial_node_constant_qminus():
    # w = 0 and rank-matched neighbors leave a degree-zero unknown
    q = Quiver((1, 1), (0, 2))
    p, sols = _solved(q, seed=9, starts=200)
    data = from_solution(q, p, sols[0])
    assert data.qminus[0].degree == 0
    assert max(data.residuals) < 1e-8


def test_all_solutions_satisfy_identities_fullflag3():
    q = full_flag(3).reflected()
    p, sols = _solved(q, seed=11)
    assert len(sols) == 6
    for s in sols:
        data = from_solution(q, p, s)
        assert max(data.residuals) < 1e-8


def test_all_solutions_satisfy_identities_grassmannian24():
    q = grassmannian(2, 4)
    p, sols = _solved(q, seed=13, starts=300)
    assert len(sols) == 6
    for s in sols:
        data = from_solution(q, p, s)
        assert max(data.residuals) < 1e-8


# -- chain and section ---------------------------------------------------------


def test_extend_chain_single_node():
    p = tp1_params()
    s = tp1_raw_roots(p)[0]
    data = from_solution(Quiver((1,), (2,)), p,
                         _raw_solutions(Quiver((1,), (2,)), p, starts=100)[0])
    ext = extend_chain(data)
    assert ext.chain == {}
    assert tuple(x.degree for x in ext.section) == (1, 1)


def test_extend_chain_fullflag3():
    q = full_flag(3).reflected()
    p, sols = _solved(q, seed=11)
    ext = extend_chain(from_solution(q, p, sols[0]))
    assert sorted(ext.chain) == [(1, 2)]
    assert tuple(x.degree for x in ext.section) == (1, 1, 1)


def test_extend_chain_x22_degrees():
    q = xkl(2, 2, ascending=False)
    p, sols = _solved(q, seed=5, starts=400)
    ext = extend_chain(from_solution(q, p, sols[0]))
    assert tuple(x.degree for x in ext.section) == tuple(section_degrees(q))


@pytest.mark.parametrize("q", [
    full_flag(3).reflected(),
    full_flag(4).reflected(),
    xkl(2, 2, ascending=False),
])
def test_section_degrees_match_combinatorial_prediction(q):
    p, sols = _solved(q, seed=21, starts=600)
    ext = extend_chain(from_solution(q, p, sols[0]))
    assert tuple(x.degree for x in ext.section) == tuple(section_degrees(q))


def test_extend_chain_rejects_corrupt_base():
    q = full_flag(3).reflected()
    p, sols = _solved(q, seed=11)
    roots = [list(node) for node in sols[0].roots]
    roots[0][0] += 0.05
    qplus = tuple(poly_from_roots(node) for node in roots)
    qminus, residuals = [], []
    for i in range(1, q.n + 1):
        qm, res = solve_qminus(qplus, p, i)
        qminus.append(qm)
        residuals.append(res)
    bad = QQData(q, p, qplus, tuple(qminus), tuple(residuals))
    with pytest.raises(ChainInconsistent) as exc:
        extend_chain(bad)
    assert exc.value.level[0] == exc.value.level[1]  # flagged at a base level


# -- Backlund ----------------------------------------------------------------


def _tgr12_params():
    return ModelParams(
        a=((1.0 + 0.2j, -0.7 + 1.1j),),
        xi=(0.9 - 0.3j, 0.25 + 0.55j),
        hbar=0.41 + 0.13j,
    )


def test_backlund_conjugates_solutions_under_twist_swap():
    q = grassmannian(1, 2)
    p = _tgr12_params()
    swapped = ModelParams(a=p.a, xi=(p.xi[1], p.xi[0]), hbar=p.hbar)
    sols = _raw_solutions(q, p, seed=1, starts=100)
    sols_sw = _raw_solutions(q, swapped, seed=2, starts=100)
    assert len(sols) == len(sols_sw) == 2
    mapped = []
    for s in sols:
        b = backlund_qq(from_solution(q, p, s), 1)
        assert b.params.xi == swapped.xi
        assert max(b.residuals) < 1e-8
        mapped.extend(b.qplus[0].roots())
    orig = [r for s in sols_sw for r in s.roots[0]]
    ok, err = multiset_match(np.asarray(mapped), np.asarray(orig), tol=1e-7)
    assert ok and err < 1e-7


def test_backlund_is_an_involution():
    q = grassmannian(1, 2)
    p = _tgr12_params()
    data = from_solution(q, p, _raw_solutions(q, p, seed=1, starts=100)[0])
    twice = backlund_qq(backlund_qq(data, 1), 1)
    assert twice.params.xi == data.params.xi
    assert twice.quiver == data.quiver
    for x, y in zip(data.qplus + data.qminus, twice.qplus + twice.qminus):
        assert _coeff_err(x, y) < 1e-9


def test_backlund_complements_grassmannian_rank():
    q = grassmannian(1, 3)
    p = ModelParams(
        a=((1.0, 1.7 + 0.4j, -0.6 + 0.9j),),
        xi=(1.0, 0.31 + 0.62j),
        hbar=0.37 + 0.21j,
    )
    b = backlund_qq(from_solution(q, p, _raw_solutions(q, p, seed=4, starts=150)[0]), 1)
    assert b.quiver == grassmannian(2, 3)
    assert max(b.residuals) < 1e-8


def test_backlund_degenerate_on_coincident_roots():
    p = tp1_params()
    qplus = (poly_from_roots((0.5,)),)
    double = poly_from_roots((1.3, 1.3))  # forced collision in the image
    data = QQData(Quiver((1,), (2,)), p, qplus, (double,), (0.0,))
    with pytest.raises(Degenerate):
        backlund_qq(data, 1)


# -- Wronskian minors -----------------------------------------------------------


@pytest.mark.parametrize("q,seed", [
    (full_flag(3).reflected(), 11),
    (xkl(2, 2, ascending=False), 5),
])
def test_wronskian_recovers_monic_qplus(q, seed):
    p, sols = _solved(q, seed=seed)
    ext = extend_chain(from_solution(q, p, sols[0]))
    for k in range(0, q.n + 2):
        v, _ = wronskian_extract(ext.section, p, k)
        ref = ext.qp(k).monic() if 1 <= k <= q.n else CPoly([1.0])
        assert _coeff_err(v, ref) < 1e-7


def test_wronskian_edge_indices_give_constant_one():
    q = full_flag(3).reflected()
    p, sols = _solved(q, seed=11)
    ext = extend_chain(from_solution(q, p, sols[0]))
    for k in (0, q.n + 1):
        v, _ = wronskian_extract(ext.section, p, k)
        assert v.degree == 0 and abs(v.lead - 1.0) < 1e-12


def test_wronskian_mismatch_on_corrupt_section():
    q = full_flag(3).reflected()
    p, sols = _solved(q, seed=11)
    ext = extend_chain(from_solution(q, p, sols[0]))
    bad = list(ext.section)
    bad[0] = bad[0] + CPoly([0.1])
    with pytest.raises(WronskianMismatch):
        wronskian_extract(bad, p, 0)


# -- DD normalization -----------------------------------------------------------


def test_dd_relations_hold():
    q = full_flag(3).reflected()
    p, sols = _solved(q, seed=11)
    for s in sols:
        dd = dd_scale(extend_chain(from_solution(q, p, s)))
        assert len(dd.dplus) == q.n
        assert len(dd.fpolys) == q.n + 1


def test_dd_f_dual_route():
    # W-product construction equals the direct double product over framings
    q = xkl(2, 2, ascending=False)
    p = _generic_params(q, 5)
    h = p.hbar
    for k in range(0, q.n + 1):
        direct = CPoly([1.0])
        for j in range(k + 1, q.n + 1):
            for d in range(1, j - k + 1):
                direct = direct * poly_from_roots(p.a[j - 1]).dilate(h ** (-d))
        assert _coeff_err(f_poly(p, k), direct) < 1e-10 * max(
            1.0, float(np.linalg.norm(direct.coeffs))
        )


def test_dd_f_functional_constraint():
    q = xkl(2, 2, ascending=False)
    p = _generic_params(q, 5)
    h = p.hbar
    for i in range(1, q.n + 1):
        lhs = f_poly(p, i - 1).dilate(h) * f_poly(p, i + 1)
        rhs = poly_from_roots(p.a[i - 1]) * f_poly(p, i).dilate(h) * f_poly(p, i)
        assert _coeff_err(lhs, rhs) < 1e-9 * float(np.linalg.norm(lhs.coeffs))


def test_dd_inconsistent_on_corrupt_qplus():
    q = full_flag(3).reflected()
    p, sols = _solved(q, seed=11)
    ext = extend_chain(from_solution(q, p, sols[0]))
    bad_qplus = list(ext.qplus)
    bad_qplus[0] = bad_qplus[0] + CPoly([0.05])
    bad = QQData(q, p, tuple(bad_qplus), ext.qminus, ext.residuals,
                 ext.chain, ext.section)
    with pytest.raises(DDInconsistent):
        dd_scale(bad)


# -- determinant reconstruction ---------------------------------------------------


def _det_forward(fs, gammas, h):
    k = len(fs)
    out = CPoly()
    for perm in permutations(range(k)):
        inv = sum(
            1 for i in range(k) for j in range(i + 1, k) if perm[i] > perm[j]
        )
        term = CPoly([1.0])
        for i, j in enumerate(perm):
            term = term * ((gammas[i] ** j) * fs[i].dilate(h ** j))
        out = out + (term if inv % 2 == 0 else -term)
    return out


def _rand_poly(rng, deg):
    c = rng.standard_normal(deg + 1) + 1j * rng.standard_normal(deg + 1)
    if abs(c[0]) < 0.3:
        c[0] += 1.0
    return CPoly(c)


def test_reconstruct_roundtrip_k3():
    rng = rng_from_seed(42)
    h = 0.37 + 0.29j
    fs = [_rand_poly(rng, 2), _rand_poly(rng, 1), _rand_poly(rng, 2)]
    gammas = [0.8 + 0.1j, -0.5 + 0.9j, 1.3 - 0.4j]
    g = _det_forward(fs, gammas, h)
    got = reconstruct_polys(g, gammas, fs[:2], h)
    assert _coeff_err(got[2], fs[2]) < 1e-9


def test_reconstruct_k1_returns_input():
    g = CPoly([1.0, 2.0, 3.0])
    (f,) = reconstruct_polys(g, [1.2 + 0j], [], 0.5 + 0.1j)
    assert _coeff_err(f, g) == 0.0


def test_reconstruct_k2_difference_form():
    rng = rng_from_seed(7)
    h = 0.37 + 0.29j
    f2 = _rand_poly(rng, 3)
    gammas = [0.7 + 0.2j, -1.1 + 0.5j]
    g = _det_forward([CPoly([1.0]), f2], gammas, h)
    got = reconstruct_polys(g, gammas, [CPoly([1.0])], h)
    assert _coeff_err(got[1], f2) < 1e-9
    # the determinant with a unit first row is the twisted difference
    check = gammas[1] * f2.dilate(h) - gammas[0] * f2
    assert _coeff_err(g, check) < 1e-12


def test_reconstruct_rejects_hbar_ladder_gammas():
    h = 0.37 + 0.29j
    g = CPoly([1.0, 1.0])
    with pytest.raises(IllConditioned):
        reconstruct_polys(g, [(h**3) * (1.0 - 0.2j), 1.0 - 0.2j], [CPoly([1.0])], h)


def test_reconstruct_rejects_seed_vanishing_at_zero():
    with pytest.raises(InvalidArgument):
        reconstruct_polys(
            CPoly([1.0, 1.0]), [0.7 + 0.2j, -1.1j], [CPoly([0.0, 1.0])], 0.5
        )


def test_reconstruct_rejects_negative_degree():
    with pytest.raises(InvalidArgument):
        reconstruct_polys(
            CPoly([1.0]), [0.7 + 0.2j, -1.1j], [CPoly([1.0, 0.0, 2.0])], 0.5
        )

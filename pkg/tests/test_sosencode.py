from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from barriersynth.polycore import Poly, lie_derivative, monomials_up_to, parse_poly
from barriersynth.problemdef import ParamExpr, ParamPoly, load_problem, parse_param_poly
from barriersynth.sosencode import (
    EncodingError,
    ParamSymMat,
    build_constraints,
    flatten_bilinear,
    gram_decompose,
    monomial_basis,
)

from conftest import corpus

X = ("x1", "x2")
A_NAMES = ("a1", "a2")
S_NAMES = ("s1", "s2", "s3")


@pytest.mark.parametrize("n, d, size", [(2, 1, 3), (2, 0, 1), (3, 2, 10), (4, 3, 35)])
def test_monomial_basis_size(n, d, size):
    b = monomial_basis(n, d)
    assert len(b) == size == comb(n + d, n)
    assert b[0] == (0,) * n


def test_monomial_basis_order():
    assert monomial_basis(2, 1) == [(0, 0), (1, 0), (0, 1)]


# random bilinear parametric polynomials --------------------------------------


small = st.fractions(min_value=-3, max_value=3, max_denominator=4)


@st.composite
def bilinear_exprs(draw):
    e = ParamExpr.const(draw(small))
    for a in A_NAMES:
        e = e + ParamExpr.param(a) * draw(small)
        for s in S_NAMES:
            if draw(st.booleans()):
                e = e + ParamExpr.param(a) * ParamExpr.param(s) * draw(small)
    for s in S_NAMES:
        e = e + ParamExpr.param(s) * draw(small)
    return e


@st.composite
def param_polys(draw, nvars=None, max_degree=4):
    n = nvars or draw(st.integers(1, 3))
    vars = tuple(f"x{i + 1}" for i in range(n))
    monos = monomials_up_to(n, max_degree)
    chosen = draw(st.lists(st.sampled_from(monos), max_size=5, unique=True))
    return ParamPoly(vars, {m: draw(bilinear_exprs()) for m in chosen})


@given(param_polys())
def test_gram_reconstruction_exact(h):
    d = max(0, (h.degree() + 1) // 2)
    Q, slack = gram_decompose(h, d)
    assert (Q.quadratic_form() - h).is_zero()
    assert all(n.startswith("q#") for n in slack)


@given(param_polys(nvars=2))
def test_gram_symmetric_and_sized(h):
    d = max(0, (h.degree() + 1) // 2)
    Q, _ = gram_decompose(h, d)
    p = Q.size
    assert p == comb(2 + d, 2)
    for i in range(p):
        for j in range(p):
            assert Q.entries[i][j] == Q.entries[j][i]


def test_gram_zero_polynomial():
    Q, slack = gram_decompose(Poly.zero(X), 1)
    env = {n: 0 for n in slack}
    assert all(e.substitute(env) == ParamExpr() for row in Q.entries for e in row)


def test_gram_degree_overflow():
    with pytest.raises(EncodingError):
        gram_decompose(parse_poly("x1^5", X), 2)


def _eval_sym(M: ParamSymMat, env) -> np.ndarray:
    return np.array([[e.evaluate(env) for e in row] for row in M.entries])


@given(param_polys(nvars=2), st.integers(0, 2**31))
def test_flatten_dual_evaluation(h, seed):
    d = max(0, (h.degree() + 1) // 2)
    Q, slack = gram_decompose(h, d)
    s_names = S_NAMES + tuple(slack)
    form = flatten_bilinear(Q, A_NAMES, s_names)
    rng = np.random.default_rng(seed)
    for _ in range(20):
        a = rng.normal(size=len(A_NAMES))
        s = rng.normal(size=len(s_names))
        env = dict(zip(A_NAMES + s_names, [*a, *s]))
        assert np.allclose(form.evaluate(a, s), _eval_sym(Q, env), atol=1e-12)


def test_flatten_constant_matrix():
    M = ParamSymMat(X, monomial_basis(2, 1), [[ParamExpr.const(i + j) for j in range(3)] for i in range(3)])
    form = flatten_bilinear(M, A_NAMES, S_NAMES)
    assert form.m == form.n == 0 and not form.Fij
    assert np.array_equal(form.F, np.add.outer(np.arange(3), np.arange(3)))


def test_flatten_rejects_same_group_products():
    e = ParamExpr.param("a1") * ParamExpr.param("a2")
    M = ParamSymMat(("x1",), [(0,)], [[e]])
    with pytest.raises(EncodingError, match="same-group"):
        flatten_bilinear(M, A_NAMES, S_NAMES)


# constraint systems ----------------------------------------------------------


def test_overview_consecution_matrix():
    cs = build_constraints(load_problem(corpus("overview")))
    assert [f.label for f in cs.forms] == [
        "initial", "consecution1", "separation", "psd[sig_init0]", "psd[sig_unsafe0]"
    ]
    Q = cs.forms[1].gram
    a, s0, s1, s2 = (ParamExpr.param(n) for n in ("a", "v1_0#0", "v1_0#1", "v1_0#2"))
    half = Fraction(1, 2)
    expected = [
        [a * Fraction(-1, 10), ParamExpr(), a * s0 * half],
        [ParamExpr(), ParamExpr(), (a * s1 - a) * half],
        [a * s0 * half, (a * s1 - a) * half, a * s2 + a * half],
    ]
    assert Q.entries == expected
    # the stored form is the negated Gram matrix
    form = cs.forms[1].form
    ia = list(form.a_names).index("a")
    assert form.H[ia][0, 0] == pytest.approx(0.1)
    js2 = list(form.s_names).index("v1_0#2")
    assert form.Fij[(ia, js2)][2, 2] == pytest.approx(-1.0)


@pytest.mark.parametrize("name", ["overview", "contrived", "lie-high-order", "barr-cert1"])
def test_every_form_is_exact(name):
    cs = build_constraints(load_problem(corpus(name)))
    for f in cs.principal_forms():
        assert (f.gram.quadratic_form() - f.poly).is_zero()


def test_form_count():
    spec = load_problem(corpus("lie-high-order"))
    for N in (1, 2, 3):
        cs = build_constraints(spec, lie_order=N)
        n_sos = sum(mu.kind == "sos" for mu in cs.multipliers)
        assert len(cs.principal_forms()) == 2 + N
        assert len(cs.forms) == 2 + N + n_sos


def test_second_order_multipliers():
    cs = build_constraints(load_problem(corpus("lie-high-order")), lie_order=2)
    names = {mu.name: mu for mu in cs.multipliers}
    assert {"v2_0", "v2_1"} <= set(names)
    assert all(names[k].kind == "free" for k in ("v1_0", "v2_0", "v2_1"))
    h = cs.forms[2].poly
    assert any(p.startswith("v2_0#") for p in h.params())
    assert any(p.startswith("v2_1#") for p in h.params())


def test_sufficient_consecution_polynomial():
    spec = load_problem(corpus("overview"))
    cs = build_constraints(spec)
    B = spec.template_poly()
    v = cs.multipliers[1].poly
    assert cs.forms[1].poly == -lie_derivative(B, spec.field, 1) + v * B


def test_empty_unsafe_set_is_well_formed():
    spec = load_problem(corpus("overview"))
    spec = spec.with_(unsafe=(parse_poly("1", X) * -1,))
    cs = build_constraints(spec)
    sep = next(f for f in cs.forms if f.label == "separation")
    assert (sep.gram.quadratic_form() - sep.poly).is_zero()


def test_necessary_adds_ball_terms():
    spec = load_problem(corpus("overview"))
    suff = build_constraints(spec)
    nec = build_constraints(spec.with_(encoding="necessary", ball_radius=Fraction(100)))
    h_s = suff.forms[0].poly
    h_n = nec.forms[0].poly
    rho = next(mu for mu in nec.multipliers if mu.name == "rho_init")
    ball = parse_poly("x1^2 + x2^2 - 100", X)
    eps = spec.sep_margin
    assert h_n == h_s + rho.poly * ball + eps
    # zero rho and drop the shift: the sufficient form comes back
    zero = {p: 0 for p in rho.params}
    assert h_n.partial_substitute(zero) - eps == h_s


def test_budget_too_small():
    spec = load_problem(corpus("lie-high-order")).with_(sos_degree=0)
    with pytest.raises(EncodingError, match="degree budget"):
        build_constraints(spec)

from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from barriersynth.certcheck import simulate_trajectory
from barriersynth.polycore import (
    Poly,
    PolyError,
    VectorField,
    completeness_threshold,
    grevlex_key,
    groebner_basis,
    ideal_contains,
    lie_derivative,
    lie_derivatives,
    monomials_up_to,
    normal_form,
    parse_poly,
)

from conftest import fields, from_sympy, polys, to_sympy

X = ("x1", "x2")
OVERVIEW_F = VectorField.parse(["x1 + x2", "x1*x2 - 0.5*x2^2 + 0.1"], X)


def P(text, vars=X):
    return parse_poly(text, vars)


# parsing ------------------------------------------------------------------


def test_parse_decimals_are_exact():
    p = P("x1*x2 - 0.5*x2^2 + 0.1")
    assert p.terms == {(1, 1): Fraction(1), (0, 2): Fraction(-1, 2), (0, 0): Fraction(1, 10)}


def test_parse_zero_has_no_terms():
    assert P("0", ("x1",)).terms == {}
    assert P("0", ("x1",)).is_zero()


def test_parse_expands_powers():
    assert P("(x1+1)^2") == P("x1^2+2*x1+1")


@pytest.mark.parametrize("text", ["x1^-1", "y + 1", "x1 +* x2", "(x1", "x1^1.5", ""])
def test_parse_errors(text):
    with pytest.raises(PolyError):
        P(text)


def test_parse_accepts_fraction_literals_and_unary_minus():
    assert P("-1/3*x1^3 + -(x2)") == Poly(X, {(3, 0): Fraction(-1, 3), (0, 1): Fraction(-1)})


@given(polys())
def test_format_parse_roundtrip(p):
    assert P(str(p)) == p


# ring laws ------------------------------------------------------------------


@given(polys(), polys(), polys())
def test_ring_laws(p, q, r):
    assert (p + q) + r == p + (q + r)
    assert (p * q) * r == p * (q * r)
    assert p * (q + r) == p * q + p * r
    assert p + q == q + p
    assert p * q == q * p
    assert p - p == Poly.zero(X)


@given(polys(), polys())
def test_product_matches_sympy(p, q):
    sp_p, _ = to_sympy(p)
    sp_q, _ = to_sympy(q)
    assert p * q == from_sympy(sp_p * sp_q, X)


@given(polys())
def test_no_zero_coefficients_stored(p):
    assert all(c != 0 for c in (p * p - p).terms.values())


def test_grevlex_order():
    ms = monomials_up_to(3, 2)
    ranked = sorted(ms, key=grevlex_key, reverse=True)
    # x1^2 > x1x2 > x2^2 > x1x3 > x2x3 > x3^2 > x1 > x2 > x3 > 1
    assert ranked == [(2, 0, 0), (1, 1, 0), (0, 2, 0), (1, 0, 1), (0, 1, 1), (0, 0, 2),
                      (1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0)]


# Lie derivatives ------------------------------------------------------------


def test_lie_derivative_overview():
    assert lie_derivative(P("x2"), OVERVIEW_F, 1) == P("x1*x2 - 0.5*x2^2 + 0.1")
    assert lie_derivative(P("x2"), OVERVIEW_F, 0) == P("x2")
    expected = P("x2*(x1+x2) + (x1-x2)*(x1*x2 - 0.5*x2^2 + 0.1)")
    assert lie_derivative(P("x2"), OVERVIEW_F, 2) == expected


def test_lie_dimension_mismatch():
    with pytest.raises(PolyError):
        lie_derivative(P("x1", ("x1",)), OVERVIEW_F, 1)


@given(polys(), fields(), st.integers(0, 2))
def test_lie_recursion(B, f, k):
    assert lie_derivative(B, f, k + 1) == lie_derivative(lie_derivative(B, f, k), f, 1)


@given(polys(), fields())
def test_lie_matches_sympy_chain_rule(B, f):
    b, xs = to_sympy(B)
    comps = [to_sympy(c)[0] for c in f.components]
    expected = sum(sp.diff(b, x) * c for x, c in zip(xs, comps))
    assert lie_derivative(B, f, 1) == from_sympy(expected, X)


def test_lie_against_trajectory_central_difference():
    B = P("x1^2 - 3*x2 + x1*x2")
    L1 = lie_derivative(B, OVERVIEW_F, 1)
    errs = []
    for h in (1e-2, 5e-3):
        tr = simulate_trajectory(OVERVIEW_F, [0.3, -0.2], 0.5, h)
        b = B.eval_np(tr.X)
        fd = (b[2:] - b[:-2]) / (2 * h)
        errs.append(np.max(np.abs(fd - L1.eval_np(tr.X[1:-1]))))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.25)


# Groebner bases -------------------------------------------------------------


def _s_poly_reduces(G):
    from barriersynth.polycore import _spoly

    return all(normal_form(_spoly(f, g, "grevlex"), G).is_zero() for f in G for g in G if f is not g)


def test_groebner_trivial():
    G = groebner_basis([P("x1", ("x1",))])
    assert G == [P("x1", ("x1",))]
    assert groebner_basis([]) == []


def test_groebner_univariate():
    x = ("x",)
    G = groebner_basis([P("x^2 - 1", x), P("x^3 - x", x)])
    assert normal_form(P("x^3 - x", x), G).is_zero()
    assert _s_poly_reduces(G)


def test_groebner_membership_by_substitution():
    gens = [P("x1 - x2^2"), P("x2 - x1^2")]
    target = P("x1*x2 - x2^3")
    # x1 = x2^2 makes the target vanish, so it lies in <x1 - x2^2>
    assert ideal_contains(target, gens)
    assert not ideal_contains(P("x1 + 1"), gens)


@given(st.lists(polys(max_degree=2, max_terms=3), min_size=1, max_size=3))
def test_groebner_properties(gens):
    G = groebner_basis(gens)
    assert _s_poly_reduces(G)
    for g in gens:
        assert normal_form(g, G).is_zero()
    probe = P("x1^3 + x2^2 - x1*x2 + 2")
    nf = normal_form(probe, G)
    assert normal_form(nf, G) == nf


@given(st.lists(polys(max_degree=2, max_terms=3), min_size=1, max_size=3), polys(max_degree=2))
def test_groebner_membership_matches_sympy(gens, p):
    gens = [g for g in gens if not g.is_zero()]
    if not gens:
        return
    sgens = [to_sympy(g)[0] for g in gens]
    xs = sp.symbols(X)
    member = sp.groebner(sgens, *xs, order="grevlex", domain="QQ").contains(to_sympy(p)[0])
    assert ideal_contains(p, gens) == member


# completeness threshold ----------------------------------------------------


def test_threshold_examples():
    assert completeness_threshold(P("x1"), VectorField([P("x1"), P("x2")])) == (1, True)
    assert completeness_threshold(P("x2"), OVERVIEW_F).order == 1
    zero = VectorField([Poly.zero(X), Poly.zero(X)])
    assert completeness_threshold(P("x1^2 + x2"), zero) == (1, True)


def test_threshold_above_one():
    # rotation with B = x1: L1 = -x2, L2 = -x1 lies in <x1, -x2>
    rot = VectorField([P("-x2"), P("x1")])
    assert completeness_threshold(P("x1"), rot).order == 1
    # double integrator: B = x1, L1 = x2, L2 = 1, so N = 2
    dbl = VectorField([P("x2"), P("1")])
    assert completeness_threshold(P("x1"), dbl) == (2, True)


def test_threshold_not_reached():
    f = VectorField([P("1", ("x1",))])
    # L^k of x1^5 drops degree; with the cap at 1 membership is not reached
    assert completeness_threshold(P("x1^5", ("x1",)), f, max_order=1) == (1, False)


def test_threshold_rejects_parametric():
    from barriersynth.problemdef import parse_param_poly

    with pytest.raises(PolyError):
        completeness_threshold(parse_param_poly("a*x2", X), OVERVIEW_F)


def test_lie_derivatives_list():
    ders = lie_derivatives(P("x2"), OVERVIEW_F, 2)
    assert len(ders) == 3 and ders[0] == P("x2")

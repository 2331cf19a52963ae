import csv
from fractions import Fraction

import numpy as np
import pytest

from barriersynth.certcheck import (
    Certificate,
    consecution_pointwise,
    export_smt,
    invariant_pointwise,
    project_to_variety,
    sample_region,
    simulate_trajectory,
    smt_scripts,
    smt_term,
    validate,
)
from barriersynth.polycore import Poly, VectorField, lie_derivatives, parse_poly
from barriersynth.problemdef import load_problem

from conftest import corpus
from oracles import predicate_points

X = ("x1", "x2")
OVERVIEW_CERT = "-0.00363421*x2"
HIGH_ORDER_CERT = "x1^2 - 5.52869577443*x2^2 - 1.40152472453*x1 - 4.66247906005*x2 + 3.77444150656"


@pytest.fixture(scope="module")
def overview():
    return load_problem(corpus("overview"))


def test_overview_certificate_passes(overview):
    rep = validate(overview, parse_poly(OVERVIEW_CERT, X), n_samples=20_000)
    assert rep.valid, rep.to_dict()
    assert [c.name for c in rep.conditions] == ["initial", "separation", "consecution1"]
    # B is normalized to -x2 before sampling and x2 <= -1 on the unsafe set
    assert rep["separation"].worst >= 1 - 1e-9
    assert all(c.samples > 0 for c in rep.conditions)


def test_flipped_sign_fails_with_witness(overview):
    rep = validate(overview, parse_poly("x2", X), n_samples=5000)
    assert not rep.valid
    bad = rep["initial"]
    assert not bad.ok and bad.witness is not None
    x1, x2 = bad.witness
    assert x1**2 + (x2 - 2) ** 2 - 1 <= 1e-9 and x2 > 0


def test_fail_fast_stops_early(overview):
    rep = validate(overview, parse_poly("x2", X), n_samples=2000, fail_fast=True)
    assert [c.name for c in rep.conditions] == ["initial"]


@pytest.mark.parametrize("cert", [OVERVIEW_CERT, "x2", "x1 - x2 + 0.5", "x1^2 + x2^2 - 4"])
def test_margin_monotone(overview, cert):
    B = parse_poly(cert, X)
    verdicts = [validate(overview, B, n_samples=3000, margin=m).valid for m in (0.0, 1e-7, 1e-3, 1.0, 50.0)]
    assert verdicts == sorted(verdicts)


def test_constant_certificate_with_empty_unsafe_set(overview):
    spec = overview.with_(unsafe=(parse_poly("1", X),))
    rep = validate(spec, parse_poly("-1", X), n_samples=2000)
    assert rep["initial"].ok
    sep = rep["separation"]
    assert sep.ok and sep.vacuous and sep.to_dict()["vacuous"]


def test_high_order_certificate(overview):
    spec = load_problem(corpus("lie-high-order"))
    B = parse_poly(HIGH_ORDER_CERT, X)
    rep = validate(spec, B, n_samples=20_000, lie_order=2)
    assert rep.valid, rep.to_dict()
    assert {"consecution1", "consecution2"} <= {c.name for c in rep.conditions}


def test_projection_lands_on_variety(rng):
    g = parse_poly("x1^2 + x2^2 - 1", X)
    Y = project_to_variety([g], rng.uniform(-2, 2, size=(200, 2)))
    Y = Y[np.all(np.isfinite(Y), axis=1)]
    assert len(Y) > 150
    assert np.max(np.abs(g.eval_np(Y))) <= 1e-10


def test_sample_region_small_set(rng):
    g = parse_poly("x1^2 + x2^2 - 0.0001", X)
    P = sample_region([g], [[-3, 3], [-3, 3]], 1000, rng)
    assert len(P) > 0
    assert np.all(g.eval_np(P) <= 0)


# pointwise consecution predicates -------------------------------------------


@pytest.mark.parametrize("cert, N", [(OVERVIEW_CERT, 1), (HIGH_ORDER_CERT, 2), ("x1^2 + x2^2 - 1", 3)])
def test_pointwise_predicates_agree(cert, N):
    spec = load_problem(corpus("lie-high-order" if N == 2 else "overview"))
    _, cons, inv = predicate_points(spec, parse_poly(cert, X), N, 2000, np.random.default_rng(N))
    assert np.array_equal(cons, inv)


def test_pointwise_predicates_by_hand():
    # B = x1, f = (x2, 0): L1 = x2, L2 = 0
    f = VectorField([parse_poly("x2", X), Poly.zero(X)])
    ders = lie_derivatives(parse_poly("x1", X), f, 2)
    P = np.array([[1.0, 5.0], [0.0, 1.0], [0.0, -1.0], [0.0, 0.0]])
    assert consecution_pointwise(ders, P).tolist() == [True, False, True, True]
    assert invariant_pointwise(ders, P).tolist() == [True, False, True, True]


# trajectories ----------------------------------------------------------------


def test_rk4_circle():
    f = VectorField([parse_poly("x2", X), parse_poly("-x1", X)])
    tr = simulate_trajectory(f, [1.0, 0.0], 10.0, h=1e-3)
    assert len(tr.t) == 10_001
    exact = np.stack([np.cos(tr.t), -np.sin(tr.t)], axis=1)
    assert np.max(np.abs(tr.X - exact)) <= 1e-6
    assert np.max(np.abs(np.linalg.norm(tr.X, axis=1) - 1)) <= 1e-6


def test_zero_field_is_constant():
    f = VectorField([Poly.zero(X), Poly.zero(X)])
    tr = simulate_trajectory(f, [0.3, -2.0], 1.0, h=0.1)
    assert np.all(tr.X == [0.3, -2.0])


def test_blowup_guard():
    f = VectorField([parse_poly("x1^2", ("x1",))])
    tr = simulate_trajectory(f, [1.0], 2.0, h=1e-3)
    assert tr.diverged and tr.t[-1] < 1.01


def test_box_exit_ends_trajectory():
    f = VectorField([parse_poly("1", ("x1",))])
    tr = simulate_trajectory(f, [0.0], 5.0, h=0.1, box=[[-1, 1]])
    assert not tr.diverged and tr.X[-1, 0] <= 1 and len(tr.t) == 11


def test_step_must_be_positive():
    with pytest.raises(ValueError):
        simulate_trajectory(VectorField([Poly.zero(("x1",))]), [0.0], 1.0, h=0.0)


def test_trajectory_csv(tmp_path, overview):
    B = parse_poly(OVERVIEW_CERT, X)
    tr = simulate_trajectory(overview.field, [0.0, 2.0], 0.05, h=0.01, B=B)
    path = tmp_path / "traj.csv"
    tr.write_csv(path, X)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "x1", "x2", "B"]
    assert len(rows) == len(tr.t) + 1
    assert float(rows[1][3]) == pytest.approx(B.eval_np(np.array([[0.0, 2.0]]))[0])


def test_simulated_invariance(overview):
    B = parse_poly(OVERVIEW_CERT, X)
    starts = sample_region(overview.init, overview.domain_box, 100, np.random.default_rng(7))[:100]
    assert len(starts) == 100
    for x0 in starts:
        tr = simulate_trajectory(overview.field, x0, 3.0, h=1e-3, B=B, box=overview.domain_box)
        assert tr.B.max() <= 1e-4


# SMT export ------------------------------------------------------------------


def test_smt_term_exact():
    p = parse_poly("-0.00363421*x2 + 1/3*x1^2 - 2", X)
    t = smt_term(p)
    assert "(/ 363421 100000000)" in t and "(/ 1 3)" in t
    assert "." not in t


def test_overview_scripts(overview, tmp_path):
    paths = export_smt(overview, parse_poly(OVERVIEW_CERT, X), tmp_path)
    assert sorted(p.name for p in paths) == ["consecution1.smt2", "initial.smt2", "separation.smt2"]
    sep = (tmp_path / "separation.smt2").read_text()
    assert "(assert (<= (+ x2 1) 0))" in sep
    assert "(assert (<= (* (- (/ 363421 100000000)) x2) 0))" in sep
    assert sep.count("(check-sat)") == 1


def test_nested_equalities():
    spec = load_problem(corpus("lie-high-order"))
    text = smt_scripts(spec, Certificate(parse_poly(HIGH_ORDER_CERT, X), 2))["consecution2"]
    asserts = [line for line in text.splitlines() if line.startswith("(assert")]
    assert len(asserts) == 3
    assert asserts[0].startswith("(assert (= ") and asserts[1].startswith("(assert (= ")
    assert asserts[2].startswith("(assert (> ")


def test_scripts_parse_back_and_decide(overview):
    z3 = pytest.importorskip("z3")
    good = smt_scripts(overview, parse_poly(OVERVIEW_CERT, X))
    for name, text in good.items():
        s = z3.Solver()
        s.from_string(text)
        assert s.check() == z3.unsat, name
    bad = smt_scripts(overview, parse_poly("x2", X))
    s = z3.Solver()
    s.from_string(bad["initial"])
    assert s.check() == z3.sat


def test_smt_terms_round_trip():
    z3 = pytest.importorskip("z3")
    rng = np.random.default_rng(0)
    for _ in range(20):
        terms = {tuple(rng.integers(0, 3, size=2)): Fraction(int(rng.integers(-9, 10)), int(rng.integers(1, 7)))
                 for _ in range(4)}
        p = Poly(X, terms)
        x1, x2 = z3.Reals("x1 x2")
        e = z3.parse_smt2_string(f"(declare-fun x1 () Real)(declare-fun x2 () Real)(assert (= {smt_term(p)} 0))")[0]
        lhs = e.arg(0)
        for pt in [(Fraction(1, 2), Fraction(-3)), (Fraction(2), Fraction(5, 7))]:
            val = z3.simplify(z3.substitute(lhs, (x1, z3.RealVal(pt[0])), (x2, z3.RealVal(pt[1]))))
            want = sum(c * pt[0] ** m[0] * pt[1] ** m[1] for m, c in p.terms.items())
            assert Fraction(val.as_fraction()) == want


def test_certificate_roundtrip():
    c = Certificate(parse_poly(OVERVIEW_CERT, X), 1, {"a": -0.00363421}, 0.0, 2, "overview")
    again = Certificate.from_dict(c.to_dict())
    assert again.poly == c.poly and again.iterations == 2

from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
import sympy as sp
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from barriersynth.polycore import Poly, VectorField

CORPUS = Path(__file__).resolve().parents[1] / "src" / "barriersynth" / "corpus"

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def corpus(name: str) -> Path:
    return CORPUS / f"{name}.json"


def to_sympy(p: Poly):
    xs = sp.symbols(p.vars)
    out = sp.Integer(0)
    for m, c in p.terms.items():
        term = sp.Rational(c.numerator, c.denominator)
        for x, e in zip(xs, m):
            term *= x**e
        out += term
    return sp.expand(out), xs


def from_sympy(expr, vars) -> Poly:
    xs = sp.symbols(vars)
    P = sp.Poly(sp.expand(expr), *xs)
    return Poly(vars, {m: Fraction(int(c.p), int(c.q)) for m, c in P.terms()})


coeffs = st.fractions(min_value=-5, max_value=5, max_denominator=6)


@st.composite
def polys(draw, nvars=2, max_degree=3, max_terms=5):
    vars = tuple(f"x{i + 1}" for i in range(nvars))
    k = draw(st.integers(0, max_terms))
    terms = {}
    for _ in range(k):
        exps = draw(st.lists(st.integers(0, max_degree), min_size=nvars, max_size=nvars))
        if sum(exps) > max_degree:
            continue
        terms[tuple(exps)] = draw(coeffs)
    return Poly(vars, terms)


@st.composite
def fields(draw, nvars=2, max_degree=2):
    return VectorField([draw(polys(nvars, max_degree, 3)) for _ in range(nvars)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_form(rng, m=None, n=None, p=None, density=0.6):
    """Random symmetric bilinear matrix form over local parameters."""
    from barriersynth.sosencode import BilinearMatrixForm

    m = m or int(rng.integers(1, 5))
    n = n or int(rng.integers(1, 5))
    p = p or int(rng.integers(1, 7))

    def sym():
        A = rng.normal(size=(p, p))
        return A + A.T

    Fij = {(i, j): sym() for i in range(m) for j in range(n) if rng.random() < density}
    if not Fij:
        Fij[(0, 0)] = sym()
    return BilinearMatrixForm(
        F=sym(),
        H=np.stack([sym() for _ in range(m)]),
        G=np.stack([sym() for _ in range(n)]),
        Fij=Fij,
        a_names=tuple(f"a{i}" for i in range(m)),
        s_names=tuple(f"s{j}" for j in range(n)),
        a_idx=np.arange(m),
        s_idx=np.arange(n),
    )


def bmi_of(forms, l_a=1.0, l_s=1.0):
    from barriersynth.bmiform import BmiProblem

    m = max(f.m for f in forms)
    n = max(f.n for f in forms)
    return BmiProblem(forms=list(forms), labels=[f"f{k}" for k in range(len(forms))], m=m, n=n,
                      l_a=l_a, l_s=l_s)


# acceptance verdicts, printed once at the end of the run
VERDICTS: dict[str, list[tuple[bool, str]]] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    VERDICTS.setdefault(f"{criterion:02d}", []).append((ok, detail))
    return ok


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(VERDICTS):
        parts = VERDICTS[key]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {int(key)}: {'PASS' if ok else 'FAIL'} - {detail}")

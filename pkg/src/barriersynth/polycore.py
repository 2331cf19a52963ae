"""Exact multivariate polynomials over the rationals.

Polynomials are sparse maps from exponent tuples to coefficients.  The
arithmetic is generic in the coefficient type: plain :class:`Fraction`
coefficients give :class:`Poly`, while the parametric subclass in
:mod:`barriersynth.problemdef` stores affine/bilinear parameter
expressions and reuses everything here (Lie derivatives included).

Term order for printing and Gröbner bases is graded reverse lexicographic
unless stated otherwise.
"""

from __future__ import annotations

import re
from fractions import Fraction
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

Monomial = tuple[int, ...]


class PolyError(ValueError):
    """Raised for malformed polynomial input or unsupported operations."""


# ---------------------------------------------------------------------------
# monomial helpers


def mono_degree(m: Monomial) -> int:
    return sum(m)


def mono_mul(m1: Monomial, m2: Monomial) -> Monomial:
    return tuple(a + b for a, b in zip(m1, m2))


def mono_divides(m1: Monomial, m2: Monomial) -> bool:
    return all(a <= b for a, b in zip(m1, m2))


def mono_div(m1: Monomial, m2: Monomial) -> Monomial:
    return tuple(a - b for a, b in zip(m1, m2))


def mono_lcm(m1: Monomial, m2: Monomial) -> Monomial:
    return tuple(max(a, b) for a, b in zip(m1, m2))


def grevlex_key(m: Monomial) -> tuple:
    """Sort key; larger key means larger monomial in grevlex."""
    return (sum(m), tuple(-e for e in reversed(m)))


def lex_key(m: Monomial) -> tuple:
    return tuple(m)


ORDERS: dict[str, Callable[[Monomial], tuple]] = {"grevlex": grevlex_key, "lex": lex_key}


def monomials_up_to(nvars: int, degree: int) -> list[Monomial]:
    """All exponent tuples of total degree <= ``degree``.

    Ordered by degree, then grevlex-descending inside each degree, so for two
    variables and degree 2 the result is 1, x1, x2, x1^2, x1*x2, x2^2.
    """
    out: list[Monomial] = []
    for d in range(degree + 1):
        layer = list(_compositions(nvars, d))
        layer.sort(key=lambda m: tuple(reversed(m)))
        out.extend(layer)
    return out


def _compositions(n: int, d: int):
    if n == 0:
        if d == 0:
            yield ()
        return
    if n == 1:
        yield (d,)
        return
    for first in range(d, -1, -1):
        for rest in _compositions(n - 1, d - first):
            yield (first,) + rest


def as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, str):
        return Fraction(value)
    return Fraction(float(value)).limit_denominator(10**12)


# ---------------------------------------------------------------------------
# polynomials


class Poly:
    """Sparse polynomial in a fixed, ordered tuple of variables.

    ``terms`` maps exponent tuples to nonzero coefficients.  Instances are
    treated as immutable.
    """

    __slots__ = ("vars", "terms")
    _rank = 0

    def __init__(self, vars: Sequence[str], terms: Mapping[Monomial, object] | None = None):
        self.vars: tuple[str, ...] = tuple(vars)
        clean: dict[Monomial, object] = {}
        if terms:
            n = len(self.vars)
            for m, c in terms.items():
                if len(m) != n:
                    raise PolyError(f"monomial {m} does not match {n} variables")
                if c:
                    clean[tuple(m)] = c
        self.terms = clean

    # construction -----------------------------------------------------

    @classmethod
    def zero(cls, vars: Sequence[str]) -> "Poly":
        return cls(vars)

    @classmethod
    def constant(cls, vars: Sequence[str], c) -> "Poly":
        vars = tuple(vars)
        return cls(vars, {(0,) * len(vars): _coerce(c)})

    @classmethod
    def variable(cls, vars: Sequence[str], name: str) -> "Poly":
        vars = tuple(vars)
        if name not in vars:
            raise PolyError(f"unknown variable {name!r}")
        m = tuple(1 if v == name else 0 for v in vars)
        return cls(vars, {m: Fraction(1)})

    def _new(self, terms, other: "Poly | None" = None) -> "Poly":
        cls = type(self)
        if other is not None and other._rank > self._rank:
            cls = type(other)
        return cls(self.vars, terms)

    # basic queries ----------------------------------------------------

    @property
    def nvars(self) -> int:
        return len(self.vars)

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(m) for m in self.terms), default=-1)

    def is_constant(self) -> bool:
        return all(sum(m) == 0 for m in self.terms)

    def constant_term(self):
        return self.terms.get((0,) * self.nvars, Fraction(0))

    def coeff(self, m: Monomial):
        return self.terms.get(tuple(m), Fraction(0))

    def sorted_terms(self, order: str = "grevlex") -> list[tuple[Monomial, object]]:
        key = ORDERS[order]
        return sorted(self.terms.items(), key=lambda t: key(t[0]), reverse=True)

    def leading(self, order: str = "grevlex") -> tuple[Monomial, object]:
        if not self.terms:
            raise PolyError("zero polynomial has no leading term")
        key = ORDERS[order]
        m = max(self.terms, key=key)
        return m, self.terms[m]

    # arithmetic -------------------------------------------------------

    def _check(self, other: "Poly") -> None:
        if self.vars != other.vars:
            raise PolyError(f"variable mismatch: {self.vars} vs {other.vars}")

    def _lift(self, other) -> "Poly":
        if isinstance(other, Poly):
            self._check(other)
            return other
        return type(self).constant(self.vars, other)

    def __add__(self, other):
        other = self._lift(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out[m] + c if m in out else c
        return self._new(out, other)

    __radd__ = __add__

    def __neg__(self):
        return self._new({m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, Poly):
            c = _coerce(other)
            return self._new({m: v * c for m, v in self.terms.items()})
        self._check(other)
        out: dict[Monomial, object] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = mono_mul(m1, m2)
                p = c1 * c2
                out[m] = out[m] + p if m in out else p
        return self._new(out, other)

    def __rmul__(self, other):
        return self * other

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise PolyError("exponent must be a non-negative integer")
        result = type(self).constant(self.vars, 1)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other):
        if isinstance(other, Poly):
            return self.vars == other.vars and self.terms == other.terms
        if isinstance(other, (int, Fraction)):
            return self.terms == ({(0,) * self.nvars: Fraction(other)} if other else {})
        return NotImplemented

    def __hash__(self):
        return hash((self.vars, frozenset(self.terms.items())))

    # calculus ---------------------------------------------------------

    def diff(self, var: int | str) -> "Poly":
        i = self.vars.index(var) if isinstance(var, str) else var
        out = {}
        for m, c in self.terms.items():
            e = m[i]
            if e:
                mm = m[:i] + (e - 1,) + m[i + 1:]
                out[mm] = c * e
        return self._new(out)

    def gradient(self) -> list["Poly"]:
        return [self.diff(i) for i in range(self.nvars)]

    # evaluation -------------------------------------------------------

    def __call__(self, point: Sequence) -> object:
        total = Fraction(0)
        for m, c in self.terms.items():
            t = c
            for x, e in zip(point, m):
                if e:
                    t = t * x**e
            total = total + t
        return total

    def eval_np(self, X: np.ndarray) -> np.ndarray:
        """Evaluate at rows of ``X`` (shape (k, n)) in floating point."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(X.shape[0])
        for m, c in self.terms.items():
            t = np.full(X.shape[0], float(c))
            for i, e in enumerate(m):
                if e:
                    t = t * X[:, i] ** e
            out += t
        return out

    def map_coeffs(self, fn: Callable[[object], object]) -> "Poly":
        return Poly(self.vars, {m: fn(c) for m, c in self.terms.items()})

    def monic(self, order: str = "grevlex") -> "Poly":
        _, c = self.leading(order)
        return self * (Fraction(1) / c)

    # printing ---------------------------------------------------------

    def __str__(self) -> str:
        return format_poly(self)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({format_poly(self)!r}, vars={self.vars})"


def _coerce(c):
    if isinstance(c, Poly):
        raise PolyError("expected a scalar coefficient")
    if isinstance(c, (int, float, str, np.integer, np.floating)):
        return as_fraction(c)
    return c


def _fmt_monomial(vars: Sequence[str], m: Monomial) -> str:
    parts = []
    for v, e in zip(vars, m):
        if e == 1:
            parts.append(v)
        elif e > 1:
            parts.append(f"{v}^{e}")
    return "*".join(parts)


def _fmt_fraction(c: Fraction) -> str:
    if c.denominator == 1:
        return str(c.numerator)
    # terminating decimals are printed exactly as decimals
    d, k2, k5 = c.denominator, 0, 0
    while d % 2 == 0:
        d, k2 = d // 2, k2 + 1
    while d % 5 == 0:
        d, k5 = d // 5, k5 + 1
    k = max(k2, k5)
    if d == 1 and k <= 24:
        digits = str(c.numerator * 10**k // c.denominator).rjust(k + 1, "0")
        return f"{digits[:-k]}.{digits[-k:]}"
    return f"{c.numerator}/{c.denominator}"


def format_poly(p: Poly, coeff_fmt: Callable[[object], str] | None = None) -> str:
    """Render ``p`` in the grammar accepted by :func:`parse_poly`."""
    if p.is_zero():
        return "0"
    out = []
    for m, c in p.sorted_terms():
        mono = _fmt_monomial(p.vars, m)
        if isinstance(c, Fraction) and coeff_fmt is None:
            neg = c < 0
            a = -c if neg else c
            if mono and a == 1:
                body = mono
            elif mono:
                body = f"{_fmt_fraction(a)}*{mono}"
            else:
                body = _fmt_fraction(a)
            out.append(("- " if neg else "+ ") + body)
        else:
            cs = coeff_fmt(c) if coeff_fmt else f"({c})"
            body = f"{cs}*{mono}" if mono else cs
            out.append("+ " + body)
    s = " ".join(out)
    return s[2:] if s.startswith("+ ") else "-" + s[2:]


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>\*\*|[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        mt = _TOKEN.match(text, pos)
        if not mt or mt.end() == pos:
            raise PolyError(f"malformed expression at position {pos}: {text[pos:pos + 10]!r}")
        kind = mt.lastgroup
        tokens.append((kind, mt.group(kind), mt.start(kind)))
        pos = mt.end()
    return tokens


class _Parser:
    def __init__(self, text: str, atom: Callable[[str], Poly], const: Callable[[Fraction], Poly]):
        self.toks = _tokenize(text)
        self.i = 0
        self.atom = atom
        self.const = const
        self.text = text

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None, len(self.text))

    def take(self):
        t = self.peek()
        self.i += 1
        return t

    def expect(self, op):
        kind, val, pos = self.take()
        if val != op:
            raise PolyError(f"expected {op!r} at position {pos}")

    def parse(self) -> Poly:
        if not self.toks:
            raise PolyError("empty expression")
        p = self.expr()
        if self.i != len(self.toks):
            raise PolyError(f"unexpected token {self.peek()[1]!r} at position {self.peek()[2]}")
        return p

    def expr(self):
        kind, val, _ = self.peek()
        if val in ("+", "-"):
            self.take()
            p = self.term()
            if val == "-":
                p = -p
        else:
            p = self.term()
        while self.peek()[1] in ("+", "-"):
            _, op, _ = self.take()
            q = self.term()
            p = p + q if op == "+" else p - q
        return p

    def term(self):
        p = self.factor()
        while self.peek()[1] in ("*", "/"):
            _, op, pos = self.take()
            q = self.factor()
            if op == "*":
                p = p * q
            else:
                if not (q.is_constant() and isinstance(q.constant_term(), Fraction)) or q.is_zero():
                    raise PolyError(f"division by a non-constant or zero expression at position {pos}")
                p = p * (Fraction(1) / q.constant_term())
        return p

    def factor(self):
        base = self.unary()
        if self.peek()[1] in ("^", "**"):
            _, _, pos = self.take()
            kind, val, vpos = self.peek()
            if val == "-":
                raise PolyError(f"negative exponent at position {vpos}")
            if kind != "num" or not val.isdigit():
                raise PolyError(f"exponent must be a non-negative integer at position {vpos}")
            self.take()
            return base ** int(val)
        return base

    def unary(self):
        kind, val, pos = self.peek()
        if val == "-":
            self.take()
            return -self.unary()
        if val == "+":
            self.take()
            return self.unary()
        return self.primary()

    def primary(self):
        kind, val, pos = self.take()
        if kind == "num":
            return self.const(Fraction(val))
        if kind == "id":
            return self.atom(val)
        if val == "(":
            p = self.expr()
            self.expect(")")
            return p
        if kind is None:
            raise PolyError("unexpected end of expression")
        raise PolyError(f"unexpected token {val!r} at position {pos}")


def parse_expression(text: str, atom: Callable[[str], Poly], const: Callable[[Fraction], Poly]) -> Poly:
    """Parse with caller-supplied leaf constructors (used for templates)."""
    return _Parser(text, atom, const).parse()


def parse_poly(text: str, vars: Sequence[str]) -> Poly:
    """Parse ``text`` into an exact polynomial over ``vars``.

    Decimal literals become exact rationals (``0.1`` is ``1/10``).
    """
    vars = tuple(vars)

    def atom(name):
        if name not in vars:
            raise PolyError(f"unknown identifier {name!r}")
        return Poly.variable(vars, name)

    return parse_expression(text, atom, lambda c: Poly.constant(vars, c))


# ---------------------------------------------------------------------------
# vector fields and Lie derivatives


class VectorField:
    """Polynomial right-hand side ``dx/dt = f(x)``."""

    __slots__ = ("vars", "components")

    def __init__(self, components: Sequence[Poly]):
        comps = tuple(components)
        if not comps:
            raise PolyError("vector field needs at least one component")
        vars = comps[0].vars
        if len(comps) != len(vars):
            raise PolyError(f"field has {len(comps)} components for {len(vars)} variables")
        for c in comps:
            if c.vars != vars:
                raise PolyError("field components use different variable tuples")
        self.vars = vars
        self.components = comps

    @classmethod
    def parse(cls, texts: Sequence[str], vars: Sequence[str]) -> "VectorField":
        return cls([parse_poly(t, vars) for t in texts])

    @property
    def degree(self) -> int:
        return max(c.degree() for c in self.components)

    def eval_np(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.stack([c.eval_np(X) for c in self.components], axis=1)

    def __eq__(self, other):
        return isinstance(other, VectorField) and self.components == other.components

    def __hash__(self):
        return hash(self.components)

    def __iter__(self):
        return iter(self.components)

    def __len__(self):
        return len(self.components)


def lie_derivative(B: Poly, f: VectorField, k: int = 1) -> Poly:
    """k-th Lie derivative of ``B`` along ``f``; ``k = 0`` returns ``B``."""
    if k < 0:
        raise PolyError("Lie derivative order must be non-negative")
    if B.vars != f.vars:
        raise PolyError(f"variable mismatch: {B.vars} vs {f.vars}")
    out = B
    for _ in range(k):
        acc = type(out)(out.vars)
        for i, fi in enumerate(f.components):
            d = out.diff(i)
            if not d.is_zero():
                acc = acc + d * fi
        out = acc
    return out


def lie_derivatives(B: Poly, f: VectorField, upto: int) -> list[Poly]:
    """[L^0 B, ..., L^upto B]."""
    out = [B]
    for _ in range(upto):
        out.append(lie_derivative(out[-1], f, 1))
    return out


# ---------------------------------------------------------------------------
# Gröbner bases


def _check_rational(p: Poly) -> None:
    for c in p.terms.values():
        if not isinstance(c, Fraction):
            raise PolyError("Gröbner computations need rational coefficients (substitute parameters first)")


def normal_form(p: Poly, G: Sequence[Poly], order: str = "grevlex") -> Poly:
    """Remainder of multivariate division of ``p`` by ``G``."""
    key = ORDERS[order]
    leads = [(g.leading(order), g) for g in G if not g.is_zero()]
    rem: dict[Monomial, Fraction] = {}
    work = dict(p.terms)
    while work:
        m = max(work, key=key)
        c = work[m]
        for (lm, lc), g in leads:
            if mono_divides(lm, m):
                q = mono_div(m, lm)
                factor = c / lc
                for gm, gc in g.terms.items():
                    mm = mono_mul(gm, q)
                    v = work.get(mm, Fraction(0)) - factor * gc
                    if v:
                        work[mm] = v
                    else:
                        work.pop(mm, None)
                break
        else:
            rem[m] = c
            del work[m]
    return Poly(p.vars, rem)


def _spoly(f: Poly, g: Poly, order: str) -> Poly:
    (lf, cf), (lg, cg) = f.leading(order), g.leading(order)
    l = mono_lcm(lf, lg)
    a = Poly(f.vars, {mono_div(l, lf): Fraction(1) / cf})
    b = Poly(g.vars, {mono_div(l, lg): Fraction(1) / cg})
    return a * f - b * g


def groebner_basis(polys: Iterable[Poly], order: str = "grevlex") -> list[Poly]:
    """Reduced Gröbner basis (monic, sorted by leading monomial, descending).

    Buchberger's algorithm with the coprime-leading-term criterion and the
    chain (lcm) criterion to skip redundant pairs.
    """
    if order not in ORDERS:
        raise PolyError(f"unsupported term order {order!r}")
    key = ORDERS[order]
    G = [p.monic(order) for p in polys if not p.is_zero()]
    for p in G:
        _check_rational(p)
    if not G:
        return []
    pairs = {(i, j) for i in range(len(G)) for j in range(i)}
    while pairs:
        i, j = min(pairs, key=lambda ij: key(mono_lcm(G[ij[0]].leading(order)[0], G[ij[1]].leading(order)[0])))
        pairs.discard((i, j))
        li, lj = G[i].leading(order)[0], G[j].leading(order)[0]
        lij = mono_lcm(li, lj)
        if all(a == 0 or b == 0 for a, b in zip(li, lj)):
            continue
        if any(
            k != i and k != j
            and mono_divides(G[k].leading(order)[0], lij)
            and (max(i, k), min(i, k)) not in pairs
            and (max(j, k), min(j, k)) not in pairs
            for k in range(len(G))
        ):
            continue
        r = normal_form(_spoly(G[i], G[j], order), G, order)
        if not r.is_zero():
            G.append(r.monic(order))
            n = len(G) - 1
            pairs |= {(n, k) for k in range(n)}
    return _reduce(G, order)


def _reduce(G: list[Poly], order: str) -> list[Poly]:
    key = ORDERS[order]
    # drop elements whose leading monomial is divisible by another's
    minimal: list[Poly] = []
    for idx, g in enumerate(G):
        lg = g.leading(order)[0]
        redundant = False
        for jdx, h in enumerate(G):
            if jdx == idx:
                continue
            lh = h.leading(order)[0]
            if mono_divides(lh, lg) and (lh != lg or jdx < idx):
                redundant = True
                break
        if not redundant:
            minimal.append(g)
    reduced = []
    for idx, g in enumerate(minimal):
        others = minimal[:idx] + minimal[idx + 1:]
        reduced.append(normal_form(g, others, order).monic(order))
    reduced.sort(key=lambda g: key(g.leading(order)[0]), reverse=True)
    return reduced


def ideal_contains(p: Poly, gens: Sequence[Poly], order: str = "grevlex") -> bool:
    G = groebner_basis(gens, order)
    return normal_form(p, G, order).is_zero()


class Threshold(NamedTuple):
    """Completeness threshold together with whether it was actually reached."""

    order: int
    reached: bool


def completeness_threshold(B: Poly, f: VectorField, max_order: int = 8) -> Threshold:
    """Smallest ``i >= 1`` with ``L^{i+1} B`` in the ideal of ``L^0 B .. L^i B``.

    The search is capped at ``max_order``; when the cap is hit the result
    carries ``reached=False``.  ``B`` must have rational coefficients.
    """
    _check_rational(B)
    if max_order < 1:
        raise PolyError("max_order must be >= 1")
    ders = lie_derivatives(B, f, max_order + 1)
    for i in range(0, max_order + 1):
        G = groebner_basis(ders[: i + 1])
        if normal_form(ders[i + 1], G).is_zero():
            return Threshold(max(i, 1), True)
    return Threshold(max_order, False)

"""Sum-of-squares encoding of barrier conditions as bilinear matrix forms.

Every polynomial ``h(a, s, x)`` that must be a sum of squares is written as
``b(x)^T Q(a, s) b(x)`` over a monomial basis ``b``.  Coefficient matching is
exact: when a monomial has several Gram positions the surplus is carried by
fresh free parameters (null-space directions), appended to ``s``.  The
resulting condition ``Q >= 0`` becomes the matrix form ``-Q <= 0`` and is
flattened into constant matrices

    F + sum_i a_i H_i + sum_j s_j G_j + sum_ij a_i s_j F_ij.

Multipliers come in two flavours.  Free multipliers ``v`` are plain
polynomials with one ``s`` entry per coefficient.  SOS multipliers
``sigma`` carry their own Gram matrix, whose positivity is emitted as an
extra side-condition form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .polycore import Monomial, Poly, lie_derivatives, mono_mul, monomials_up_to
from .problemdef import ParamExpr, ParamPoly, ProblemSpec, template_params


class EncodingError(ValueError):
    """Degree budget too small, or a form is not bilinear."""


def monomial_basis(nvars: int, d: int) -> list[Monomial]:
    """Monomials of degree <= d: 1 first, then degree by degree, grevlex."""
    if d < 0:
        raise EncodingError("basis degree must be non-negative")
    return monomials_up_to(nvars, d)


# ---------------------------------------------------------------------------
# symbolic Gram matrices


@dataclass
class ParamSymMat:
    """Symmetric matrix of parameter expressions over a monomial basis."""

    vars: tuple[str, ...]
    basis: list[Monomial]
    entries: list[list[ParamExpr]]

    @property
    def size(self) -> int:
        return len(self.basis)

    def __getitem__(self, ij) -> ParamExpr:
        i, j = ij
        return self.entries[i][j]

    def scaled(self, c) -> "ParamSymMat":
        return ParamSymMat(self.vars, self.basis, [[e * c for e in row] for row in self.entries])

    def params(self) -> set[str]:
        return {p for row in self.entries for e in row for p in e.params()}

    def quadratic_form(self) -> ParamPoly:
        """The polynomial ``b^T Q b``."""
        terms: dict[Monomial, ParamExpr] = {}
        p = self.size
        for i in range(p):
            for j in range(p):
                e = self.entries[i][j]
                if e:
                    m = mono_mul(self.basis[i], self.basis[j])
                    terms[m] = terms[m] + e if m in terms else e
        return ParamPoly(self.vars, terms)

    def dump(self) -> str:
        names = [_mono_name(self.vars, m) for m in self.basis]
        lines = [f"basis: ({', '.join(names)})"]
        for i in range(self.size):
            lines.append("  [" + ", ".join(str(e) for e in self.entries[i]) + "]")
        return "\n".join(lines)


def _mono_name(vars, m) -> str:
    s = "*".join(v if e == 1 else f"{v}^{e}" for v, e in zip(vars, m) if e)
    return s or "1"


def _pair_table(basis: Sequence[Monomial]) -> dict[Monomial, list[tuple[int, int]]]:
    table: dict[Monomial, list[tuple[int, int]]] = {}
    for i in range(len(basis)):
        for j in range(i, len(basis)):
            table.setdefault(mono_mul(basis[i], basis[j]), []).append((i, j))
    for m, pairs in table.items():
        pairs.sort(key=lambda ij: (ij[0] != ij[1], ij))
    return table


def gram_decompose(h: Poly, d: int, slack_prefix: str = "q") -> tuple[ParamSymMat, list[str]]:
    """Gram matrix ``Q`` with ``b^T Q b == h`` exactly, basis degree ``d``.

    Returns ``Q`` and the names of the null-space parameters it introduced
    (``{slack_prefix}#k``).  Off-diagonal positions hold half of their
    monomial's share, so each symmetric pair contributes once in total.
    """
    h = h if isinstance(h, ParamPoly) else ParamPoly.from_poly(h)
    basis = monomial_basis(h.nvars, d)
    table = _pair_table(basis)
    extra = set(h.terms) - set(table)
    if extra:
        raise EncodingError(
            f"degree budget too small: basis degree {d} cannot match degree {h.degree()}"
        )
    p = len(basis)
    Q = [[ParamExpr() for _ in range(p)] for _ in range(p)]
    slack: list[str] = []
    for m, pairs in table.items():
        target = ParamExpr.lift(h.coeff(m))
        (i0, j0) = pairs[0]
        w0 = 1 if i0 == j0 else 2
        rest = ParamExpr()
        for (i, j) in pairs[1:]:
            name = f"{slack_prefix}#{len(slack)}"
            slack.append(name)
            lam = ParamExpr.param(name)
            Q[i][j] = lam
            Q[j][i] = lam
            rest = rest + lam * (1 if i == j else 2)
        e = (target - rest) * Fraction(1, w0)
        Q[i0][j0] = e
        Q[j0][i0] = e
    G = ParamSymMat(h.vars, basis, Q)
    if G.quadratic_form() != h:
        raise EncodingError("internal error: Gram reconstruction is not exact")
    return G, slack


# ---------------------------------------------------------------------------
# numeric bilinear forms


@dataclass
class BilinearMatrixForm:
    """``F + sum a_i H_i + sum s_j G_j + sum a_i s_j F_ij`` over local indices.

    ``a_idx``/``s_idx`` map the local parameter positions to the global
    ``a``/``s`` layout of the owning constraint system.  ``Fij`` is sparse:
    only nonzero ``(i, j)`` blocks are stored.
    """

    F: np.ndarray
    H: np.ndarray
    G: np.ndarray
    Fij: dict[tuple[int, int], np.ndarray]
    a_names: tuple[str, ...]
    s_names: tuple[str, ...]
    a_idx: np.ndarray
    s_idx: np.ndarray

    @property
    def p(self) -> int:
        return self.F.shape[0]

    @property
    def m(self) -> int:
        return len(self.a_names)

    @property
    def n(self) -> int:
        return len(self.s_names)

    def is_affine(self) -> bool:
        return not self.Fij

    def dense_fij(self) -> np.ndarray:
        out = np.zeros((self.m, self.n, self.p, self.p))
        for (i, j), M in self.Fij.items():
            out[i, j] = M
        return out

    def evaluate_local(self, a: np.ndarray, s: np.ndarray) -> np.ndarray:
        out = self.F.copy()
        if self.m:
            out += np.tensordot(a, self.H, axes=1)
        if self.n:
            out += np.tensordot(s, self.G, axes=1)
        for (i, j), M in self.Fij.items():
            out += a[i] * s[j] * M
        return out

    def evaluate(self, a: np.ndarray, s: np.ndarray) -> np.ndarray:
        """Evaluate with the global ``a`` and ``s`` vectors."""
        return self.evaluate_local(np.asarray(a)[self.a_idx], np.asarray(s)[self.s_idx])

    def coupled(self) -> tuple[list[int], list[int]]:
        """Local indices of ``a`` and ``s`` entries occurring in bilinear terms."""
        ai = sorted({i for i, _ in self.Fij})
        sj = sorted({j for _, j in self.Fij})
        return ai, sj


def flatten_bilinear(
    M: ParamSymMat,
    a_order: Sequence[str],
    s_order: Sequence[str],
) -> BilinearMatrixForm:
    """Split a symbolic matrix into the constant matrices of a bilinear form.

    ``a_order``/``s_order`` fix the global layouts; the local blocks keep
    that relative order.
    """
    a_pos = {n: k for k, n in enumerate(a_order)}
    s_pos = {n: k for k, n in enumerate(s_order)}
    used = M.params()
    unknown = used - set(a_pos) - set(s_pos)
    if unknown:
        raise EncodingError(f"unregistered parameters: {sorted(unknown)}")
    a_loc = sorted((n for n in used if n in a_pos), key=a_pos.get)
    s_loc = sorted((n for n in used if n in s_pos), key=s_pos.get)
    la = {n: k for k, n in enumerate(a_loc)}
    ls = {n: k for k, n in enumerate(s_loc)}
    p = M.size
    F = np.zeros((p, p))
    H = np.zeros((len(a_loc), p, p))
    G = np.zeros((len(s_loc), p, p))
    Fij: dict[tuple[int, int], np.ndarray] = {}
    for r in range(p):
        for c in range(p):
            for key, v in M.entries[r][c].terms.items():
                val = float(v)
                if not key:
                    F[r, c] += val
                elif len(key) == 1:
                    (n,) = key
                    if n in la:
                        H[la[n], r, c] += val
                    else:
                        G[ls[n], r, c] += val
                elif len(key) == 2:
                    x, y = key
                    if x in la and y in ls:
                        ij = (la[x], ls[y])
                    elif y in la and x in ls:
                        ij = (la[y], ls[x])
                    else:
                        raise EncodingError(f"same-group quadratic term {x}*{y}")
                    if ij not in Fij:
                        Fij[ij] = np.zeros((p, p))
                    Fij[ij][r, c] += val
                else:
                    raise EncodingError("parameter degree exceeds 2")
    return BilinearMatrixForm(
        F=F,
        H=H,
        G=G,
        Fij=Fij,
        a_names=tuple(a_loc),
        s_names=tuple(s_loc),
        a_idx=np.array([a_pos[n] for n in a_loc], dtype=int),
        s_idx=np.array([s_pos[n] for n in s_loc], dtype=int),
    )


# ---------------------------------------------------------------------------
# multipliers and constraint systems


@dataclass
class Multiplier:
    """A multiplier polynomial and its parameters.

    ``const_param`` is the ``s`` entry holding the constant term.  A
    multiplier is ``coupled`` when it multiplies a parametric polynomial, so
    its coefficients meet ``a`` in bilinear terms.
    """

    name: str
    kind: str  # "free" or "sos"
    degree: int
    poly: ParamPoly
    params: list[str]
    const_param: str
    coupled: bool = False
    gram: ParamSymMat | None = None


def free_multiplier(vars, name: str, degree: int) -> Multiplier:
    monos = monomials_up_to(len(vars), degree)
    params = [f"{name}#{k}" for k in range(len(monos))]
    poly = ParamPoly(vars, {m: ParamExpr.param(n) for m, n in zip(monos, params)})
    return Multiplier(name, "free", degree, poly, params, params[0])


def sos_multiplier(vars, name: str, basis_degree: int) -> Multiplier:
    basis = monomial_basis(len(vars), basis_degree)
    p = len(basis)
    params: list[str] = []
    S = [[ParamExpr() for _ in range(p)] for _ in range(p)]
    for i in range(p):
        for j in range(i, p):
            n = f"{name}#{i},{j}"
            params.append(n)
            S[i][j] = S[j][i] = ParamExpr.param(n)
    gram = ParamSymMat(tuple(vars), basis, S)
    return Multiplier(name, "sos", 2 * basis_degree, gram.quadratic_form(), params, params[0], gram=gram)


@dataclass
class FormSpec:
    """One matrix inequality ``form(a, s) <= 0`` with its provenance."""

    label: str
    kind: str  # initial | consecution | separation | psd
    order: int | None
    poly: ParamPoly | None
    gram: ParamSymMat
    form: BilinearMatrixForm | None = None


@dataclass
class ConstraintSystem:
    spec: ProblemSpec
    template: ParamPoly
    lie_order: int
    encoding: str
    forms: list[FormSpec]
    multipliers: list[Multiplier]
    a_names: tuple[str, ...]
    s_names: tuple[str, ...]
    slack_params: list[str] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.a_names)

    @property
    def n(self) -> int:
        return len(self.s_names)

    def principal_forms(self) -> list[FormSpec]:
        return [f for f in self.forms if f.kind != "psd"]

    def coupled_params(self) -> list[str]:
        return [p for mu in self.multipliers if mu.coupled for p in mu.params]

    def dump(self) -> str:
        """Readable listing of every form as its matrix of coefficient expressions."""
        out = [
            f"encoding: {self.encoding}, lie order {self.lie_order}",
            f"template: {self.template}",
            f"a ({self.m}): {', '.join(self.a_names)}",
            f"s ({self.n}): {', '.join(self.s_names)}",
        ]
        for k, f in enumerate(self.forms):
            out.append(f"form {k} [{f.label}] size {f.gram.size}: -(Q) <= 0 with Q =")
            out.append(f.gram.dump())
        return "\n".join(out)


class _Builder:
    def __init__(self, spec: ProblemSpec, B: ParamPoly):
        self.spec = spec
        self.vars = spec.vars
        self.B = B
        self.multipliers: list[Multiplier] = []
        self.forms: list[FormSpec] = []
        self.s_names: list[str] = []
        self.slack: list[str] = []

    def sos(self, name: str, g: Poly, budget: int) -> ParamPoly | None:
        """``sigma * g`` with ``sigma`` SOS sized to fit the budget, or None."""
        cap = (self.spec.multiplier_degree + 1) // 2
        room = budget - max(g.degree(), 0)
        d = min(cap, room // 2) if room >= 0 else -1
        if d < 0:
            return None
        mu = sos_multiplier(self.vars, name, d)
        self._register(mu)
        return mu.poly * g

    def free(self, name: str, g: ParamPoly, budget: int) -> ParamPoly | None:
        room = budget - max(g.degree(), 0)
        d = min(self.spec.multiplier_degree, room)
        if d < 0 or g.is_zero():
            return None
        mu = free_multiplier(self.vars, name, d)
        mu.coupled = isinstance(g, ParamPoly) and bool(g.params())
        self._register(mu)
        return mu.poly * g

    def _register(self, mu: Multiplier):
        self.multipliers.append(mu)
        self.s_names.extend(mu.params)

    def principal(self, label: str, kind: str, order: int | None, h: ParamPoly, budget: int):
        deg = h.degree()
        if deg > budget:
            raise EncodingError(
                f"degree budget too small: {label} has degree {deg} > sos degree {budget}"
            )
        d = max(0, (deg + 1) // 2)
        Q, slack = gram_decompose(h, d, slack_prefix=f"q[{label}]")
        self.s_names.extend(slack)
        self.slack.extend(slack)
        self.forms.append(FormSpec(label, kind, order, h, Q))

    def finish(self, N: int, encoding: str) -> ConstraintSystem:
        for mu in self.multipliers:
            if mu.kind == "sos":
                self.forms.append(FormSpec(f"psd[{mu.name}]", "psd", None, None, mu.gram))
        a_names = template_params(self.B)
        extra = {p for f in self.forms for p in f.gram.params()} - set(a_names) - set(self.s_names)
        if extra:
            raise EncodingError(f"unregistered parameters: {sorted(extra)}")
        for f in self.forms:
            f.form = flatten_bilinear(f.gram.scaled(-1), a_names, self.s_names)
        return ConstraintSystem(
            spec=self.spec,
            template=self.B,
            lie_order=N,
            encoding=encoding,
            forms=self.forms,
            multipliers=self.multipliers,
            a_names=a_names,
            s_names=tuple(self.s_names),
            slack_params=self.slack,
        )


def _setup(spec: ProblemSpec, template: ParamPoly | None, lie_order: int | None):
    B = template if template is not None else spec.template_poly()
    N = spec.lie_order if lie_order is None else lie_order
    if N < 1:
        raise EncodingError("lie_order must be ≥ 1")
    top = N
    if spec.strict_order is not None:
        top = min(N, spec.strict_order)
    return B, N, top, lie_derivatives(B, spec.field, N)


def build_sufficient_constraints(
    spec: ProblemSpec, template: ParamPoly | None = None, lie_order: int | None = None
) -> ConstraintSystem:
    """SOS relaxation whose feasibility implies a valid barrier certificate.

    Forms: ``-B + sum sigma_k I_k``; for each order ``i``,
    ``-L^i B + sum_{j<i} v_ij L^j B``; and ``B + sum sigma'_k U_k - eps``,
    followed by one positivity form per SOS multiplier.
    """
    B, N, top, ders = _setup(spec, template, lie_order)
    eps = spec.sep_margin
    bld = _Builder(spec, B)

    budget = spec.form_degree("initial")
    h = -B
    for k, g in enumerate(spec.init):
        t = bld.sos(f"sig_init{k}", g, budget)
        if t is not None:
            h = h + t
    bld.principal("initial", "initial", None, h, budget)

    budget = spec.form_degree("consecution")
    for i in range(1, top + 1):
        h = -ders[i]
        for j in range(i):
            t = bld.free(f"v{i}_{j}", ders[j], budget)
            if t is not None:
                h = h + t
        if spec.strict_order is not None and i == top:
            h = h - eps
        bld.principal(f"consecution{i}", "consecution", i, h, budget)

    budget = spec.form_degree("separation")
    h = B - eps
    for k, g in enumerate(spec.unsafe):
        t = bld.sos(f"sig_unsafe{k}", g, budget)
        if t is not None:
            h = h + t
    bld.principal("separation", "separation", None, h, budget)
    return bld.finish(N, "sufficient")


def build_necessary_constraints(
    spec: ProblemSpec, template: ParamPoly | None = None, lie_order: int | None = None
) -> ConstraintSystem:
    """Putinar-style encoding restricted to the ball ``|x|^2 <= L``.

    Same shape as the sufficient encoding with an extra SOS multiple of
    ``|x|^2 - L`` in every principal form and ``+eps`` slack on the initial
    and consecution forms.
    """
    if spec.ball_radius is None:
        raise EncodingError("necessary encoding needs ball_radius")
    B, N, top, ders = _setup(spec, template, lie_order)
    eps = spec.sep_margin
    vars = spec.vars
    ball = sum((Poly.variable(vars, v) ** 2 for v in vars), Poly.zero(vars)) - spec.ball_radius
    bld = _Builder(spec, B)

    budget = spec.form_degree("initial")
    h = -B + eps
    t = bld.sos("rho_init", ball, budget)
    if t is not None:
        h = h + t
    for k, g in enumerate(spec.init):
        t = bld.sos(f"sig_init{k}", g, budget)
        if t is not None:
            h = h + t
    bld.principal("initial", "initial", None, h, budget)

    budget = spec.form_degree("consecution")
    for i in range(1, top + 1):
        h = -ders[i] + eps
        t = bld.sos(f"rho_cons{i}", ball, budget)
        if t is not None:
            h = h + t
        for j in range(i):
            t = bld.free(f"v{i}_{j}", ders[j], budget)
            if t is not None:
                h = h + t
        bld.principal(f"consecution{i}", "consecution", i, h, budget)

    budget = spec.form_degree("separation")
    h = ParamPoly.from_poly(B) if not isinstance(B, ParamPoly) else B
    t = bld.sos("rho_unsafe", ball, budget)
    if t is not None:
        h = h + t
    for k, g in enumerate(spec.unsafe):
        t = bld.sos(f"sig_unsafe{k}", g, budget)
        if t is not None:
            h = h + t
    bld.principal("separation", "separation", None, h, budget)
    return bld.finish(N, "necessary")


def build_constraints(spec: ProblemSpec, **kw) -> ConstraintSystem:
    if spec.encoding == "necessary":
        return build_necessary_constraints(spec, **kw)
    return build_sufficient_constraints(spec, **kw)

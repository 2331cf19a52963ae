"""Problem files, parametric templates and parameter substitution.

A problem file is JSON::

    {"vars": ["x1", "x2"],
     "field": ["x1 + x2", "x1*x2 - 0.5*x2^2 + 0.1"],
     "init": "x1^2 + (x2 - 2)^2 - 1",
     "unsafe": "x2 + 1",
     "domain_box": [[-3, 3], [-3, 3]],
     "template": {"mode": "explicit", "poly": "a*x2"},
     "lie_order": 1, "multiplier_degree": 1, "sos_degree": 2,
     "sep_margin": 0.01, "encoding": "sufficient",
     "bounds": {"l_a": 1, "l_s": 1},
     "dcp": {"delta": -1e-3, "conv_tol": 1e-6, "max_iter": 100},
     "bnb": {"eta": 0.05, "samples": 16}}

``init`` and ``unsafe`` may be lists, meaning the conjunction of ``g <= 0``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

from .config import BnbConfig, DcpConfig
from .polycore import (
    Poly,
    PolyError,
    VectorField,
    as_fraction,
    format_poly,
    monomials_up_to,
    parse_expression,
    parse_poly,
)


class ProblemError(ValueError):
    """Invalid problem file or template."""


# ---------------------------------------------------------------------------
# parameter expressions

ParamKey = tuple[str, ...]


def _key_mul(k1: ParamKey, k2: ParamKey) -> ParamKey:
    return tuple(sorted(k1 + k2))


class ParamExpr:
    """Polynomial of degree <= 2 in named parameters, rational coefficients.

    Keys are sorted tuples of parameter names: ``()`` for the constant,
    ``(p,)`` for linear and ``(p, q)`` for quadratic terms.
    """

    __slots__ = ("terms",)

    def __init__(self, terms: Mapping[ParamKey, Fraction] | None = None):
        self.terms: dict[ParamKey, Fraction] = {k: v for k, v in (terms or {}).items() if v}

    @classmethod
    def const(cls, c) -> "ParamExpr":
        return cls({(): as_fraction(c)})

    @classmethod
    def param(cls, name: str) -> "ParamExpr":
        return cls({(name,): Fraction(1)})

    @staticmethod
    def lift(x) -> "ParamExpr":
        if isinstance(x, ParamExpr):
            return x
        return ParamExpr.const(x)

    def __bool__(self):
        return bool(self.terms)

    def __add__(self, other):
        other = ParamExpr.lift(other)
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0) + v
        return ParamExpr(out)

    __radd__ = __add__

    def __neg__(self):
        return ParamExpr({k: -v for k, v in self.terms.items()})

    def __sub__(self, other):
        return self + (-ParamExpr.lift(other))

    def __rsub__(self, other):
        return ParamExpr.lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, ParamExpr):
            c = as_fraction(other)
            return ParamExpr({k: v * c for k, v in self.terms.items()})
        out: dict[ParamKey, Fraction] = {}
        for k1, v1 in self.terms.items():
            for k2, v2 in other.terms.items():
                k = _key_mul(k1, k2)
                if len(k) > 2:
                    raise PolyError("parameter degree exceeds 2")
                out[k] = out.get(k, 0) + v1 * v2
        return ParamExpr(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (Fraction(1) / as_fraction(other))

    def degree(self) -> int:
        return max((len(k) for k in self.terms), default=-1)

    def params(self) -> set[str]:
        return {p for k in self.terms for p in k}

    def is_constant(self) -> bool:
        return all(not k for k in self.terms)

    @property
    def constant(self) -> Fraction:
        return self.terms.get((), Fraction(0))

    def substitute(self, values: Mapping[str, object]) -> "ParamExpr":
        """Replace the parameters present in ``values``; others stay symbolic."""
        out = ParamExpr()
        for k, v in self.terms.items():
            rest: list[str] = []
            coef = v
            for p in k:
                if p in values:
                    coef = coef * as_fraction(values[p])
                else:
                    rest.append(p)
            term = ParamExpr({tuple(rest): coef})
            out = out + term
        return out

    def evaluate(self, values: Mapping[str, float]) -> float:
        total = 0.0
        for k, v in self.terms.items():
            t = float(v)
            for p in k:
                t *= values[p]
            total += t
        return total

    def __eq__(self, other):
        if isinstance(other, ParamExpr):
            return self.terms == other.terms
        if isinstance(other, (int, Fraction)):
            return self.terms == ({(): Fraction(other)} if other else {})
        return NotImplemented

    def __hash__(self):
        if self.is_constant():
            return hash(self.constant)
        return hash(frozenset(self.terms.items()))

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for k in sorted(self.terms, key=lambda k: (len(k), [_natural(p) for p in k])):
            v = self.terms[k]
            mono = "*".join(k)
            vs = str(abs(v))
            body = mono if mono and abs(v) == 1 else (f"{vs}*{mono}" if mono else vs)
            parts.append(("- " if v < 0 else "+ ") + body)
        s = " ".join(parts)
        return s[2:] if s.startswith("+ ") else "-" + s[2:]

    __repr__ = __str__


def _natural(name: str):
    m = re.match(r"^(.*?)(\d*)$", name)
    return (m.group(1), int(m.group(2)) if m.group(2) else -1, name)


def natural_sorted(names) -> list[str]:
    return sorted(names, key=_natural)


class ParamPoly(Poly):
    """Polynomial in ``x`` whose coefficients are :class:`ParamExpr`.

    Constant coefficients are normalised to :class:`Fraction`, so a
    parameter-free instance compares equal to the matching :class:`Poly`.
    """

    __slots__ = ()
    _rank = 1

    def __init__(self, vars, terms=None):
        if terms:
            terms = {
                m: (c.constant if isinstance(c, ParamExpr) and c.is_constant() else c)
                for m, c in terms.items()
            }
        super().__init__(vars, terms)

    @classmethod
    def param(cls, vars: Sequence[str], name: str) -> "ParamPoly":
        vars = tuple(vars)
        return cls(vars, {(0,) * len(vars): ParamExpr.param(name)})

    @classmethod
    def from_poly(cls, p: Poly) -> "ParamPoly":
        return cls(p.vars, p.terms)

    def params(self) -> set[str]:
        out: set[str] = set()
        for c in self.terms.values():
            if isinstance(c, ParamExpr):
                out |= c.params()
        return out

    def param_degree(self) -> int:
        return max(
            (c.degree() if isinstance(c, ParamExpr) else (0 if c else -1) for c in self.terms.values()),
            default=-1,
        )

    def coeff_expr(self, m) -> ParamExpr:
        return ParamExpr.lift(self.coeff(m))

    def partial_substitute(self, values: Mapping[str, object]) -> "ParamPoly":
        return ParamPoly(
            self.vars,
            {m: (c.substitute(values) if isinstance(c, ParamExpr) else c) for m, c in self.terms.items()},
        )

    def __str__(self):
        return format_poly(self, coeff_fmt=_fmt_coeff)


def _fmt_coeff(c) -> str:
    if isinstance(c, ParamExpr):
        return f"({c})"
    return f"({c})" if c < 0 or c.denominator != 1 else str(c)


def substitute_params(p: ParamPoly, values: Mapping[str, object]) -> Poly:
    """Instantiate every parameter of ``p``; missing values are an error."""
    missing = p.params() - set(values)
    if missing:
        raise ProblemError(f"missing parameter values: {', '.join(natural_sorted(missing))}")
    out = {}
    for m, c in p.terms.items():
        if isinstance(c, ParamExpr):
            c = c.substitute(values).constant
        out[m] = c
    return Poly(p.vars, out)


def parse_param_poly(text: str, vars: Sequence[str], params: Sequence[str] | None = None) -> ParamPoly:
    """Parse a polynomial whose non-variable identifiers are parameters.

    With ``params`` given, any other identifier is rejected.
    """
    vars = tuple(vars)
    allowed = set(params) if params is not None else None

    def atom(name):
        if name in vars:
            return ParamPoly.variable(vars, name)
        if allowed is not None and name not in allowed:
            raise PolyError(f"unknown identifier {name!r}")
        return ParamPoly.param(vars, name)

    return parse_expression(text, atom, lambda c: ParamPoly.constant(vars, c))


# ---------------------------------------------------------------------------
# templates


@dataclass(frozen=True)
class TemplateConfig:
    mode: str = "full"
    degree: int | None = None
    poly: str | None = None
    params: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.mode not in ("full", "explicit"):
            raise ProblemError(f"unknown template mode {self.mode!r}")
        if self.mode == "full" and (self.degree is None or self.degree < 0):
            raise ProblemError("full template needs a non-negative degree")
        if self.mode == "explicit" and not self.poly:
            raise ProblemError("explicit template needs a polynomial")

    def to_dict(self) -> dict:
        d: dict = {"mode": self.mode}
        if self.mode == "full":
            d["degree"] = self.degree
        else:
            d["poly"] = self.poly
            if self.params is not None:
                d["params"] = list(self.params)
        return d


def instantiate_template(cfg: TemplateConfig, vars: Sequence[str]) -> ParamPoly:
    """Build the parametric template ``B(a, x)``; it must be affine in ``a``."""
    vars = tuple(vars)
    if cfg.mode == "full":
        out = ParamPoly(vars)
        for k, m in enumerate(monomials_up_to(len(vars), cfg.degree)):
            out = out + ParamPoly(vars, {m: ParamExpr.param(f"a{k}")})
        return out
    try:
        p = parse_param_poly(cfg.poly, vars, cfg.params)
    except PolyError as exc:
        raise ProblemError(f"template: {exc}") from exc
    if p.param_degree() > 1:
        raise ProblemError("template must be affine in its parameters")
    if not p.params():
        raise ProblemError("template has no parameters")
    return p


def template_params(B: ParamPoly) -> tuple[str, ...]:
    return tuple(natural_sorted(B.params()))


# ---------------------------------------------------------------------------
# problem definitions


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    vars: tuple[str, ...]
    field: VectorField
    init: tuple[Poly, ...]
    unsafe: tuple[Poly, ...]
    domain_box: tuple[tuple[float, float], ...]
    template: TemplateConfig
    lie_order: int = 1
    multiplier_degree: int = 2
    sos_degree: int = 4
    sep_margin: Fraction = Fraction(1, 100)
    encoding: str = "sufficient"
    ball_radius: Fraction | None = None
    l_a: float = 1.0
    l_s: float = 1.0
    dcp: DcpConfig = field(default_factory=DcpConfig)
    bnb: BnbConfig = field(default_factory=BnbConfig)
    strict_order: int | None = None
    form_degrees: tuple[tuple[str, int], ...] | None = None

    def __post_init__(self):
        n = len(self.vars)
        if len(set(self.vars)) != n:
            raise ProblemError("duplicate variable names")
        if len(self.field) != n:
            raise ProblemError(f"field has {len(self.field)} components for {n} variables")
        if len(self.domain_box) != n:
            raise ProblemError("domain_box must give one interval per variable")
        for lo, hi in self.domain_box:
            if not lo <= hi:
                raise ProblemError("domain_box intervals must satisfy lo <= hi")
        if not self.init or not self.unsafe:
            raise ProblemError("init and unsafe need at least one polynomial")
        if self.lie_order < 1:
            raise ProblemError("lie_order must be ≥ 1")
        if self.multiplier_degree < 0:
            raise ProblemError("multiplier_degree must be non-negative")
        if self.sos_degree < 0 or self.sos_degree % 2:
            raise ProblemError("sos_degree must be a non-negative even integer")
        if self.sep_margin <= 0:
            raise ProblemError("sep_margin must be positive")
        if self.encoding not in ("sufficient", "necessary"):
            raise ProblemError(f"unknown encoding {self.encoding!r}")
        if self.encoding == "necessary" and (self.ball_radius is None or self.ball_radius <= 0):
            raise ProblemError("necessary encoding needs a positive ball_radius")
        if self.l_a <= 0 or self.l_s <= 0:
            raise ProblemError("bounds must be positive")
        if self.strict_order is not None and not 1 <= self.strict_order <= self.lie_order:
            raise ProblemError("strict_order must lie in 1..lie_order")

    @property
    def nvars(self) -> int:
        return len(self.vars)

    def template_poly(self) -> ParamPoly:
        return instantiate_template(self.template, self.vars)

    def form_degree(self, kind: str) -> int:
        return dict(self.form_degrees or ()).get(kind, self.sos_degree)

    def with_(self, **changes) -> "ProblemSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "vars": list(self.vars),
            "field": [format_poly(c) for c in self.field.components],
            "init": [format_poly(g) for g in self.init],
            "unsafe": [format_poly(g) for g in self.unsafe],
            "domain_box": [[lo, hi] for lo, hi in self.domain_box],
            "template": self.template.to_dict(),
            "lie_order": self.lie_order,
            "multiplier_degree": self.multiplier_degree,
            "sos_degree": self.sos_degree,
            "sep_margin": _frac_str(self.sep_margin),
            "encoding": self.encoding,
            "bounds": {"l_a": self.l_a, "l_s": self.l_s},
            "dcp": self.dcp.to_dict(),
            "bnb": self.bnb.to_dict(),
        }
        if self.ball_radius is not None:
            d["ball_radius"] = _frac_str(self.ball_radius)
        if self.strict_order is not None:
            d["strict_order"] = self.strict_order
        if self.form_degrees:
            d["form_degrees"] = dict(self.form_degrees)
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _frac_str(c: Fraction) -> str:
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


def _num(x) -> Fraction:
    if isinstance(x, float):
        return Fraction(repr(x))
    return as_fraction(x)


_KNOWN = {
    "name", "vars", "field", "init", "unsafe", "domain_box", "template", "lie_order",
    "multiplier_degree", "sos_degree", "sep_margin", "encoding", "ball_radius", "bounds",
    "dcp", "bnb", "strict_order", "form_degrees", "description",
}


def problem_from_dict(d: Mapping, name: str = "problem") -> ProblemSpec:
    unknown = set(d) - _KNOWN
    if unknown:
        raise ProblemError(f"unknown keys: {', '.join(sorted(unknown))}")
    for key in ("vars", "field", "init", "unsafe", "domain_box", "template"):
        if key not in d:
            raise ProblemError(f"missing key {key!r}")
    vars = tuple(d["vars"])
    try:
        fld = VectorField.parse(d["field"], vars) if len(d["field"]) == len(vars) else None
        init = tuple(parse_poly(t, vars) for t in _as_list(d["init"]))
        unsafe = tuple(parse_poly(t, vars) for t in _as_list(d["unsafe"]))
    except PolyError as exc:
        raise ProblemError(str(exc)) from exc
    if fld is None:
        raise ProblemError(f"field has {len(d['field'])} components for {len(vars)} variables")
    t = dict(d["template"])
    tcfg = TemplateConfig(
        mode=t.get("mode", "full"),
        degree=t.get("degree"),
        poly=t.get("poly"),
        params=tuple(t["params"]) if "params" in t else None,
    )
    bounds = d.get("bounds", {})
    fd = d.get("form_degrees")
    try:
        spec = ProblemSpec(
            name=d.get("name", name),
            vars=vars,
            field=fld,
            init=init,
            unsafe=unsafe,
            domain_box=tuple((float(lo), float(hi)) for lo, hi in d["domain_box"]),
            template=tcfg,
            lie_order=int(d.get("lie_order", 1)),
            multiplier_degree=int(d.get("multiplier_degree", 2)),
            sos_degree=int(d.get("sos_degree", 4)),
            sep_margin=_num(d.get("sep_margin", "1/100")),
            encoding=d.get("encoding", "sufficient"),
            ball_radius=_num(d["ball_radius"]) if d.get("ball_radius") is not None else None,
            l_a=float(bounds.get("l_a", 1.0)),
            l_s=float(bounds.get("l_s", 1.0)),
            dcp=DcpConfig.from_dict(d.get("dcp", {})),
            bnb=BnbConfig.from_dict(d.get("bnb", {})),
            strict_order=d.get("strict_order"),
            form_degrees=tuple(sorted(fd.items())) if fd else None,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ProblemError):
            raise
        raise ProblemError(str(exc)) from exc
    instantiate_template(spec.template, spec.vars)
    return spec


def _as_list(x) -> list[str]:
    return [x] if isinstance(x, str) else list(x)


def load_problem(source: str | Path | Mapping) -> ProblemSpec:
    """Load a problem from a JSON file path, a JSON string or a dict."""
    if isinstance(source, Mapping):
        return problem_from_dict(source)
    path = Path(source)
    if path.suffix == ".json" or path.exists():
        with open(path) as fh:
            return problem_from_dict(json.load(fh), name=path.stem)
    return problem_from_dict(json.loads(str(source)))

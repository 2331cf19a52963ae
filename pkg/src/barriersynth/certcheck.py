"""Independent checks of a concrete barrier certificate.

Validation is by sampling inside the problem's domain box:

* initial: ``B <= margin`` on samples of the initial set,
* separation: ``B > margin`` on samples of the unsafe set,
* consecution of order ``i``: ``L^i B <= margin`` on points where
  ``|L^j B| <= eq_tol`` for all ``j < i``.

Consecution points are produced by projecting random points onto the
variety ``L^0 B = ... = L^{i-1} B = 0`` with Gauss-Newton steps.  ``B`` is
rescaled to unit largest coefficient first so the tolerances do not depend
on the arbitrary scale of a certificate.  A pass is evidence, not a proof;
:func:`export_smt` writes the exact conditions for an external solver.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .polycore import Poly, VectorField, lie_derivatives, parse_poly
from .problemdef import ProblemSpec

log = logging.getLogger(__name__)


@dataclass
class Certificate:
    poly: Poly
    lie_order: int
    params: dict[str, float] = field(default_factory=dict)
    lam: float | None = None
    iterations: int | None = None
    problem: str = ""

    def normalized(self) -> Poly:
        scale = max((abs(c) for c in self.poly.terms.values()), default=Fraction(1))
        return self.poly * (Fraction(1) / scale) if scale else self.poly

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "certificate": str(self.poly),
            "vars": list(self.poly.vars),
            "lie_order": self.lie_order,
            "params": self.params,
            "lambda": self.lam,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Certificate":
        return cls(
            poly=parse_poly(d["certificate"], d["vars"]),
            lie_order=int(d.get("lie_order", 1)),
            params=dict(d.get("params", {})),
            lam=d.get("lambda"),
            iterations=d.get("iterations"),
            problem=d.get("problem", ""),
        )


@dataclass
class ConditionResult:
    name: str
    ok: bool
    samples: int
    worst: float | None
    witness: list[float] | None = None

    @property
    def vacuous(self) -> bool:
        return self.samples == 0

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "samples": self.samples,
            "worst": self.worst,
            "witness": self.witness,
            "vacuous": self.vacuous,
        }


@dataclass
class ValidationReport:
    conditions: list[ConditionResult]

    @property
    def valid(self) -> bool:
        return all(c.ok for c in self.conditions)

    def __getitem__(self, name: str) -> ConditionResult:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed(self) -> list[str]:
        return [c.name for c in self.conditions if not c.ok]

    def to_dict(self) -> dict:
        return {"valid": self.valid, "conditions": {c.name: c.to_dict() for c in self.conditions}}


# ---------------------------------------------------------------------------
# sampling


def _box_arrays(box):
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    return lo, hi


def _in_box(X, lo, hi, slack=0.0):
    return np.all((X >= lo - slack) & (X <= hi + slack), axis=1)


def project_to_variety(
    polys: Sequence[Poly], X: np.ndarray, iters: int = 40, tol: float = 1e-13
) -> np.ndarray:
    """Gauss-Newton projection of the rows of ``X`` towards ``polys == 0``."""
    X = np.array(X, dtype=float)
    grads = [[g.diff(i) for i in range(g.nvars)] for g in polys]
    with np.errstate(all="ignore"):
        for _ in range(iters):
            R = np.stack([p.eval_np(X) for p in polys], axis=1)
            live = np.all(np.isfinite(R), axis=1)
            if np.all(np.abs(R[live]) <= tol):
                break
            J = np.stack([np.stack([d.eval_np(X) for d in row], axis=1) for row in grads], axis=1)
            J = np.nan_to_num(J, nan=0.0, posinf=0.0, neginf=0.0)
            # minimum-norm step J^T (J J^T + eps I)^-1 R; J has only a few rows
            JJt = np.einsum("kij,klj->kil", J, J)
            eps = 1e-14 * (np.trace(JJt, axis1=1, axis2=2) + 1e-300)
            JJt += eps[:, None, None] * np.eye(len(polys))
            y = np.linalg.solve(JJt, np.nan_to_num(R)[..., None])[..., 0]
            step = np.einsum("kij,ki->kj", J, y)
            X = X - step
            X[~np.all(np.isfinite(X), axis=1) | (np.abs(X).max(axis=1) > 1e8)] = np.nan
    return X


def sample_region(
    polys: Sequence[Poly],
    box,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Points of ``{g <= 0 for all g}`` inside ``box``.

    Uniform samples are topped up with points projected onto each boundary
    ``g = 0`` and with chords between accepted points, so small sets still
    get covered.
    """
    lo, hi = _box_arrays(box)
    dim = len(lo)

    def inside(X):
        ok = _in_box(X, lo, hi) & np.all(np.isfinite(X), axis=1)
        for g in polys:
            ok &= g.eval_np(np.nan_to_num(X)) <= 0
        return ok

    X = rng.uniform(lo, hi, size=(n, dim))
    acc = X[inside(X)]
    if len(acc) < n // 4:
        extra = []
        for g in polys:
            Y = project_to_variety([g], rng.uniform(lo, hi, size=(max(n // 4, 1), dim)))
            Y = Y[np.all(np.isfinite(Y), axis=1)]
            extra.append(Y[inside(Y)])
        pool = np.concatenate([acc] + extra) if extra else acc
        if len(pool) >= 2:
            i = rng.integers(0, len(pool), size=n)
            j = rng.integers(0, len(pool), size=n)
            t = rng.uniform(size=(n, 1))
            C = t * pool[i] + (1 - t) * pool[j]
            pool = np.concatenate([pool, C[inside(C)]])
        acc = pool[:n]
    return acc


def shell_points(
    ders: Sequence[Poly], i: int, box, n: int, rng: np.random.Generator, eq_tol: float
) -> np.ndarray:
    """Points in ``box`` with ``|L^j B| <= eq_tol`` for every ``j < i``."""
    lo, hi = _box_arrays(box)
    X = rng.uniform(lo, hi, size=(n, len(lo)))
    Y = project_to_variety(list(ders[:i]), X)
    ok = np.all(np.isfinite(Y), axis=1)
    Y = Y[ok]
    ok = _in_box(Y, lo, hi)
    for j in range(i):
        ok &= np.abs(ders[j].eval_np(Y)) <= eq_tol
    return Y[ok]


def _worst(vals, X, larger_is_worse=True):
    if len(vals) == 0:
        return None, None
    k = int(np.argmax(vals) if larger_is_worse else np.argmin(vals))
    return float(vals[k]), [float(v) for v in X[k]]


def validate(
    spec: ProblemSpec,
    cert: Certificate | Poly,
    n_samples: int = 100_000,
    margin: float = 1e-7,
    eq_tol: float = 1e-5,
    seed: int = 0,
    lie_order: int | None = None,
    fail_fast: bool = False,
    strict: float = 0.0,
) -> ValidationReport:
    """Sample-based check of initial, separation and consecution (orders 1..N).

    ``margin`` is the slack allowed on the ``<= 0`` conditions, so a larger
    margin never turns a pass into a failure.  Separation needs ``B > strict``
    on the unsafe samples.  With ``fail_fast`` the report stops at the first
    violated condition.
    """
    if isinstance(cert, Poly):
        cert = Certificate(cert, lie_order or spec.lie_order)
    N = lie_order or cert.lie_order
    rng = np.random.default_rng(seed)
    B = cert.normalized()
    ders = lie_derivatives(B, spec.field, N)
    out: list[ConditionResult] = []

    def finish():
        for c in out:
            if c.vacuous:
                log.debug("condition %s checked on zero samples (vacuous pass)", c.name)
        return ValidationReport(out)

    X = sample_region(spec.init, spec.domain_box, n_samples, rng)
    v = B.eval_np(X) if len(X) else np.zeros(0)
    w, wit = _worst(v, X)
    out.append(ConditionResult("initial", bool(np.all(v <= margin)), len(X), w, wit if w is not None and w > margin else None))
    if fail_fast and not out[-1].ok:
        return finish()

    X = sample_region(spec.unsafe, spec.domain_box, n_samples, rng)
    v = B.eval_np(X) if len(X) else np.zeros(0)
    w, wit = _worst(v, X, larger_is_worse=False)
    out.append(ConditionResult("separation", bool(np.all(v > strict)), len(X), w, wit if w is not None and w <= strict else None))
    if fail_fast and not out[-1].ok:
        return finish()

    for i in range(1, N + 1):
        X = shell_points(ders, i, spec.domain_box, n_samples if i == 1 else max(n_samples // 4, 1000), rng, eq_tol)
        v = ders[i].eval_np(X) if len(X) else np.zeros(0)
        w, wit = _worst(v, X)
        out.append(
            ConditionResult(f"consecution{i}", bool(np.all(v <= margin)), len(X), w, wit if w is not None and w > margin else None)
        )
        if fail_fast and not out[-1].ok:
            return finish()
    return finish()


def _lie_values(ders: Sequence[Poly], X: np.ndarray) -> np.ndarray:
    return np.stack([d.eval_np(X) for d in ders], axis=0)


def consecution_pointwise(ders: Sequence[Poly], X: np.ndarray, eq_tol: float = 1e-5) -> np.ndarray:
    """Per-point consecution: for each i, L^0..L^(i-1) B all zero implies L^i B <= 0.

    ``ders[k]`` is L^k B.  "Zero" means ``|v| <= eq_tol`` and "<= 0" means
    ``v <= eq_tol``, so the two readings below agree exactly.
    """
    V = _lie_values(ders, X)
    zero = np.abs(V) <= eq_tol
    ok = np.ones(V.shape[1], dtype=bool)
    prefix = np.ones(V.shape[1], dtype=bool)
    for i in range(1, len(ders)):
        prefix &= zero[i - 1]
        ok &= ~prefix | (V[i] <= eq_tol)
    return ok


def invariant_pointwise(ders: Sequence[Poly], X: np.ndarray, eq_tol: float = 1e-5) -> np.ndarray:
    """Per-point disjunctive invariant condition.

    B <= 0 implies that some L^i B < 0 after a run of zeros, or that every
    L^i B is zero.
    """
    V = _lie_values(ders, X)
    zero = np.abs(V) <= eq_tol
    neg = V < -eq_tol
    some = np.zeros(V.shape[1], dtype=bool)
    prefix = np.ones(V.shape[1], dtype=bool)
    for i in range(len(ders)):
        some |= prefix & neg[i]
        prefix &= zero[i]
    return ~(V[0] <= eq_tol) | some | prefix


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    t: np.ndarray
    X: np.ndarray
    B: np.ndarray | None
    diverged: bool = False

    def write_csv(self, path, vars: Sequence[str]) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *vars, "B"])
            for k in range(len(self.t)):
                b = "" if self.B is None else repr(float(self.B[k]))
                w.writerow([repr(float(self.t[k])), *(repr(float(x)) for x in self.X[k]), b])


def simulate_trajectory(
    field: VectorField,
    x0: Sequence[float],
    t_end: float,
    h: float = 1e-3,
    B: Poly | None = None,
    blowup: float = 1e9,
    box=None,
) -> Trajectory:
    """Classical fixed-step RK4; stops early if the state norm exceeds ``blowup``.

    With ``box`` given the trajectory also ends when it leaves the box (the
    exit point is dropped).
    """
    if h <= 0:
        raise ValueError("step must be positive")
    lo, hi = _box_arrays(box) if box is not None else (None, None)
    steps = int(round(t_end / h))
    x = np.asarray(x0, dtype=float)
    ts = [0.0]
    xs = [x.copy()]
    f = lambda y: field.eval_np(y[None, :])[0]
    diverged = False
    for k in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > blowup:
            diverged = True
            break
        if lo is not None and not _in_box(x[None, :], lo, hi)[0]:
            break
        ts.append((k + 1) * h)
        xs.append(x.copy())
    X = np.array(xs)
    return Trajectory(np.array(ts), X, None if B is None else B.eval_np(X), diverged)


# ---------------------------------------------------------------------------
# SMT-LIB export


def _smt_num(c: Fraction) -> str:
    a = abs(c)
    body = str(a.numerator) if a.denominator == 1 else f"(/ {a.numerator} {a.denominator})"
    return f"(- {body})" if c < 0 else body


def smt_term(p: Poly) -> str:
    """Exact SMT-LIB2 term for a rational polynomial."""
    if p.is_zero():
        return "0"
    terms = []
    for m, c in p.sorted_terms():
        factors = []
        for v, e in zip(p.vars, m):
            factors.extend([v] * e)
        if not factors:
            terms.append(_smt_num(c))
        elif c == 1:
            terms.append(factors[0] if len(factors) == 1 else f"(* {' '.join(factors)})")
        else:
            terms.append(f"(* {_smt_num(c)} {' '.join(factors)})")
    return terms[0] if len(terms) == 1 else f"(+ {' '.join(terms)})"


def _script(vars, asserts: list[str], comment: str) -> str:
    lines = [f"; {comment}", "(set-logic QF_NRA)"]
    lines += [f"(declare-fun {v} () Real)" for v in vars]
    lines += [f"(assert {a})" for a in asserts]
    lines += ["(check-sat)", "(exit)"]
    return "\n".join(lines) + "\n"


def smt_scripts(spec: ProblemSpec, cert: Certificate | Poly, lie_order: int | None = None) -> dict[str, str]:
    """One script per condition; each asserts the negation (``unsat`` means it holds)."""
    if isinstance(cert, Poly):
        cert = Certificate(cert, lie_order or spec.lie_order)
    N = lie_order or cert.lie_order
    B = cert.poly
    vars = B.vars
    ders = lie_derivatives(B, spec.field, N)
    out = {}
    init = [f"(<= {smt_term(g)} 0)" for g in spec.init]
    out["initial"] = _script(vars, init + [f"(> {smt_term(B)} 0)"], "initial set outside B <= 0")
    for i in range(1, N + 1):
        eqs = [f"(= {smt_term(ders[j])} 0)" for j in range(i)]
        out[f"consecution{i}"] = _script(
            vars, eqs + [f"(> {smt_term(ders[i])} 0)"], f"order {i} Lie derivative positive on the boundary"
        )
    uns = [f"(<= {smt_term(g)} 0)" for g in spec.unsafe]
    out["separation"] = _script(vars, uns + [f"(<= {smt_term(B)} 0)"], "unsafe set meets B <= 0")
    return out


def export_smt(spec: ProblemSpec, cert: Certificate | Poly, out_dir, lie_order: int | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in smt_scripts(spec, cert, lie_order).items():
        p = out_dir / f"{name}.smt2"
        p.write_text(text)
        paths.append(p)
    return paths


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)

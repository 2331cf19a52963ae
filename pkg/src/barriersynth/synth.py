"""End-to-end synthesis: encode, assemble, search, validate."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .bmiform import BmiProblem, assemble_bmi
from .branchbound import SearchResult, search
from .certcheck import Certificate, ValidationReport, validate
from .dcploop import IterateTrace
from .problemdef import ProblemSpec, substitute_params
from .sosencode import ConstraintSystem, build_constraints

__all__ = ["SynthResult", "synthesize", "certificate_for", "VERIFIED", "NOT_FOUND", "TIMEOUT"]

log = logging.getLogger(__name__)

VERIFIED = "verified"
NOT_FOUND = "not_found"
TIMEOUT = "timeout"

SIG_DIGITS = 12


def _rational(v: float) -> Fraction:
    # a short decimal keeps certificates and SMT scripts readable
    return Fraction(format(float(v), f".{SIG_DIGITS}g"))


def certificate_for(spec: ProblemSpec, a_names, a, lie_order: int, lam: float | None = None,
                    iterations: int | None = None) -> Certificate:
    values = {n: _rational(v) for n, v in zip(a_names, a)}
    B = substitute_params(spec.template_poly(), values)
    return Certificate(B, lie_order, {n: float(v) for n, v in values.items()}, lam, iterations, spec.name)


@dataclass
class SynthResult:
    spec: ProblemSpec
    status: str
    certificate: Certificate | None
    report: ValidationReport | None
    iterations: int | None
    timings: dict[str, float]
    search: SearchResult | None = None
    system: ConstraintSystem | None = None
    bmi: BmiProblem | None = None
    lie_order: int = 1
    message: str = ""
    candidate: Certificate | None = None

    @property
    def verified(self) -> bool:
        return self.status == VERIFIED

    @property
    def traces(self) -> list[IterateTrace]:
        return [] if self.search is None else self.search.traces

    @property
    def trace(self) -> IterateTrace | None:
        """The DC run that produced the certificate, else the last one."""
        if not self.traces:
            return None
        if self.search.found and self.search.source == "dc":
            for tr in self.traces:
                if any(p.z is self.search.z or np.array_equal(p.z, self.search.z) for p in tr.points):
                    return tr
        return self.traces[-1]

    def summary(self) -> dict:
        return {
            "name": self.spec.name,
            "status": self.status,
            "verified": self.verified,
            "lie_order": self.lie_order,
            "encoding": self.spec.encoding,
            "iterations": self.iterations,
            "certificate": None if self.certificate is None else str(self.certificate.poly),
            "timings": dict(self.timings),
            "nodes": None if self.search is None else self.search.nodes,
            "dc_runs": None if self.search is None else self.search.dc_runs,
            "message": self.message,
        }


def synthesize(
    spec: ProblemSpec,
    backend: str = "clarabel",
    seed: int = 0,
    timeout: float | None = None,
    lie_order: int | None = None,
    n_samples: int = 100_000,
) -> SynthResult:
    """Search for a validated certificate for ``spec``.

    ``timeout`` bounds the whole search in seconds.  The returned timings
    separate constraint generation (``encode``), the solver work
    (``solve``, validation excluded) and posterior checks (``validate``).
    """
    N = lie_order or spec.lie_order
    timings = {"encode": 0.0, "solve": 0.0, "validate": 0.0, "total": 0.0}
    t0 = time.perf_counter()
    deadline = None if timeout is None else t0 + timeout

    cs = build_constraints(spec, lie_order=N)
    bmi = assemble_bmi(cs)
    timings["encode"] = time.perf_counter() - t0

    reports: dict[bytes, tuple[Certificate, ValidationReport]] = {}
    vtime = [0.0]

    def validator(a: np.ndarray, thorough: bool) -> bool:
        tv = time.perf_counter()
        cert = certificate_for(spec, bmi.a_names, a, N)
        n = n_samples if thorough else spec.bnb.check_samples
        rep = validate(spec, cert, n_samples=n, seed=seed, lie_order=N, fail_fast=not thorough)
        if thorough:
            reports[np.asarray(a, float).tobytes()] = (cert, rep)
        vtime[0] += time.perf_counter() - tv
        return rep.valid

    rng = np.random.default_rng(seed)
    ts = time.perf_counter()
    res = search(bmi, spec.bnb, spec.dcp, validator, rng, backend, None, deadline)
    elapsed = time.perf_counter() - ts
    timings["validate"] = vtime[0]
    timings["solve"] = max(elapsed - vtime[0], 0.0)
    timings["total"] = time.perf_counter() - t0

    iterations = _iterations(res)
    if res.found:
        cert, rep = reports[np.asarray(res.a, float).tobytes()]
        cert.lam = res.lam
        cert.iterations = iterations
        return SynthResult(spec, VERIFIED, cert, rep, iterations, timings, res, cs, bmi, N, res.reason)

    cand = None
    if res.best_a is not None:
        cand = certificate_for(spec, bmi.a_names, res.best_a, N, res.best_lam, iterations)
    status = TIMEOUT if res.reason == "timeout" else NOT_FOUND
    return SynthResult(spec, status, None, None, iterations, timings, res, cs, bmi, N, res.reason, cand)


def _iterations(res: SearchResult) -> int | None:
    """DC iterations spent up to (and including) the accepted iterate."""
    if not res.traces:
        return None if not res.found else 0
    if res.found and res.source == "dc":
        *before, last = res.traces
        return sum(t.iterations for t in before) + int(res.iterations)
    return sum(t.iterations for t in res.traces)

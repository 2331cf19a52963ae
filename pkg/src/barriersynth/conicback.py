"""Conic backends for the LMI subproblems.

Backends are looked up by name in :data:`BACKENDS`.  The bundled ones hand
the problem to cvxpy and one of its SDP-capable solvers.  Whatever the
solver reports, the returned point is re-checked by computing the largest
eigenvalue of every block; a point that fails the check is downgraded to
``inaccurate``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bmiform import LmiProblem

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
INACCURATE = "inaccurate"
FAILED = "failed"


@dataclass
class ConicSolution:
    status: str
    z: np.ndarray | None
    objective: float = float("nan")
    max_eig: float = float("nan")
    solve_time: float = 0.0
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _cvxpy_solve(p: LmiProblem, solver: str, timeout: float | None, verbose: bool = False):
    import cvxpy as cp

    z = cp.Variable(p.nvar)
    cons = []
    for blk in p.blocks:
        d = blk.dim
        if len(blk.idx):
            lin = blk.coef.reshape(len(blk.idx), d * d).T @ z[blk.idx]
            expr = blk.const + cp.reshape(lin, (d, d), order="C")
        else:
            expr = cp.Constant(blk.const)
        cons.append(0.5 * (expr + expr.T) << 0)
    for idx, bound in p.norm_bounds:
        if len(idx):
            cons.append(cp.sum_squares(z[idx]) <= bound)
    if p.lower is not None:
        fin = np.isfinite(p.lower)
        if fin.any():
            cons.append(z[np.flatnonzero(fin)] >= p.lower[fin])
    if p.upper is not None:
        fin = np.isfinite(p.upper)
        if fin.any():
            cons.append(z[np.flatnonzero(fin)] <= p.upper[fin])
    if p.fixed:
        ks = np.array(sorted(p.fixed))
        cons.append(z[ks] == np.array([p.fixed[k] for k in ks]))
    obj = p.objective @ z
    if p.prox_weight > 0 and p.prox_center is not None:
        obj = obj - p.prox_weight * cp.sum_squares(z - p.prox_center)
    prob = cp.Problem(cp.Maximize(obj), cons)
    kwargs = {}
    if timeout is not None and solver == "CLARABEL":
        kwargs["time_limit"] = float(timeout)
    prob.solve(solver=solver, verbose=verbose, **kwargs)
    return prob.status, (None if z.value is None else np.asarray(z.value, dtype=float)), prob.value


def _status_map(s: str) -> str:
    s = (s or "").lower()
    if s == "optimal":
        return OPTIMAL
    if s == "optimal_inaccurate":
        return INACCURATE
    if "infeasible" in s:
        return INFEASIBLE
    return FAILED


class CvxpyBackend:
    def __init__(self, solver: str):
        self.solver = solver

    def __call__(self, p: LmiProblem, timeout: float | None) -> tuple[str, np.ndarray | None, float]:
        import cvxpy as cp

        try:
            status, z, val = _cvxpy_solve(p, self.solver, timeout)
        except cp.error.SolverError as exc:
            return FAILED, None, float("nan")
        return _status_map(status), z, (float("nan") if val is None else float(val))


BACKENDS: dict[str, Callable] = {
    "clarabel": CvxpyBackend("CLARABEL"),
    "scs": CvxpyBackend("SCS"),
    "cvxopt": CvxpyBackend("CVXOPT"),
}


def register_backend(name: str, fn: Callable) -> None:
    """Add a backend: ``fn(problem, timeout) -> (status, z, objective)``."""
    BACKENDS[name] = fn


def solve_lmi(
    p: LmiProblem,
    tol: float = 1e-7,
    backend: str = "clarabel",
    timeout: float | None = None,
) -> ConicSolution:
    """Solve ``p`` and verify the returned point.

    The point must satisfy every block with largest eigenvalue at most
    ``tol`` (relative to the block's constant scale) and the simple bounds
    up to ``tol``.
    """
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; choose from {sorted(BACKENDS)}")
    t0 = time.perf_counter()
    try:
        status, z, val = BACKENDS[backend](p, timeout)
    except Exception as exc:  # solver crashed; report instead of raising
        log.debug("backend %s raised %r", backend, exc)
        return ConicSolution(FAILED, None, solve_time=time.perf_counter() - t0, message=repr(exc))
    dt = time.perf_counter() - t0
    if z is None or not np.all(np.isfinite(z)):
        st = status if status in (INFEASIBLE,) else FAILED
        return ConicSolution(st, None, val, solve_time=dt, message="no point returned")
    worst = -np.inf
    ok = True
    for blk in p.blocks:
        e = float(np.linalg.eigvalsh(0.5 * (blk.value(z) + blk.value(z).T))[-1])
        worst = max(worst, e)
        scale = max(1.0, float(np.max(np.abs(blk.const), initial=0.0)))
        if e > tol * scale:
            ok = False
    if p.bound_violation(z) > max(tol, 1e-6):
        ok = False
    if status == OPTIMAL and not ok:
        status = INACCURATE
    return ConicSolution(status, z, val, worst, dt, "" if ok else "verification failed")

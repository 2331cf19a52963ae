"""Convex-concave iteration for the bilinear barrier problem.

Starting from a strictly feasible point, each step solves the convex
restriction of the BMI around the current iterate.  The current iterate is
always feasible for that restriction, so the margin ``lam`` never decreases
and every iterate stays feasible for the original BMI.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bmiform import BmiProblem, affine_lmi, eval_bmi, linearize_at
from .conicback import INACCURATE, INFEASIBLE, OPTIMAL, solve_lmi
from .config import DcpConfig

__all__ = [
    "DcpConfig", "IterateTrace", "TracePoint", "InitialSolutionError", "initial_solution", "bmi_dc", "run_dc",
]

log = logging.getLogger(__name__)

CONVERGED = "converged"
LAMBDA_NONNEG = "lambda_nonneg"
MAX_ITER = "max_iter"
BACKEND_FAILURE = "backend_failure"
INITIAL_VALID = "initial_valid"


@dataclass
class TracePoint:
    k: int
    lam: float
    dz: float
    residual: float
    wall: float
    z: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "lambda": self.lam,
            "dz_norm": None if math.isnan(self.dz) else self.dz,
            "residual": self.residual,
            "wall_time": self.wall,
        }


@dataclass
class IterateTrace:
    points: list[TracePoint]
    reason: str
    init_constant: float | tuple[float, ...] | None = None

    @property
    def z(self) -> np.ndarray:
        return self.points[-1].z

    @property
    def lam(self) -> float:
        return self.points[-1].lam

    @property
    def iterations(self) -> int:
        return len(self.points) - 1

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(p.to_dict()) for p in self.points) + "\n"

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())


class InitialSolutionError(RuntimeError):
    """No multiplier constant produced a starting point."""

    def __init__(self, attempted: list[tuple[float, ...]], statuses: list[str]):
        self.attempted = attempted
        self.statuses = statuses
        super().__init__(f"no starting point after {len(attempted)} constant choices: {statuses}")


@dataclass
class InitialPoint:
    z: np.ndarray
    lam_opt: float
    constant: float | tuple[float, ...]
    status: str


def _coupled_layout(bmi: BmiProblem) -> tuple[list[int], list[int]]:
    """z indices of coupled multiplier coefficients and of their constant terms."""
    cs = bmi.system
    if cs is None:
        coupled = sorted({int(bmi.s_zidx(f)[j]) for f in bmi.forms for (_, j) in f.Fij})
        return coupled, []
    pos = {n: 1 + bmi.m + k for k, n in enumerate(bmi.s_names)}
    coupled, const = [], []
    for mu in cs.multipliers:
        if mu.coupled:
            coupled.extend(pos[p] for p in mu.params)
            const.append(pos[mu.const_param])
    return coupled, const


def _constants(cfg: DcpConfig, rng: np.random.Generator, k: int) -> list[np.ndarray]:
    """Multiplier constants to try, one vector of length ``k`` per attempt.

    The configured constants are shared by all multipliers; the random
    draws, in ``(0, init_random_max]``, are independent per multiplier.
    """
    out = [np.full(k, float(c)) for c in cfg.init_constants]
    for _ in range(cfg.init_random):
        out.append(cfg.init_random_max - rng.uniform(0, cfg.init_random_max, size=k))
    return out


def initial_solution(
    bmi: BmiProblem,
    cfg: DcpConfig = DcpConfig(),
    rng: np.random.Generator | None = None,
    box: tuple[np.ndarray, np.ndarray] | None = None,
    backend: str = "clarabel",
    timeout: float | None = None,
) -> InitialPoint:
    """Strictly feasible starting point with coupled multipliers held constant.

    Each coupled multiplier is fixed to a non-negative constant (its other
    coefficients to zero), which turns the BMI into an LMI.  The constants
    are tried in the configured order; the first choice whose margin
    reaches ``-lambda_tol`` wins, otherwise the best margin is kept.  The
    returned ``lam`` is lowered if needed so the point is strictly feasible.
    Raises InitialSolutionError, listing the constants tried, when no
    choice yields a point.
    """
    rng = rng or np.random.default_rng(0)
    coupled, const = _coupled_layout(bmi)
    best: InitialPoint | None = None
    attempted, statuses = [], []
    for cvec in _constants(cfg, rng, len(const)):
        fixed = {k: 0.0 for k in coupled}
        for k, c in zip(const, cvec):
            fixed[k] = float(c)
        sol = solve_lmi(affine_lmi(bmi, fixed, box), backend=backend, timeout=timeout)
        attempted.append(tuple(float(c) for c in cvec))
        statuses.append(sol.status)
        if sol.status == INFEASIBLE:
            break  # lam is free, so only the parameter bounds can clash
        if sol.status not in (OPTIMAL, INACCURATE) or sol.z is None:
            continue
        z = sol.z.copy()
        for k, v in fixed.items():
            z[k] = v
        lam_opt = float(z[0])
        # make the point strictly feasible for the BMI
        z[0] = lam_opt - max(eval_bmi(bmi, z), 0.0)
        shifts = 0
        while eval_bmi(bmi, z) >= -cfg.strict_tol and shifts < 50:
            z[0] -= cfg.strict_shift * (2**shifts)
            shifts += 1
        label = float(cvec[0]) if len(cvec) and np.all(cvec == cvec[0]) else tuple(float(c) for c in cvec)
        cand = InitialPoint(z, lam_opt, label, sol.status)
        if best is None or cand.z[0] > best.z[0]:
            best = cand
        if cand.z[0] >= -cfg.lambda_tol:
            break
    if best is None:
        raise InitialSolutionError(attempted, statuses)
    return best


def bmi_dc(
    bmi: BmiProblem,
    z0: np.ndarray,
    cfg: DcpConfig = DcpConfig(),
    box: tuple[np.ndarray, np.ndarray] | None = None,
    backend: str = "clarabel",
    timeout: float | None = None,
    deadline: float | None = None,
    accept_initial: Callable[[np.ndarray], bool] | None = None,
) -> IterateTrace:
    """Iterate convex restrictions from ``z0`` until a stopping rule fires.

    Stops when ``lam >= -lambda_tol``, when the step is shorter than
    ``conv_tol``, after ``max_iter`` steps, or when the backend fails.  A
    candidate step that is infeasible for the BMI or lowers ``lam`` is
    rejected and ends the run as converged.  ``accept_initial`` may stop the
    run before the first step when the starting point is already good enough.
    """
    t0 = time.perf_counter()
    z = np.asarray(z0, dtype=float).copy()
    res = eval_bmi(bmi, z)
    trace = [TracePoint(0, float(z[0]), float("nan"), res, 0.0, z.copy())]
    if z[0] >= -cfg.lambda_tol:
        return IterateTrace(trace, LAMBDA_NONNEG)
    if accept_initial is not None and accept_initial(z):
        return IterateTrace(trace, INITIAL_VALID)
    reason = MAX_ITER
    for k in range(1, cfg.max_iter + 1):
        if deadline is not None and time.perf_counter() > deadline:
            reason = BACKEND_FAILURE
            break
        zn, res, why = _step(bmi, z, cfg, box, backend, timeout, k)
        if zn is None:
            reason = why
            break
        dz = float(np.linalg.norm(zn - z))
        z = zn.copy()
        trace.append(TracePoint(k, float(z[0]), dz, res, time.perf_counter() - t0, z.copy()))
        log.debug("step %d: lam %.6g |dz| %.3g residual %.3g", k, z[0], dz, res)
        if z[0] >= -cfg.lambda_tol:
            reason = LAMBDA_NONNEG
            break
        if dz < cfg.conv_tol:
            reason = CONVERGED
            break
    return IterateTrace(trace, reason)


def _step(bmi, z, cfg: DcpConfig, box, backend, timeout, k):
    """One restriction solve; a rejected step is retried with a stiffer proximal term."""
    delta = cfg.delta
    reason = BACKEND_FAILURE
    for attempt in range(cfg.step_retries + 1):
        lmi = linearize_at(bmi, z, delta, box, balanced=cfg.balanced_split)
        sol = solve_lmi(lmi, backend=backend, timeout=timeout)
        if sol.z is None or sol.status not in (OPTIMAL, INACCURATE):
            log.debug("step %d: backend status %s", k, sol.status)
            reason = BACKEND_FAILURE
        else:
            res = eval_bmi(bmi, sol.z)
            if res <= cfg.feas_tol and sol.z[0] >= z[0] - 1e-10:
                return sol.z, res, None
            log.debug("step %d rejected: residual %.3g, lam %.6g -> %.6g", k, res, z[0], sol.z[0])
            reason = CONVERGED if sol.status == OPTIMAL else BACKEND_FAILURE
        delta *= 10.0
    return None, None, reason


def run_dc(
    bmi: BmiProblem,
    cfg: DcpConfig = DcpConfig(),
    rng: np.random.Generator | None = None,
    box: tuple[np.ndarray, np.ndarray] | None = None,
    backend: str = "clarabel",
    timeout: float | None = None,
    deadline: float | None = None,
    accept_initial: Callable[[np.ndarray], bool] | None = None,
) -> IterateTrace | None:
    """Initial point followed by the iteration; None if no start was found."""
    try:
        init = initial_solution(bmi, cfg, rng, box, backend, timeout)
    except InitialSolutionError as exc:
        log.debug("%s", exc)
        return None
    trace = bmi_dc(bmi, init.z, cfg, box, backend, timeout, deadline, accept_initial)
    trace.init_constant = init.constant
    return trace

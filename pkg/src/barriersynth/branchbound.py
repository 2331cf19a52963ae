"""Branch-and-bound over the template parameters.

The ``a``-space box ``[-sqrt(L_a), sqrt(L_a)]^m`` is explored depth first.
At every node, unless a previously visited iterate already falls in it, the
DC iteration is run with ``a`` restricted to the node; a few random
parameter vectors are also checked directly.  Every candidate is accepted
only after validation.  Nodes are bisected along their widest edge and
dropped once that edge is below ``eta``.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bmiform import BmiProblem
from .config import BnbConfig, DcpConfig
from .dcploop import INITIAL_VALID, IterateTrace, run_dc

__all__ = ["Box", "BnbConfig", "SearchResult", "bisect", "search", "default_max_depth"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Box:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("bounds of different length")
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise ValueError("box with lo > hi")

    @classmethod
    def cube(cls, m: int, r: float) -> "Box":
        return cls((-r,) * m, (r,) * m)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    @property
    def max_edge(self) -> float:
        return float(self.widths.max()) if len(self.lo) else 0.0

    @property
    def min_norm2(self) -> float:
        """Squared distance from the origin to the box."""
        lo, hi = self.arrays()
        return float(np.sum(np.maximum(np.maximum(lo, -hi), 0.0) ** 2))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.lo, float), np.asarray(self.hi, float)

    def contains(self, a: np.ndarray, pad: float = 0.0) -> bool:
        lo, hi = self.arrays()
        return bool(np.all(a >= lo - pad) and np.all(a <= hi + pad))

    def sample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.arrays()
        return rng.uniform(lo, hi, size=(k, len(lo)))


def bisect(box: Box) -> tuple[Box, Box]:
    """Halve ``box`` across its widest edge (lowest index on ties)."""
    w = box.widths
    i = int(np.argmax(w))
    mid = 0.5 * (box.lo[i] + box.hi[i])
    left = Box(box.lo, box.hi[:i] + (mid,) + box.hi[i + 1:])
    right = Box(box.lo[:i] + (mid,) + box.lo[i + 1:], box.hi)
    return left, right


def default_max_depth(m: int, width: float, eta: float) -> int:
    """Depth at which every edge of a width-``width`` cube is below ``eta``."""
    if width <= eta:
        return 0
    return int(math.ceil(m * math.log2(width / eta)))


@dataclass
class SearchResult:
    found: bool
    a: np.ndarray | None
    z: np.ndarray | None
    lam: float | None
    iterations: int | None
    nodes: int
    dc_runs: int
    traces: list[IterateTrace] = field(default_factory=list)
    reason: str = ""
    source: str = ""
    best_a: np.ndarray | None = None
    best_lam: float | None = None


Validator = Callable[[np.ndarray, bool], bool]


def search(
    bmi: BmiProblem,
    bnb: BnbConfig,
    dcp: DcpConfig,
    validator: Validator,
    rng: np.random.Generator | None = None,
    backend: str = "clarabel",
    timeout: float | None = None,
    deadline: float | None = None,
) -> SearchResult:
    """Depth-first branch and bound.

    ``validator(a, thorough)`` decides whether the certificate with
    parameters ``a`` is accepted; ``thorough=False`` is used for the cheap
    screening of random samples, which are then confirmed with
    ``thorough=True``.
    """
    rng = rng or np.random.default_rng(0)
    m = bmi.m
    r = math.sqrt(bmi.l_a)
    root = Box.cube(m, r)
    max_depth = bnb.max_depth if bnb.max_depth is not None else default_max_depth(m, 2 * r, bnb.eta)
    visited: list[np.ndarray] = []
    traces: list[IterateTrace] = []
    best_a, best_lam = None, -np.inf
    nodes = dc_runs = 0
    stack: list[tuple[Box, int]] = [(root, 0)]

    def done(found, a=None, z=None, lam=None, it=None, reason="", source=""):
        return SearchResult(found, a, z, lam, it, nodes, dc_runs, traces, reason, source, best_a,
                            None if best_a is None else best_lam)

    def check(a):
        return validator(a, False) and validator(a, True)

    def sample_and_check(box, depth):
        for a in box.sample(bnb.samples, rng):
            if a @ a > bmi.l_a:
                continue
            if check(a):
                _event("accept", source="sample", depth=depth)
                return a
        return None

    while stack:
        if deadline is not None and time.perf_counter() > deadline:
            return done(False, reason="timeout")
        box, depth = stack.pop()
        if box.max_edge < bnb.eta or box.min_norm2 > bmi.l_a:
            continue
        nodes += 1
        _event("node", depth=depth, max_edge=box.max_edge, nodes=nodes)

        if bnb.sample_first and (a := sample_and_check(box, depth)) is not None:
            return done(True, a=a, reason="sample", source="sample")

        lo, hi = box.arrays()
        if not any(box.contains(v, bnb.r_dedup) for v in visited):
            dc_runs += 1
            box_arg = None if depth == 0 else (lo, hi)
            tr = run_dc(bmi, dcp, rng, box_arg, backend, timeout, deadline,
                        accept_initial=lambda z: check(z[bmi.a_slice]))
            if tr is not None:
                traces.append(tr)
                for p in tr.points:
                    visited.append(p.z[bmi.a_slice].copy())
                _event("dc", depth=depth, reason=tr.reason, lam=tr.lam, iterations=tr.iterations)
                if tr.lam > best_lam:
                    best_lam, best_a = tr.lam, tr.z[bmi.a_slice].copy()
                for p in reversed(tr.points):
                    if p.lam < -dcp.lambda_tol and p is not tr.points[-1]:
                        continue
                    a = p.z[bmi.a_slice]
                    if (p.k == 0 and tr.reason == INITIAL_VALID) or check(a):
                        _event("accept", source="dc", depth=depth, k=p.k)
                        return done(True, a=a.copy(), z=p.z.copy(), lam=p.lam, it=p.k,
                                    reason=tr.reason, source="dc")

        if not bnb.sample_first and (a := sample_and_check(box, depth)) is not None:
            return done(True, a=a, reason="sample", source="sample")
        if depth >= max_depth:
            continue
        left, right = bisect(box)
        stack.append((right, depth + 1))
        stack.append((left, depth + 1))
    return done(False, reason="exhausted")


def _event(kind: str, **fields) -> None:
    if log.isEnabledFor(logging.INFO):
        log.info(json.dumps({"event": kind, **{k: _plain(v) for k, v in fields.items()}}))


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v

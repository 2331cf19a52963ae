"""Solver configuration records shared by the problem loader and the solvers."""

from __future__ import annotations

from dataclasses import dataclass, asdict


@dataclass(frozen=True)
class DcpConfig:
    """Knobs of the convex-concave iteration.

    ``delta`` is the (negative) proximal weight, ``lambda_tol`` the slack
    under which a nonpositive margin still counts as reaching zero, and
    ``init_constants`` the multiplier constants tried for the starting point
    before falling back to random draws.
    """

    delta: float = -1e-3
    conv_tol: float = 1e-6
    max_iter: int = 100
    lambda_tol: float = 1e-5
    strict_tol: float = 1e-9
    strict_shift: float = 1e-6
    feas_tol: float = 1e-6
    init_constants: tuple[float, ...] = (0.0, 1.0)
    init_random: int = 8
    init_random_max: float = 10.0
    balanced_split: bool = True
    step_retries: int = 2

    def __post_init__(self):
        if self.delta >= 0:
            raise ValueError("delta must be negative")
        if self.conv_tol < 0:
            raise ValueError("conv_tol must be non-negative")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")
        if self.step_retries < 0:
            raise ValueError("step_retries must be non-negative")
        if any(c < 0 for c in self.init_constants):
            raise ValueError("multiplier constants must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init_constants"] = list(self.init_constants)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DcpConfig":
        d = dict(d)
        if "init_constants" in d:
            d["init_constants"] = tuple(float(c) for c in d["init_constants"])
        return cls(**d)


@dataclass(frozen=True)
class BnbConfig:
    """Branch-and-bound knobs; ``max_depth=None`` derives it from ``eta``.

    ``sample_first`` runs the random sample-and-check before the DC solve
    at each node instead of after it.
    """

    eta: float = 0.05
    samples: int = 16
    max_depth: int | None = None
    dedup_radius: float | None = None
    check_samples: int = 2000
    sample_first: bool = False

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.samples < 0:
            raise ValueError("samples must be non-negative")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")

    @property
    def r_dedup(self) -> float:
        return self.eta / 4 if self.dedup_radius is None else self.dedup_radius

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BnbConfig":
        return cls(**d)

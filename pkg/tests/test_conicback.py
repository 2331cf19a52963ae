import numpy as np
import pytest

from barriersynth.bmiform import LmiBlock, LmiProblem, affine_lmi, assemble_bmi, eval_bmi
from barriersynth.conicback import (
    BACKENDS,
    FAILED,
    INACCURATE,
    INFEASIBLE,
    OPTIMAL,
    register_backend,
    solve_lmi,
)
from barriersynth.dcploop import _coupled_layout
from barriersynth.problemdef import load_problem
from barriersynth.sosencode import build_constraints

from conftest import corpus


def lam_problem(const):
    """maximize lam subject to const + lam*I <= 0."""
    d = const.shape[0]
    blk = LmiBlock(const=np.asarray(const, float), idx=np.array([0]), coef=np.eye(d)[None])
    return LmiProblem(1, [blk], np.array([1.0]))


def test_identity_shift():
    sol = solve_lmi(lam_problem(-np.eye(3)))
    assert sol.status == OPTIMAL
    assert sol.z[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.max_eig <= 1e-7


def test_tightest_diagonal_entry():
    sol = solve_lmi(lam_problem(np.diag([-1.0, -3.0])))
    assert sol.z[0] == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("backend", ["clarabel", "scs"])
def test_backends_agree(backend):
    sol = solve_lmi(lam_problem(np.diag([-2.0, -5.0, -2.5])), backend=backend)
    assert sol.status in (OPTIMAL, INACCURATE)
    assert sol.z[0] == pytest.approx(2.0, abs=1e-3)


def test_infeasible_bounds():
    p = lam_problem(-np.eye(2))
    p.lower = np.array([2.0])
    p.upper = np.array([1.0])
    assert solve_lmi(p).status == INFEASIBLE


def test_overview_start_is_strictly_feasible():
    bmi = assemble_bmi(build_constraints(load_problem(corpus("overview"))))
    coupled, const = _coupled_layout(bmi)
    fixed = {k: 0.0 for k in coupled}
    sol = solve_lmi(affine_lmi(bmi, fixed))
    assert sol.ok
    z = sol.z.copy()
    z[0] -= 1e-6
    assert eval_bmi(bmi, z) < 0


def test_bad_point_is_downgraded():
    def liar(p, timeout):
        return OPTIMAL, np.array([5.0]), 5.0

    register_backend("liar", liar)
    try:
        sol = solve_lmi(lam_problem(-np.eye(2)), backend="liar")
        assert sol.status == INACCURATE
        assert sol.max_eig == pytest.approx(4.0)
        assert sol.message == "verification failed"
    finally:
        BACKENDS.pop("liar")


def test_crashing_backend_reports_failure():
    def boom(p, timeout):
        raise RuntimeError("solver exploded")

    register_backend("boom", boom)
    try:
        sol = solve_lmi(lam_problem(-np.eye(2)), backend="boom")
        assert sol.status == FAILED and sol.z is None
        assert "exploded" in sol.message
    finally:
        BACKENDS.pop("boom")


def test_unknown_backend():
    with pytest.raises(ValueError, match="unknown backend"):
        solve_lmi(lam_problem(-np.eye(1)), backend="nope")


def test_norm_bound_respected():
    # lam*I - I <= 0 but lam^2 <= 0.25
    p = lam_problem(-np.eye(2))
    p.norm_bounds = [(np.array([0]), 0.25)]
    sol = solve_lmi(p)
    assert sol.z[0] == pytest.approx(0.5, abs=1e-5)

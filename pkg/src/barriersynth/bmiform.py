"""Bilinear matrix inequalities, their DC split and convex restrictions.

The decision vector is ``z = (lam, a, s)``.  The BMI problem is

    maximize lam  s.t.  F_k(a, s) + lam*I <= 0 for every form k,
                        |a|^2 <= L_a,  |s|^2 <= L_s.

For a single form, collect its bilinearly coupled parameters in ``w`` and
write the bilinear part as ``(w (x) I)^T M (w (x) I)`` with
``M = [[0, Gamma], [Gamma^T, 0]]`` and ``Gamma = [F_ij] / 2``.  An
eigendecomposition gives ``M = M1 - M2`` with both halves PSD, so the form is
``B+(z) - B-(z)`` where both parts are matrix-convex.  Replacing ``B-`` by its
tangent at ``z_k`` yields a convex inner restriction, written as an LMI with a
Schur complement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sosencode import BilinearMatrixForm, ConstraintSystem


@dataclass
class BmiProblem:
    forms: list[BilinearMatrixForm]
    labels: list[str]
    m: int
    n: int
    l_a: float
    l_s: float
    a_names: tuple[str, ...] = ()
    s_names: tuple[str, ...] = ()
    system: ConstraintSystem | None = None
    _splits: dict = field(default_factory=dict, repr=False)

    @property
    def nvar(self) -> int:
        return 1 + self.m + self.n

    @property
    def a_slice(self) -> slice:
        return slice(1, 1 + self.m)

    @property
    def s_slice(self) -> slice:
        return slice(1 + self.m, 1 + self.m + self.n)

    def split_z(self, z: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        return float(z[0]), z[self.a_slice], z[self.s_slice]

    def join_z(self, lam: float, a, s) -> np.ndarray:
        return np.concatenate([[lam], np.asarray(a, float), np.asarray(s, float)])

    def a_zidx(self, form: BilinearMatrixForm) -> np.ndarray:
        return 1 + form.a_idx

    def s_zidx(self, form: BilinearMatrixForm) -> np.ndarray:
        return 1 + self.m + form.s_idx

    def split(self, k: int, eig_tol: float = 1e-10) -> "DcSplit":
        key = (k, eig_tol)
        if key not in self._splits:
            self._splits[key] = dc_split(self.forms[k], eig_tol)
        return self._splits[key]


def assemble_bmi(cs: ConstraintSystem) -> BmiProblem:
    """Collect the flattened forms of a constraint system into one problem."""
    return BmiProblem(
        forms=[f.form for f in cs.forms],
        labels=[f.label for f in cs.forms],
        m=cs.m,
        n=cs.n,
        l_a=cs.spec.l_a,
        l_s=cs.spec.l_s,
        a_names=cs.a_names,
        s_names=cs.s_names,
        system=cs,
    )


def form_values(bmi: BmiProblem, z: np.ndarray) -> list[np.ndarray]:
    """``F_k(a, s) + lam*I`` for every form."""
    lam, a, s = bmi.split_z(z)
    return [f.evaluate(a, s) + lam * np.eye(f.p) for f in bmi.forms]


def eval_bmi(bmi: BmiProblem, z: np.ndarray) -> float:
    """Largest eigenvalue over all forms at ``z``; feasible iff <= 0."""
    return max(float(np.linalg.eigvalsh(_sym(V))[-1]) for V in form_values(bmi, z))


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


# ---------------------------------------------------------------------------
# Kronecker form and DC split


def kronecker_m_matrix(
    form: BilinearMatrixForm, coupled_only: bool = False
) -> tuple[np.ndarray, list[int], list[int]]:
    """``M`` such that the bilinear part equals ``(w (x) I)^T M (w (x) I)``.

    ``w`` stacks the local ``a`` entries then the local ``s`` entries.  With
    ``coupled_only`` the rows and columns of parameters that never occur in
    a bilinear term (identically zero) are left out.  Returns ``M`` and the
    local ``a``/``s`` indices that make up ``w``.
    """
    if coupled_only:
        ai, sj = form.coupled()
    else:
        ai, sj = list(range(form.m)), list(range(form.n))
    p = form.p
    pa = {i: k for k, i in enumerate(ai)}
    ps = {j: k for k, j in enumerate(sj)}
    ma, ns = len(ai), len(sj)
    M = np.zeros(((ma + ns) * p, (ma + ns) * p))
    for (i, j), Fij in form.Fij.items():
        r = pa[i] * p
        c = (ma + ps[j]) * p
        half = 0.5 * Fij
        M[r:r + p, c:c + p] += half
        M[c:c + p, r:r + p] += half.T
    return M, ai, sj


@dataclass
class DcSplit:
    """``M = M1 - M2`` with ``M1, M2 >= 0`` and ``N^T N = M1``.

    ``N`` is the symmetric square root; ``N_thin`` keeps only the rows of
    positive eigen-directions and satisfies the same identity.
    """

    M: np.ndarray
    M1: np.ndarray
    M2: np.ndarray
    N: np.ndarray
    N_thin: np.ndarray
    eigvals: np.ndarray
    a_local: list[int]
    s_local: list[int]
    p: int

    @property
    def q(self) -> int:
        return len(self.a_local) + len(self.s_local)

    def _blocks(self, A: np.ndarray) -> np.ndarray:
        q, p = self.q, self.p
        return A.reshape(q, p, q, p)

    def quad(self, A: np.ndarray, w: np.ndarray) -> np.ndarray:
        """``(w (x) I)^T A (w (x) I)``."""
        return np.einsum("k,kajb,j->ab", w, self._blocks(A), w)

    def b_plus_quad(self, w):
        return self.quad(self.M1, w)

    def b_minus(self, w):
        return self.quad(self.M2, w)

    def b_minus_grad(self, w: np.ndarray) -> np.ndarray:
        """Partial derivatives ``dB-/dw_k`` as a (q, p, p) stack."""
        R = np.einsum("kajb,j->kab", self._blocks(self.M2), w)
        return R + R.transpose(0, 2, 1)


def dc_split(form: BilinearMatrixForm, eig_tol: float = 1e-10, scale: np.ndarray | None = None) -> DcSplit:
    """Eigen-split of the coupled Kronecker matrix of ``form``.

    Eigenvalues with magnitude below ``eig_tol`` are treated as zero.  With
    ``scale`` (one positive weight per entry of ``w``) the split is taken
    of ``D M D`` with ``D = diag(scale) (x) I`` and mapped back, which is
    still an exact decomposition ``M = M1 - M2`` into PSD parts but
    distributes the convexification gap according to the weights.
    """
    M, ai, sj = kronecker_m_matrix(form, coupled_only=True)
    p = form.p
    if M.size == 0:
        z = np.zeros((0, 0))
        return DcSplit(M, z, z, z, z, np.zeros(0), ai, sj, p)
    if scale is None:
        d = np.ones(M.shape[0])
    else:
        d = np.repeat(np.asarray(scale, dtype=float), p)
    vals, U = np.linalg.eigh(d[:, None] * M * d[None, :])
    vals = np.where(np.abs(vals) < eig_tol, 0.0, vals)
    pos = np.clip(vals, 0, None)
    neg = np.clip(-vals, 0, None)
    Ui = U / d[:, None]
    M1 = (Ui * pos) @ Ui.T
    M2 = (Ui * neg) @ Ui.T
    root = np.sqrt(pos)
    if scale is None:
        N = (U * root) @ U.T
    else:
        v1, U1 = np.linalg.eigh(M1)
        N = (U1 * np.sqrt(np.clip(v1, 0, None))) @ U1.T
    keep = pos > 0
    N_thin = root[keep, None] * Ui[:, keep].T
    return DcSplit(M, M1, M2, N, N_thin, vals, ai, sj, p)


def balanced_scale(bmi: "BmiProblem", form: BilinearMatrixForm, split: DcSplit, z: np.ndarray) -> np.ndarray:
    """Weights putting the ``a`` and ``s`` blocks of ``w`` on comparable scales.

    ``a`` entries get the magnitude of the current ``a`` (floored), ``s``
    entries the magnitude of the current coupled ``s`` (at least 1).
    """
    az = bmi.a_zidx(form)[split.a_local]
    sz = bmi.s_zidx(form)[split.s_local]
    floor = 1e-3 * np.sqrt(bmi.l_a)
    sa = max(float(np.max(np.abs(z[bmi.a_slice]), initial=0.0)), floor)
    ss = max(float(np.max(np.abs(z[sz]), initial=0.0)), 1.0)
    return np.concatenate([np.full(len(az), np.sqrt(sa / ss)), np.full(len(sz), np.sqrt(ss / sa))])


# ---------------------------------------------------------------------------
# LMI problems


@dataclass
class LmiBlock:
    """``const + sum_k z[idx_k] * coef_k <= 0``."""

    const: np.ndarray
    idx: np.ndarray
    coef: np.ndarray
    label: str = ""

    @property
    def dim(self) -> int:
        return self.const.shape[0]

    def value(self, z: np.ndarray) -> np.ndarray:
        if len(self.idx) == 0:
            return self.const
        return self.const + np.tensordot(np.asarray(z)[self.idx], self.coef, axes=1)


@dataclass
class LmiProblem:
    """``maximize c.z - w*|z - center|^2`` over LMI blocks and simple bounds."""

    nvar: int
    blocks: list[LmiBlock]
    objective: np.ndarray
    prox_weight: float = 0.0
    prox_center: np.ndarray | None = None
    norm_bounds: list[tuple[np.ndarray, float]] = field(default_factory=list)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    fixed: dict[int, float] = field(default_factory=dict)

    def max_eig(self, z: np.ndarray) -> float:
        return max((float(np.linalg.eigvalsh(_sym(b.value(z)))[-1]) for b in self.blocks), default=-np.inf)

    def bound_violation(self, z: np.ndarray) -> float:
        z = np.asarray(z)
        v = 0.0
        for idx, bound in self.norm_bounds:
            v = max(v, float(z[idx] @ z[idx]) - bound)
        if self.lower is not None:
            v = max(v, float(np.max(self.lower - z, initial=0.0)))
        if self.upper is not None:
            v = max(v, float(np.max(z - self.upper, initial=0.0)))
        for k, val in self.fixed.items():
            v = max(v, abs(z[k] - val))
        return v

    def dump(self) -> str:
        """Sparse listing: ``block row col var coefficient`` (var -1 is the constant)."""
        lines = [f"# nvar {self.nvar} blocks {len(self.blocks)}"]
        for b, blk in enumerate(self.blocks):
            d = blk.dim
            for r in range(d):
                for c in range(r, d):
                    if blk.const[r, c] != 0:
                        lines.append(f"{b} {r} {c} -1 {blk.const[r, c]:.17g}")
                    for k, v in enumerate(blk.idx):
                        x = blk.coef[k, r, c]
                        if x != 0:
                            lines.append(f"{b} {r} {c} {v} {x:.17g}")
        return "\n".join(lines)


def _bounds(bmi: BmiProblem, box: tuple[np.ndarray, np.ndarray] | None):
    norm = [
        (np.arange(1, 1 + bmi.m), float(bmi.l_a)),
        (np.arange(1 + bmi.m, 1 + bmi.m + bmi.n), float(bmi.l_s)),
    ]
    lower = upper = None
    if box is not None:
        lower = np.full(bmi.nvar, -np.inf)
        upper = np.full(bmi.nvar, np.inf)
        lower[bmi.a_slice] = box[0]
        upper[bmi.a_slice] = box[1]
    return norm, lower, upper


class _Acc:
    """Accumulates per-variable coefficient matrices of one block."""

    def __init__(self, d: int):
        self.d = d
        self.const = np.zeros((d, d))
        self.terms: dict[int, np.ndarray] = {}

    def add(self, var: int, M: np.ndarray, rows=None, cols=None):
        if var not in self.terms:
            self.terms[var] = np.zeros((self.d, self.d))
        if rows is None:
            self.terms[var] += M
        else:
            self.terms[var][rows, cols] += M

    def block(self, label: str) -> LmiBlock:
        idx = np.array(sorted(self.terms), dtype=int)
        coef = np.stack([self.terms[k] for k in idx]) if len(idx) else np.zeros((0, self.d, self.d))
        return LmiBlock(self.const, idx, coef, label)


def _affine_block(bmi: BmiProblem, form: BilinearMatrixForm, label: str, fixed: dict[int, float]) -> LmiBlock:
    """Block for a form whose bilinear terms each have one factor in ``fixed``."""
    p = form.p
    acc = _Acc(p)
    acc.const += form.F
    acc.add(0, np.eye(p))
    az = bmi.a_zidx(form)
    sz = bmi.s_zidx(form)
    for i in range(form.m):
        acc.add(int(az[i]), form.H[i])
    for j in range(form.n):
        acc.add(int(sz[j]), form.G[j])
    for (i, j), Fij in form.Fij.items():
        zi, zj = int(az[i]), int(sz[j])
        if zj in fixed:
            acc.add(zi, fixed[zj] * Fij)
        elif zi in fixed:
            acc.add(zj, fixed[zi] * Fij)
        else:
            raise ValueError("bilinear term with both factors free in an affine block")
    return acc.block(label)


def affine_lmi(
    bmi: BmiProblem,
    fixed: dict[int, float],
    box: tuple[np.ndarray, np.ndarray] | None = None,
) -> LmiProblem:
    """``maximize lam`` with the listed entries (z indices) held fixed.

    Holding every coupled ``s`` entry fixed, or every ``a`` entry, removes
    all bilinear terms.
    """
    blocks = [_affine_block(bmi, f, lab, fixed) for f, lab in zip(bmi.forms, bmi.labels)]
    norm, lower, upper = _bounds(bmi, box)
    c = np.zeros(bmi.nvar)
    c[0] = 1.0
    return LmiProblem(bmi.nvar, blocks, c, norm_bounds=norm, lower=lower, upper=upper, fixed=dict(fixed))


def fixed_a_lmi(bmi: BmiProblem, a: np.ndarray) -> LmiProblem:
    """The LMI in ``(lam, s)`` left when the template parameters are fixed."""
    a = np.asarray(a, dtype=float)
    return affine_lmi(bmi, {bmi.a_slice.start + i: float(v) for i, v in enumerate(a)})


def linearize_at(
    bmi: BmiProblem,
    zk: np.ndarray,
    delta: float = -1e-3,
    box: tuple[np.ndarray, np.ndarray] | None = None,
    eig_tol: float = 1e-10,
    balanced: bool = False,
) -> LmiProblem:
    """Convex restriction of the BMI around ``zk`` in Schur-complement form.

    For each bilinear form the block is

        [[-I,              N (w (x) I)],
         [(w (x) I)^T N^T,  -B-(w_k) - DB-(w_k)(w - w_k) + Omega(z) + F + lam*I]]

    and the objective is ``lam + delta/2 * |z - zk|^2``.  With ``balanced``
    the split of each form is recomputed with :func:`balanced_scale` weights
    at ``zk``.
    """
    zk = np.asarray(zk, dtype=float)
    blocks = []
    for k, (form, label) in enumerate(zip(bmi.forms, bmi.labels)):
        if form.is_affine():
            blocks.append(_affine_block(bmi, form, label, {}))
            continue
        sp = bmi.split(k, eig_tol)
        if balanced:
            sp = dc_split(form, eig_tol, balanced_scale(bmi, form, sp, zk))
        p = form.p
        r = sp.N_thin.shape[0]
        d = r + p
        acc = _Acc(d)
        acc.const[:r, :r] = -np.eye(r)
        az = bmi.a_zidx(form)
        sz = bmi.s_zidx(form)
        wz = np.concatenate([az[sp.a_local], sz[sp.s_local]]).astype(int)
        wk = zk[wz]
        lo = slice(r, d)
        acc.const[lo, lo] += form.F + sp.b_minus(wk)
        acc.add(0, np.eye(p), lo, lo)
        for i in range(form.m):
            acc.add(int(az[i]), form.H[i], lo, lo)
        for j in range(form.n):
            acc.add(int(sz[j]), form.G[j], lo, lo)
        grads = sp.b_minus_grad(wk)
        for t, v in enumerate(wz):
            acc.add(int(v), -grads[t], lo, lo)
            if r:
                C = sp.N_thin[:, t * p:(t + 1) * p]
                acc.add(int(v), C, slice(0, r), lo)
                acc.add(int(v), C.T, lo, slice(0, r))
        blocks.append(acc.block(label))
    norm, lower, upper = _bounds(bmi, box)
    c = np.zeros(bmi.nvar)
    c[0] = 1.0
    return LmiProblem(
        bmi.nvar,
        blocks,
        c,
        prox_weight=-0.5 * delta,
        prox_center=zk.copy(),
        norm_bounds=norm,
        lower=lower,
        upper=upper,
    )

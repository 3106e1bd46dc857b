"""Primal-dual interior-point solver for complex Hermitian block SDPs.

Standard form::

    minimize    sum_b tr(C_b X_b)
    subject to  sum_b tr(A_kb X_b) = b_k      for every constraint k
                X_b PSD

with dual::

    maximize    b^T y
    subject to  C_b - sum_k y_k A_kb = Z_b    PSD for every block b

Iterations follow the HKM search direction with a Mehrotra
predictor-corrector step. Inequalities are modelled by the caller through
PSD slack blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence, TextIO

import numpy as np
import scipy.linalg as sla

from .linalg import LinalgError, as_matrix, check_hermitian, hermitize

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"

PRESOLVE_TOL = 1e-10
RELATIVE_GRACE = 5


class SdpError(RuntimeError):
    """Ill-posed problem or a solver breakdown that cannot be reported as a status."""


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and limits forwarded to :func:`solve`."""

    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iter: int = 200

    def solve(self, problem: "SdpProblem") -> "SdpSolution":
        return solve(problem, self.gap_tol, self.feas_tol, self.max_iter)


@dataclass
class SdpProblem:
    """Block-diagonal SDP in standard equality form.

    Parameters
    ----------
    blocks : list of int
        Dimension of each PSD block.
    objective : list of numpy.ndarray
        Hermitian cost per block.
    constraints : list of (dict, float)
        Each constraint maps block index to its Hermitian coefficient and
        carries the real right-hand side. Blocks missing from the dict have a
        zero coefficient.
    """

    blocks: list[int]
    objective: list[np.ndarray]
    constraints: list[tuple[dict[int, np.ndarray], float]] = field(default_factory=list)

    def __post_init__(self):
        self.blocks = [int(n) for n in self.blocks]
        if len(self.objective) != len(self.blocks):
            raise SdpError("one objective matrix per block is required")
        self.objective = [check_hermitian(c, 1e-9) for c in self.objective]
        for c, n in zip(self.objective, self.blocks):
            if c.shape != (n, n):
                raise SdpError("objective block has the wrong shape")

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    def add_constraint(self, coeffs: Mapping[int, np.ndarray], rhs: float) -> None:
        clean = {}
        for b, a in coeffs.items():
            a = check_hermitian(a, 1e-9)
            if a.shape != (self.blocks[b], self.blocks[b]):
                raise SdpError(f"constraint coefficient for block {b} has shape {a.shape}")
            clean[int(b)] = a
        self.constraints.append((clean, float(rhs)))

    def dump(self, fh: TextIO) -> None:
        """Write the line-oriented debug format.

        The first line lists block dims, the second the constraint count.
        Then ``obj b i j re im`` and ``con k b i j re im`` triplets for the
        upper triangles, and ``rhs k value`` lines.
        """
        fh.write("blocks " + " ".join(str(n) for n in self.blocks) + "\n")
        fh.write(f"constraints {self.num_constraints}\n")
        for b, c in enumerate(self.objective):
            for i, j in zip(*np.triu_indices(c.shape[0])):
                v = c[i, j]
                if v != 0:
                    fh.write(f"obj {b} {i} {j} {float(v.real)!r} {float(v.imag)!r}\n")
        for k, (coeffs, _) in enumerate(self.constraints):
            for b in sorted(coeffs):
                a = coeffs[b]
                for i, j in zip(*np.triu_indices(a.shape[0])):
                    v = a[i, j]
                    if v != 0:
                        fh.write(f"con {k} {b} {i} {j} {float(v.real)!r} {float(v.imag)!r}\n")
        for k, (_, rhs) in enumerate(self.constraints):
            fh.write(f"rhs {k} {float(rhs)!r}\n")


def load_dump(fh: TextIO) -> SdpProblem:
    """Parse the format written by :meth:`SdpProblem.dump`."""
    blocks: list[int] = []
    m = 0
    obj: list[np.ndarray] = []
    cons: list[dict[int, np.ndarray]] = []
    rhs: list[float] = []
    for line in fh:
        parts = line.split()
        if not parts:
            continue
        tag = parts[0]
        if tag == "blocks":
            blocks = [int(p) for p in parts[1:]]
            obj = [np.zeros((n, n), dtype=complex) for n in blocks]
        elif tag == "constraints":
            m = int(parts[1])
            cons = [{} for _ in range(m)]
            rhs = [0.0] * m
        elif tag == "obj":
            b, i, j = map(int, parts[1:4])
            v = complex(float(parts[4]), float(parts[5]))
            obj[b][i, j] = v
            obj[b][j, i] = np.conj(v)
        elif tag == "con":
            k, b, i, j = map(int, parts[1:5])
            v = complex(float(parts[5]), float(parts[6]))
            a = cons[k].setdefault(b, np.zeros((blocks[b], blocks[b]), dtype=complex))
            a[i, j] = v
            a[j, i] = np.conj(v)
        elif tag == "rhs":
            rhs[int(parts[1])] = float(parts[2])
        else:
            raise SdpError(f"unknown record {tag!r}")
    p = SdpProblem(blocks, obj)
    for k in range(m):
        p.add_constraint(cons[k], rhs[k])
    return p


@dataclass
class SdpSolution:
    """Result of :func:`solve`.

    ``dual`` has one entry per constraint of the original problem; rows
    dropped by presolve get a zero multiplier. ``slack`` holds the dual
    slack blocks ``Z_b``.
    """

    primal: list[np.ndarray]
    dual: np.ndarray
    slack: list[np.ndarray]
    primal_value: float
    dual_value: float
    gap: float
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    certificate: object = None
    message: str = ""
    dropped_rows: tuple[int, ...] = ()

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Block:
    """Constraint data restricted to one block (only rows that touch it)."""

    def __init__(self, n: int, c: np.ndarray, rows: np.ndarray, mats: np.ndarray):
        self.n = n
        self.c = c
        self.rows = rows
        self.mats = mats
        self.flat = mats.reshape(len(rows), n * n)
        self.flat_conj = self.flat.conj()

    def apply(self, x: np.ndarray) -> np.ndarray:
        """``[Re tr(A_k X)]_k`` for the rows of this block."""
        return np.real(self.flat_conj @ x.ravel())

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """``sum_k y_k A_k`` for the rows of this block."""
        return (y[self.rows] @ self.flat).reshape(self.n, self.n)


def _presolve(problem: SdpProblem, tol: float):
    m = problem.num_constraints
    if m == 0:
        raise SdpError("at least one constraint is required")
    cols = []
    for b, n in enumerate(problem.blocks):
        iu = np.triu_indices(n)
        diag = iu[0] == iu[1]
        scale = np.where(diag, 1.0, np.sqrt(2.0))
        blockmat = np.zeros((m, len(iu[0])), dtype=complex)
        for k, (coeffs, _) in enumerate(problem.constraints):
            if b in coeffs:
                blockmat[k] = coeffs[b][iu] * scale
        cols.append(blockmat.real)
        cols.append(blockmat.imag[:, ~diag])
    amat = np.concatenate(cols, axis=1)
    rhs = np.array([r for _, r in problem.constraints])
    norms = np.linalg.norm(amat, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.argmax(norms == 0.0))
        if abs(rhs[bad]) > tol:
            raise SdpError(f"constraint {bad} has zero coefficients and nonzero rhs")
    scaled = amat / np.where(norms > 0, norms, 1.0)[:, None]
    _, r, piv = sla.qr(scaled.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        raise SdpError("all constraints are zero")
    rank = int(np.sum(diag > tol * diag[0]))
    keep = np.sort(piv[:rank])
    dropped = np.sort(piv[rank:])
    if dropped.size:
        coef, *_ = np.linalg.lstsq(amat[keep].T, amat[dropped].T, rcond=None)
        pred = coef.T @ rhs[keep]
        resid = np.abs(pred - rhs[dropped])
        if np.any(resid > 1e-8 * (1.0 + np.abs(rhs[dropped]))):
            raise SdpError("dependent constraints have inconsistent right-hand sides")
    return keep, dropped, norms


def _chol(a: np.ndarray) -> np.ndarray | None:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return None


def _max_step(lchol: np.ndarray, d: np.ndarray) -> float:
    """Largest ``alpha`` with ``L L^dagger + alpha D`` PSD (``inf`` if unbounded)."""
    linv_d = sla.solve_triangular(lchol, d, lower=True)
    s = sla.solve_triangular(lchol, linv_d.conj().T, lower=True)
    lam = np.linalg.eigvalsh(hermitize(s))[0]
    if lam >= 0:
        return np.inf
    return -1.0 / lam


def solve(
    problem: SdpProblem,
    gap_tol: float = 1e-8,
    feas_tol: float = 1e-8,
    max_iter: int = 200,
) -> SdpSolution:
    """Solve an :class:`SdpProblem` by a primal-dual interior-point method.

    Parameters
    ----------
    problem : SdpProblem
    gap_tol : float
        Stop once both ``|p - d|`` and ``sum_b tr(X_b Z_b)`` fall below
        ``gap_tol``. For large objective values a relative criterion
        ``gap_tol * (1 + |p|)`` is accepted after a few extra iterations.
    feas_tol : float
        Relative primal and dual residual tolerance.
    max_iter : int

    Returns
    -------
    SdpSolution
    """
    keep, dropped, norms = _presolve(problem, PRESOLVE_TOL)
    m_all = problem.num_constraints
    m = len(keep)
    scale = norms[keep]
    bvec = np.array([problem.constraints[k][1] for k in keep]) / scale

    blocks: list[_Block] = []
    for bi, n in enumerate(problem.blocks):
        rows, mats = [], []
        for j, k in enumerate(keep):
            coeffs = problem.constraints[k][0]
            if bi in coeffs:
                rows.append(j)
                mats.append(coeffs[bi] / scale[j])
        rows_arr = np.array(rows, dtype=int)
        mats_arr = np.array(mats, dtype=complex).reshape(len(rows), n, n)
        blocks.append(_Block(n, problem.objective[bi], rows_arr, mats_arr))

    nsum = sum(problem.blocks)
    cmax = max(float(np.max(np.abs(c))) if c.size else 0.0 for c in problem.objective)
    mu0 = 1.0 + cmax
    xs = [mu0 * np.eye(b.n, dtype=complex) for b in blocks]
    zs = [mu0 * np.eye(b.n, dtype=complex) for b in blocks]
    y = np.zeros(m)
    bnorm = 1.0 + float(np.linalg.norm(bvec))
    cnorm = 1.0 + float(np.sqrt(sum(np.linalg.norm(c) ** 2 for c in problem.objective)))

    def amap(mats_list):
        out = np.zeros(m)
        for blk, g in zip(blocks, mats_list):
            if len(blk.rows):
                np.add.at(out, blk.rows, blk.apply(g))
        return out

    def aadj(vec):
        return [blk.adjoint(vec) if len(blk.rows) else np.zeros((blk.n, blk.n), dtype=complex) for blk in blocks]

    def inner(a_list, b_list):
        return float(sum(np.real(np.vdot(a, b)) for a, b in zip(a_list, b_list)))

    status = MAX_ITER
    message = "iteration limit reached"
    rel_hits = 0
    tau = 0.9
    certificate = None
    it = 0
    pobj = dobj = 0.0
    pres = dres = np.inf
    for it in range(max_iter + 1):
        aty = aadj(y)
        rp = bvec - amap(xs)
        rd = [blk.c - at - z for blk, at, z in zip(blocks, aty, zs)]
        pobj = inner([b.c for b in blocks], xs)
        dobj = float(bvec @ y)
        xz = inner(xs, zs)
        pres = float(np.linalg.norm(rp)) / bnorm
        dres = float(np.sqrt(sum(np.linalg.norm(r) ** 2 for r in rd))) / cnorm
        gap = abs(pobj - dobj)
        # reported duals must never exceed the primal value
        feasible = pres <= feas_tol and dres <= feas_tol and dobj <= pobj + 0.1 * gap_tol
        if feasible and gap <= gap_tol and xz <= gap_tol:
            status = OPTIMAL
            message = "converged"
            break
        # large objectives: accept a relative gap once extra iterations stop helping
        rel = gap_tol * (1.0 + abs(pobj))
        if feasible and gap <= rel and xz <= rel:
            rel_hits += 1
            if rel_hits > RELATIVE_GRACE:
                status = OPTIMAL
                message = "converged (relative gap)"
                break
        # infeasibility rays
        resid_dual = float(np.sqrt(sum(np.linalg.norm(at + z) ** 2 for at, z in zip(aty, zs))))
        if dobj > 0 and resid_dual <= 1e-8 * dobj and dobj > 1e6:
            status = INFEASIBLE
            message = "primal infeasible: dual ray found"
            certificate = y / dobj
            break
        ax = amap(xs)
        if pobj < -1e6 and float(np.linalg.norm(ax)) <= 1e-8 * abs(pobj):
            status = UNBOUNDED
            message = "dual infeasible: primal ray found"
            certificate = [x / abs(pobj) for x in xs]
            break
        if it == max_iter:
            break

        xchol = [_chol(x) for x in xs]
        zchol = [_chol(z) for z in zs]
        if any(c is None for c in xchol) or any(c is None for c in zchol):
            # degenerate optima can push eigenvalues below rounding level
            # once the iterate is already within tolerance
            floor_ok = (
                pres <= feas_tol
                and dres <= feas_tol
                and gap <= rel
                and xz <= rel
                and dobj <= pobj + gap_tol
            )
            if floor_ok:
                status = OPTIMAL
                message = "converged (numerical floor)"
            else:
                message = "lost positive definiteness"
            break
        zinv = [sla.cho_solve((c, True), np.eye(c.shape[0])) for c in zchol]
        zinv = [hermitize(zi) for zi in zinv]

        schur = np.zeros((m, m))
        for blk, rx, lz in zip(blocks, xchol, zchol):
            if not len(blk.rows):
                continue
            linv = sla.solve_triangular(lz, np.eye(blk.n), lower=True)
            bmat = (linv @ blk.mats @ rx).reshape(len(blk.rows), -1)
            sub = np.real(bmat @ bmat.conj().T)
            schur[np.ix_(blk.rows, blk.rows)] += sub
        schur = 0.5 * (schur + schur.T)
        try:
            sfac = sla.cho_factor(schur, lower=True)
        except np.linalg.LinAlgError:
            reg = 1e-14 * (1.0 + float(np.max(np.abs(np.diag(schur)))))
            try:
                sfac = sla.cho_factor(schur + reg * np.eye(m), lower=True)
            except np.linalg.LinAlgError:
                message = "Schur complement is singular"
                break
        xrdzi = amap([x @ r @ zi for x, r, zi in zip(xs, rd, zinv)])
        mu = xz / nsum

        def direction(rc_zinv):
            rhs = rp - amap(rc_zinv) + xrdzi
            dy = sla.cho_solve(sfac, rhs)
            # one step of iterative refinement for ill-conditioned Schur systems
            dy = dy + sla.cho_solve(sfac, rhs - schur @ dy)
            atdy = aadj(dy)
            dz = [r - a for r, a in zip(rd, atdy)]
            dx = [hermitize(rz - x @ d @ zi) for rz, x, d, zi in zip(rc_zinv, xs, dz, zinv)]
            return dx, dy, dz

        def steps(dx, dz, tau):
            ap = min(_max_step(c, d) for c, d in zip(xchol, dx))
            ad = min(_max_step(c, d) for c, d in zip(zchol, dz))
            return min(1.0, tau * ap), min(1.0, tau * ad)

        # predictor
        dxa, dya, dza = direction([-x for x in xs])
        apa, ada = steps(dxa, dza, 1.0)
        mu_aff = inner([x + apa * d for x, d in zip(xs, dxa)], [z + ada * d for z, d in zip(zs, dza)]) / nsum
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
        # corrector
        rcz = [
            sigma * mu * zi - x - (da @ dz) @ zi
            for zi, x, da, dz in zip(zinv, xs, dxa, dza)
        ]
        dx, dy, dz = direction(rcz)
        ap, ad = steps(dx, dz, tau)
        tau = 0.9 + 0.09 * min(ap, ad)
        xs = [hermitize(x + ap * d) for x, d in zip(xs, dx)]
        y = y + ad * dy
        zs = [hermitize(z + ad * d) for z, d in zip(zs, dz)]

    y_full = np.zeros(m_all)
    y_full[keep] = y / scale
    return SdpSolution(
        primal=xs,
        dual=y_full,
        slack=zs,
        primal_value=pobj,
        dual_value=dobj,
        gap=abs(pobj - dobj),
        status=status,
        iterations=it,
        primal_residual=pres,
        dual_residual=dres,
        certificate=certificate,
        message=message,
        dropped_rows=tuple(int(k) for k in dropped),
    )


def dual_operator(problem: SdpProblem, y: Sequence[float], block: int) -> np.ndarray:
    """``sum_k y_k A_kb`` for one block, in the original constraint scaling."""
    n = problem.blocks[block]
    out = np.zeros((n, n), dtype=complex)
    for (coeffs, _), yk in zip(problem.constraints, y):
        if block in coeffs and yk != 0.0:
            out += yk * coeffs[block]
    return out


def constraint_residual(problem: SdpProblem, xs: Sequence[np.ndarray]) -> np.ndarray:
    """``sum_b tr(A_kb X_b) - b_k`` for every constraint."""
    out = np.empty(problem.num_constraints)
    for k, (coeffs, rhs) in enumerate(problem.constraints):
        out[k] = sum(np.real(np.vdot(a, as_matrix(xs[b]))) for b, a in coeffs.items()) - rhs
    return out


__all__ = [
    "SolverOptions",
    "SdpProblem",
    "SdpSolution",
    "SdpError",
    "solve",
    "load_dump",
    "dual_operator",
    "constraint_residual",
    "OPTIMAL",
    "INFEASIBLE",
    "UNBOUNDED",
    "MAX_ITER",
    "LinalgError",
]

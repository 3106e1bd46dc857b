"""Denotational semantics as superoperators.

A superoperator is stored as its transfer matrix on column-stacked operators,
``vec(A rho B) = (B^T (x) A) vec(rho)``. Composition is then a matrix product
and a loop denotation is the limit of a matrix sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..linalg import (
    LinalgError,
    as_matrix,
    hermitize,
    maxnorm,
    permutation_matrix,
    support,
)
from ..predicates import IVPredicate, ivp_new
from .ast import Abort, IfMeas, Init, Program, Seq, Skip, Unitary, WhileMeas, variables
from .environment import MAX_TOTAL_DIM, Environment

FIX_TOL = 1e-10
FIX_MAX_ITER = 10_000
KRAUS_CUTOFF = 1e-10
AST_TOL = 1e-8


class FixpointError(RuntimeError):
    """A loop did not converge; carries the last iterate and its residual."""

    def __init__(self, last: "Superoperator", residual: float, iterations: int):
        super().__init__(
            f"loop fixpoint not reached after {iterations} iterations (residual {residual:.3e})"
        )
        self.status = "max_iter"
        self.last = last
        self.residual = residual
        self.iterations = iterations


def _vec(rho: np.ndarray) -> np.ndarray:
    return rho.reshape(-1, order="F")


def _unvec(v: np.ndarray, d: int) -> np.ndarray:
    return v.reshape(d, d, order="F")


@dataclass(frozen=True, eq=False)
class Superoperator:
    """Linear map ``L(C^in_dim) -> L(C^out_dim)`` given by its transfer matrix."""

    in_dim: int
    out_dim: int
    transfer: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.transfer, dtype=complex)
        if t.shape != (self.out_dim**2, self.in_dim**2):
            raise LinalgError(f"transfer matrix shape {t.shape} does not match dims")
        object.__setattr__(self, "transfer", t)

    @classmethod
    def identity(cls, d: int) -> "Superoperator":
        return cls(d, d, np.eye(d * d, dtype=complex))

    @classmethod
    def zero(cls, d_in: int, d_out: int | None = None) -> "Superoperator":
        d_out = d_in if d_out is None else d_out
        return cls(d_in, d_out, np.zeros((d_out**2, d_in**2), dtype=complex))

    @classmethod
    def from_kraus(cls, kraus: Sequence[np.ndarray]) -> "Superoperator":
        ks = [as_matrix(k) for k in kraus]
        d_out, d_in = ks[0].shape
        t = sum(np.kron(k.conj(), k) for k in ks)
        return cls(d_in, d_out, t)

    @classmethod
    def unitary(cls, u) -> "Superoperator":
        return cls.from_kraus([u])

    def __call__(self, rho) -> np.ndarray:
        return apply(self, rho)

    def compose(self, first: "Superoperator") -> "Superoperator":
        """``self o first`` (``first`` runs first)."""
        if first.out_dim != self.in_dim:
            raise LinalgError("dimension mismatch in composition")
        return Superoperator(first.in_dim, self.out_dim, self.transfer @ first.transfer)

    def __add__(self, other: "Superoperator") -> "Superoperator":
        if (self.in_dim, self.out_dim) != (other.in_dim, other.out_dim):
            raise LinalgError("dimension mismatch in sum")
        return Superoperator(self.in_dim, self.out_dim, self.transfer + other.transfer)

    def choi(self) -> np.ndarray:
        """``J = sum_ij |i><j| (x) E(|i><j|)`` (input factor on the left)."""
        di, do = self.in_dim, self.out_dim
        t4 = self.transfer.reshape(do, do, di, di)
        return t4.transpose(3, 1, 2, 0).reshape(di * do, di * do)

    def kraus(self, cutoff: float = KRAUS_CUTOFF) -> list[np.ndarray]:
        """Kraus operators from the Choi eigendecomposition.

        Eigenvalues below ``cutoff * max(1, lambda_max)`` are dropped.
        """
        di, do = self.in_dim, self.out_dim
        w, v = np.linalg.eigh(hermitize(self.choi()))
        top = max(1.0, float(w[-1])) if w.size else 1.0
        out = []
        for lam, u in zip(w[::-1], v.T[::-1]):
            if lam <= cutoff * top:
                break
            out.append(np.sqrt(lam) * u.reshape(di, do).T)
        if not out:
            out.append(np.zeros((do, di), dtype=complex))
        return out

    def tensor(self, other: "Superoperator") -> "Superoperator":
        """``self (x) other`` on the product space (self on the left)."""
        a = _four(self)
        b = _four(other)
        e = np.einsum("cdab,CDAB->cCdDaAbB", a, b)
        do = self.out_dim * other.out_dim
        di = self.in_dim * other.in_dim
        e = e.reshape(do, do, di, di)
        return Superoperator(di, do, e.transpose(1, 0, 3, 2).reshape(do * do, di * di))


def _four(e: Superoperator) -> np.ndarray:
    """Index form ``E[c, d, a, b]`` with ``out[c, d] = sum E[c, d, a, b] rho[a, b]``."""
    return e.transfer.reshape(e.out_dim, e.out_dim, e.in_dim, e.in_dim).transpose(1, 0, 3, 2)


def apply(e: Superoperator, rho) -> np.ndarray:
    """``E(rho)``."""
    rho = as_matrix(rho)
    if rho.shape != (e.in_dim, e.in_dim):
        raise LinalgError(f"state of shape {rho.shape} does not fit a dim-{e.in_dim} map")
    return _unvec(e.transfer @ _vec(rho), e.out_dim)


def dual(e: Superoperator) -> Superoperator:
    """Adjoint map with ``tr(A E(B)) = tr(E^dagger(A) B)``."""
    return Superoperator(e.out_dim, e.in_dim, e.transfer.conj().T)


def apply_dual(e: Superoperator, a) -> np.ndarray:
    return apply(dual(e), a)


def apply_local(e: Superoperator, rho, dims: Sequence[int], which: int) -> np.ndarray:
    """Apply ``e`` to tensor factor ``which`` of a bipartite operator.

    ``dims`` gives the input factor dimensions; the output has factor
    ``which`` replaced by ``e.out_dim``.
    """
    rho = as_matrix(rho)
    d1, d2 = int(dims[0]), int(dims[1])
    if rho.shape != (d1 * d2, d1 * d2):
        raise LinalgError("operator does not match dims")
    four = _four(e)
    t = rho.reshape(d1, d2, d1, d2)
    if which == 0:
        if d1 != e.in_dim:
            raise LinalgError("map does not act on factor 0")
        out = np.einsum("cdab,ajbk->cjdk", four, t)
        return out.reshape(e.out_dim * d2, e.out_dim * d2)
    if which == 1:
        if d2 != e.in_dim:
            raise LinalgError("map does not act on factor 1")
        out = np.einsum("cdab,iajb->icjd", four, t)
        return out.reshape(d1 * e.out_dim, d1 * e.out_dim)
    raise LinalgError("which must be 0 or 1")


def apply_product(e1: Superoperator, e2: Superoperator, rho) -> np.ndarray:
    """``(E1 (x) E2)(rho)`` without forming the product transfer matrix."""
    mid = apply_local(e1, rho, (e1.in_dim, e2.in_dim), 0)
    return apply_local(e2, mid, (e1.out_dim, e2.in_dim), 1)


def apply_dual_product(e1: Superoperator, e2: Superoperator, a) -> np.ndarray:
    """``(E1^dagger (x) E2^dagger)(A)``."""
    return apply_product(dual(e1), dual(e2), a)


def is_ast(e: Superoperator, tol: float = AST_TOL) -> bool:
    """True iff the map is trace preserving: ``||E^dagger(I) - I||_max <= tol``."""
    ident = np.eye(e.out_dim, dtype=complex)
    return maxnorm(apply(dual(e), ident) - np.eye(e.in_dim)) <= tol


def is_cp(e: Superoperator, tol: float = 1e-8) -> bool:
    j = hermitize(e.choi())
    w = np.linalg.eigvalsh(j)
    return float(w[0]) >= -tol * (1.0 + max(float(w[-1]), 0.0))


def dual_apply_ivp(e: Superoperator, a: IVPredicate) -> IVPredicate:
    """``E^dagger(A)`` for an infinite-valued predicate.

    The finite part maps through ``E^dagger`` and the infinite part becomes
    the support of ``E^dagger(Pi_X)``.
    """
    if a.dim != e.out_dim:
        raise LinalgError("predicate does not live on the map's output space")
    ed = dual(e)
    fin = hermitize(apply(ed, a.finite))
    inf_op = hermitize(apply(ed, a.infinite.projector))
    return ivp_new(fin, support(inf_op))


def dual_product_ivp(e1: Superoperator, e2: Superoperator, a: IVPredicate) -> IVPredicate:
    """``(E1^dagger (x) E2^dagger)(A)`` for an infinite-valued predicate."""
    if a.dim != e1.out_dim * e2.out_dim:
        raise LinalgError("predicate does not live on the product output space")
    fin = hermitize(apply_dual_product(e1, e2, a.finite))
    inf_op = hermitize(apply_dual_product(e1, e2, a.infinite.projector))
    return ivp_new(fin, support(inf_op))


# ---------------------------------------------------------------------------
# program denotations


class Layout:
    """Ordered variables of a program space with their dimensions."""

    def __init__(self, names: Sequence[str], env: Environment):
        self.names = list(names)
        self.dims = [env.dim(v) for v in self.names]
        self.dim = int(np.prod(self.dims)) if self.dims else 1
        if self.dim > MAX_TOTAL_DIM:
            raise LinalgError(f"total dimension {self.dim} exceeds the cap {MAX_TOTAL_DIM}")

    def embed(self, op: np.ndarray, targets: Sequence[str]) -> np.ndarray:
        """Lift an operator on ``targets`` (in that order) to the full space."""
        idx = [self.names.index(t) for t in targets]
        rest = [i for i in range(len(self.names)) if i not in idx]
        d_rest = int(np.prod([self.dims[i] for i in rest])) if rest else 1
        big = np.kron(op, np.eye(d_rest, dtype=complex))
        perm = idx + rest
        w = permutation_matrix(self.dims, perm)
        return w.conj().T @ big @ w


def denote(
    prog: Program,
    env: Environment,
    space: Sequence[str] | None = None,
    fix_tol: float = FIX_TOL,
    max_iter: int = FIX_MAX_ITER,
) -> Superoperator:
    """Superoperator of a program.

    Parameters
    ----------
    prog : Program
    env : Environment
    space : sequence of str, optional
        Variable layout of the state space. Defaults to the program's
        variables in order of first occurrence; it may list extra variables,
        on which the program acts as the identity.
    fix_tol, max_iter
        Loop fixpoint tolerance (max-norm change of the transfer matrix) and
        iteration cap.

    Raises
    ------
    FixpointError
        If a loop does not converge within ``max_iter`` steps.
    """
    names = variables(prog) if space is None else list(space)
    missing = [v for v in variables(prog) if v not in names]
    if missing:
        raise LinalgError(f"layout lacks program variables {missing}")
    layout = Layout(names, env)
    return _denote(prog, env, layout, fix_tol, max_iter)


def _measurement_kraus(env: Environment, layout: Layout, name: str, targets) -> list[np.ndarray]:
    ms = env.measurement(name, env.total_dim(targets))
    return [layout.embed(m, targets) for m in ms]


def _denote(prog, env, layout, fix_tol, max_iter) -> Superoperator:
    d = layout.dim
    if isinstance(prog, Skip):
        return Superoperator.identity(d)
    if isinstance(prog, Abort):
        return Superoperator.zero(d)
    if isinstance(prog, Init):
        dv = env.dim(prog.var)
        ks = []
        for n in range(dv):
            k = np.zeros((dv, dv), dtype=complex)
            k[0, n] = 1.0
            ks.append(layout.embed(k, [prog.var]))
        return Superoperator.from_kraus(ks)
    if isinstance(prog, Unitary):
        return Superoperator.unitary(layout.embed(env.unitary(prog.name), prog.vars))
    if isinstance(prog, Seq):
        first = _denote(prog.first, env, layout, fix_tol, max_iter)
        second = _denote(prog.second, env, layout, fix_tol, max_iter)
        return second.compose(first)
    if isinstance(prog, IfMeas):
        ks = _measurement_kraus(env, layout, prog.name, prog.vars)
        if len(ks) != len(prog.branches):
            raise LinalgError("branch count differs from the measurement's outcome count")
        total = Superoperator.zero(d)
        for k, branch in zip(ks, prog.branches):
            body = _denote(branch, env, layout, fix_tol, max_iter)
            total = total + body.compose(Superoperator.from_kraus([k]))
        return total
    if isinstance(prog, WhileMeas):
        ks = _measurement_kraus(env, layout, prog.name, prog.vars)
        if len(ks) != 2:
            raise LinalgError("loop guards must have two outcomes")
        e0 = Superoperator.from_kraus([ks[0]])
        e1 = Superoperator.from_kraus([ks[1]])
        body = _denote(prog.body, env, layout, fix_tol, max_iter)
        out, _ = loop_fixpoint(e0, e1, body, fix_tol, max_iter)
        return out
    raise TypeError(f"unknown program node {prog!r}")


def loop_fixpoint(
    e0: Superoperator,
    e1: Superoperator,
    body: Superoperator,
    fix_tol: float = FIX_TOL,
    max_iter: int = FIX_MAX_ITER,
) -> tuple[Superoperator, int]:
    """Iterate ``W_{k+1} = E0 + W_k o body o E1`` from ``W_0 = 0``.

    Returns the limit and the number of steps taken until the max-norm
    change dropped below ``fix_tol``.
    """
    step = body.transfer @ e1.transfer
    w = np.zeros_like(e0.transfer)
    resid = np.inf
    for k in range(1, max_iter + 1):
        nxt = e0.transfer + w @ step
        resid = maxnorm(nxt - w)
        w = nxt
        if resid < fix_tol:
            return Superoperator(e0.in_dim, e0.out_dim, w), k
    raise FixpointError(Superoperator(e0.in_dim, e0.out_dim, w), resid, max_iter)


def unroll(prog: WhileMeas, env: Environment, k: int, space: Sequence[str] | None = None) -> Superoperator:
    """Denotation of the ``k``-fold unrolling ``while^(k)`` (``while^(0) = abort``)."""
    names = variables(prog) if space is None else list(space)
    layout = Layout(names, env)
    ks = _measurement_kraus(env, layout, prog.name, prog.vars)
    e0 = Superoperator.from_kraus([ks[0]])
    e1 = Superoperator.from_kraus([ks[1]])
    body = _denote(prog.body, env, layout, FIX_TOL, FIX_MAX_ITER)
    w = Superoperator.zero(layout.dim)
    for _ in range(k):
        w = e0 + w.compose(body).compose(e1)
    return w

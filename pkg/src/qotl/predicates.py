"""Infinite-valued predicates.

A predicate ``A`` is a PSD operator that may take the value ``+inf`` on a
subspace. It is stored canonically as a pair ``(P, X)`` with ``P`` PSD and
``P Pi_X = 0``: the quadratic form is ``<psi|P|psi>`` when ``psi`` is
orthogonal to ``X`` and ``+inf`` otherwise.

Extended reals are plain Python floats with ``math.inf``. Products follow
``inf * 0 = 0``; use :func:`ext_mul` rather than ``*`` whenever a factor may
be infinite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import (
    ABS_FLOOR,
    PSD_TOL,
    LinalgError,
    Subspace,
    as_matrix,
    check_hermitian,
    hermitize,
    is_psd,
    lambda_min,
    maxnorm,
    support,
)

INF = math.inf
TRACE_TOL = 1e-9


def ext_mul(a: float, b: float) -> float:
    """Product on ``[0, inf]`` with ``inf * 0 = 0``."""
    if a == 0 or b == 0:
        return 0.0
    return a * b


def ext_add(a: float, b: float) -> float:
    return a + b


@dataclass(frozen=True, eq=False)
class IVPredicate:
    """Canonical ``(finite, infinite)`` pair. Build instances with :func:`ivp_new`."""

    finite: np.ndarray
    infinite: Subspace

    @property
    def dim(self) -> int:
        return self.finite.shape[0]

    @property
    def is_finite(self) -> bool:
        return self.infinite.is_zero()

    def expect(self, psi, tol: float = TRACE_TOL) -> float:
        """``<psi|A|psi>`` in the extended reals."""
        psi = np.asarray(psi, dtype=complex).ravel()
        norm2 = float(np.real(np.vdot(psi, psi)))
        leak = float(np.real(np.vdot(psi, self.infinite.projector @ psi)))
        # vectors at the zero floor count as zero, as in ``support``
        if norm2 > ABS_FLOOR and leak > tol * norm2:
            return INF
        return float(np.real(np.vdot(psi, self.finite @ psi)))

    def eigenvalues(self) -> np.ndarray:
        """Spectrum with ``inf`` repeated ``rank(X)`` times, descending."""
        basis = self.infinite.complement().basis
        fin = np.linalg.eigvalsh(hermitize(basis.conj().T @ self.finite @ basis)) if basis.size else np.zeros(0)
        return np.concatenate([np.full(self.infinite.rank, INF), fin[::-1]])

    def __repr__(self) -> str:
        return f"IVPredicate(dim={self.dim}, inf_rank={self.infinite.rank})"


def ivp_new(p, x: Subspace | None = None, psd_tol: float = PSD_TOL) -> IVPredicate:
    """Canonical predicate ``p + inf * x``.

    Parameters
    ----------
    p : array_like
        PSD finite part.
    x : Subspace, optional
        Infinite subspace (default: zero).

    Raises
    ------
    LinalgError
        If ``p`` is not PSD within ``psd_tol``.
    """
    p = check_hermitian(p, 1e-9)
    if x is None:
        x = Subspace.zero(p.shape[0])
    if x.dim != p.shape[0]:
        raise LinalgError("finite part and infinite subspace have different dims")
    if not is_psd(p, psd_tol):
        raise LinalgError("finite part must be PSD")
    q = np.eye(p.shape[0]) - x.projector
    fin = hermitize(q @ p @ q)
    return IVPredicate(fin, x)


def ivp_finite(p) -> IVPredicate:
    return ivp_new(p)


def ivp_zero(d: int) -> IVPredicate:
    return ivp_new(np.zeros((d, d), dtype=complex))


def ivp_identity(d: int) -> IVPredicate:
    return ivp_new(np.eye(d, dtype=complex))


def ivp_infinity(x: Subspace) -> IVPredicate:
    """``inf * x`` (finite part zero)."""
    return ivp_new(np.zeros((x.dim, x.dim), dtype=complex), x)


def ivp_add(a: IVPredicate, b: IVPredicate) -> IVPredicate:
    """Sum: infinite spaces join, finite parts add and get re-canonicalized."""
    _same(a, b)
    x = a.infinite.join(b.infinite)
    return ivp_new(a.finite + b.finite, x)


def ivp_scale(c: float, a: IVPredicate) -> IVPredicate:
    """``c * A`` for ``c`` in ``[0, inf]``."""
    if c < 0:
        raise LinalgError("scalar must be nonnegative")
    if c == 0:
        return ivp_zero(a.dim)
    if math.isinf(c):
        return ivp_infinity(support(a.finite).join(a.infinite))
    return IVPredicate(c * a.finite, a.infinite)


def ivp_tensor(a: IVPredicate, b: IVPredicate) -> IVPredicate:
    """Tensor product with ``0 * inf = 0``."""
    sa, sb = support(a.finite), support(b.finite)
    x = sa.tensor(b.infinite).join(a.infinite.tensor(sb)).join(a.infinite.tensor(b.infinite))
    return ivp_new(np.kron(a.finite, b.finite), x)


def ivp_conj(m, a: IVPredicate) -> IVPredicate:
    """``M^dagger A M`` for ``M`` mapping into the predicate's space."""
    m = as_matrix(m)
    if m.shape[0] != a.dim:
        raise LinalgError(f"matrix of shape {m.shape} cannot act on a dim-{a.dim} predicate")
    md = m.conj().T
    x = support(hermitize(md @ a.infinite.projector @ m))
    return ivp_new(hermitize(md @ a.finite @ m), x)


def ivp_trace(a: IVPredicate, rho, tol: float = TRACE_TOL) -> float:
    """``tr(A rho)``: ``inf`` once ``rho`` overlaps the infinite space."""
    rho = as_matrix(rho)
    if rho.shape != a.finite.shape:
        raise LinalgError("state and predicate dims differ")
    px = a.infinite.projector
    mass = float(np.real(np.trace(rho)))
    leak = float(np.real(np.trace(px @ rho @ px)))
    # states at the zero floor count as zero, as in ``support``
    if mass > ABS_FLOOR and leak > tol * mass:
        return INF
    return float(np.real(np.trace(a.finite @ rho)))


def ivp_guard(x: Subspace, a: IVPredicate) -> IVPredicate:
    """``X | A = A + inf * X^perp``."""
    _same_dim(x, a)
    return ivp_add(a, ivp_infinity(x.complement()))


def ivp_leq(a: IVPredicate, b: IVPredicate, tol: float = PSD_TOL) -> bool:
    """Pointwise order ``<psi|A|psi> <= <psi|B|psi>`` for every ``psi``.

    With ``Pi`` the projector onto the complement of ``B``'s infinite space,
    this holds iff ``Pi`` annihilates ``A``'s infinite space and
    ``Pi P_A Pi <= Pi P_B Pi``.
    """
    return leq_violation(a, b, tol) is None


def leq_violation(a: IVPredicate, b: IVPredicate, tol: float = PSD_TOL):
    """Return ``None`` if ``a <= b``, otherwise a violating unit vector."""
    _same(a, b)
    keep = b.infinite.complement()
    if keep.is_zero():
        return None
    v = keep.basis
    leak = hermitize(v.conj().T @ a.infinite.projector @ v)
    w, u = np.linalg.eigh(leak)
    if w[-1] > tol:
        return v @ u[:, -1]
    diff = hermitize(v.conj().T @ (b.finite - a.finite) @ v)
    w, u = np.linalg.eigh(diff)
    if w[0] < -tol * (1.0 + maxnorm(diff)):
        return v @ u[:, 0]
    return None


def ivp_equal(a: IVPredicate, b: IVPredicate, tol: float = PSD_TOL) -> bool:
    return ivp_leq(a, b, tol) and ivp_leq(b, a, tol)


def ivp_sub_identity(c: float, a: IVPredicate) -> IVPredicate:
    """``c I - A`` for a finite ``A <= c I`` (used by predicate embeddings)."""
    if not a.is_finite:
        raise LinalgError("c I - A needs a finite predicate")
    d = a.dim
    diff = c * np.eye(d) - a.finite
    if lambda_min(diff) < -PSD_TOL * (1.0 + abs(c)):
        raise LinalgError("c I - A is not PSD")
    return ivp_new(diff)


def _same(a: IVPredicate, b: IVPredicate) -> None:
    if a.dim != b.dim:
        raise LinalgError(f"predicate dims differ: {a.dim} vs {b.dim}")


def _same_dim(x: Subspace, a: IVPredicate) -> None:
    if x.dim != a.dim:
        raise LinalgError(f"subspace dim {x.dim} vs predicate dim {a.dim}")

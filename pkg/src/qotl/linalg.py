"""Dense complex linear algebra used throughout the package.

Operators are plain ``numpy`` complex arrays. System 1 is always the left
Kronecker factor, so ``tr_2`` keeps the left factor and ``tr_1`` keeps the
right one.

Tolerances are relative to the max-norm of the operand with an absolute floor
of ``1e-12``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

import numpy as np

HERM_TOL = 1e-12
PSD_TOL = 1e-8
SUPPORT_TOL = 1e-9
IDEMPOTENT_TOL = 1e-9
ABS_FLOOR = 1e-12


class LinalgError(ValueError):
    """Raised on dimension mismatches and violated operator invariants."""


def as_matrix(a) -> np.ndarray:
    """Return ``a`` as a two-dimensional complex array (no copy if possible)."""
    m = np.asarray(a, dtype=complex)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2:
        raise LinalgError(f"expected a matrix, got array of shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise LinalgError("matrix has non-finite entries")
    return m


def maxnorm(a) -> float:
    a = np.asarray(a)
    return float(np.max(np.abs(a))) if a.size else 0.0


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def hermitize(a: np.ndarray) -> np.ndarray:
    """Hermitian part ``(A + A^dagger) / 2``."""
    return 0.5 * (a + dagger(a))


def is_hermitian(a, tol: float = HERM_TOL) -> bool:
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        return False
    return maxnorm(a - a.conj().T) <= tol * (1.0 + maxnorm(a))


def check_hermitian(a, tol: float = HERM_TOL) -> np.ndarray:
    """Validate Hermiticity and return the exactly Hermitian part.

    Raises
    ------
    LinalgError
        If ``a`` is not square or deviates from its adjoint beyond ``tol``.
    """
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise LinalgError(f"operator must be square, got {a.shape}")
    if not is_hermitian(a, tol):
        raise LinalgError("operator is not Hermitian within tolerance")
    return hermitize(a)


def kron(*mats) -> np.ndarray:
    """Kronecker product of any number of matrices, left factor first."""
    if not mats:
        return np.ones((1, 1), dtype=complex)
    out = as_matrix(mats[0])
    for m in mats[1:]:
        out = np.kron(out, as_matrix(m))
    return out


def _check_keep(keep) -> int:
    if keep not in (1, 2):
        raise LinalgError("keep must be 1 (trace out system 2) or 2 (trace out system 1)")
    return keep


def partial_trace(a, keep: int, dims: Sequence[int]) -> np.ndarray:
    """Partial trace over one factor of a bipartite operator.

    Parameters
    ----------
    a : array_like
        Operator on ``C^{d1} (x) C^{d2}``.
    keep : {1, 2}
        Which factor survives. ``keep=1`` computes ``tr_2(a)``.
    dims : pair of int
        ``(d1, d2)``.

    Returns
    -------
    numpy.ndarray
        The reduced operator.
    """
    a = as_matrix(a)
    d1, d2 = int(dims[0]), int(dims[1])
    if a.shape != (d1 * d2, d1 * d2):
        raise LinalgError(f"operator of shape {a.shape} does not match dims {(d1, d2)}")
    t = a.reshape(d1, d2, d1, d2)
    if _check_keep(keep) == 1:
        return np.einsum("ajbj->ab", t)
    return np.einsum("iaib->ab", t)


def ptrace(a, dims: Sequence[int], keep: Iterable[int]) -> np.ndarray:
    """Partial trace on a multipartite space, keeping the factors in ``keep``.

    Kept factors stay in their original relative order.
    """
    a = as_matrix(a)
    dims = [int(d) for d in dims]
    n = len(dims)
    total = int(np.prod(dims)) if dims else 1
    if a.shape != (total, total):
        raise LinalgError(f"operator of shape {a.shape} does not match dims {dims}")
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= n for k in keep):
        raise LinalgError("keep index out of range")
    t = a.reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    rows = [letters[i] for i in range(n)]
    cols = [letters[i] if i not in keep else letters[n + i] for i in range(n)]
    out = "".join(rows[i] for i in keep) + "".join(cols[i] for i in keep)
    t = np.einsum("".join(rows) + "".join(cols) + "->" + out, t)
    dk = int(np.prod([dims[i] for i in keep])) if keep else 1
    return t.reshape(dk, dk)


def permute_systems(a, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Reorder tensor factors of an operator.

    Factor ``perm[k]`` of the input becomes factor ``k`` of the output.
    """
    a = as_matrix(a)
    dims = [int(d) for d in dims]
    n = len(dims)
    if sorted(perm) != list(range(n)):
        raise LinalgError("perm must be a permutation of the factor indices")
    total = int(np.prod(dims))
    if a.shape != (total, total):
        raise LinalgError("operator does not match dims")
    t = a.reshape(dims + dims)
    t = t.transpose(list(perm) + [n + p for p in perm])
    return t.reshape(total, total)


def permutation_matrix(dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Unitary ``W`` with ``W (x_0 (x) ... ) = x_{perm[0]} (x) ...``."""
    dims = [int(d) for d in dims]
    total = int(np.prod(dims))
    idx = np.arange(total).reshape(dims).transpose(list(perm)).ravel()
    w = np.zeros((total, total), dtype=complex)
    w[np.arange(total), idx] = 1.0
    return w


def herm_eig(a, tol: float = HERM_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian operator, eigenvalues descending.

    Returns
    -------
    w : numpy.ndarray
        Real eigenvalues sorted in descending order.
    v : numpy.ndarray
        Unitary whose columns are the matching eigenvectors.

    Raises
    ------
    LinalgError
        If ``a`` is not Hermitian within ``tol``.
    """
    h = check_hermitian(a, tol)
    w, v = np.linalg.eigh(h)
    return w[::-1].copy(), v[:, ::-1].copy()


def eigvalsh(a) -> np.ndarray:
    """Ascending eigenvalues of the Hermitian part of ``a`` (no validation)."""
    return np.linalg.eigvalsh(hermitize(as_matrix(a)))


def lambda_min(a) -> float:
    return float(eigvalsh(a)[0])


def lambda_max(a) -> float:
    return float(eigvalsh(a)[-1])


def is_psd(a, tol: float = PSD_TOL) -> bool:
    a = as_matrix(a)
    if not is_hermitian(a, max(tol, HERM_TOL)):
        return False
    return lambda_min(a) >= -tol * (1.0 + maxnorm(a))


def loewner_leq(a, b, tol: float = PSD_TOL) -> bool:
    """Löwner comparison ``a <= b`` up to a relative tolerance.

    True iff the smallest eigenvalue of ``b - a`` is at least
    ``-tol * (1 + ||b - a||_max)``.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise LinalgError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = b - a
    return lambda_min(diff) >= -tol * (1.0 + maxnorm(diff))


def positive_part(a) -> np.ndarray:
    """``A_+``: keep the nonnegative spectrum of a Hermitian operator."""
    w, v = np.linalg.eigh(hermitize(as_matrix(a)))
    w = np.clip(w, 0.0, None)
    return (v * w) @ v.conj().T


def positive_projector(a) -> np.ndarray:
    """Projector onto the eigenvectors of ``a`` with positive eigenvalue."""
    w, v = np.linalg.eigh(hermitize(as_matrix(a)))
    vp = v[:, w > 0]
    return vp @ vp.conj().T


def trace_norm(a) -> float:
    return float(np.sum(np.abs(eigvalsh(a))))


def psd_sqrt(a) -> np.ndarray:
    w, v = np.linalg.eigh(hermitize(as_matrix(a)))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def top_eigvec(a) -> tuple[float, np.ndarray]:
    """Largest eigenvalue and a unit eigenvector of the Hermitian part."""
    w, v = np.linalg.eigh(hermitize(as_matrix(a)))
    return float(w[-1]), v[:, -1].copy()


def orthonormal_basis(vectors, tol: float = SUPPORT_TOL) -> np.ndarray:
    """Orthonormal basis (columns) of the span of the given column vectors."""
    m = as_matrix(vectors)
    if m.size == 0:
        return np.zeros((m.shape[0], 0), dtype=complex)
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] <= ABS_FLOOR:
        return np.zeros((m.shape[0], 0), dtype=complex)
    return u[:, s > tol * s[0]]


@dataclass(frozen=True, eq=False)
class Subspace:
    """Closed subspace of ``C^d`` stored through its orthogonal projector.

    Attributes
    ----------
    projector : numpy.ndarray
        Hermitian idempotent matrix.
    """

    projector: np.ndarray

    def __post_init__(self):
        p = check_hermitian(self.projector, 1e-9)
        if maxnorm(p @ p - p) > IDEMPOTENT_TOL * (1.0 + maxnorm(p)):
            raise LinalgError("projector is not idempotent")
        object.__setattr__(self, "projector", p)

    @classmethod
    def zero(cls, d: int) -> "Subspace":
        return cls(np.zeros((d, d), dtype=complex))

    @classmethod
    def full(cls, d: int) -> "Subspace":
        return cls(np.eye(d, dtype=complex))

    @classmethod
    def span(cls, vectors, dim: int | None = None) -> "Subspace":
        """Subspace spanned by the columns of ``vectors`` (or a single vector)."""
        m = np.asarray(vectors, dtype=complex)
        if m.ndim == 1:
            m = m.reshape(-1, 1)
        if m.shape[1] == 0 and dim is not None:
            return cls.zero(dim)
        b = orthonormal_basis(m)
        return cls(b @ b.conj().T)

    @classmethod
    def from_basis(cls, basis) -> "Subspace":
        b = as_matrix(basis)
        return cls(b @ b.conj().T)

    @property
    def dim(self) -> int:
        return self.projector.shape[0]

    @cached_property
    def basis(self) -> np.ndarray:
        """Isometry ``V`` (``d x rank``) with ``V V^dagger`` equal to the projector."""
        w, v = np.linalg.eigh(self.projector)
        return v[:, w > 0.5][:, ::-1].copy()

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def is_zero(self) -> bool:
        return self.rank == 0

    def is_full(self) -> bool:
        return self.rank == self.dim

    def complement(self) -> "Subspace":
        return Subspace(np.eye(self.dim) - self.projector)

    def join(self, other: "Subspace") -> "Subspace":
        _same_dim(self, other)
        return support(self.projector + other.projector)

    def meet(self, other: "Subspace") -> "Subspace":
        _same_dim(self, other)
        return self.complement().join(other.complement()).complement()

    def contains(self, other: "Subspace", tol: float = 1e-8) -> bool:
        """True iff ``other`` is a subspace of ``self``."""
        _same_dim(self, other)
        resid = other.projector - self.projector @ other.projector
        return maxnorm(resid) <= tol

    def contains_vector(self, v, tol: float = 1e-8) -> bool:
        v = np.asarray(v, dtype=complex).ravel()
        return float(np.linalg.norm(v - self.projector @ v)) <= tol * (1.0 + float(np.linalg.norm(v)))

    def equals(self, other: "Subspace", tol: float = 1e-8) -> bool:
        _same_dim(self, other)
        return maxnorm(self.projector - other.projector) <= tol

    def tensor(self, other: "Subspace") -> "Subspace":
        return Subspace(np.kron(self.projector, other.projector))

    def __repr__(self) -> str:
        return f"Subspace(dim={self.dim}, rank={self.rank})"


def _same_dim(x: Subspace, y: Subspace) -> None:
    if x.dim != y.dim:
        raise LinalgError(f"subspace dims differ: {x.dim} vs {y.dim}")


def support(a, threshold: float = SUPPORT_TOL, psd_tol: float = PSD_TOL) -> Subspace:
    """Support of a PSD operator.

    Spans the eigenvectors whose eigenvalue exceeds ``threshold * lambda_max``.

    Raises
    ------
    LinalgError
        If ``a`` has a negative eigenvalue beyond ``psd_tol``.
    """
    h = check_hermitian(a, 1e-9)
    w, v = np.linalg.eigh(h)
    top = float(w[-1]) if w.size else 0.0
    if w.size and w[0] < -psd_tol * (1.0 + max(top, 0.0)):
        raise LinalgError("support requires a PSD operator")
    if top <= ABS_FLOOR:
        return Subspace.zero(h.shape[0])
    b = v[:, w > threshold * top]
    return Subspace(b @ b.conj().T)


def join(*spaces: Subspace) -> Subspace:
    out = spaces[0]
    for s in spaces[1:]:
        out = out.join(s)
    return out


def subspace_ops(x: Subspace, y: Subspace) -> dict[str, Subspace]:
    """Join, meet and the complement of ``x``."""
    return {"join": x.join(y), "meet": x.meet(y), "complement": x.complement()}


def swap_operator(d: int) -> np.ndarray:
    """``SWAP = sum_ij |ij><ji|`` on ``C^d (x) C^d``."""
    s = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            s[i * d + j, j * d + i] = 1.0
    return s


class SymProjectors(NamedTuple):
    p_sym: Subspace
    p_asym: Subspace
    swap: np.ndarray


def sym_projectors(d: int) -> SymProjectors:
    """Symmetric and antisymmetric projectors on ``C^d (x) C^d``."""
    if d < 1:
        raise LinalgError("d must be positive")
    s = swap_operator(d)
    eye = np.eye(d * d, dtype=complex)
    return SymProjectors(Subspace(0.5 * (eye + s)), Subspace(0.5 * (eye - s)), s)


def p_asym(d: int) -> np.ndarray:
    """``(I - SWAP)/2`` as a matrix."""
    return 0.5 * (np.eye(d * d, dtype=complex) - swap_operator(d))


def p_sym(d: int) -> np.ndarray:
    return 0.5 * (np.eye(d * d, dtype=complex) + swap_operator(d))


def ket(index: int, d: int) -> np.ndarray:
    v = np.zeros(d, dtype=complex)
    v[index] = 1.0
    return v


def proj(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex).ravel()
    return np.outer(v, v.conj())


def hermitian_basis(d: int) -> np.ndarray:
    """Orthonormal basis of the real space of ``d x d`` Hermitian matrices.

    Returns an array of shape ``(d*d, d, d)``; the elements are orthonormal for
    the Hilbert-Schmidt inner product ``tr(A B)``.
    """
    out = np.zeros((d * d, d, d), dtype=complex)
    k = 0
    r = 1.0 / np.sqrt(2.0)
    for i in range(d):
        out[k, i, i] = 1.0
        k += 1
    for i in range(d):
        for j in range(i + 1, d):
            out[k, i, j] = out[k, j, i] = r
            k += 1
            out[k, i, j] = -1j * r
            out[k, j, i] = 1j * r
            k += 1
    return out


def hermitian_coords(a) -> np.ndarray:
    """Coordinates of a Hermitian matrix in :func:`hermitian_basis`."""
    a = as_matrix(a)
    d = a.shape[0]
    basis = hermitian_basis(d)
    return np.real(np.einsum("kij,ji->k", basis, a))

"""Couplings, quantum optimal transport and Strassen-type certificates.

``T_C(rho1, rho2)`` is the minimum of ``tr(C rho)`` over couplings (exact
mode) or partial couplings (partial mode) of ``rho1`` and ``rho2``. Values
come from :mod:`qotl.sdp`; certificates are rebuilt from its dual
multipliers and re-verified on the full space.

Every coupling is supported inside ``supp(rho1) (x) supp(rho2)``, so the
SDPs are posed on that subspace. This keeps a strictly feasible point
available even for rank-deficient marginals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from .linalg import (
    PSD_TOL,
    LinalgError,
    Subspace,
    as_matrix,
    check_hermitian,
    hermitian_basis,
    hermitize,
    is_psd,
    lambda_max,
    lambda_min,
    loewner_leq,
    maxnorm,
    p_asym,
    p_sym,
    partial_trace,
    support,
)
from .predicates import INF, IVPredicate, ivp_new
from .sdp import INFEASIBLE, OPTIMAL, SdpError, SdpProblem, SolverOptions

TRACE_MATCH_TOL = 1e-9
HOLDS_TOL = 1e-7
CERT_MARGIN = 1e-7
INF_FEAS_TOL = 1e-7
UNIT_TRACE_TOL = 1e-9
# share of the certificate margin spent on the support-extension slack
DELTA_FRACTION = 1e-3


class TransportError(RuntimeError):
    """Raised when no coupling exists or the solver cannot produce a value."""


@dataclass
class StrassenCertificate:
    """Dual witness ``(Y1, Y2)`` for exact couplings.

    ``Y1 (x) I - I (x) Y2 <= cost`` and ``violation`` is
    ``tr(Y1 rho1) - tr(Y2 rho2) - eps``.
    """

    y1: np.ndarray
    y2: np.ndarray
    violation: float

    def to_dict(self):
        from .io import matrix_to_json

        return {"Y1": matrix_to_json(self.y1), "Y2": matrix_to_json(self.y2), "violation": self.violation}


@dataclass
class PartialCertificate:
    """Dual witness ``(y1, y2, Y1, Y2)`` for partial couplings.

    Satisfies ``y1 <= y2``, ``Y1 <= y2 I``, ``y1 I <= Y2`` and
    ``Y1 (x) I - I (x) Y2 <= cost``; ``violation`` is the amount by which
    ``y1 (1 - tr rho1) + tr(Y1 rho1) <= y2 (1 - tr rho2) + tr(Y2 rho2) + eps``
    fails.
    """

    s1: float
    s2: float
    y1: np.ndarray
    y2: np.ndarray
    violation: float

    def to_dict(self):
        from .io import matrix_to_json

        return {
            "y1": self.s1,
            "y2": self.s2,
            "Y1": matrix_to_json(self.y1),
            "Y2": matrix_to_json(self.y2),
            "violation": self.violation,
        }


@dataclass
class TransportResult:
    """Optimal value with its primal witness and (optionally) a dual certificate.

    ``value`` is ``inf`` when no (partial) coupling avoids the infinite part
    of the cost; ``witness`` is then ``None``.
    """

    value: float
    witness: np.ndarray | None
    dual_value: float
    gap: float
    mode: str
    status: str = OPTIMAL
    certificate: StrassenCertificate | PartialCertificate | None = None
    dual_parts: dict = field(default_factory=dict, repr=False)


# ---------------------------------------------------------------------------
# coupling predicates


def _dims(rho1, rho2) -> tuple[int, int]:
    return rho1.shape[0], rho2.shape[0]


def is_coupling(rho, rho1, rho2, tol: float = 1e-7) -> bool:
    """Both marginals match within ``tol`` in max-norm."""
    rho, rho1, rho2 = as_matrix(rho), as_matrix(rho1), as_matrix(rho2)
    d1, d2 = _dims(rho1, rho2)
    if rho.shape != (d1 * d2, d1 * d2):
        raise LinalgError("coupling dims do not factor as d1 * d2")
    if not is_psd(rho, tol):
        return False
    return (
        maxnorm(partial_trace(rho, 1, (d1, d2)) - rho1) <= tol
        and maxnorm(partial_trace(rho, 2, (d1, d2)) - rho2) <= tol
    )


def is_partial_coupling(rho, rho1, rho2, tol: float = 1e-7) -> bool:
    """Marginals below ``rho1``, ``rho2`` and ``tr rho1 + tr rho2 <= 1 + tr rho``."""
    rho, rho1, rho2 = as_matrix(rho), as_matrix(rho1), as_matrix(rho2)
    d1, d2 = _dims(rho1, rho2)
    if rho.shape != (d1 * d2, d1 * d2):
        raise LinalgError("coupling dims do not factor as d1 * d2")
    if not is_psd(rho, tol):
        return False
    t = float(np.real(np.trace(rho)))
    t1 = float(np.real(np.trace(rho1)))
    t2 = float(np.real(np.trace(rho2)))
    return (
        loewner_leq(partial_trace(rho, 1, (d1, d2)), rho1, tol)
        and loewner_leq(partial_trace(rho, 2, (d1, d2)), rho2, tol)
        and t1 + t2 <= 1.0 + t + tol
    )


# ---------------------------------------------------------------------------
# SDP construction


def _as_cost(cost, d: int) -> IVPredicate:
    if isinstance(cost, IVPredicate):
        c = cost
    else:
        c = ivp_new(check_hermitian(cost, 1e-9))
    if c.dim != d:
        raise LinalgError(f"cost has dim {c.dim}, expected {d}")
    return c


def _trace(a) -> float:
    return float(np.real(np.trace(a)))


@dataclass
class _Reduced:
    """Support-reduced data: isometries and compressed marginals."""

    v1: np.ndarray
    v2: np.ndarray
    s1: np.ndarray
    s2: np.ndarray

    @property
    def r1(self) -> int:
        return self.v1.shape[1]

    @property
    def r2(self) -> int:
        return self.v2.shape[1]

    @property
    def v(self) -> np.ndarray:
        return np.kron(self.v1, self.v2)


def _reduce(rho1, rho2) -> _Reduced:
    v1 = support(rho1).basis
    v2 = support(rho2).basis
    s1 = hermitize(v1.conj().T @ rho1 @ v1)
    s2 = hermitize(v2.conj().T @ rho2 @ v2)
    return _Reduced(v1, v2, s1, s2)


def _marginal_mode(t1: float, t2: float, mode: str) -> tuple[bool, bool, bool]:
    """Which marginal constraints get slacks, and whether a trace row is needed."""
    if mode == "exact":
        return False, False, False
    full1 = abs(t1 - 1.0) <= UNIT_TRACE_TOL
    full2 = abs(t2 - 1.0) <= UNIT_TRACE_TOL
    if full1 and full2:
        return False, False, False
    if full1:
        return True, False, False
    if full2:
        return False, True, False
    return True, True, True


def _build(red: _Reduced, cost_r: np.ndarray, w: np.ndarray | None, slack1: bool, slack2: bool, trace_row: bool):
    """SDP over ``X`` with coupling ``W X W^dagger`` on the reduced space."""
    r1, r2 = red.r1, red.r2
    n = r1 * r2
    w = np.eye(n, dtype=complex) if w is None else w
    k = w.shape[1]
    wd = w.conj().T
    blocks = [k]
    obj = [hermitize(wd @ cost_r @ w)]
    idx1 = idx2 = idxs = None
    if slack1:
        idx1 = len(blocks)
        blocks.append(r1)
        obj.append(np.zeros((r1, r1), dtype=complex))
    if slack2:
        idx2 = len(blocks)
        blocks.append(r2)
        obj.append(np.zeros((r2, r2), dtype=complex))
    if trace_row:
        idxs = len(blocks)
        blocks.append(1)
        obj.append(np.zeros((1, 1), dtype=complex))
    prob = SdpProblem(blocks, obj)
    e1 = hermitian_basis(r1)
    e2 = hermitian_basis(r2)
    i1, i2 = np.eye(r1), np.eye(r2)
    for e in e1:
        coeffs = {0: wd @ np.kron(e, i2) @ w}
        if slack1:
            coeffs[idx1] = e
        prob.add_constraint(coeffs, _trace(e @ red.s1))
    for f in e2:
        coeffs = {0: wd @ np.kron(i1, f) @ w}
        if slack2:
            coeffs[idx2] = f
        prob.add_constraint(coeffs, _trace(f @ red.s2))
    if trace_row:
        t1, t2 = _trace(red.s1), _trace(red.s2)
        prob.add_constraint({0: np.eye(k), idxs: -np.eye(1)}, t1 + t2 - 1.0)
    layout = {"n1": r1 * r1, "n2": r2 * r2, "trace_row": trace_row, "e1": e1, "e2": e2}
    return prob, layout


def _solve(prob: SdpProblem, opts: SolverOptions, dump: TextIO | None):
    if dump is not None:
        prob.dump(dump)
    return opts.solve(prob)


def transport_value(
    cost,
    rho1,
    rho2,
    mode: str = "partial",
    opts: SolverOptions | None = None,
    dump: TextIO | None = None,
) -> TransportResult:
    """Optimal transport value ``T_C(rho1, rho2)``.

    Parameters
    ----------
    cost : IVPredicate or array_like
        PSD cost on ``H1 (x) H2``, possibly with an infinite part.
    rho1, rho2 : array_like
        Partial density operators.
    mode : {"partial", "exact"}
        Range over partial couplings or over exact couplings.
    opts : SolverOptions, optional
    dump : file-like, optional
        Receives the SDP debug dump of every solve.

    Returns
    -------
    TransportResult
        With ``value = inf`` and no witness if every feasible coupling
        overlaps the infinite part of the cost.

    Raises
    ------
    TransportError
        In exact mode with mismatched traces (no coupling exists) or when the
        solver fails.
    """
    if mode not in ("partial", "exact"):
        raise ValueError("mode must be 'partial' or 'exact'")
    opts = opts or SolverOptions()
    rho1 = check_hermitian(rho1, 1e-9)
    rho2 = check_hermitian(rho2, 1e-9)
    d1, d2 = _dims(rho1, rho2)
    c = _as_cost(cost, d1 * d2)
    t1, t2 = _trace(rho1), _trace(rho2)
    if mode == "exact" and abs(t1 - t2) > TRACE_MATCH_TOL:
        raise TransportError(f"no coupling exists: traces {t1!r} and {t2!r} differ")
    if mode == "partial" and (t1 > 1.0 + UNIT_TRACE_TOL or t2 > 1.0 + UNIT_TRACE_TOL):
        raise TransportError("partial couplings need partial density operators (trace <= 1)")
    red = _reduce(rho1, rho2)
    zero = np.zeros((d1 * d2, d1 * d2), dtype=complex)
    if red.r1 == 0 or red.r2 == 0:
        # only the zero operator is supported on a zero marginal
        if mode == "exact" or t1 + t2 <= 1.0 + UNIT_TRACE_TOL:
            return TransportResult(0.0, zero, 0.0, 0.0, mode)
        raise TransportError("no partial coupling exists")
    v = red.v
    fin_r = hermitize(v.conj().T @ c.finite @ v)
    slack1, slack2, trace_row = _marginal_mode(t1, t2, mode)
    w = None
    if not c.infinite.is_zero():
        inf_r = hermitize(v.conj().T @ c.infinite.projector @ v)
        prob, _ = _build(red, inf_r, None, slack1, slack2, trace_row)
        sol = _solve(prob, opts, dump)
        if sol.status == INFEASIBLE:
            raise TransportError("no coupling exists")
        if sol.status != OPTIMAL:
            raise TransportError(f"feasibility phase failed: {sol.message}")
        if sol.primal_value > INF_FEAS_TOL:
            return TransportResult(INF, None, INF, sol.gap, mode, status=OPTIMAL)
        keep = support(inf_r, threshold=1e-9).complement() if maxnorm(inf_r) > 0 else Subspace.full(inf_r.shape[0])
        if keep.is_zero():
            return TransportResult(INF, None, INF, sol.gap, mode)
        w = keep.basis
    prob, layout = _build(red, fin_r, w, slack1, slack2, trace_row)
    sol = _solve(prob, opts, dump)
    if sol.status == INFEASIBLE and w is not None:
        return TransportResult(INF, None, INF, 0.0, mode, status=INFEASIBLE)
    if sol.status != OPTIMAL:
        raise TransportError(f"transport SDP did not converge: {sol.status} ({sol.message})")
    x = sol.primal[0]
    x_r = x if w is None else w @ x @ w.conj().T
    witness = hermitize(v @ x_r @ v.conj().T)
    n1 = layout["n1"]
    n2 = layout["n2"]
    y = sol.dual
    ymat = np.einsum("k,kij->ij", y[:n1], layout["e1"])
    zmat = np.einsum("k,kij->ij", y[n1 : n1 + n2], layout["e2"])
    wmul = float(y[n1 + n2]) if layout["trace_row"] else 0.0
    parts = {
        "Y": hermitize(ymat),
        "Z": hermitize(zmat),
        "w": wmul,
        "slack1": slack1,
        "slack2": slack2,
        "reduced": red,
        "cost_r": fin_r,
        "restricted": w is not None,
    }
    return TransportResult(
        value=float(np.real(np.trace(c.finite @ witness))) if w is None else sol.primal_value,
        witness=witness,
        dual_value=sol.dual_value,
        gap=sol.gap,
        mode=mode,
        dual_parts=parts,
    )


# ---------------------------------------------------------------------------
# certificates


def _extend(red: _Reduced, cost: np.ndarray, y1r: np.ndarray, y2r: np.ndarray, delta: float):
    """Extend reduced ``(Y1, Y2)`` from the support to the full space.

    On the support block the slack is at least ``delta``; the complementary
    blocks get large multiples of the identity so that the Schur complement
    stays PSD.
    """
    v1, v2 = red.v1, red.v2
    d1, d2 = v1.shape[0], v2.shape[0]
    p1 = np.eye(d1) - v1 @ v1.conj().T
    p2 = np.eye(d2) - v2 @ v2.conj().T
    full1 = v1 @ y1r @ v1.conj().T
    full2 = v2 @ y2r @ v2.conj().T
    if red.r1 == d1 and red.r2 == d2:
        return full1, full2
    cnorm = float(np.linalg.norm(cost, 2))
    kappa = cnorm**2 / delta + cnorm + 1.0
    b = kappa + max(lambda_max(y1r), 0.0) + cnorm
    a = -(kappa + max(-lambda_min(y2r), 0.0) + cnorm)
    return full1 + a * p1, full2 + b * p2


def _exact_certificate(res: TransportResult, cost: np.ndarray, rho1, rho2, eps: float) -> StrassenCertificate | None:
    parts = res.dual_parts
    red: _Reduced = parts["reduced"]
    y1r = parts["Y"]
    y2r = -parts["Z"]
    t1 = _trace(rho1)
    slack = parts["cost_r"] - np.kron(y1r, np.eye(red.r2)) + np.kron(np.eye(red.r1), y2r)
    deficit = max(0.0, -lambda_min(slack))
    value_r = _trace(y1r @ red.s1) - _trace(y2r @ red.s2)
    room = value_r - deficit * t1 - eps - CERT_MARGIN
    if room <= 0:
        return None
    delta = min(DELTA_FRACTION * room / max(t1, 1e-300), 1.0) if (red.r1 < rho1.shape[0] or red.r2 < rho2.shape[0]) else 0.0
    y1r = y1r - (deficit + delta) * np.eye(red.r1)
    y1, y2 = _extend(red, cost, y1r, y2r, max(delta, 1e-300))
    shift = max(0.0, -lambda_min(y1), -lambda_min(y2))
    y1 = hermitize(y1 + shift * np.eye(y1.shape[0]))
    y2 = hermitize(y2 + shift * np.eye(y2.shape[0]))
    viol = _trace(y1 @ rho1) - _trace(y2 @ rho2) - eps
    return StrassenCertificate(y1, y2, viol)


def certificate_is_valid(cert: StrassenCertificate, cost, rho1, rho2, eps: float, tol: float = PSD_TOL) -> bool:
    """Re-verify a Strassen certificate from scratch."""
    d1, d2 = rho1.shape[0], rho2.shape[0]
    lhs = np.kron(cert.y1, np.eye(d2)) - np.kron(np.eye(d1), cert.y2)
    return (
        is_psd(cert.y1, tol)
        and is_psd(cert.y2, tol)
        and loewner_leq(lhs, cost, tol)
        and _trace(cert.y1 @ rho1) - _trace(cert.y2 @ rho2) > eps + CERT_MARGIN
    )


def _partial_certificate(res: TransportResult, cost: np.ndarray, rho1, rho2, eps: float) -> PartialCertificate | None:
    parts = res.dual_parts
    red: _Reduced = parts["reduced"]
    ymat, zmat, wmul = parts["Y"], parts["Z"], parts["w"]
    # clip multipliers to their dual cones
    if parts["slack1"]:
        ymat = ymat - max(lambda_max(ymat), 0.0) * np.eye(red.r1)
    if parts["slack2"]:
        zmat = zmat - max(lambda_max(zmat), 0.0) * np.eye(red.r2)
    wmul = max(wmul, 0.0)
    y1r = ymat + wmul * np.eye(red.r1)
    y2r = -zmat
    t1, t2 = _trace(rho1), _trace(rho2)
    slack = parts["cost_r"] - np.kron(y1r, np.eye(red.r2)) + np.kron(np.eye(red.r1), y2r)
    deficit = max(0.0, -lambda_min(slack))

    def score(s1, s2, a, b):
        return s1 * (1.0 - t1) + _trace(a @ rho1) - s2 * (1.0 - t2) - _trace(b @ rho2)

    s2 = max(wmul, lambda_max(y1r))
    s1 = min(0.0, lambda_min(y2r), s2)
    base = s1 * (1.0 - t1) + _trace(y1r @ red.s1) - s2 * (1.0 - t2) - _trace(y2r @ red.s2)
    room = base - deficit * t1 - eps - CERT_MARGIN
    if room <= 0:
        return None
    partial_support = red.r1 < rho1.shape[0] or red.r2 < rho2.shape[0]
    delta = min(DELTA_FRACTION * room / max(t1, 1e-300), 1.0) if partial_support else 0.0
    y1r = y1r - (deficit + delta) * np.eye(red.r1)
    y1, y2 = _extend(red, cost, y1r, y2r, max(delta, 1e-300))
    s2 = max(s2, lambda_max(y1))
    s1 = min(s1, lambda_min(y2), s2)
    shift = max(0.0, -lambda_min(y1), -lambda_min(y2), -s1, -s2)
    y1 = hermitize(y1 + shift * np.eye(y1.shape[0]))
    y2 = hermitize(y2 + shift * np.eye(y2.shape[0]))
    s1 += shift
    s2 += shift
    return PartialCertificate(s1, s2, y1, y2, score(s1, s2, y1, y2) - eps)


def partial_certificate_is_valid(cert: PartialCertificate, cost, rho1, rho2, eps: float, tol: float = PSD_TOL) -> bool:
    d1, d2 = rho1.shape[0], rho2.shape[0]
    lhs = np.kron(cert.y1, np.eye(d2)) - np.kron(np.eye(d1), cert.y2)
    t1, t2 = _trace(rho1), _trace(rho2)
    left = cert.s1 * (1.0 - t1) + _trace(cert.y1 @ rho1)
    right = cert.s2 * (1.0 - t2) + _trace(cert.y2 @ rho2) + eps
    scale = 1.0 + abs(cert.s2)
    return (
        cert.s1 >= -tol
        and cert.s1 <= cert.s2 + tol * scale
        and is_psd(cert.y1, tol)
        and is_psd(cert.y2, tol)
        and loewner_leq(cert.y1, cert.s2 * np.eye(d1), tol)
        and loewner_leq(cert.s1 * np.eye(d2), cert.y2, tol)
        and loewner_leq(lhs, cost, tol)
        and left > right + CERT_MARGIN
    )


@dataclass
class LiftingResult:
    """Outcome of a lifting check: exactly one of ``witness`` and ``certificate`` is set
    (neither only when the value sits inside the solver's resolution band)."""

    holds: bool
    value: float
    witness: np.ndarray | None
    certificate: StrassenCertificate | PartialCertificate | None
    gap: float


def lifting_check(rho1, cost, eps: float, rho2, opts: SolverOptions | None = None, dump: TextIO | None = None) -> LiftingResult:
    """Decide the lifting ``rho1 C#_eps rho2`` for equal-trace states.

    Holds iff the exact transport value is at most ``eps + 1e-7``. Otherwise
    a Strassen certificate ``(Y1, Y2)`` is returned.

    Raises
    ------
    TransportError
        If the traces differ.
    """
    rho1 = check_hermitian(rho1, 1e-9)
    rho2 = check_hermitian(rho2, 1e-9)
    cost = check_hermitian(cost, 1e-9)
    if abs(_trace(rho1) - _trace(rho2)) > TRACE_MATCH_TOL:
        raise TransportError("lifting needs states of equal trace")
    if math.isinf(eps):
        d1, d2 = _dims(rho1, rho2)
        t = _trace(rho1)
        wit = np.kron(rho1, rho2) / t if t > 0 else np.zeros((d1 * d2, d1 * d2), dtype=complex)
        return LiftingResult(True, _trace(cost @ wit), wit, None, 0.0)
    res = transport_value(cost, rho1, rho2, mode="exact", opts=opts, dump=dump)
    if res.value <= eps + HOLDS_TOL:
        return LiftingResult(True, res.value, res.witness, None, res.gap)
    cert = _exact_certificate(res, cost, rho1, rho2, eps) if res.dual_parts else None
    return LiftingResult(False, res.value, None, cert, res.gap)


def partial_strassen_check(rho1, rho2, cost, eps: float, opts: SolverOptions | None = None, dump: TextIO | None = None) -> LiftingResult:
    """Partial-coupling lifting with the ``(y1, y2, Y1, Y2)`` dual certificate."""
    rho1 = check_hermitian(rho1, 1e-9)
    rho2 = check_hermitian(rho2, 1e-9)
    cost = check_hermitian(cost, 1e-9)
    if math.isinf(eps):
        d1, d2 = _dims(rho1, rho2)
        res = transport_value(cost, rho1, rho2, "partial", opts, dump)
        return LiftingResult(True, res.value, res.witness, None, res.gap)
    res = transport_value(cost, rho1, rho2, mode="partial", opts=opts, dump=dump)
    if res.value <= eps + HOLDS_TOL:
        return LiftingResult(True, res.value, res.witness, None, res.gap)
    cert = _partial_certificate(res, cost, rho1, rho2, eps) if res.dual_parts else None
    return LiftingResult(False, res.value, None, cert, res.gap)


# ---------------------------------------------------------------------------
# star extension


def star_state(rho) -> np.ndarray:
    """``rho_star = (1 - tr rho)|*><*| + rho`` with ``*`` as the last basis index."""
    rho = as_matrix(rho)
    d = rho.shape[0]
    out = np.zeros((d + 1, d + 1), dtype=complex)
    out[:d, :d] = rho
    out[d, d] = 1.0 - _trace(rho)
    return out


def star_embed(a, d1: int, d2: int) -> np.ndarray:
    """``A_star``: ``A`` on the non-star block of ``(H1 + *) (x) (H2 + *)``."""
    a = as_matrix(a)
    e1 = np.eye(d1 + 1, d1)
    e2 = np.eye(d2 + 1, d2)
    e = np.kron(e1, e2)
    return e @ a @ e.T


def star_restrict(rho_up, d1: int, d2: int) -> np.ndarray:
    """Compress back onto ``H1 (x) H2`` (the complement of every star component)."""
    e = np.kron(np.eye(d1 + 1, d1), np.eye(d2 + 1, d2))
    return e.T @ as_matrix(rho_up) @ e


def star_lift(rho, rho1, rho2, tol: float = 1e-7) -> np.ndarray:
    """Exact coupling of ``rho1_star``, ``rho2_star`` built from a partial coupling.

    Raises
    ------
    LinalgError
        If ``rho`` is not a partial coupling of ``(rho1, rho2)``.
    """
    rho, rho1, rho2 = as_matrix(rho), as_matrix(rho1), as_matrix(rho2)
    if not is_partial_coupling(rho, rho1, rho2, tol):
        raise LinalgError("input is not a partial coupling")
    d1, d2 = _dims(rho1, rho2)
    star1 = np.zeros((d1 + 1, d1 + 1), dtype=complex)
    star1[d1, d1] = 1.0
    star2 = np.zeros((d2 + 1, d2 + 1), dtype=complex)
    star2[d2, d2] = 1.0
    emb1 = np.eye(d1 + 1, d1)
    emb2 = np.eye(d2 + 1, d2)
    m1 = emb1 @ (rho1 - partial_trace(rho, 1, (d1, d2))) @ emb1.T
    m2 = emb2 @ (rho2 - partial_trace(rho, 2, (d1, d2))) @ emb2.T
    corner = 1.0 + _trace(rho) - _trace(rho1) - _trace(rho2)
    return corner * np.kron(star1, star2) + np.kron(m1, star2) + np.kron(star1, m2) + star_embed(rho, d1, d2)


# ---------------------------------------------------------------------------
# stabilized transport and twirling


def wasserstein_cost(d: int) -> np.ndarray:
    """``P_sym^perp`` on ``C^d (x) C^d``."""
    return p_asym(d)


def t_stab(rho, sigma, opts: SolverOptions | None = None, dump: TextIO | None = None) -> TransportResult:
    """Stabilized transport ``T(rho (x) I/2, sigma (x) I/2)`` with cost ``P_sym^perp``."""
    rho = check_hermitian(rho, 1e-9)
    sigma = check_hermitian(sigma, 1e-9)
    for s in (rho, sigma):
        if abs(_trace(s) - 1.0) > UNIT_TRACE_TOL:
            raise TransportError("stabilized transport needs trace-one states")
    if rho.shape != sigma.shape:
        raise LinalgError("states must have the same dimension")
    d = rho.shape[0]
    half = np.eye(2) / 2.0
    return transport_value(p_asym(2 * d), np.kron(rho, half), np.kron(sigma, half), "exact", opts, dump)


def uu_twirl(x) -> np.ndarray:
    """Closed-form average of ``(U (x) U) X (U (x) U)^dagger`` over unitaries."""
    x = as_matrix(x)
    n = x.shape[0]
    d = int(round(math.isqrt(n)))
    if d * d != n:
        raise LinalgError("twirl needs a d^2-dimensional operator")
    ps, pa = p_sym(d), p_asym(d)
    out = _trace(x @ ps) * ps / _trace(ps)
    if d > 1:
        out = out + np.trace(x @ pa) * pa / _trace(pa)
    return out

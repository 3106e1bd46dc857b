"""Validity of relational judgments ``{P} S1 ~ S2 {Q}``.

A judgment is valid when every trace-one input ``rho`` on ``H1 (x) H2``
admits a partial coupling ``sigma`` of the two program outputs with
``tr(P rho) >= tr(Q sigma)``, i.e. when ``tr(P rho) >= T_Q(E1(rho_1), E2(rho_2))``.

For split postconditions ``Q1 (x) I + I (x) Q2`` and AST programs this is a
single Loewner comparison. General bounded postconditions are probed by a
multi-start falsifier; they are never reported valid.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..linalg import (
    PSD_TOL,
    LinalgError,
    Subspace,
    check_hermitian,
    hermitize,
    lambda_max,
    lambda_min,
    maxnorm,
    partial_trace,
)
from ..predicates import IVPredicate, ivp_add, ivp_new, leq_violation
from ..qwhile import Environment, Program, Superoperator, denote, is_ast
from ..qwhile.semantics import apply, apply_dual, dual_apply_ivp, dual_product_ivp
from ..sdp import SolverOptions
from ..transport import TransportError, transport_value

VALID = "valid"
INVALID = "invalid"
UNKNOWN = "unknown"

SPLIT_TOL = 1e-9
FALSIFY_MARGIN = 1e-6
MIX_ETA = 1e-3
# heavier smoothing used when the transport SDP at MIX_ETA is too ill-conditioned
MIX_FALLBACK = (1e-2, 5e-2)
SWEEPS = 20
RESTARTS = 32
# MM sweeps stop once the minorant promises less than this improvement
STALL_TOL = 1e-5


class NonAstWarning(UserWarning):
    """A program is not almost-surely terminating, so a lemma hypothesis fails."""


@dataclass
class Verdict:
    """Outcome of a validity check.

    ``margin`` is the best value of ``T_Q(outputs) - tr(P rho)`` found
    (positive means violated); ``counterexample`` is the input state ``rho``
    for invalid verdicts.
    """

    status: str
    reason: str = ""
    margin: float | None = None
    counterexample: np.ndarray | None = None
    evidence: dict = field(default_factory=dict)
    sampled: bool = False

    @property
    def valid(self) -> bool:
        return self.status == VALID

    @property
    def invalid(self) -> bool:
        return self.status == INVALID

    def to_dict(self) -> dict:
        from ..io import extended_to_json, matrix_to_json

        ev = {}
        for k, v in sorted(self.evidence.items()):
            if isinstance(v, np.ndarray):
                ev[k] = matrix_to_json(v)
            elif isinstance(v, float):
                ev[k] = extended_to_json(v)
            else:
                ev[k] = v
        return {
            "status": self.status,
            "reason": self.reason,
            "margin": None if self.margin is None else extended_to_json(self.margin),
            "counterexample": None if self.counterexample is None else matrix_to_json(self.counterexample),
            "evidence": ev,
            "sampled": self.sampled,
        }


# ---------------------------------------------------------------------------
# inputs


def channel(s, env: Environment | None = None, space: Sequence[str] | None = None) -> Superoperator:
    """Denotation of ``s``; superoperators pass through unchanged.

    Programs are interpreted over ``space`` (default: every variable of
    ``env`` in declaration order).
    """
    if isinstance(s, Superoperator):
        return s
    if isinstance(s, Program):
        if env is None:
            raise ValueError("programs need an environment")
        return denote(s, env, space=env.names if space is None else space)
    raise TypeError(f"expected a Program or Superoperator, got {type(s).__name__}")


def channels(s1, s2, env=None, vars1=None, vars2=None) -> tuple[Superoperator, Superoperator]:
    return channel(s1, env, vars1), channel(s2, env, vars2)


def as_ivp(a) -> IVPredicate:
    if isinstance(a, IVPredicate):
        return a
    return ivp_new(check_hermitian(a, 1e-9))


def _finite(a, what: str) -> np.ndarray:
    if isinstance(a, IVPredicate):
        if not a.is_finite:
            raise LinalgError(f"{what} must be finite")
        return a.finite
    return check_hermitian(a, 1e-9)


def _check_square(e: Superoperator, what: str) -> None:
    if e.in_dim != e.out_dim:
        raise LinalgError(f"{what} must map a space to itself")


# ---------------------------------------------------------------------------
# weakest preconditions


def wp_two_sided(s1, s2, q, env=None, vars1=None, vars2=None) -> IVPredicate:
    """``(E1^dagger (x) E2^dagger)(Q)``.

    For AST programs this is the least valid precondition of a split ``Q``
    and a valid precondition of any ``Q``. A :class:`NonAstWarning` is
    issued when either program is not AST.
    """
    e1, e2 = channels(s1, s2, env, vars1, vars2)
    q = as_ivp(q)
    if q.dim != e1.out_dim * e2.out_dim:
        raise LinalgError("postcondition does not live on the product output space")
    if not (is_ast(e1) and is_ast(e2)):
        warnings.warn("program is not AST; the weakest-precondition lemma does not apply", NonAstWarning, stacklevel=2)
    return dual_product_ivp(e1, e2, q)


def wp_one_sided(s, q, side: int, other_dim: int, env=None, space=None) -> IVPredicate:
    """``(E^dagger (x) I)(Q)`` for ``side=1`` or ``(I (x) E^dagger)(Q)`` for ``side=2``."""
    e = channel(s, env, space)
    ident = Superoperator.identity(other_dim)
    if side == 1:
        return dual_product_ivp(e, ident, as_ivp(q))
    if side == 2:
        return dual_product_ivp(ident, e, as_ivp(q))
    raise ValueError("side must be 1 or 2")


def split_predicate(e1: Superoperator, e2: Superoperator, q1, q2) -> IVPredicate:
    """``E1^dagger(Q1) (x) I + I (x) E2^dagger(Q2)``."""
    a = dual_apply_ivp(e1, as_ivp(q1))
    b = dual_apply_ivp(e2, as_ivp(q2))
    i1 = ivp_new(np.eye(e1.in_dim))
    i2 = ivp_new(np.eye(e2.in_dim))
    from ..predicates import ivp_tensor

    return ivp_add(ivp_tensor(a, i2), ivp_tensor(i1, b))


# ---------------------------------------------------------------------------
# split postconditions


def split_decompose(q, d1: int, d2: int, tol: float = SPLIT_TOL):
    """Write ``q = q1 (x) I + I (x) q2`` with ``q1, q2 >= 0`` and ``lambda_min(q1) = 0``.

    Returns ``None`` if ``q`` is not split within ``tol`` (relative to
    ``1 + ||q||_max``).
    """
    q = _finite(q, "postcondition")
    if q.shape != (d1 * d2, d1 * d2):
        raise LinalgError("postcondition dims do not factor as d1 * d2")
    a = partial_trace(q, 1, (d1, d2)) / d2
    b = partial_trace(q, 2, (d1, d2)) / d1
    t = float(np.real(np.trace(q))) / (d1 * d2)
    b = b - t * np.eye(d2)
    resid = q - np.kron(a, np.eye(d2)) - np.kron(np.eye(d1), b)
    if maxnorm(resid) > tol * (1.0 + maxnorm(q)):
        return None
    c = lambda_min(a)
    return hermitize(a - c * np.eye(d1)), hermitize(b + c * np.eye(d2))


def check_split_valid(p, s1, s2, q1, q2, env=None, vars1=None, vars2=None, tol: float = PSD_TOL) -> Verdict:
    """Exact validity test for the split postcondition ``q1 (x) I + I (x) q2``.

    Valid iff ``E1^dagger(q1) (x) I + I (x) E2^dagger(q2) <= p``. An invalid
    verdict carries the violating eigenvector as a pure input state; its
    margin is exact because the transport value of a split cost does not
    depend on the coupling.
    """
    e1, e2 = channels(s1, s2, env, vars1, vars2)
    _check_square(e1, "S1")
    _check_square(e2, "S2")
    p = as_ivp(p)
    if p.dim != e1.in_dim * e2.in_dim:
        raise LinalgError("precondition does not live on H1 (x) H2")
    if not (is_ast(e1) and is_ast(e2)):
        return Verdict(UNKNOWN, "split characterization needs AST programs")
    q1 = _finite(q1, "q1")
    q2 = _finite(q2, "q2")
    w = split_predicate(e1, e2, q1, q2)
    v = leq_violation(w, p, tol)
    if v is None:
        return Verdict(VALID, "split postcondition: Loewner comparison holds", margin=0.0, evidence={"exact": True})
    v = v / np.linalg.norm(v)
    rho = np.outer(v, v.conj())
    lhs = w.expect(v)
    rhs = p.expect(v)
    return Verdict(
        INVALID,
        "split postcondition: Loewner comparison fails",
        margin=lhs - rhs,
        counterexample=rho,
        evidence={"transport_value": lhs, "pre_value": rhs, "exact": True},
    )


def duality_instance_valid(p, e1: Superoperator, e2: Superoperator, y1, y2, n=None, tol: float = PSD_TOL) -> bool:
    """One instance of the duality-rule premise.

    With ``n`` given, checks ``{P + nI} S1 ~ S2 {Y1 (x) I + I (x) (nI - Y2)}``
    through :func:`check_split_valid`. With ``n=None`` checks the n-free form
    ``E1^dagger(Y1) (x) I - I (x) E2^dagger(Y2) <= P`` directly; the two agree
    for AST programs.
    """
    p = as_ivp(p)
    y1 = check_hermitian(y1, 1e-9)
    y2 = check_hermitian(y2, 1e-9)
    if n is None:
        lhs = np.kron(apply_dual(e1, y1), np.eye(e2.in_dim)) - np.kron(np.eye(e1.in_dim), apply_dual(e2, y2))
        keep = p.infinite.complement()
        if keep.is_zero():
            return True
        b = keep.basis
        diff = hermitize(b.conj().T @ (p.finite - lhs) @ b)
        return lambda_min(diff) >= -tol * (1.0 + maxnorm(diff))
    shifted = ivp_add(p, ivp_new(n * np.eye(p.dim)))
    q2 = n * np.eye(e2.out_dim) - y2
    return check_split_valid(shifted, e1, e2, y1, q2, tol=tol).valid


# ---------------------------------------------------------------------------
# general bounded postconditions


def _mix(rho: np.ndarray, eta: float) -> np.ndarray:
    d = rho.shape[0]
    t = float(np.real(np.trace(rho)))
    return (1.0 - eta) * rho + eta * t * np.eye(d) / d


@dataclass
class _Probe:
    value: float
    psi: np.ndarray
    transport: float
    pre: float


class _Objective:
    """``f(psi) = T_Q(E1(rho_1), E2(rho_2)) - <psi|P|psi>`` on ``X_P^perp``."""

    def __init__(self, p: IVPredicate, e1, e2, q, opts: SolverOptions):
        self.p = p
        self.e1, self.e2 = e1, e2
        self.q = q
        self.d1, self.d2 = e1.in_dim, e2.in_dim
        self.opts = opts
        keep = p.infinite.complement()
        self.basis = keep.basis
        self.pf = p.finite

    def outputs(self, psi):
        rho = np.outer(psi, psi.conj())
        r1 = partial_trace(rho, 1, (self.d1, self.d2))
        r2 = partial_trace(rho, 2, (self.d1, self.d2))
        return hermitize(apply(self.e1, r1)), hermitize(apply(self.e2, r2))

    def exact(self, psi) -> _Probe:
        o1, o2 = self.outputs(psi)
        pre = float(np.real(np.vdot(psi, self.pf @ psi)))
        try:
            t = transport_value(self.q, o1, o2, mode="partial", opts=self.opts).value
        except TransportError:
            # an unsolved probe never counts as a counterexample
            return _Probe(-math.inf, psi, math.nan, pre)
        return _Probe(t - pre, psi, t, pre)

    def minorant(self, psi):
        """Smoothed value at ``psi`` and the linear minorant's top vector."""
        o1, o2 = self.outputs(psi)
        pre = float(np.real(np.vdot(psi, self.pf @ psi)))
        res = None
        for eta in (MIX_ETA,) + MIX_FALLBACK:
            try:
                res = transport_value(self.q, _mix(o1, eta), _mix(o2, eta), mode="partial", opts=self.opts)
                break
            except TransportError:
                continue
        if res is None:
            return -math.inf, None
        parts = res.dual_parts
        if not parts:
            return res.value - pre, None
        red = parts["reduced"]
        y = red.v1 @ parts["Y"] @ red.v1.conj().T
        z = red.v2 @ parts["Z"] @ red.v2.conj().T
        w = max(parts["w"], 0.0)
        # the dual bound holds at the mixed marginals; pull it back to the raw ones
        y = (1 - eta) * y + eta * np.real(np.trace(y)) / self.d1 * np.eye(self.d1)
        z = (1 - eta) * z + eta * np.real(np.trace(z)) / self.d2 * np.eye(self.d2)
        a = apply_dual(self.e1, y + w * np.eye(self.d1))
        b = apply_dual(self.e2, z + w * np.eye(self.d2))
        lin = np.kron(a, np.eye(self.d2)) + np.kron(np.eye(self.d1), b) - w * np.eye(self.d1 * self.d2) - self.pf
        lin = hermitize(self.basis.conj().T @ lin @ self.basis)
        vals, vecs = np.linalg.eigh(lin)
        return res.value - pre, (float(vals[-1]), self.basis @ vecs[:, -1], (parts["Y"], parts["Z"]))


def _start(obj: _Objective, k: int, rng: np.random.Generator) -> np.ndarray:
    n = obj.basis.shape[0]
    r = obj.basis.shape[1]
    g = rng.normal(size=n) + 1j * rng.normal(size=n)
    if k < n:
        e = np.zeros(n, dtype=complex)
        e[k] = 1.0
        g = e + 1e-3 * g
    c = obj.basis.conj().T @ g
    if np.linalg.norm(c) < 1e-8:
        c = rng.normal(size=r) + 1j * rng.normal(size=r)
    psi = obj.basis @ c
    return psi / np.linalg.norm(psi)


def _restart(obj: _Objective, k: int, seed_seq, sweeps: int) -> _Probe:
    rng = np.random.default_rng(seed_seq)
    psi = _start(obj, k, rng)
    prev = -math.inf
    for _ in range(sweeps):
        val, step = obj.minorant(psi)
        if step is None or val <= prev + STALL_TOL:
            break
        prev = val
        top, nxt, _ = step
        if top <= val + STALL_TOL:
            break
        if abs(np.vdot(nxt, psi)) > 1.0 - 1e-13:
            break
        psi = nxt
    return obj.exact(psi)


def falsify(
    p,
    s1,
    s2,
    q,
    restarts: int = RESTARTS,
    seed: int = 0,
    sweeps: int = SWEEPS,
    threads: int = 1,
    opts: SolverOptions | None = None,
    env=None,
    vars1=None,
    vars2=None,
) -> _Probe | None:
    """Multi-start majorize-minimize ascent of ``T_Q(outputs) - tr(P rho)``.

    Each restart starts from a (perturbed) basis vector or a Gaussian vector
    in the finite region of ``P``. At every sweep the transport dual at
    slightly mixed outputs gives a linear lower bound of the objective that
    is tight at the current state; its top eigenvector is the next iterate,
    so the smoothed objective never decreases. The final state of every
    restart is re-evaluated with an exact transport SDP.

    Returns the best probe, or ``None`` if ``P`` is infinite everywhere.
    """
    e1, e2 = channels(s1, s2, env, vars1, vars2)
    p = as_ivp(p)
    q = _finite(q, "postcondition")
    obj = _Objective(p, e1, e2, q, opts or SolverOptions())
    if obj.basis.shape[1] == 0:
        return None
    seqs = np.random.SeedSequence(seed).spawn(restarts)
    jobs = list(range(restarts))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            probes = list(pool.map(lambda k: _restart(obj, k, seqs[k], sweeps), jobs))
    else:
        probes = [_restart(obj, k, seqs[k], sweeps) for k in jobs]
    best = 0
    for k in range(1, len(probes)):
        if probes[k].value > probes[best].value:
            best = k
    return probes[best]


def check_valid_general(
    p,
    s1,
    s2,
    q,
    restarts: int = RESTARTS,
    seed: int = 0,
    sweeps: int = SWEEPS,
    threads: int = 1,
    opts: SolverOptions | None = None,
    env=None,
    vars1=None,
    vars2=None,
) -> Verdict:
    """Validity of ``{P} S1 ~ S2 {Q}`` for a bounded ``Q``.

    1. If ``Q`` is split and both programs are AST, the exact split check
       decides.
    2. Otherwise the falsifier searches for an input with
       ``T_Q(outputs) - tr(P rho) > 1e-6``.
    3. The transport dual at the best input gives a duality-rule instance
       ``(Y1, Y2)``; a failing n-free premise is a second witness of
       invalidity.

    Without a counterexample the verdict is ``unknown`` and reports the best
    margin found.
    """
    e1, e2 = channels(s1, s2, env, vars1, vars2)
    _check_square(e1, "S1")
    _check_square(e2, "S2")
    p = as_ivp(p)
    q = _finite(q, "postcondition")
    d1, d2 = e1.in_dim, e2.in_dim
    if p.dim != d1 * d2 or q.shape[0] != d1 * d2:
        raise LinalgError("predicates do not live on H1 (x) H2")
    ast = is_ast(e1) and is_ast(e2)
    parts = split_decompose(q, d1, d2)
    if parts is not None and ast:
        v = check_split_valid(p, e1, e2, parts[0], parts[1])
        v.reason = "postcondition is split; " + v.reason
        return v
    if p.infinite.is_full():
        return Verdict(VALID, "precondition is infinite on every state", margin=-math.inf, evidence={"exact": True})
    probe = falsify(p, e1, e2, q, restarts, seed, sweeps, threads, opts)
    ev = {"restarts": restarts, "seed": seed, "ast": ast, "split": parts is not None}
    if probe.value > FALSIFY_MARGIN:
        rho = np.outer(probe.psi, probe.psi.conj())
        ev.update(transport_value=probe.transport, pre_value=probe.pre)
        # the dual at the counterexample is a duality-rule instance whose
        # n-free premise fails by the top eigenvalue below
        _, step = _Objective(p, e1, e2, q, opts or SolverOptions()).minorant(probe.psi)
        if step is not None:
            ev["duality_premise_violation"] = step[0]
        return Verdict(INVALID, "falsifier found a violating input", margin=probe.value, counterexample=rho, evidence=ev)
    reason = "no counterexample at budget"
    if not ast:
        reason += " (non-AST programs; partial couplings used)"
    ev.update(best_input=np.outer(probe.psi, probe.psi.conj()))
    return Verdict(UNKNOWN, reason, margin=probe.value, evidence=ev)


def output_margin(p, e1: Superoperator, e2: Superoperator, q, rho, opts: SolverOptions | None = None) -> float:
    """``T_Q(E1(tr_2 rho), E2(tr_1 rho)) - tr(P rho)`` recomputed from scratch."""
    from ..predicates import ivp_trace

    p = as_ivp(p)
    d1, d2 = e1.in_dim, e2.in_dim
    r1 = apply(e1, partial_trace(rho, 1, (d1, d2)))
    r2 = apply(e2, partial_trace(rho, 2, (d1, d2)))
    try:
        t = transport_value(q, hermitize(r1), hermitize(r2), "partial", opts).value
    except TransportError:
        return math.inf
    return t - ivp_trace(p, rho)

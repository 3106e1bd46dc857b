"""Turnkey checkers for program equivalence, distances, non-interference and privacy.

Every checker works on superoperators; programs are denoted first. Checkers
that search over inputs share one monotone ascent: for a unit vector ``psi``
in a subspace ``X`` of ``H (x) H`` with marginals ``rho1, rho2`` the objective

    f(psi) = tr[(E1(rho1) - k E2(rho2))_+] - <psi|Phi|psi>

is a maximum of linear functionals ``tr(P .)`` over projectors ``P``, so
alternating between the positive-part projector and the top eigenvector of
the pulled-back operator on ``X`` never decreases it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .linalg import (
    LinalgError,
    Subspace,
    as_matrix,
    check_hermitian,
    hermitian_basis,
    hermitize,
    lambda_max,
    lambda_min,
    maxnorm,
    p_asym,
    p_sym,
    partial_trace,
    permute_systems,
    positive_part,
    positive_projector,
    proj,
    trace_norm,
)
from .logic.derivation import sample_contractions, sample_duality_y
from .logic.validity import (
    FALSIFY_MARGIN,
    INVALID,
    UNKNOWN,
    VALID,
    Verdict,
    channel,
    channels,
    check_split_valid,
    falsify,
)
from .predicates import ivp_guard, ivp_new
from .qwhile.environment import Environment
from .qwhile.parser import parse
from .qwhile.semantics import Superoperator, apply, apply_dual, is_ast
from .sdp import OPTIMAL, SdpError, SdpProblem, SolverOptions
from .transport import TransportError, t_stab, transport_value

CHOI_TOL = 1e-8
MONOTONE_TOL = 1e-6
VIOLATION_TOL = 1e-7
NI_TOL = 1e-9
NI_MAX_LEN = 6
NI_MAX_SEQUENCES = 10**6
POVM_TOL = 1e-8
ASCENT_ITERS = 200
ASCENT_STOP = 1e-13
REPLACEMENT_TOL = 1e-10


# ---------------------------------------------------------------------------
# trace distance


def trace_distance(rho, sigma) -> float:
    """``TD(rho, sigma) = 0.5 * ||rho - sigma||_1`` from the eigenvalues of the difference."""
    rho = check_hermitian(rho, 1e-9)
    sigma = check_hermitian(sigma, 1e-9)
    if rho.shape != sigma.shape:
        raise LinalgError("states must have the same dimension")
    return 0.5 * trace_norm(rho - sigma)


def trace_distance_variational(rho, sigma) -> tuple[float, np.ndarray]:
    """``max_{0 <= P <= I} tr(P (rho - sigma))`` with its maximizer.

    The maximizer is the projector onto the positive eigenspace of
    ``rho - sigma``. For equal traces the value is the trace distance.
    """
    rho = check_hermitian(rho, 1e-9)
    sigma = check_hermitian(sigma, 1e-9)
    if rho.shape != sigma.shape:
        raise LinalgError("states must have the same dimension")
    p = positive_projector(rho - sigma)
    return float(np.real(np.trace(p @ (rho - sigma)))), p


def positive_part_trace(a) -> float:
    """``tr(A_+)`` for a Hermitian ``A``."""
    return float(np.real(np.trace(positive_part(a))))


# ---------------------------------------------------------------------------
# shared ascent


def _as_subspace(x, d: int) -> Subspace:
    if isinstance(x, Subspace):
        s = x
    else:
        s = Subspace(as_matrix(x))
    if s.dim != d:
        raise LinalgError(f"subspace lives in dimension {s.dim}, expected {d}")
    return s


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


class _Ascent:
    """Monotone maximization of ``tr[(E1(rho1) - k E2(rho2))_+] - <psi|Phi|psi>`` over ``X``."""

    def __init__(self, e1: Superoperator, e2: Superoperator, basis: np.ndarray, phi: np.ndarray | None, k: float = 1.0):
        self.e1, self.e2 = e1, e2
        self.d1, self.d2 = e1.in_dim, e2.in_dim
        self.basis = basis
        self.phi = phi
        self.k = float(k)
        self.eye1 = np.eye(self.d1)
        self.eye2 = np.eye(self.d2)

    def outputs(self, psi: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rho = np.outer(psi, psi.conj())
        r1 = partial_trace(rho, 1, (self.d1, self.d2))
        r2 = partial_trace(rho, 2, (self.d1, self.d2))
        return rho, apply(self.e1, r1), apply(self.e2, r2)

    def value(self, psi: np.ndarray) -> tuple[float, np.ndarray]:
        _, o1, o2 = self.outputs(psi)
        delta = hermitize(o1 - self.k * o2)
        val = positive_part_trace(delta)
        if self.phi is not None:
            val -= float(np.real(np.vdot(psi, self.phi @ psi)))
        return val, delta

    def pulled_back(self, p: np.ndarray) -> np.ndarray:
        w = np.kron(apply_dual(self.e1, p), self.eye2) - self.k * np.kron(self.eye1, apply_dual(self.e2, p))
        if self.phi is not None:
            w = w - self.phi
        return hermitize(w)

    def run(self, psi: np.ndarray) -> tuple[float, np.ndarray]:
        val, delta = self.value(psi)
        for _ in range(ASCENT_ITERS):
            w = self.pulled_back(positive_projector(delta))
            restricted = hermitize(self.basis.conj().T @ w @ self.basis)
            _, vecs = np.linalg.eigh(restricted)
            nxt = _unit(self.basis @ vecs[:, -1])
            nval, ndelta = self.value(nxt)
            if nval <= val + ASCENT_STOP:
                break
            psi, val, delta = nxt, nval, ndelta
        return val, psi

    def search(self, budget: int, rng: np.random.Generator, extra: Sequence[np.ndarray] = ()) -> tuple[float, np.ndarray]:
        """Best of ``budget`` ascents from basis vectors, random vectors and ``extra`` starts."""
        r = self.basis.shape[1]
        starts = [_unit(self.basis @ (self.basis.conj().T @ v)) for v in extra if np.linalg.norm(self.basis.conj().T @ v) > 1e-9]
        # projected computational basis vectors, in order, so that ties resolve to simple inputs
        for j in range(self.basis.shape[0]):
            if len(starts) >= budget // 2:
                break
            v = self.basis @ self.basis[j].conj()
            if np.linalg.norm(v) > 1e-9:
                starts.append(_unit(v))
        while len(starts) < max(budget, 1):
            g = rng.normal(size=r) + 1j * rng.normal(size=r)
            starts.append(_unit(self.basis @ g))
        best = (-math.inf, starts[0])
        for s in starts:
            val, psi = self.run(s)
            if val > best[0] + ASCENT_STOP:
                best = (val, psi)
        return best


def _replacement_output(e: Superoperator, tol: float = REPLACEMENT_TOL) -> np.ndarray | None:
    """``omega`` if ``e(rho) = tr(rho) omega`` for every ``rho``, else ``None``."""
    omega = apply(e, np.eye(e.in_dim) / e.in_dim)
    if maxnorm(e.choi() - np.kron(np.eye(e.in_dim), omega)) <= tol:
        return omega
    return None


# ---------------------------------------------------------------------------
# trace-distance encoding


def td_encoding_check(
    s1,
    s2,
    x,
    phi1=None,
    phi2=None,
    budget: int = 32,
    seed: int = 0,
    samples: int = 32,
    env: Environment | None = None,
    space: Sequence[str] | None = None,
) -> Verdict:
    """Check ``TD(E1(rho1), E2(rho2)) <= tr(Phi1 rho1) + tr(Phi2 rho2)`` over lifted pairs in ``X``.

    The direct route ascends the violation over pure couplings supported in
    ``X`` (mixed couplings cannot do better: the left side is convex and the
    right side linear). The judgment route checks the split judgment
    ``{X | I + Phi1 (x) I + I (x) Phi2} S1 ~ S2 {P (x) I + I (x) (I - P)}``
    exactly for each ``P`` in a sampled contraction family extended by the
    positive-part projector at the direct route's best input.

    Returns
    -------
    Verdict
        ``invalid`` with the violating coupling; ``valid`` only when the
        programs coincide and ``X`` lies in the symmetric subspace, or when
        the bound is at least one on all of ``X``; ``unknown`` otherwise.
        ``evidence["direct"]`` and ``evidence["judgment"]`` report both
        routes.
    """
    e1, e2 = channels(s1, s2, env, space, space)
    d = e1.in_dim
    if e2.in_dim != d or e1.out_dim != e2.out_dim:
        raise LinalgError("programs must act on the same space")
    xs = _as_subspace(x, d * d)
    phi1 = np.zeros((d, d)) if phi1 is None else check_hermitian(phi1, 1e-9)
    phi2 = np.zeros((d, d)) if phi2 is None else check_hermitian(phi2, 1e-9)
    for ph in (phi1, phi2):
        if ph.shape != (d, d) or lambda_min(ph) < -1e-9:
            raise LinalgError("bounds must be PSD operators on H")
    phi = np.kron(phi1, np.eye(d)) + np.kron(np.eye(d), phi2)
    if xs.is_zero():
        return Verdict(VALID, "no lifted pairs", margin=-math.inf, evidence={"exact": True})

    rng = np.random.default_rng(seed)
    asc = _Ascent(e1, e2, xs.basis, phi)
    _, psi = asc.search(budget, rng)
    rho, o1, o2 = asc.outputs(psi)
    td = trace_distance(o1, o2)
    bound = float(np.real(np.trace(phi @ rho)))
    margin = td - bound
    direct_bad = margin > VIOLATION_TOL

    pre = ivp_guard(xs, ivp_new(np.eye(d * d) + phi))
    dout = e1.out_dim
    family = sample_contractions(dout, samples, rng) + [positive_projector(o1 - o2)]
    judgment_fail = None
    for idx, p in enumerate(family):
        v = check_split_valid(pre, e1, e2, p, np.eye(dout) - p)
        if v.invalid:
            judgment_fail = (idx, v)
            break

    ev = {
        "direct": "invalid" if direct_bad else "no violation",
        "judgment": "invalid" if judgment_fail is not None else "valid on sampled family",
        "family_size": len(family),
        "trace_distance": td,
        "bound": bound,
        "budget": budget,
        "seed": seed,
    }
    ev["agree"] = direct_bad == (judgment_fail is not None)
    if direct_bad:
        ev.update(rho1=partial_trace(rho, 1, (d, d)), rho2=partial_trace(rho, 2, (d, d)))
        return Verdict(INVALID, "trace distance of outputs exceeds the bound", margin=margin, counterexample=rho, evidence=ev)
    if judgment_fail is not None:
        idx, v = judgment_fail
        # the encoded judgment fails, so the property fails at its witness
        rho = v.counterexample
        ev.update(
            rho1=partial_trace(rho, 1, (d, d)),
            rho2=partial_trace(rho, 2, (d, d)),
            failing_instance=idx,
            direct_margin=margin,
        )
        return Verdict(INVALID, "encoded judgment fails on a sampled P", margin=v.margin, counterexample=rho, evidence=ev)
    b = xs.basis
    if maxnorm(e1.transfer - e2.transfer) <= REPLACEMENT_TOL and Subspace(p_sym(d)).contains(xs):
        ev["exact"] = True
        return Verdict(VALID, "equal programs on equal inputs", margin=margin, evidence=ev)
    if lambda_min(hermitize(b.conj().T @ phi @ b)) >= 1.0:
        ev["exact"] = True
        return Verdict(VALID, "bound is at least one on every lifted pair", margin=margin, evidence=ev)
    ev["best_input"] = rho
    return Verdict(UNKNOWN, "no violation at budget", margin=margin, evidence=ev, sampled=True)


# ---------------------------------------------------------------------------
# diamond norm


@dataclass
class DiamondResult:
    """Diamond distance from the Choi SDP with the optimal input marginal."""

    value: float
    gap: float
    iterations: int
    input_state: np.ndarray


def diamond_sdp(e1: Superoperator, e2: Superoperator, opts: SolverOptions | None = None) -> DiamondResult:
    """``||E1 - E2||_diamond`` by the standard SDP for completely bounded trace norms.

    With ``J`` the Choi matrix of the difference map the SDP maximizes
    ``Re tr(J X)`` over ``[[rho0 (x) I, X], [X^dagger, rho1 (x) I]] >= 0`` and
    density operators ``rho0, rho1`` on the input space.

    Raises
    ------
    SdpError
        If the solver does not reach an optimal status.
    """
    if (e1.in_dim, e1.out_dim) != (e2.in_dim, e2.out_dim):
        raise LinalgError("channels must have the same dimensions")
    din, dout = e1.in_dim, e1.out_dim
    n = din * dout
    j = hermitize(e1.choi() - e2.choi())
    c = np.zeros((2 * n, 2 * n), dtype=complex)
    c[:n, n:] = j
    c[n:, :n] = j
    prob = SdpProblem([2 * n, din, din], [-0.5 * c, np.zeros((din, din)), np.zeros((din, din))])
    for b in hermitian_basis(n):
        marg = -partial_trace(b, 1, (din, dout))
        for blk, sl in ((1, slice(0, n)), (2, slice(n, 2 * n))):
            big = np.zeros((2 * n, 2 * n), dtype=complex)
            big[sl, sl] = b
            prob.add_constraint({0: big, blk: marg}, 0.0)
    prob.add_constraint({1: np.eye(din)}, 1.0)
    prob.add_constraint({2: np.eye(din)}, 1.0)
    sol = (opts or SolverOptions()).solve(prob)
    if sol.status != OPTIMAL:
        raise SdpError(f"diamond-norm SDP did not converge: {sol.status} ({sol.message})")
    return DiamondResult(
        value=max(-sol.primal_value, 0.0),
        gap=sol.gap,
        iterations=sol.iterations,
        input_state=hermitize(sol.primal[1]),
    )


def diamond_distance(
    e1, e2, opts: SolverOptions | None = None, env: Environment | None = None, space: Sequence[str] | None = None
) -> float:
    """Diamond distance between two programs or superoperators (SDP value)."""
    a, b = channels(e1, e2, env, space, space)
    return diamond_sdp(a, b, opts).value


@dataclass
class DiamondEncoding:
    """Result of the judgment-encoding route for the diamond distance.

    ``c`` is the smallest constant for which every judgment of the checked
    family holds, so ``2c`` lower-bounds the diamond distance and matches it
    when the family contains an optimal ``P``. ``accepted`` and
    ``rejected_below`` record the exact split checks at ``c + slack`` and
    ``c - slack`` for the optimal instance.
    """

    c: float
    input_state: np.ndarray
    projector: np.ndarray
    accepted: bool
    rejected_below: bool
    family_size: int


def _extend(e: Superoperator) -> Superoperator:
    return e.tensor(Superoperator.identity(e.in_dim))


def _max_entangled(d: int) -> np.ndarray:
    return np.eye(d).reshape(-1) / math.sqrt(d)


def diamond_encoding(
    e1,
    e2,
    budget: int = 16,
    seed: int = 0,
    samples: int = 16,
    slack: float = 1e-3,
    env: Environment | None = None,
    space: Sequence[str] | None = None,
) -> DiamondEncoding:
    """Diamond distance through ``{P_sym | (1+c) I} S1 ~ S2 {P (x) I + I (x) (I - P)}``.

    Programs are extended by an ancilla of the same dimension. The ascent
    runs over pure states in the symmetric subspace of two copies of the
    extended space, starting from copies of maximally correlated inputs; the
    positive-part projector at its best input joins a sampled contraction
    family. For each ``P`` the smallest accepted ``c`` is the top eigenvalue
    of the pulled-back postcondition on the symmetric subspace minus one.
    """
    a, b = channels(e1, e2, env, space, space)
    if a.in_dim != a.out_dim or (a.in_dim, a.out_dim) != (b.in_dim, b.out_dim):
        raise LinalgError("encoding needs programs on one common space")
    d = a.in_dim
    x1, x2 = _extend(a), _extend(b)
    big = d * d
    sym = Subspace(p_sym(big))
    basis = sym.basis
    rng = np.random.default_rng(seed)
    asc = _Ascent(x1, x2, basis, None)
    extra = []
    me = _max_entangled(d)
    extra.append(np.kron(me, me))
    for _ in range(max(budget // 4, 1)):
        g = rng.normal(size=big) + 1j * rng.normal(size=big)
        v = _unit(g)
        extra.append(np.kron(v, v))
    _, psi = asc.search(budget, rng, extra)
    rho, o1, o2 = asc.outputs(psi)
    p_best = positive_projector(o1 - o2)
    family = [p_best] + sample_contractions(big, samples, rng)
    eye = np.eye(big)

    def smallest_c(p):
        w = np.kron(apply_dual(x1, p), eye) + np.kron(eye, apply_dual(x2, eye - p))
        return lambda_max(hermitize(basis.conj().T @ w @ basis)) - 1.0

    cs = [smallest_c(p) for p in family]
    k = int(np.argmax(cs))
    c = max(cs[k], 0.0)
    p = family[k]

    def judged(cc):
        pre = ivp_guard(sym, ivp_new((1.0 + cc) * np.eye(big * big)))
        return check_split_valid(pre, x1, x2, p, eye - p)

    accepted = judged(c + slack).valid
    rejected = judged(c - slack).invalid if c - slack >= 0 else True
    return DiamondEncoding(
        c=c,
        input_state=partial_trace(rho, 1, (big, big)),
        projector=p,
        accepted=accepted,
        rejected_below=rejected,
        family_size=len(family),
    )


# ---------------------------------------------------------------------------
# program equivalence


@dataclass
class EquivResult:
    """Choi-matrix decision plus the secondary certification evidence."""

    equal: bool
    evidence: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        from .io import matrix_to_json

        ev = {}
        for k, v in sorted(self.evidence.items()):
            ev[k] = matrix_to_json(v) if isinstance(v, np.ndarray) else v
        return {"equal": self.equal, "evidence": ev}


def spanning_states(d: int) -> list[np.ndarray]:
    """``d^2`` pure states whose projectors span all operators on ``C^d``.

    Basis states first, then ``|i> + |j>`` and ``|i> + i|j>`` for ``i < j``.
    """
    out = [proj(np.eye(d)[i]) for i in range(d)]
    for i in range(d):
        for j in range(i + 1, d):
            e = np.eye(d)
            out.append(proj((e[i] + e[j]) / math.sqrt(2)))
            out.append(proj((e[i] + 1j * e[j]) / math.sqrt(2)))
    return out


def _random_density(d: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    r = g @ g.conj().T
    return hermitize(r / np.real(np.trace(r)))


def _t_stab_value(a, b, opts) -> float:
    if maxnorm(a - b) <= 1e-13:
        return 0.0
    return t_stab(a, b, opts).value


def program_equiv(
    s1,
    s2,
    samples: int = 4,
    duality_samples: int = 8,
    seed: int = 0,
    certify: bool = True,
    env: Environment | None = None,
    space: Sequence[str] | None = None,
    opts: SolverOptions | None = None,
) -> EquivResult:
    """Decide ``[[S1]] = [[S2]]``.

    The decision compares Choi matrices within ``CHOI_TOL``. With
    ``certify`` two independent checks are attached:

    * ``monotone``: ``T_s(E1(rho), E2(sigma)) <= T_s(rho, sigma) + 1e-6`` on
      the diagonal pairs ``(rho, rho)`` of a spanning set of pure states and
      on ``samples`` random pairs; a violation certifies inequivalence.
    * ``duality``: sampled members ``(Y1, Y2, n)`` of the equivalence
      family, checked exactly as the split judgment
      ``{nI + P_sym^perp} S1 ~ S2 {tr_2(Y1) (x) I + I (x) (nI - tr_2(Y2))}``.

    ``evidence["agree"]`` is false when the sampled monotonicity verdict
    disagrees with the Choi decision.
    """
    e1, e2 = channels(s1, s2, env, space, space)
    if (e1.in_dim, e1.out_dim) != (e2.in_dim, e2.out_dim):
        raise LinalgError("programs act on different spaces")
    d = e1.in_dim
    diff = maxnorm(e1.choi() - e2.choi())
    equal = diff <= CHOI_TOL
    ev: dict = {"choi_difference": diff, "choi_tol": CHOI_TOL}
    states = spanning_states(d)
    if not equal:
        gaps = [trace_norm(apply(e1, r) - apply(e2, r)) for r in states]
        k = int(np.argmax(gaps))
        ev["distinguishing_state"] = states[k]
        ev["output_trace_norm"] = gaps[k]
    if not certify:
        return EquivResult(equal, ev)
    if not (is_ast(e1) and is_ast(e2)) or e1.in_dim != e1.out_dim:
        ev["certification"] = "skipped: needs AST programs on one space"
        return EquivResult(equal, ev)
    opts = opts or SolverOptions()
    rng = np.random.default_rng(seed)

    pairs = [(r, r) for r in states] + [(_random_density(d, rng), _random_density(d, rng)) for _ in range(samples)]
    violation = None
    checked = 0
    for rho, sigma in pairs:
        checked += 1
        out = _t_stab_value(apply(e1, rho), apply(e2, sigma), opts)
        inp = _t_stab_value(rho, sigma, opts)
        if out > inp + MONOTONE_TOL:
            violation = (rho, sigma, out, inp)
            break
    ev["monotone_checked"] = checked
    ev["monotone_ok"] = violation is None
    if violation is not None:
        ev["monotone_rho"] = violation[0]
        ev["monotone_sigma"] = violation[1]
        ev["t_s_outputs"] = violation[2]
        ev["t_s_inputs"] = violation[3]
    ev["agree"] = (violation is None) == equal

    half = np.eye(2) / 2.0

    def outputs(r):
        rho = _random_density(d, r)
        return np.kron(apply(e1, rho), half), np.kron(apply(e2, rho), half)

    fam = sample_duality_y(0.5 * p_asym(2 * d), 2 * d, 2 * d, duality_samples, rng, outputs=outputs, opts=opts)
    failed = 0
    for y1, y2, _ in fam:
        n = max(int(math.ceil(2.0 * lambda_max(y2) - 1e-12)), 0)
        pre = ivp_new(n * np.eye(d * d) + p_asym(d))
        q1 = partial_trace(y1, 1, (d, 2))
        q2 = n * np.eye(d) - partial_trace(y2, 1, (d, 2))
        if not check_split_valid(pre, e1, e2, q1, q2).valid:
            failed += 1
    ev["duality_checked"] = len(fam)
    ev["duality_failed"] = failed
    return EquivResult(equal, ev)


# ---------------------------------------------------------------------------
# Wasserstein Lipschitz continuity


def _random_pure(d: int, rng: np.random.Generator) -> np.ndarray:
    return _unit(rng.normal(size=d) + 1j * rng.normal(size=d))


def wasserstein_lipschitz_check(
    s1,
    s2,
    lam: float,
    budget: int = 16,
    restarts: int = 8,
    seed: int = 0,
    env: Environment | None = None,
    space: Sequence[str] | None = None,
    opts: SolverOptions | None = None,
) -> Verdict:
    """Search for ``rho`` with ``W(E1(rho1), E2(rho2)) > lam * W(rho1, rho2)``.

    Equivalently ``T(outputs) > lam^2 T(marginals)`` with ``T`` the transport
    cost for ``P_sym^perp``. ``budget`` random pure joint states are tried,
    then the validity falsifier runs on ``{lam^2 P_sym^perp} S1 ~ S2
    {P_sym^perp}``; its margin lower-bounds the property's violation since
    ``T(rho1, rho2) <= tr(P_sym^perp rho)``.

    The postcondition is not split, so the verdict is ``invalid`` or
    ``unknown``, except for the exact case of two equal replacement
    channels, whose outputs coincide.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    e1, e2 = channels(s1, s2, env, space, space)
    if e1.in_dim != e2.in_dim or e1.out_dim != e2.out_dim:
        raise LinalgError("programs act on different spaces")
    d = e1.in_dim
    dout = e1.out_dim
    opts = opts or SolverOptions()
    w1, w2 = _replacement_output(e1), _replacement_output(e2)
    if w1 is not None and w2 is not None and maxnorm(w1 - w2) <= REPLACEMENT_TOL:
        return Verdict(VALID, "both programs output the same fixed state", margin=0.0, evidence={"exact": True, "lambda": lam})
    cost_in, cost_out = p_asym(d), p_asym(dout)
    rng = np.random.default_rng(seed)
    best = (-math.inf, None, math.nan, math.nan)
    for _ in range(budget):
        psi = _random_pure(d * d, rng)
        rho = np.outer(psi, psi.conj())
        r1 = partial_trace(rho, 1, (d, d))
        r2 = partial_trace(rho, 2, (d, d))
        try:
            t_out = transport_value(cost_out, apply(e1, r1), apply(e2, r2), "exact", opts).value
            t_in = transport_value(cost_in, r1, r2, "exact", opts).value
        except TransportError:
            continue
        m = t_out - lam * lam * t_in
        if m > best[0]:
            best = (m, rho, t_out, t_in)
    probe = falsify(lam * lam * cost_in, e1, e2, cost_out, restarts=restarts, seed=seed, opts=opts)
    if probe is not None and probe.value > best[0]:
        rho = np.outer(probe.psi, probe.psi.conj())
        best = (probe.value, rho, probe.transport, probe.pre / (lam * lam) if lam > 0 else math.nan)
    margin, rho, t_out, t_in = best
    ev = {"lambda": lam, "budget": budget, "restarts": restarts, "seed": seed, "output_transport": t_out, "input_transport": t_in}
    if margin > FALSIFY_MARGIN:
        return Verdict(INVALID, "falsified: output transport exceeds lambda^2 times input transport", margin=margin, counterexample=rho, evidence=ev)
    if rho is not None:
        ev["best_input"] = rho
    return Verdict(UNKNOWN, "no counterexample at budget", margin=margin, evidence=ev, sampled=True)


# ---------------------------------------------------------------------------
# non-interference


def _check_povm(elems: Sequence[np.ndarray], d: int) -> list[np.ndarray]:
    out = [check_hermitian(e, 1e-9) for e in elems]
    if not out or any(e.shape != (d, d) for e in out):
        raise LinalgError(f"POVM elements must be {d}x{d}")
    if any(lambda_min(e) < -POVM_TOL for e in out):
        raise LinalgError("POVM element is not PSD")
    if maxnorm(sum(out) - np.eye(d)) > POVM_TOL:
        raise LinalgError("POVM elements do not sum to the identity")
    return out


@dataclass
class QuantumSystemSpec:
    """Agents issuing commands on a shared quantum state that starts at ``|0><0|``.

    Parameters
    ----------
    dim : int
        Dimension of the state space.
    agents, commands : list of str
    do_map : mapping
        ``(agent, command) -> Program or Superoperator``. Missing pairs act
        as the identity.
    measure_map : mapping
        ``agent -> list of POVMs``, each POVM a list of effects.
    env : Environment, optional
        Needed when ``do_map`` holds programs; they are denoted over all of
        its variables.
    """

    dim: int
    agents: list
    commands: list
    do_map: Mapping
    measure_map: Mapping
    env: Environment | None = None

    def __post_init__(self):
        self.agents = [str(a) for a in self.agents]
        self.commands = [str(c) for c in self.commands]
        ops = {}
        for (a, c), prog in dict(self.do_map).items():
            if a not in self.agents or c not in self.commands:
                raise ValueError(f"do-map entry ({a}, {c}) names an unknown agent or command")
            e = channel(prog, self.env)
            if e.in_dim != self.dim or e.out_dim != self.dim:
                raise LinalgError(f"action ({a}, {c}) does not act on dimension {self.dim}")
            if not is_ast(e):
                raise ValueError(f"action ({a}, {c}) is not almost surely terminating")
            ops[(a, c)] = e
        self.do_map = ops
        meas = {}
        for a, povms in dict(self.measure_map).items():
            if a not in self.agents:
                raise ValueError(f"measurement for unknown agent {a!r}")
            meas[a] = [_check_povm(p, self.dim) for p in povms]
        self.measure_map = meas

    def action(self, a: str, c: str) -> Superoperator:
        e = self.do_map.get((a, c))
        return Superoperator.identity(self.dim) if e is None else e

    @classmethod
    def from_json(cls, obj, env: Environment) -> "QuantumSystemSpec":
        """Build from ``{"agents", "commands", "do": {"a:c": dsl}, "measure": {a: [[matrix, ...], ...]}}``."""
        from .io import FormatError, matrix_from_json

        try:
            do = {}
            for key, src in obj.get("do", {}).items():
                a, _, c = str(key).partition(":")
                if not c:
                    raise FormatError(f"do-map key {key!r} is not of the form agent:command")
                do[(a, c)] = parse(src, env)
            meas = {a: [[matrix_from_json(m) for m in povm] for povm in povms] for a, povms in obj.get("measure", {}).items()}
            return cls(int(np.prod([env.dim(v) for v in env.names])), obj["agents"], obj["commands"], do, meas, env)
        except KeyError as exc:
            raise FormatError(f"missing key {exc}") from None


@dataclass
class NIResult:
    """Outcome of :func:`non_interference_check`."""

    interference_free: bool
    witness: dict | None
    sequences: int
    max_distance: float

    def to_dict(self) -> dict:
        return {
            "interference_free": self.interference_free,
            "witness": self.witness,
            "sequences": self.sequences,
            "max_distance": self.max_distance,
            "tolerance": NI_TOL,
        }


def sequence_count(n_actions: int, max_len: int) -> int:
    """Number of action sequences of length ``0..max_len``."""
    return sum(n_actions**k for k in range(max_len + 1))


def tv_distance(p, q) -> float:
    """Total variation ``max_T |p(T) - q(T)| = 0.5 * sum |p - q|``."""
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def non_interference_check(spec: QuantumSystemSpec, g1, g2, d, max_len: int = 3) -> NIResult:
    """Exhaustive interference test over action sequences up to ``max_len``.

    For every sequence ``alpha`` the state after ``alpha`` and after
    ``purge(alpha)`` (dropping actions of agents in ``g1`` with commands in
    ``d``) are compared through every POVM of every agent in ``g2``; the
    distance is the exact total variation of the outcome distributions. The
    witness is a shortest sequence with distance above ``NI_TOL``.

    Raises
    ------
    ValueError
        If ``max_len`` exceeds 6 or the enumeration exceeds ``10**6``
        sequences.
    """
    if max_len < 0 or max_len > NI_MAX_LEN:
        raise ValueError(f"max_len must lie in [0, {NI_MAX_LEN}]")
    g1, g2, d = set(g1), set(g2), set(d)
    actions = list(itertools.product(spec.agents, spec.commands))
    total = sequence_count(len(actions), max_len)
    if total > NI_MAX_SEQUENCES:
        raise ValueError(f"{total} sequences exceed the enumeration bound {NI_MAX_SEQUENCES}")
    observers = [(a, k, povm) for a in spec.agents if a in g2 for k, povm in enumerate(spec.measure_map.get(a, []))]
    rho0 = np.zeros((spec.dim, spec.dim), dtype=complex)
    rho0[0, 0] = 1.0
    ops = {act: spec.action(*act) for act in actions}
    state = {"best": None, "count": 0, "max": 0.0}

    def compare(seq, r, rp):
        state["count"] += 1
        for a, k, povm in observers:
            p1 = np.array([np.real(np.trace(e @ r)) for e in povm])
            p2 = np.array([np.real(np.trace(e @ rp)) for e in povm])
            dist = tv_distance(p1, p2)
            state["max"] = max(state["max"], dist)
            if dist > NI_TOL:
                best = state["best"]
                if best is None or len(seq) < len(best["sequence"]):
                    state["best"] = {
                        "sequence": [list(x) for x in seq],
                        "purged": [list(x) for x in seq if not (x[0] in g1 and x[1] in d)],
                        "agent": a,
                        "povm": k,
                        "outcomes": [int(i) for i in np.flatnonzero(p1 > p2)],
                        "distance": dist,
                    }
                return

    def visit(seq, r, rp):
        compare(seq, r, rp)
        best = state["best"]
        limit = max_len if best is None else len(best["sequence"]) - 1
        if len(seq) >= limit:
            return
        for act in actions:
            e = ops[act]
            purged = act[0] in g1 and act[1] in d
            visit(seq + (act,), apply(e, r), rp if purged else apply(e, rp))

    visit((), rho0, rho0)
    return NIResult(state["best"] is None, state["best"], state["count"], state["max"])


# ---------------------------------------------------------------------------
# differential privacy


def dp_neighbor_projector(n: int, i: int) -> np.ndarray:
    """``P_{i,sym}`` on two copies of ``n`` qubits.

    The symmetric projector pairs the copies of every qubit except ``i``;
    qubit ``i`` is unconstrained in both copies. Factor order is
    ``q_1 .. q_n q_1' .. q_n'``.
    """
    if not 0 <= i < n:
        raise ValueError("qubit index out of range")
    rest = 2 ** (n - 1)
    a = np.kron(p_sym(rest), np.eye(4))
    # input order: rest of copy 1, rest of copy 2, qubit i of copy 1, of copy 2
    perm = []
    for copy in range(2):
        for j in range(n):
            if j == i:
                perm.append(2 * (n - 1) + copy)
            else:
                perm.append(copy * (n - 1) + (j if j < i else j - 1))
    return permute_systems(a, [2] * (2 * n), perm)


def dp_violation(e: Superoperator, rho, sigma, eps: float) -> float:
    """``sup_{M, S} Pr[E(rho) in S] - e^eps Pr[E(sigma) in S] = tr[(E(rho) - e^eps E(sigma))_+]``."""
    return positive_part_trace(apply(e, rho) - math.exp(eps) * apply(e, sigma))


def dp_check(
    s,
    eps: float,
    delta: float,
    budget: int = 32,
    seed: int = 0,
    env: Environment | None = None,
    space: Sequence[str] | None = None,
) -> Verdict:
    """Search for neighbouring inputs breaking ``(eps, delta)``-differential privacy.

    For each qubit ``i`` the ascent runs over pure states in the range of
    ``P_{i,sym}``; their two marginals agree after tracing out qubit ``i``.
    The inner supremum over measurements and outcome sets is exact. A
    violation ``tr[(E(rho) - e^eps E(sigma))_+] - delta > 1e-7`` gives an
    ``invalid`` verdict; otherwise the verdict is ``unknown`` with the worst
    margin, or ``valid`` when the program is a replacement channel.
    """
    if eps < 0 or delta < 0:
        raise ValueError("eps and delta must be nonnegative")
    e = channel(s, env, space)
    d = e.in_dim
    n = int(round(math.log2(d)))
    if 2**n != d or e.out_dim != d:
        raise LinalgError("program must act on qubits")
    if n > 3:
        raise LinalgError("differential-privacy search supports at most 3 qubits")
    if _replacement_output(e) is not None:
        return Verdict(VALID, "program outputs a fixed state", margin=-delta, evidence={"exact": True, "eps": eps, "delta": delta})
    rng = np.random.default_rng(seed)
    k = math.exp(eps)
    worst = (-math.inf, None, None)
    for i in range(n):
        x = Subspace(dp_neighbor_projector(n, i))
        asc = _Ascent(e, e, x.basis, None, k)
        val, psi = asc.search(budget, rng)
        if val - delta > worst[0]:
            worst = (val - delta, i, psi)
    margin, i, psi = worst
    rho = np.outer(psi, psi.conj())
    r1 = partial_trace(rho, 1, (d, d))
    r2 = partial_trace(rho, 2, (d, d))
    ev = {"eps": eps, "delta": delta, "qubit": i, "sigma": r2, "budget": budget, "seed": seed}
    if margin > VIOLATION_TOL:
        return Verdict(INVALID, "neighbouring inputs violate the privacy bound", margin=margin, counterexample=r1, evidence=ev)
    ev["rho"] = r1
    return Verdict(UNKNOWN, "no violation at budget", margin=margin, evidence=ev, sampled=True)

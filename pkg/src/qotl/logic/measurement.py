"""Measurement conditions, their entailment, and measurement properties.

A measurement is a list of Kraus operators. Two states satisfy the condition
``M ~ N`` when every outcome has the same probability under both. A
measurement property ``{P} M ~ N {Q_k}`` asks that, whenever the transport
value ``T_P(rho, sigma)`` is finite, the post-measurement branches admit
couplings ``delta_k`` with ``T_P(rho, sigma) >= sum_k tr(Q_k delta_k)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..linalg import (
    LinalgError,
    as_matrix,
    check_hermitian,
    hermitize,
    lambda_max,
    lambda_min,
    maxnorm,
    partial_trace,
)
from ..predicates import IVPredicate, ivp_guard, ivp_new
from ..qwhile import Superoperator, is_ast
from ..qwhile.semantics import apply, apply_dual
from ..sdp import OPTIMAL, SdpError, SdpProblem, SolverOptions
from ..transport import TransportError, transport_value
from .validity import (
    INVALID,
    UNKNOWN,
    VALID,
    Verdict,
    as_ivp,
    channel,
    channels,
    check_split_valid,
    check_valid_general,
)

PROB_TOL = 1e-9
PROPERTY_TOL = 1e-7
DEFAULT_PAIRS = 24


def _kraus(m) -> list[np.ndarray]:
    ks = [as_matrix(k) for k in m]
    if not ks:
        raise LinalgError("a measurement needs at least one outcome")
    return ks


def _same_outcomes(m, n) -> None:
    if len(m) != len(n):
        raise LinalgError(f"measurements have {len(m)} and {len(n)} outcomes")


def outcome_probabilities(m, rho) -> np.ndarray:
    """``[tr(M_i rho M_i^dagger)]_i``."""
    rho = as_matrix(rho)
    return np.array([float(np.real(np.trace(k @ rho @ k.conj().T))) for k in _kraus(m)])


def measurement_condition(m, n, rho, sigma, tol: float = PROB_TOL) -> bool:
    """True iff ``(rho, sigma)`` satisfies ``M ~ N``.

    Raises
    ------
    LinalgError
        If the outcome counts differ.
    """
    m, n = _kraus(m), _kraus(n)
    _same_outcomes(m, n)
    diff = outcome_probabilities(m, rho) - outcome_probabilities(n, sigma)
    return bool(np.all(np.abs(diff) <= tol))


def satisfies(context: Sequence[tuple], rho, sigma, tol: float = PROB_TOL) -> bool:
    """``(rho, sigma)`` satisfies every condition ``(M, N)`` of a context."""
    return all(measurement_condition(m, n, rho, sigma, tol) for m, n in context)


# ---------------------------------------------------------------------------
# entailment


@dataclass
class EntailmentReport:
    holds: bool
    exact: bool
    witness: tuple | None = None
    checked: int = 0
    note: str = ""


def _effects(m) -> list[np.ndarray]:
    return [hermitize(k.conj().T @ k) for k in _kraus(m)]


def entailment_check(
    s1,
    s2,
    context: Sequence[tuple],
    target: Sequence[tuple],
    env=None,
    vars1=None,
    vars2=None,
    samples: int = DEFAULT_PAIRS,
    seed: int = 0,
    tol: float = PROB_TOL,
) -> EntailmentReport:
    """``Gamma |=^(S1, S2) Gamma'``.

    With an empty context the check is exact: every pair of inputs must give
    equal outcome probabilities, which holds iff ``E1^dagger(M_i^dagger M_i)``
    and ``E2^dagger(N_i^dagger N_i)`` are the same multiple of the identity.
    Otherwise input pairs satisfying the context are sampled (see
    :func:`sample_pairs`) and the verdict is a sampling report.
    """
    e1, e2 = channels(s1, s2, env, vars1, vars2)
    if not context:
        for idx, (m, n) in enumerate(target):
            m, n = _kraus(m), _kraus(n)
            _same_outcomes(m, n)
            for i, (a, b) in enumerate(zip(_effects(m), _effects(n))):
                pa = apply_dual(e1, a)
                pb = apply_dual(e2, b)
                ca = float(np.real(np.trace(pa))) / e1.in_dim
                cb = float(np.real(np.trace(pb))) / e2.in_dim
                off_a = maxnorm(pa - ca * np.eye(e1.in_dim))
                off_b = maxnorm(pb - cb * np.eye(e2.in_dim))
                if max(off_a, off_b, abs(ca - cb)) > tol:
                    rho, sigma = _entailment_witness(pa, pb)
                    return EntailmentReport(
                        False, True, (rho, sigma), note=f"condition {idx}, outcome {i} separates the inputs"
                    )
        return EntailmentReport(True, True, note="exact: effects pull back to equal multiples of I")
    rng = np.random.default_rng(seed)
    pairs = sample_pairs(context, e1.in_dim, e2.in_dim, samples, rng)
    for rho, sigma in pairs:
        o1, o2 = apply(e1, rho), apply(e2, sigma)
        if not satisfies(target, o1, o2, tol=max(tol, 1e-8)):
            return EntailmentReport(False, False, (rho, sigma), len(pairs), "sampled pair violates the target")
    note = "sampled" if pairs else "no sampled pair satisfied the context"
    return EntailmentReport(True, False, None, len(pairs), note)


def _entailment_witness(pa: np.ndarray, pb: np.ndarray):
    # extreme eigenvectors of the pulled-back effects give unequal probabilities
    wa, va = np.linalg.eigh(pa)
    wb, vb = np.linalg.eigh(pb)
    cands = [
        (float(wa[-1] - wb[0]), va[:, -1], vb[:, 0]),
        (float(wb[-1] - wa[0]), va[:, 0], vb[:, -1]),
    ]
    _, a, b = max(cands, key=lambda c: c[0])
    return np.outer(a, a.conj()), np.outer(b, b.conj())


def _random_state(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return hermitize(rho / np.real(np.trace(rho)))


def _match_state(context, rho, d2: int, rng, opts: SolverOptions) -> np.ndarray | None:
    """A state ``sigma`` with ``(rho, sigma)`` satisfying the context, or ``None``.

    Solves a feasibility SDP with a random objective so that repeated calls
    reach different extreme points.
    """
    g = rng.normal(size=(d2, d2)) + 1j * rng.normal(size=(d2, d2))
    prob = SdpProblem([d2], [hermitize(g + g.conj().T)])
    prob.add_constraint({0: np.eye(d2)}, 1.0)
    for m, n in context:
        m, n = _kraus(m), _kraus(n)
        _same_outcomes(m, n)
        if n[0].shape[1] != d2:
            raise LinalgError("context measurement does not act on the second space")
        probs = outcome_probabilities(m, rho)
        for eff, p in zip(_effects(n)[:-1], probs[:-1]):
            prob.add_constraint({0: eff}, float(p))
    try:
        sol = opts.solve(prob)
    except SdpError:
        # presolve rejects inconsistent probability constraints
        return None
    if sol.status != OPTIMAL:
        return None
    sigma = hermitize(sol.primal[0])
    w, v = np.linalg.eigh(sigma)
    sigma = hermitize((v * np.clip(w, 0.0, None)) @ v.conj().T)
    sigma = sigma / np.real(np.trace(sigma))
    return sigma


def sample_pairs(
    context: Sequence[tuple],
    d1: int,
    d2: int,
    count: int,
    rng: np.random.Generator,
    pre: IVPredicate | None = None,
    opts: SolverOptions | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Trace-one input pairs satisfying a context.

    Half of the candidates are the marginals of random pure joint states in
    the finite region of ``pre`` (so that ``T_P`` is finite); the rest are
    independent random states of random rank. For a nonempty context the
    second state is replaced by one matching the first state's outcome
    probabilities. Candidates that still violate the context are dropped.
    """
    opts = opts or SolverOptions()
    keep = None if pre is None else pre.infinite.complement().basis
    out = []
    for k in range(count):
        if keep is not None and keep.shape[1] and k % 2 == 0:
            c = rng.normal(size=keep.shape[1]) + 1j * rng.normal(size=keep.shape[1])
            psi = keep @ c
            psi /= np.linalg.norm(psi)
            joint = np.outer(psi, psi.conj())
            rho = hermitize(partial_trace(joint, 1, (d1, d2)))
            sigma = hermitize(partial_trace(joint, 2, (d1, d2)))
        else:
            rho = _random_state(d1, rng, int(rng.integers(1, d1 + 1)))
            sigma = _random_state(d2, rng, int(rng.integers(1, d2 + 1)))
        if context and not satisfies(context, rho, sigma):
            sigma = _match_state(context, rho, d2, rng, opts)
            if sigma is None:
                continue
        if satisfies(context, rho, sigma, tol=1e-7):
            out.append((rho, sigma))
    return out


# ---------------------------------------------------------------------------
# measurement properties


@dataclass
class PropertyReport:
    """Evaluation of a measurement property on one input pair."""

    holds: bool
    transport: float
    branch_total: float
    branch_values: list = field(default_factory=list)
    diagnostic: str = ""


def measurement_property_value(
    p,
    m,
    n,
    q: Sequence,
    rho,
    sigma,
    tol: float = PROPERTY_TOL,
    opts: SolverOptions | None = None,
) -> PropertyReport:
    """Evaluate ``T_P(rho, sigma) >= min sum_k tr(Q_k delta_k)`` on one pair.

    The couplings ``delta_k`` of different outcomes are independent, so the
    joint minimum is the sum of per-outcome exact transport values
    ``T_{Q_k}(M_k rho M_k^dagger, N_k sigma N_k^dagger)``.
    """
    m, n = _kraus(m), _kraus(n)
    _same_outcomes(m, n)
    if len(q) != len(m):
        raise LinalgError(f"{len(q)} branch predicates for {len(m)} outcomes")
    rho = check_hermitian(rho, 1e-9)
    sigma = check_hermitian(sigma, 1e-9)
    opts = opts or SolverOptions()
    t_p = transport_value(p, rho, sigma, mode="exact", opts=opts).value
    if math.isinf(t_p):
        return PropertyReport(True, t_p, math.nan, [], "T_P is infinite: vacuous")
    values = []
    for i, (a, b, qi) in enumerate(zip(m, n, q)):
        r = hermitize(a @ rho @ a.conj().T)
        s = hermitize(b @ sigma @ b.conj().T)
        pr, ps = float(np.real(np.trace(r))), float(np.real(np.trace(s)))
        if abs(pr - ps) > PROB_TOL:
            return PropertyReport(
                False, t_p, math.nan, values,
                f"outcome {i} has probabilities {pr:.3e} and {ps:.3e}: no coupling exists",
            )
        if pr <= PROB_TOL:
            values.append(0.0)
            continue
        # rescale the second branch so that traces match to rounding
        s = s * (pr / ps)
        values.append(transport_value(qi, r, s, mode="exact", opts=opts).value)
    total = float(sum(values))
    holds = t_p >= total - tol
    diag = "" if holds else f"T_P = {t_p:.6g} < branch total {total:.6g}"
    return PropertyReport(holds, t_p, total, values, diag)


def measurement_property_check(p, m, n, q: Sequence, rho, sigma, tol: float = PROPERTY_TOL, opts=None) -> bool:
    """``True`` iff the measurement property holds on the pair ``(rho, sigma)``."""
    return measurement_property_value(p, m, n, q, rho, sigma, tol, opts).holds


@dataclass
class SampledPropertyReport:
    holds: bool
    checked: int
    witness: tuple | None = None
    diagnostic: str = ""


def measurement_property_sampled(
    p,
    m,
    n,
    q: Sequence,
    context: Sequence[tuple] = (),
    samples: int = DEFAULT_PAIRS,
    seed: int = 0,
    tol: float = PROPERTY_TOL,
    opts: SolverOptions | None = None,
) -> SampledPropertyReport:
    """``Gamma |= {P} M ~ N {Q_k}`` checked on sampled input pairs."""
    p = as_ivp(p)
    m, n = _kraus(m), _kraus(n)
    d1, d2 = m[0].shape[1], n[0].shape[1]
    if p.dim != d1 * d2:
        raise LinalgError("precondition does not live on the measured spaces")
    rng = np.random.default_rng(seed)
    pairs = sample_pairs(context, d1, d2, samples, rng, pre=p, opts=opts)
    for rho, sigma in pairs:
        rep = measurement_property_value(p, m, n, q, rho, sigma, tol, opts)
        if not rep.holds:
            return SampledPropertyReport(False, len(pairs), (rho, sigma), rep.diagnostic)
    return SampledPropertyReport(True, len(pairs))


# ---------------------------------------------------------------------------
# entailment through the logic


def sample_measurement_yk(k: int, d1: int, d2: int, rng: np.random.Generator):
    """One element ``(Y_1..Y_k, Z_1..Z_k, n)`` of the family ``Y_k``.

    ``Y_i = a_i R_i`` with ``lambda_max(R_i) = 1`` and ``a_i`` in ``[0, 1]``,
    ``Z_i = a_i I + S_i`` with ``S_i >= 0``. Then ``Y_i (x) I <= I (x) Z_i``
    and ``Y_i (x) I - I (x) Z_j <= (a_i - a_j) I <= I``.
    """
    ys, zs = [], []
    for _ in range(k):
        a = float(rng.uniform(0.0, 1.0))
        g = rng.normal(size=(d1, d1)) + 1j * rng.normal(size=(d1, d1))
        r = g @ g.conj().T
        ys.append(hermitize(a * r / lambda_max(r)))
        h = rng.normal(size=(d2, d2)) + 1j * rng.normal(size=(d2, d2))
        s = h @ h.conj().T
        s = float(rng.uniform(0.0, 2.0)) * s / lambda_max(s)
        zs.append(hermitize(a * np.eye(d2) + s))
    n = int(math.ceil(max(lambda_max(z) for z in zs) - 1e-12))
    return ys, zs, max(n, 0)


def in_measurement_yk(ys, zs, n: int, tol: float = 1e-9) -> bool:
    """Membership test for ``Y_k``."""
    d2 = zs[0].shape[0]
    d1 = ys[0].shape[0]
    for i, (y, z) in enumerate(zip(ys, zs)):
        if lambda_min(y) < -tol or lambda_min(z) < -tol or lambda_max(z) > n + tol:
            return False
        if lambda_max(np.kron(y, np.eye(d2)) - np.kron(np.eye(d1), z)) > tol:
            return False
        for j, z2 in enumerate(zs):
            if j != i and lambda_max(np.kron(y, np.eye(d2)) - np.kron(np.eye(d1), z2)) > 1.0 + tol:
                return False
    return True


def entailment_via_logic(
    s1,
    s2,
    m,
    n,
    env=None,
    vars1=None,
    vars2=None,
    instances: Sequence | None = None,
    samples: int = 64,
    seed: int = 0,
) -> Verdict:
    """``{} |=^(S1, S2) M ~ N`` through judgments over the family ``Y_k``.

    Each instance ``(Y, Z, n)`` gives the split judgment
    ``{nI} S1 ~ S2 {(sum M_i^dagger Y_i M_i) (x) I + I (x) (nI - sum N_i^dagger Z_i N_i)}``
    decided exactly by :func:`check_split_valid`. The family is sampled, so a
    positive answer is reported as sampled.
    """
    e1, e2 = channels(s1, s2, env, vars1, vars2)
    m, n_ = _kraus(m), _kraus(n)
    _same_outcomes(m, n_)
    if not (is_ast(e1) and is_ast(e2)):
        return Verdict(UNKNOWN, "characterization needs AST programs")
    d1, d2 = e1.out_dim, e2.out_dim
    if instances is None:
        rng = np.random.default_rng(seed)
        instances = [sample_measurement_yk(len(m), m[0].shape[0], n_[0].shape[0], rng) for _ in range(samples)]
    for idx, (ys, zs, nn) in enumerate(instances):
        if not in_measurement_yk(ys, zs, nn):
            raise LinalgError(f"instance {idx} is not in the family")
        q1 = hermitize(sum(a.conj().T @ y @ a for a, y in zip(m, ys)))
        q2 = hermitize(nn * np.eye(d2) - sum(b.conj().T @ z @ b for b, z in zip(n_, zs)))
        pre = ivp_new(nn * np.eye(e1.in_dim * e2.in_dim))
        v = check_split_valid(pre, e1, e2, q1, q2)
        if v.invalid:
            v.reason = f"instance {idx} of the family fails: " + v.reason
            v.evidence["instance"] = idx
            return v
    return Verdict(VALID, f"all {len(instances)} sampled instances hold", evidence={"instances": len(instances)}, sampled=True)


# ---------------------------------------------------------------------------
# embeddings of other relational logics


def rqpd_margin(p, s1, s2, q, rho, env=None, vars1=None, vars2=None, opts=None) -> float:
    """``tr(P rho) - max_sigma tr(Q sigma)`` over couplings of the outputs.

    Positive values violate rqPD validity at ``rho``. The maximum is
    ``c t - T_{cI - Q}`` with ``c = lambda_max(Q)`` and ``t`` the output trace.
    """
    e1, e2 = channels(s1, s2, env, vars1, vars2)
    q = check_hermitian(q, 1e-9)
    rho = check_hermitian(rho, 1e-9)
    d1, d2 = e1.in_dim, e2.in_dim
    o1 = hermitize(apply(e1, partial_trace(rho, 1, (d1, d2))))
    o2 = hermitize(apply(e2, partial_trace(rho, 2, (d1, d2))))
    t1, t2 = float(np.real(np.trace(o1))), float(np.real(np.trace(o2)))
    if abs(t1 - t2) > 1e-9:
        # rqPD asks for exact couplings; none exists
        return math.inf
    c = max(lambda_max(q), 0.0)
    t = transport_value(hermitize(c * np.eye(q.shape[0]) - q), o1, o2, mode="exact", opts=opts).value
    best = c * t1 - t
    return float(np.real(np.trace(check_hermitian(p, 1e-9) @ rho))) - best


def rqpd_check(p, s1, s2, q, env=None, vars1=None, vars2=None, samples: int = 32, seed: int = 0, opts=None) -> Verdict:
    """Sampled rqPD validity of ``{P} S1 ~ S2 {Q}`` for ``0 <= P, Q <= I``."""
    e1, e2 = channels(s1, s2, env, vars1, vars2)
    d = e1.in_dim * e2.in_dim
    rng = np.random.default_rng(seed)
    worst, arg = -math.inf, None
    for k in range(samples):
        rho = _random_state(d, rng, 1 if k % 2 == 0 else int(rng.integers(1, d + 1)))
        mg = rqpd_margin(p, e1, e2, q, rho, opts=opts)
        if mg > worst:
            worst, arg = mg, rho
    if worst > 1e-6:
        return Verdict(INVALID, "sampled input violates rqPD validity", margin=worst, counterexample=arg)
    return Verdict(UNKNOWN, "no rqPD violation among sampled inputs", margin=worst, sampled=True)


def rqpd_embedded(p, s1, s2, q, env=None, vars1=None, vars2=None, **kw) -> Verdict:
    """The embedded judgment ``{I - P} S1 ~ S2 {I - Q}``."""
    p = check_hermitian(p, 1e-9)
    q = check_hermitian(q, 1e-9)
    ip = np.eye(p.shape[0]) - p
    iq = np.eye(q.shape[0]) - q
    return check_valid_general(ip, s1, s2, iq, env=env, vars1=vars1, vars2=vars2, **kw)


def pqrhl_coupling_exists(rho1, rho2, y, tol: float = 1e-7, opts=None) -> bool:
    """Whether some coupling of ``(rho1, rho2)`` has support inside ``y``."""
    from ..linalg import Subspace

    y = y if isinstance(y, Subspace) else Subspace(as_matrix(y))
    cost = np.eye(y.dim) - y.projector
    try:
        t = transport_value(cost, rho1, rho2, mode="exact", opts=opts).value
    except TransportError:
        return False
    return t <= tol


def pqrhl_check(x, s1, s2, y, env=None, vars1=None, vars2=None, samples: int = 32, seed: int = 0, opts=None) -> Verdict:
    """Sampled pqRHL validity: inputs supported in ``x`` must admit an output coupling in ``y``."""
    from ..linalg import Subspace

    x = x if isinstance(x, Subspace) else Subspace(as_matrix(x))
    e1, e2 = channels(s1, s2, env, vars1, vars2)
    d1, d2 = e1.in_dim, e2.in_dim
    b = x.basis
    if b.shape[1] == 0:
        return Verdict(VALID, "precondition subspace is zero", evidence={"exact": True})
    rng = np.random.default_rng(seed)
    for k in range(samples):
        r = 1 if k % 2 == 0 else int(rng.integers(1, b.shape[1] + 1))
        inner = _random_state(b.shape[1], rng, r)
        rho = hermitize(b @ inner @ b.conj().T)
        o1 = hermitize(apply(e1, partial_trace(rho, 1, (d1, d2))))
        o2 = hermitize(apply(e2, partial_trace(rho, 2, (d1, d2))))
        if not pqrhl_coupling_exists(o1, o2, y, opts=opts):
            return Verdict(INVALID, "no output coupling inside Y", counterexample=rho)
    return Verdict(UNKNOWN, "every sampled input admits a coupling inside Y", sampled=True)


def pqrhl_embedded(x, s1, s2, y, env=None, vars1=None, vars2=None, **kw) -> Verdict:
    """The embedded judgment ``{X | 0} S1 ~ S2 {Y^perp}``."""
    from ..linalg import Subspace

    x = x if isinstance(x, Subspace) else Subspace(as_matrix(x))
    y = y if isinstance(y, Subspace) else Subspace(as_matrix(y))
    pre = ivp_guard(x, ivp_new(np.zeros((x.dim, x.dim), dtype=complex)))
    post = y.complement().projector
    return check_valid_general(pre, s1, s2, post, env=env, vars1=vars1, vars2=vars2, **kw)

"""Acceptance suite: one test per criterion, each printing a pass/fail line."""

import math
import time

import numpy as np

from qotl.applications import (
    QuantumSystemSpec,
    diamond_distance,
    dp_check,
    non_interference_check,
    program_equiv,
    trace_distance,
    trace_distance_variational,
)
from qotl.linalg import ket, p_asym, partial_trace, proj
from qotl.logic import check_derivation, check_split_valid, falsify, random_derivation, wp_two_sided
from qotl.predicates import (
    INF,
    ext_add,
    ext_mul,
    ivp_add,
    ivp_conj,
    ivp_equal,
    ivp_leq,
    ivp_new,
    ivp_scale,
    ivp_tensor,
    ivp_trace,
    ivp_zero,
    leq_violation,
)
from qotl.qwhile import (
    IfMeas,
    Init,
    Seq,
    Skip,
    Superoperator,
    Unitary,
    WhileMeas,
    apply,
    apply_dual,
    apply_product,
    denote,
    dual_apply_ivp,
    dual_product_ivp,
    is_ast,
    loop_fixpoint,
    parse,
)
from qotl.sdp import OPTIMAL, solve
from qotl.transport import (
    lifting_check,
    partial_strassen_check,
    star_embed,
    star_lift,
    star_restrict,
    star_state,
    t_stab,
    transport_value,
)

from randomgen import (
    ginibre,
    qubit_env,
    rand_channel,
    rand_density,
    rand_ivp,
    rand_partial_coupling,
    rand_program,
    rand_psd,
    rand_sdp,
    rand_vector,
    vector_in,
)

KET0, KET1 = proj(ket(0, 2)), proj(ket(1, 2))


def min_eig(a):
    return float(np.linalg.eigvalsh((a + a.conj().T) / 2)[0])


def rtr(a):
    return float(np.real(np.trace(a)))


def rand_cost(d1, d2, rng):
    if d1 == d2 and rng.random() < 0.3:
        return p_asym(d1)
    c = rand_psd(d1 * d2, rng, rank=int(rng.integers(1, d1 * d2 + 1)))
    return c / np.linalg.eigvalsh(c)[-1]


# ---------------------------------------------------------------------------
# 1


def test_strassen_soundness(criterion):
    rng = np.random.default_rng(101)
    failures = []
    outcomes = {"witness": 0, "certificate": 0, "neither": 0}
    start = time.perf_counter()
    for k in range(100):
        d1, d2 = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        t = float(rng.uniform(0.3, 1.0))
        rho1, rho2 = rand_density(d1, rng, trace=t), rand_density(d2, rng, trace=t)
        cost = rand_cost(d1, d2, rng)
        eps = float(rng.uniform(0.0, 0.5)) * t
        r = lifting_check(rho1, cost, eps, rho2)
        w, cert = r.witness, r.certificate
        if w is not None and cert is not None:
            failures.append(f"instance {k}: witness and certificate both returned")
            continue
        if w is not None:
            outcomes["witness"] += 1
            if min_eig(w) < -1e-7:
                failures.append(f"instance {k}: witness not PSD")
            err = max(
                np.max(np.abs(partial_trace(w, 1, (d1, d2)) - rho1)),
                np.max(np.abs(partial_trace(w, 2, (d1, d2)) - rho2)),
            )
            if err > 1e-7:
                failures.append(f"instance {k}: witness marginals off by {err:.2e}")
            if rtr(cost @ w) > eps + 1e-7:
                failures.append(f"instance {k}: witness cost {rtr(cost @ w):.3e} > eps {eps:.3e}")
        elif cert is not None:
            outcomes["certificate"] += 1
            lhs = np.kron(cert.y1, np.eye(d2)) - np.kron(np.eye(d1), cert.y2)
            if min(min_eig(cert.y1), min_eig(cert.y2)) < -1e-7 or min_eig(cost - lhs) < -1e-7:
                failures.append(f"instance {k}: certificate infeasible")
            gap = rtr(cert.y1 @ rho1) - rtr(cert.y2 @ rho2) - eps
            if gap <= 1e-7:
                failures.append(f"instance {k}: certificate violation {gap:.2e} <= 1e-7")
        else:
            outcomes["neither"] += 1
    elapsed = time.perf_counter() - start
    if elapsed > 60:
        failures.append(f"runtime {elapsed:.1f} s > 60 s")
    detail = f"{outcomes['witness']} witnesses, {outcomes['certificate']} certificates, {elapsed:.1f} s"
    assert criterion(1, "Strassen soundness", failures, detail), failures[:5]


# ---------------------------------------------------------------------------
# 2


def test_partial_strassen_soundness(criterion):
    rng = np.random.default_rng(202)
    failures = []
    outcomes = {"witness": 0, "certificate": 0}
    for k in range(100):
        d1, d2 = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        t1, t2 = float(rng.uniform(0.05, 1.0)), float(rng.uniform(0.05, 1.0))
        rho1, rho2 = rand_density(d1, rng, trace=t1), rand_density(d2, rng, trace=t2)
        cost = rand_cost(d1, d2, rng)
        eps = float(rng.uniform(0.0, 0.5)) * max(t1 + t2 - 1.0, 0.1)
        r = partial_strassen_check(rho1, rho2, cost, eps)
        w, cert = r.witness, r.certificate
        if w is not None and cert is not None:
            failures.append(f"instance {k}: witness and certificate both returned")
            continue
        if w is not None:
            outcomes["witness"] += 1
            m1, m2 = partial_trace(w, 1, (d1, d2)), partial_trace(w, 2, (d1, d2))
            if min(min_eig(w), min_eig(rho1 - m1), min_eig(rho2 - m2)) < -1e-7:
                failures.append(f"instance {k}: witness marginals not dominated")
            if t1 + t2 > 1.0 + rtr(w) + 1e-7:
                failures.append(f"instance {k}: witness trace inequality fails")
            if rtr(cost @ w) > eps + 1e-7:
                failures.append(f"instance {k}: witness cost exceeds eps")
        elif cert is not None:
            outcomes["certificate"] += 1
            lhs = np.kron(cert.y1, np.eye(d2)) - np.kron(np.eye(d1), cert.y2)
            feasible = (
                cert.s1 <= cert.s2 + 1e-7
                and min(min_eig(cert.y1), min_eig(cert.y2)) >= -1e-7
                and min_eig(cert.s2 * np.eye(d1) - cert.y1) >= -1e-7
                and min_eig(cert.y2 - cert.s1 * np.eye(d2)) >= -1e-7
                and min_eig(cost - lhs) >= -1e-7
            )
            if not feasible:
                failures.append(f"instance {k}: certificate infeasible")
            left = cert.s1 * (1 - t1) + rtr(cert.y1 @ rho1)
            right = cert.s2 * (1 - t2) + rtr(cert.y2 @ rho2) + eps
            if left - right <= 1e-7:
                failures.append(f"instance {k}: certificate violation {left - right:.2e} <= 1e-7")
    for k in range(50):
        d1, d2 = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        rho, r1, r2 = rand_partial_coupling(d1, d2, rng)
        up = star_lift(rho, r1, r2)
        if np.max(np.abs(star_restrict(up, d1, d2) - rho)) > 1e-9:
            failures.append(f"star instance {k}: restriction does not recover rho")
        a = rand_psd(d1 * d2, rng)
        if abs(rtr(star_embed(a, d1, d2) @ up) - rtr(a @ rho)) > 1e-8:
            failures.append(f"star instance {k}: embedded cost changes the value")
        dims = (d1 + 1, d2 + 1)
        if max(
            np.max(np.abs(partial_trace(up, 1, dims) - star_state(r1))),
            np.max(np.abs(partial_trace(up, 2, dims) - star_state(r2))),
        ) > 1e-9:
            failures.append(f"star instance {k}: lifted marginals differ from the star states")
    detail = f"{outcomes['witness']} witnesses, {outcomes['certificate']} certificates, 50 star lifts"
    assert criterion(2, "partial-coupling Strassen", failures, detail), failures[:5]


# ---------------------------------------------------------------------------
# 3


def test_transport_identities(criterion):
    rng = np.random.default_rng(303)
    failures = []
    for k in range(20):
        d = int(rng.integers(2, 4))
        rho = rand_density(d, rng)
        v = transport_value(p_asym(d), rho, rho, "exact").value
        if abs(v) > 1e-8:
            failures.append(f"T(rho, rho) = {v:.2e} (instance {k})")
    v = transport_value(p_asym(2), KET0, KET1, "exact").value
    if abs(v - 0.5) > 1e-7:
        failures.append(f"T(|0>, |1>) = {v}")
    for k in range(50):
        d1, d2 = 2, int(rng.integers(2, 4))
        cost = rand_cost(d1, d2, rng)
        n = int(rng.integers(2, 4))
        lam = rng.dirichlet(np.ones(n))
        rs = [rand_density(d1, rng) for _ in range(n)]
        ss = [rand_density(d2, rng) for _ in range(n)]
        lhs = transport_value(cost, sum(l * r for l, r in zip(lam, rs)), sum(l * s for l, s in zip(lam, ss)), "exact").value
        rhs = sum(l * transport_value(cost, r, s, "exact").value for l, r, s in zip(lam, rs, ss))
        if lhs > rhs + 1e-7:
            failures.append(f"joint convexity fails by {lhs - rhs:.2e} (instance {k})")
    for k in range(50):
        d = int(rng.integers(2, 4))
        rho, sigma, gamma = rand_density(d, rng), rand_density(d, rng), rand_density(2, rng)
        ts = t_stab(rho, sigma).value
        t = transport_value(p_asym(2 * d), np.kron(rho, gamma), np.kron(sigma, gamma), "exact").value
        if ts > t + 1e-6:
            failures.append(f"T_s exceeds T with qubit extension by {ts - t:.2e} (instance {k})")
    assert criterion(3, "transport identities", failures, "20 + 1 + 50 + 50 instances"), failures[:5]


# ---------------------------------------------------------------------------
# 4


def test_semantics(criterion):
    rng = np.random.default_rng(404)
    env = qubit_env(("q", "r"))
    failures = []
    e0 = Superoperator.from_kraus([KET0])
    e1 = Superoperator.from_kraus([KET1])
    xgate = Superoperator.unitary(np.array([[0, 1], [1, 0]]))
    w, steps = loop_fixpoint(e0, e1, xgate)
    reset = denote(Init("q"), qubit_env(("q",)))
    if steps > 3:
        failures.append(f"loop fixpoint took {steps} steps")
    if np.max(np.abs(w.transfer - reset.transfer)) > 1e-9:
        failures.append("loop fixpoint differs from the reset channel")
    loop = denote(WhileMeas(("q",), "comp", Unitary(("q",), "X")), qubit_env(("q",)))
    if np.max(np.abs(loop.transfer - reset.transfer)) > 1e-9:
        failures.append("denoted loop differs from the reset channel")
    if is_ast(denote(WhileMeas(("q",), "comp", Skip()), qubit_env(("q",)))):
        failures.append("skip-body loop classified as AST")
    for k in range(50):
        prog = rand_program(rng, ("q", "r"), int(rng.integers(1, 6)), allow_abort=True)
        e = denote(prog, env, ("q", "r"))
        if min_eig(e.choi()) < -1e-9:
            failures.append(f"program {k}: Choi matrix not PSD")
        if min_eig(np.eye(4) - apply_dual(e, np.eye(4))) < -1e-9:
            failures.append(f"program {k}: trace increasing")
    worst = 0.0
    for _ in range(50):
        a = rand_program(rng, ("q", "r"), 3, allow_abort=True)
        b = rand_program(rng, ("q", "r"), 3, allow_abort=True)
        space = ("q", "r")
        lhs = denote(Seq(a, b), env, space)
        rhs = denote(b, env, space).compose(denote(a, env, space))
        worst = max(worst, float(np.max(np.abs(lhs.transfer - rhs.transfer))))
    if worst > 1e-9:
        failures.append(f"composition homomorphism off by {worst:.2e}")
    detail = f"fixpoint in {steps} steps, 50 programs, homomorphism error {worst:.1e}"
    assert criterion(4, "semantics", failures, detail), failures[:5]


# ---------------------------------------------------------------------------
# 5


def test_wp_validity(criterion):
    rng = np.random.default_rng(505)
    env = qubit_env(("q", "s", "r"))
    failures = []
    for k in range(100):
        vars1 = ["q", "s"] if rng.random() < 0.3 else ["q"]
        vars2 = ["r"]
        s1 = rand_program(rng, vars1, 3, allow_abort=False)
        s2 = rand_program(rng, vars2, 3, allow_abort=False)
        e1, e2 = denote(s1, env, vars1), denote(s2, env, vars2)
        d1, d2 = e1.in_dim, e2.in_dim
        q1, q2 = rand_psd(d1, rng), rand_psd(d2, rng)
        q = np.kron(q1, np.eye(d2)) + np.kron(np.eye(d1), q2)
        rho = rand_density(d1 * d2, rng)
        wp = wp_two_sided(e1, e2, q)
        lhs = ivp_trace(wp, rho)
        rhs = rtr(q @ apply_product(e1, e2, rho))
        if abs(lhs - rhs) > 1e-8:
            failures.append(f"instance {k}: trace duality off by {abs(lhs - rhs):.2e}")
        if not check_split_valid(wp, e1, e2, q1, q2).valid:
            failures.append(f"instance {k}: wp not valid")
        vals, vecs = np.linalg.eigh(wp.finite)
        lowered = wp.finite - 1e-3 * np.outer(vecs[:, -1], vecs[:, -1].conj())
        if not check_split_valid(ivp_new(lowered, None, 1e-9), e1, e2, q1, q2).invalid:
            failures.append(f"instance {k}: lowered wp not invalid")
    assert criterion(5, "wp and split validity", failures, "100 instances"), failures[:5]


# ---------------------------------------------------------------------------
# 6


def test_derivation_soundness(criterion):
    rng = np.random.default_rng(606)
    failures = []
    worst = -math.inf
    setups = [(qubit_env(("q", "r")), ["q"], ["r"])] * 20 + [(qubit_env(("q", "s", "r", "t")), ["q", "s"], ["r", "t"])] * 5
    start = time.perf_counter()
    for k, (env, v1, v2) in enumerate(setups):
        d = random_derivation(env, rng, int(rng.integers(2, 5)), v1, v2)
        rep = check_derivation(d, env, v1, v2)
        if not rep.ok:
            failures.append(f"derivation {k} rejected: {rep.failures[0].message}")
            continue
        e1, e2 = denote(d.prog1, env, v1), denote(d.prog2, env, v2)
        probe = falsify(d.pre, e1, e2, d.post.finite, restarts=32, seed=k)
        margin = -math.inf if probe is None else probe.value
        worst = max(worst, margin)
        if margin > 1e-6:
            failures.append(f"derivation {k}: falsifier margin {margin:.2e}")
    elapsed = time.perf_counter() - start
    detail = f"25 derivations, worst margin {worst:.1e}, {elapsed:.1f} s"
    assert criterion(6, "derivation soundness", failures, detail), failures[:5]


# ---------------------------------------------------------------------------
# 7


def choi_oracle(e):
    """Choi matrix assembled from the channel's action on matrix units."""
    d = e.in_dim
    out = np.zeros((d * e.out_dim, d * e.out_dim), dtype=complex)
    for i in range(d):
        for j in range(d):
            unit = np.zeros((d, d))
            unit[i, j] = 1.0
            out += np.kron(unit, apply(e, unit))
    return out


def equal_pairs(rng):
    env = qubit_env(("q",))
    pairs = []
    for gate in ("X", "Y", "Z", "H"):
        u = Unitary(("q",), gate)
        pairs.append((Seq(u, u), Skip()))
    for gate in ("X", "H", "Y"):
        p = rand_program(rng, ("q",), 3, allow_abort=False)
        u = Unitary(("q",), gate)
        pairs.append((Seq(p, Seq(u, u)), p))
    pairs.append((Seq(Init("q"), Unitary(("q",), "Z")), Init("q")))
    pairs.append((IfMeas(("q",), "m01", (Skip(), Unitary(("q",), "X"))), Init("q")))
    pairs.append((Seq(Unitary(("q",), "H"), Seq(Unitary(("q",), "Z"), Unitary(("q",), "H"))), Unitary(("q",), "X")))
    return env, pairs


def ni_system(do):
    env = qubit_env(("a", "b"))
    z0 = [np.kron(KET0, np.eye(2)), np.kron(KET1, np.eye(2))]
    z1 = [np.kron(np.eye(2), KET0), np.kron(np.eye(2), KET1)]
    return QuantumSystemSpec(4, ["hi", "lo"], ["flip"], {k: parse(v, env) for k, v in do.items()}, {"hi": [z0], "lo": [z1]}, env)


def test_application_oracles(criterion):
    rng = np.random.default_rng(707)
    failures = []
    env, pairs = equal_pairs(rng)
    pairs += [(rand_program(rng, ("q",), 3, False), rand_program(rng, ("q",), 3, False)) for _ in range(40)]
    n_equal = 0
    for k, (a, b) in enumerate(pairs):
        ea, eb = denote(a, env, ("q",)), denote(b, env, ("q",))
        want = bool(np.max(np.abs(choi_oracle(ea) - choi_oracle(eb))) <= 1e-8)
        n_equal += want
        got = program_equiv(ea, eb, seed=k).equal
        if got != want:
            failures.append(f"pair {k}: program_equiv says {got}, Choi oracle says {want}")
    if n_equal < 10:
        failures.append(f"only {n_equal} equal pairs")
    dd = diamond_distance(Superoperator.identity(2), denote(Unitary(("q",), "X"), env, ("q",)))
    if abs(dd - 2.0) > 1e-6:
        failures.append(f"diamond(id, X) = {dd}")
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(2, 5))
        rho, sigma = rand_density(d, rng), rand_density(d, rng)
        worst = max(worst, abs(trace_distance(rho, sigma) - trace_distance_variational(rho, sigma)[0]))
    if worst > 1e-9:
        failures.append(f"trace distance forms differ by {worst:.2e}")
    if not dp_check(Superoperator.identity(2), 0.0, 0.0).invalid:
        failures.append("dp_check does not flag the identity")
    if not dp_check(denote(Init("q"), env, ("q",)), 0.0, 0.0).valid:
        failures.append("dp_check does not pass the constant channel")
    free = ni_system({("hi", "flip"): "[a] *= U(X)", ("lo", "flip"): "[b] *= U(X)"})
    if not non_interference_check(free, ["hi"], ["lo"], ["flip"], 3).interference_free:
        failures.append("disjoint-qubit system flagged")
    leak = ni_system({("hi", "flip"): "[b] *= U(X)"})
    if non_interference_check(leak, ["hi"], ["lo"], ["flip"], 3).interference_free:
        failures.append("direct-disturbance system passed")
    detail = f"{len(pairs)} equivalence pairs ({n_equal} equal), diamond {dd:.7f}, TD error {worst:.1e}"
    assert criterion(7, "application oracles", failures, detail), failures[:5]


# ---------------------------------------------------------------------------
# 8


def pointwise(a, psi):
    leak = np.linalg.norm(a.infinite.projector @ psi) ** 2
    if leak > 1e-9 * np.linalg.norm(psi) ** 2:
        return INF
    return float(np.real(np.vdot(psi, a.finite @ psi)))


def ext_close(x, y, tol=1e-9):
    if math.isinf(x) or math.isinf(y):
        return x == y
    return abs(x - y) <= tol * (1.0 + abs(x))


def rand_scalar(rng, allow_inf=True):
    r = rng.random()
    if r < 0.15:
        return 0.0
    if r < 0.25:
        return 1.0
    if allow_inf and r < 0.35:
        return INF
    return float(rng.uniform(0.1, 3.0))


def rand_op(d, rng):
    k = int(rng.integers(1, d + 1))
    return ginibre(d, rng, k) @ ginibre(k, rng, d) / d


def rand_state(d, rng, avoid=None):
    """Random PSD operator, half of the time inside the complement of ``avoid``."""
    if avoid is not None and rng.random() < 0.5:
        v = vector_in(avoid.complement(), rng)
        if np.linalg.norm(v) > 0:
            return np.outer(v, v.conj())
    return rand_psd(d, rng)


class IvpIdentities:
    """Each method draws one random instance and returns an error string or None."""

    def __init__(self, rng):
        self.rng = rng

    def ivp(self, d):
        return rand_ivp(d, self.rng)

    def eq(self, a, b, what):
        return None if ivp_equal(a, b, 1e-9) else what

    def scalar_zero_one(self):
        a = self.ivp(3)
        return self.eq(ivp_scale(0.0, a), ivp_zero(3), "0A") or self.eq(ivp_scale(1.0, a), a, "1A")

    def scalar_assoc(self):
        a, x, y = self.ivp(3), rand_scalar(self.rng), rand_scalar(self.rng)
        return self.eq(ivp_scale(x, ivp_scale(y, a)), ivp_scale(ext_mul(x, y), a), f"a(bA) with a={x}, b={y}")

    def add_zero(self):
        a = self.ivp(3)
        return self.eq(ivp_add(ivp_zero(3), a), a, "0+A") or self.eq(ivp_add(a, ivp_zero(3)), a, "A+0")

    def add_comm(self):
        a, b = self.ivp(3), self.ivp(3)
        return self.eq(ivp_add(a, b), ivp_add(b, a), "A1+A2")

    def add_assoc(self):
        a, b, c = self.ivp(3), self.ivp(3), self.ivp(3)
        return self.eq(ivp_add(a, ivp_add(b, c)), ivp_add(ivp_add(a, b), c), "+ associativity")

    def tensor_zero(self):
        a = self.ivp(3)
        return self.eq(ivp_tensor(ivp_zero(2), a), ivp_zero(6), "0(x)A") or self.eq(ivp_tensor(a, ivp_zero(2)), ivp_zero(6), "A(x)0")

    def tensor_assoc(self):
        a, b, c = self.ivp(2), self.ivp(2), self.ivp(2)
        return self.eq(ivp_tensor(a, ivp_tensor(b, c)), ivp_tensor(ivp_tensor(a, b), c), "(x) associativity")

    def tensor_distrib(self):
        a, a1, a2 = self.ivp(2), self.ivp(3), self.ivp(3)
        c = rand_scalar(self.rng)
        left = self.eq(
            ivp_tensor(a, ivp_add(ivp_scale(c, a1), a2)),
            ivp_add(ivp_scale(c, ivp_tensor(a, a1)), ivp_tensor(a, a2)),
            f"A(x)(cA1+A2) with c={c}",
        )
        return left or self.eq(
            ivp_tensor(ivp_add(ivp_scale(c, a1), a2), a),
            ivp_add(ivp_scale(c, ivp_tensor(a1, a)), ivp_tensor(a2, a)),
            f"(cA1+A2)(x)A with c={c}",
        )

    def conj_zero(self):
        return self.eq(ivp_conj(np.zeros((3, 3)), self.ivp(3)), ivp_zero(3), "0^dagger A 0")

    def conj_compose(self):
        a, m1, m2 = self.ivp(3), rand_op(3, self.rng), rand_op(3, self.rng)
        return self.eq(ivp_conj(m2, ivp_conj(m1, a)), ivp_conj(m1 @ m2, a), "M2^dagger(M1^dagger A M1)M2")

    def conj_linear(self):
        a1, a2, m = self.ivp(3), self.ivp(3), rand_op(3, self.rng)
        c = rand_scalar(self.rng)
        return self.eq(
            ivp_conj(m, ivp_add(ivp_scale(c, a1), a2)),
            ivp_add(ivp_scale(c, ivp_conj(m, a1)), ivp_conj(m, a2)),
            f"M^dagger(cA1+A2)M with c={c}",
        )

    def conj_tensor(self):
        a1, a2 = self.ivp(2), self.ivp(3)
        m1, m2 = rand_op(2, self.rng), rand_op(3, self.rng)
        return self.eq(
            ivp_conj(np.kron(m1, m2), ivp_tensor(a1, a2)),
            ivp_tensor(ivp_conj(m1, a1), ivp_conj(m2, a2)),
            "(M1(x)M2)^dagger(A1(x)A2)(M1(x)M2)",
        )

    def trace_linear_state(self):
        a = self.ivp(3)
        p1, p2 = rand_state(3, self.rng, a.infinite), rand_state(3, self.rng, a.infinite)
        c = rand_scalar(self.rng, allow_inf=False)
        lhs = ivp_trace(a, c * p1 + p2)
        rhs = ext_add(ext_mul(c, ivp_trace(a, p1)), ivp_trace(a, p2))
        return None if ext_close(lhs, rhs) else f"tr(A(cP1+P2)): {lhs} vs {rhs}"

    def trace_linear_pred(self):
        a1, a2 = self.ivp(3), self.ivp(3)
        p = rand_state(3, self.rng, a1.infinite.join(a2.infinite))
        c = rand_scalar(self.rng)
        lhs = ivp_trace(ivp_add(ivp_scale(c, a1), a2), p)
        rhs = ext_add(ext_mul(c, ivp_trace(a1, p)), ivp_trace(a2, p))
        return None if ext_close(lhs, rhs) else f"tr((cA1+A2)P) with c={c}: {lhs} vs {rhs}"

    def trace_tensor(self):
        a1, a2 = self.ivp(2), self.ivp(3)
        p1, p2 = rand_state(2, self.rng, a1.infinite), rand_state(3, self.rng, a2.infinite)
        lhs = ivp_trace(ivp_tensor(a1, a2), np.kron(p1, p2))
        rhs = ext_mul(ivp_trace(a1, p1), ivp_trace(a2, p2))
        return None if ext_close(lhs, rhs) else f"tr((A1(x)A2)(P1(x)P2)): {lhs} vs {rhs}"

    def trace_conj(self):
        a, m = self.ivp(3), rand_op(3, self.rng)
        p = rand_state(3, self.rng, ivp_conj(m, a).infinite)
        lhs = ivp_trace(ivp_conj(m, a), p)
        rhs = ivp_trace(a, m @ p @ m.conj().T)
        return None if ext_close(lhs, rhs) else f"tr((M^dagger A M)P): {lhs} vs {rhs}"

    def trace_partial(self):
        a = self.ivp(2)
        p = rand_psd(6, self.rng)
        if self.rng.random() < 0.5:
            keep = np.kron(a.infinite.complement().projector, np.eye(3))
            p = keep @ p @ keep
        lhs = ivp_trace(ivp_tensor(a, ivp_new(np.eye(3))), p)
        rhs = ivp_trace(a, partial_trace(p, 1, (2, 3)))
        q = np.kron(np.eye(3), a.infinite.complement().projector)
        p2 = q @ rand_psd(6, self.rng) @ q if self.rng.random() < 0.5 else rand_psd(6, self.rng)
        lhs2 = ivp_trace(ivp_tensor(ivp_new(np.eye(3)), a), p2)
        rhs2 = ivp_trace(a, partial_trace(p2, 2, (3, 2)))
        if not ext_close(lhs, rhs):
            return f"tr((A(x)I)P): {lhs} vs {rhs}"
        return None if ext_close(lhs2, rhs2) else f"tr((I(x)A)P): {lhs2} vs {rhs2}"

    def trace_pure(self):
        a = self.ivp(3)
        phi = vector_in(a.infinite.complement(), self.rng) if self.rng.random() < 0.5 else rand_vector(3, self.rng)
        if np.linalg.norm(phi) == 0:
            phi = rand_vector(3, self.rng)
        lhs = ivp_trace(a, np.outer(phi, phi.conj()))
        return None if ext_close(lhs, pointwise(a, phi)) else f"tr(A|phi><phi|): {lhs} vs {pointwise(a, phi)}"

    def equality_by_traces(self):
        a1 = self.ivp(3)
        if self.rng.random() < 0.5:
            a2 = ivp_add(ivp_scale(0.5, a1), ivp_scale(0.5, a1))
        else:
            a2 = self.ivp(3)
        if ivp_equal(a1, a2, 1e-9):
            for _ in range(4):
                p = rand_state(3, self.rng, a1.infinite)
                if not ext_close(ivp_trace(a1, p), ivp_trace(a2, p)):
                    return "equal predicates with different traces"
            return None
        v = leq_violation(a1, a2, 1e-9)
        if v is None:
            v = leq_violation(a2, a1, 1e-9)
        p = np.outer(v, v.conj())
        return None if ivp_trace(a1, p) != ivp_trace(a2, p) else "unequal predicates with equal traces at the witness"

    def order_by_traces(self):
        a1 = self.ivp(3)
        a2 = ivp_add(a1, self.ivp(3)) if self.rng.random() < 0.5 else self.ivp(3)
        if ivp_leq(a1, a2, 1e-9):
            for _ in range(4):
                p = rand_state(3, self.rng, a2.infinite)
                x, y = ivp_trace(a1, p), ivp_trace(a2, p)
                if not (x <= y or ext_close(x, y)):
                    return "ordered predicates with reversed traces"
            return None
        v = leq_violation(a1, a2, 1e-9)
        p = np.outer(v, v.conj())
        return None if ivp_trace(a1, p) > ivp_trace(a2, p) else "violation vector does not reverse the traces"

    def monotone(self):
        a1 = self.ivp(3)
        a2 = ivp_add(a1, self.ivp(3))
        a3 = self.ivp(3)
        a4 = ivp_add(a3, self.ivp(3))
        m = rand_op(3, self.rng)
        c = rand_scalar(self.rng)
        if not ivp_leq(ivp_conj(m, a1), ivp_conj(m, a2), 1e-9):
            return "conjugation not monotone"
        lhs = ivp_add(ivp_scale(c, a1), a3)
        rhs = ivp_add(ivp_scale(c, a2), a4)
        return None if ivp_leq(lhs, rhs, 1e-9) else f"cA1+A3 not below cA2+A4 with c={c}"

    def cp_trace_duality(self):
        e = rand_channel(3, self.rng, nkraus=2) if self.rng.random() < 0.5 else _subchannel(3, self.rng)
        a = self.ivp(3)
        p = rand_state(3, self.rng, dual_apply_ivp(e, a).infinite)
        lhs = ivp_trace(a, apply(e, p))
        rhs = ivp_trace(dual_apply_ivp(e, a), p)
        return None if ext_close(lhs, rhs) else f"tr(A E(P)) = {lhs} vs tr(E^dagger(A)P) = {rhs}"

    def cp_monotone(self):
        e = rand_channel(3, self.rng)
        a1 = self.ivp(3)
        a2 = ivp_add(a1, self.ivp(3))
        return None if ivp_leq(dual_apply_ivp(e, a1), dual_apply_ivp(e, a2), 1e-9) else "E^dagger not monotone"

    def cp_linear(self):
        e1, e2 = rand_channel(3, self.rng), _subchannel(3, self.rng)
        a1, a2 = self.ivp(3), self.ivp(3)
        c = rand_scalar(self.rng, allow_inf=False)
        mixed = Superoperator(3, 3, c * e1.transfer + e2.transfer)
        err = self.eq(
            dual_apply_ivp(mixed, a1),
            ivp_add(ivp_scale(c, dual_apply_ivp(e1, a1)), dual_apply_ivp(e2, a1)),
            f"(cE1+E2)(A) with c={c}",
        )
        return err or self.eq(
            dual_apply_ivp(e1, ivp_add(ivp_scale(c, a1), a2)),
            ivp_add(ivp_scale(c, dual_apply_ivp(e1, a1)), dual_apply_ivp(e1, a2)),
            f"E(cA1+A2) with c={c}",
        )

    def cp_compose(self):
        e1, e2 = rand_channel(3, self.rng), rand_channel(3, self.rng)
        a = self.ivp(3)
        # (E2 o E1)^dagger = E1^dagger o E2^dagger
        return self.eq(dual_apply_ivp(e2.compose(e1), a), dual_apply_ivp(e1, dual_apply_ivp(e2, a)), "composition")

    def cp_tensor(self):
        e1, e2 = rand_channel(2, self.rng), rand_channel(3, self.rng)
        a1, a2 = self.ivp(2), self.ivp(3)
        return self.eq(
            dual_product_ivp(e1, e2, ivp_tensor(a1, a2)),
            ivp_tensor(dual_apply_ivp(e1, a1), dual_apply_ivp(e2, a2)),
            "(E1(x)E2)(A1(x)A2)",
        )


def _subchannel(d, rng):
    """Trace-nonincreasing CP map: a channel followed by a random contraction."""
    e = rand_channel(d, rng)
    k = rand_op(d, rng)
    k = k / np.linalg.norm(k, 2)
    return Superoperator.from_kraus([k]).compose(e)


IDENTITIES = [name for name in vars(IvpIdentities) if not name.startswith("_") and name not in ("ivp", "eq")]


def test_ivp_algebra(criterion):
    rng = np.random.default_rng(808)
    checker = IvpIdentities(rng)
    failures = []
    for name in IDENTITIES:
        for k in range(200):
            err = getattr(checker, name)()
            if err is not None:
                failures.append(f"{name} instance {k}: {err}")
                break
    detail = f"{len(IDENTITIES)} identities x 200 instances"
    assert criterion(8, "IVP algebra", failures, detail), failures[:5]


# ---------------------------------------------------------------------------
# 9


def test_sdp_health(criterion):
    rng = np.random.default_rng(909)
    failures = []
    worst_gap, worst_iter = 0.0, 0
    start = time.perf_counter()
    for k in range(200):
        p = rand_sdp(rng, maxd=32)
        sol = solve(p)
        if sol.status != OPTIMAL:
            failures.append(f"problem {k}: status {sol.status}")
            continue
        primal = sum(rtr(c @ x) for c, x in zip(p.objective, sol.primal))
        dual = float(sum(y * rhs for y, (_, rhs) in zip(sol.dual, p.constraints)))
        gap = abs(primal - dual) / (1.0 + abs(primal))
        worst_gap = max(worst_gap, gap)
        worst_iter = max(worst_iter, sol.iterations)
        if gap > 1e-7:
            failures.append(f"problem {k}: gap {gap:.2e}")
        if sol.iterations > 100:
            failures.append(f"problem {k}: {sol.iterations} iterations")
        if dual > primal + 1e-9:
            failures.append(f"problem {k}: weak duality violated by {dual - primal:.2e}")
    elapsed = time.perf_counter() - start
    detail = f"worst gap {worst_gap:.1e}, worst iterations {worst_iter}, {elapsed:.1f} s"
    assert criterion(9, "SDP solver health", failures, detail), failures[:5]

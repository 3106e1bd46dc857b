"""Judgments, parameter families and derivation checking.

A derivation is a tree of rule applications with fully instantiated
predicates. Each node's conclusion is recomputed from its premises and
compared in the Loewner order. One-sided rules act on the left (``-L``) or
right (``-R``) program with the other program ``skip``; the two-sided rules
``if``, ``while`` and ``seq+`` additionally discharge measurement side
conditions on sampled input pairs.

Rule names: ``skip``, ``seq``, ``assign-L``, ``assign-R``, ``apply-L``,
``apply-R``, ``if-L``, ``if-R``, ``while-L``, ``while-R``, ``csq``,
``duality``, ``if``, ``while``, ``seq+``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from ..io import FormatError, ivp_from_json, ivp_to_json, matrix_from_json, matrix_to_json
from ..linalg import (
    PSD_TOL,
    LinalgError,
    check_hermitian,
    hermitize,
    lambda_max,
    lambda_min,
    partial_trace,
)
from ..predicates import IVPredicate, ivp_add, ivp_conj, ivp_new, leq_violation
from ..qwhile import (
    Environment,
    IfMeas,
    Init,
    Program,
    Seq,
    Skip,
    Superoperator,
    Unitary,
    WhileMeas,
    denote,
    is_ast,
    parse,
    seq,
)
from ..qwhile.semantics import Layout, apply_dual, dual_product_ivp
from ..sdp import SolverOptions
from ..transport import TransportError, transport_value
from .measurement import (
    entailment_check,
    in_measurement_yk,
    measurement_property_sampled,
    sample_measurement_yk,
)
from .validity import (
    INVALID,
    UNKNOWN,
    VALID,
    Verdict,
    as_ivp,
    check_split_valid,
    check_valid_general,
    duality_instance_valid,
    split_decompose,
)

EQ_TOL = 1e-8
DUALITY_SAMPLES = 64
SIDE_SAMPLES = 24

ALL_CONTRACTIONS = "AllContractions"
DUALITY_Y = "DualityY"
MEASUREMENT_YK = "MeasurementYk"
FAMILIES = (ALL_CONTRACTIONS, DUALITY_Y, MEASUREMENT_YK)

RULES = (
    "skip",
    "seq",
    "assign-L",
    "assign-R",
    "apply-L",
    "apply-R",
    "if-L",
    "if-R",
    "while-L",
    "while-R",
    "csq",
    "duality",
    "if",
    "while",
    "seq+",
)


# ---------------------------------------------------------------------------
# parameter families


def sample_contractions(d: int, count: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Operators ``0 <= P <= I``: alternately random projectors and random spectra."""
    out = []
    for k in range(count):
        g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        u, _ = np.linalg.qr(g)
        if k % 2 == 0:
            w = (rng.random(d) < 0.5).astype(float)
        else:
            w = rng.random(d)
        out.append(hermitize((u * w) @ u.conj().T))
    return out


def sample_duality_y(
    q,
    d1: int,
    d2: int,
    count: int,
    rng: np.random.Generator,
    outputs: Callable[[np.random.Generator], tuple] | None = None,
    opts: SolverOptions | None = None,
) -> list[tuple[np.ndarray, np.ndarray, int]]:
    """Elements ``(Y1, Y2, n)`` of the duality family for a finite ``Q``.

    Random PSD ``Y1, Y2`` are pushed into the family by shifting ``Y2`` by
    ``lambda_max(Y1 (x) I - I (x) Y2 - Q)`` and ``n = ceil(lambda_max(Y2))``.
    When ``outputs`` is given (a sampler of output-state pairs), every other
    instance is instead built from the transport dual ``(Y, Z)`` at those
    outputs: ``Y1 = Y + aI``, ``Y2 = aI - Z`` with ``a`` the smallest shift
    making both PSD. These instances are tight at the sampled outputs.
    """
    q = check_hermitian(q, 1e-9)
    out = []
    for k in range(count):
        pair = None
        if outputs is not None and k % 2 == 1:
            o1, o2 = outputs(rng)
            try:
                res = transport_value(q, o1, o2, mode="exact", opts=opts)
            except TransportError:
                res = None
            if res is not None and res.dual_parts:
                red = res.dual_parts["reduced"]
                y = hermitize(red.v1 @ res.dual_parts["Y"] @ red.v1.conj().T)
                z = hermitize(red.v2 @ res.dual_parts["Z"] @ red.v2.conj().T)
                a = max(-lambda_min(y), lambda_max(z), 0.0)
                pair = (hermitize(y + a * np.eye(d1)), hermitize(a * np.eye(d2) - z))
        if pair is None:
            g1 = rng.normal(size=(d1, d1)) + 1j * rng.normal(size=(d1, d1))
            g2 = rng.normal(size=(d2, d2)) + 1j * rng.normal(size=(d2, d2))
            y1 = hermitize(g1 @ g1.conj().T) / d1
            y2 = hermitize(g2 @ g2.conj().T) / d2
            pair = (y1, y2)
        y1, y2 = pair
        excess = lambda_max(np.kron(y1, np.eye(d2)) - np.kron(np.eye(d1), y2) - q)
        if excess > 0:
            y2 = hermitize(y2 + excess * np.eye(d2))
        n = max(int(math.ceil(lambda_max(y2) - 1e-12)), 0)
        out.append((y1, y2, n))
    return out


def in_duality_y(q, y1, y2, n: int, tol: float = 1e-8) -> bool:
    """Membership in ``{0 <= Y1, 0 <= Y2 <= nI, Q >= Y1 (x) I - I (x) Y2}``."""
    d1, d2 = y1.shape[0], y2.shape[0]
    if n < 0 or lambda_min(y1) < -tol or lambda_min(y2) < -tol or lambda_max(y2) > n + tol:
        return False
    gap = q - np.kron(y1, np.eye(d2)) + np.kron(np.eye(d1), y2)
    return lambda_min(gap) >= -tol * (1.0 + lambda_max(np.abs(gap)))


@dataclass
class ParameterFamily:
    """Explicit instance list or a seeded sampler of a named family."""

    kind: str
    family: str | None = None
    instances: list = field(default_factory=list)
    count: int = DUALITY_SAMPLES
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("explicit", "sampled"):
            raise ValueError("kind must be 'explicit' or 'sampled'")
        if self.kind == "explicit" and not self.instances:
            raise ValueError("explicit families need at least one instance")
        if self.kind == "sampled":
            if self.family not in FAMILIES:
                raise ValueError(f"unknown family {self.family!r}")
            if self.count < 1:
                raise ValueError("sample count must be positive")

    @classmethod
    def explicit(cls, instances, family: str | None = None) -> "ParameterFamily":
        return cls("explicit", family, list(instances))

    @classmethod
    def sampled(cls, family: str, count: int = DUALITY_SAMPLES, seed: int = 0) -> "ParameterFamily":
        return cls("sampled", family, [], count, seed)

    @property
    def is_sampled(self) -> bool:
        return self.kind == "sampled"

    def draw(self, **ctx) -> list:
        """Concrete instances; samplers read their dimensions from ``ctx``."""
        if self.kind == "explicit":
            return list(self.instances)
        rng = np.random.default_rng(self.seed)
        if self.family == ALL_CONTRACTIONS:
            return sample_contractions(ctx["d"], self.count, rng)
        if self.family == DUALITY_Y:
            return sample_duality_y(ctx["q"], ctx["d1"], ctx["d2"], self.count, rng, ctx.get("outputs"), ctx.get("opts"))
        return [sample_measurement_yk(ctx["k"], ctx["d1"], ctx["d2"], rng) for _ in range(self.count)]

    def to_json(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind, "family": self.family}
        if self.kind == "sampled":
            out.update(count=self.count, seed=self.seed)
        elif self.family == DUALITY_Y:
            out["instances"] = [
                {"y1": matrix_to_json(y1), "y2": matrix_to_json(y2), "n": int(n)} for y1, y2, n in self.instances
            ]
        else:
            out["instances"] = [matrix_to_json(p) for p in self.instances]
        return out

    @classmethod
    def from_json(cls, obj: Any) -> "ParameterFamily":
        if not isinstance(obj, dict) or "kind" not in obj:
            raise FormatError("parameter family needs a 'kind'")
        try:
            if obj["kind"] == "sampled":
                return cls.sampled(obj.get("family"), int(obj.get("count", DUALITY_SAMPLES)), int(obj.get("seed", 0)))
            fam = obj.get("family")
            raw = obj.get("instances", [])
            if fam == DUALITY_Y:
                inst = [(matrix_from_json(r["y1"]), matrix_from_json(r["y2"]), int(r["n"])) for r in raw]
            else:
                inst = [matrix_from_json(r) for r in raw]
            return cls.explicit(inst, fam)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"invalid parameter family: {exc}") from None


# ---------------------------------------------------------------------------
# judgments


@dataclass
class Judgment:
    """``{pre} prog1 ~ prog2 {post}`` over ``H_vars1 (x) H_vars2``.

    ``pre`` and ``post`` are predicates, or callables of one parameter when
    ``params`` is given; the judgment then stands for all its instances.
    """

    env: Environment
    prog1: Program
    prog2: Program
    pre: Any
    post: Any
    params: ParameterFamily | None = None
    vars1: list | None = None
    vars2: list | None = None

    def __post_init__(self):
        self.vars1 = list(self.env.names if self.vars1 is None else self.vars1)
        self.vars2 = list(self.env.names if self.vars2 is None else self.vars2)
        d = self.d1 * self.d2
        for pred in self.instances():
            for a in pred:
                if a.dim != d:
                    raise LinalgError(f"predicate of dim {a.dim} on a space of dim {d}")

    @property
    def d1(self) -> int:
        return self.env.total_dim(self.vars1)

    @property
    def d2(self) -> int:
        return self.env.total_dim(self.vars2)

    def channels(self) -> tuple[Superoperator, Superoperator]:
        return denote(self.prog1, self.env, self.vars1), denote(self.prog2, self.env, self.vars2)

    def instances(self) -> list[tuple[IVPredicate, IVPredicate]]:
        if self.params is None:
            return [(as_ivp(self.pre), as_ivp(self.post))]
        # contraction parameters act on one program space
        vals = self.params.draw(d=self.d1, d1=self.d1, d2=self.d2)
        return [(as_ivp(self.pre(v)), as_ivp(self.post(v))) for v in vals]

    def check(self, restarts: int = 32, seed: int = 0, threads: int = 1, opts: SolverOptions | None = None) -> Verdict:
        """Validity of every instance; the first invalid instance decides."""
        e1, e2 = self.channels()
        worst = None
        insts = self.instances()
        for k, (pre, post) in enumerate(insts):
            if post.is_finite:
                v = check_valid_general(pre, e1, e2, post.finite, restarts, seed, threads=threads, opts=opts)
            else:
                raise LinalgError("validity checks need a finite postcondition")
            if v.invalid:
                v.evidence["instance"] = k
                return v
            if worst is None or (v.margin is not None and worst.margin is not None and v.margin > worst.margin):
                worst = v
        if self.params is not None and worst is not None:
            worst.sampled = self.params.is_sampled
            if worst.valid and self.params.is_sampled:
                worst.reason += f" (all {len(insts)} sampled instances)"
        return worst

    def to_json(self) -> dict:
        if self.params is not None:
            raise FormatError("parameterized judgments with callable predicates cannot be serialized")
        return {
            "env": self.env.to_json(),
            "prog1": self.prog1.to_source(),
            "prog2": self.prog2.to_source(),
            "pre": ivp_to_json(as_ivp(self.pre)),
            "post": ivp_to_json(as_ivp(self.post)),
            "vars1": self.vars1,
            "vars2": self.vars2,
            "params": {},
        }

    @classmethod
    def from_json(cls, obj: Any) -> "Judgment":
        if not isinstance(obj, dict):
            raise FormatError("judgment must be a JSON object")
        for key in ("env", "prog1", "prog2", "pre", "post"):
            if key not in obj:
                raise FormatError(f"judgment lacks {key!r}")
        env = Environment.from_json(obj["env"])
        try:
            return cls(
                env,
                parse(obj["prog1"], env),
                parse(obj["prog2"], env),
                ivp_from_json(obj["pre"]),
                ivp_from_json(obj["post"]),
                None,
                obj.get("vars1"),
                obj.get("vars2"),
            )
        except LinalgError as exc:
            raise FormatError(str(exc)) from None


# ---------------------------------------------------------------------------
# derivation trees


@dataclass
class Derivation:
    """One rule application; ``premises`` are sub-derivations.

    ``context`` is a tuple of measurement conditions ``(M, N)`` (Kraus lists
    on the two full program spaces). ``side`` carries rule payloads:
    ``family`` (a :class:`ParameterFamily`) for ``duality``, and optional
    ``samples``/``seed`` for the sampled side conditions of ``if``,
    ``while`` and ``seq+``.
    """

    rule: str
    prog1: Program
    prog2: Program
    pre: IVPredicate
    post: IVPredicate
    premises: list = field(default_factory=list)
    context: tuple = ()
    side: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pre = as_ivp(self.pre)
        self.post = as_ivp(self.post)

    def size(self) -> int:
        return 1 + sum(p.size() for p in self.premises)

    def depth(self) -> int:
        return 1 + max((p.depth() for p in self.premises), default=0)

    def judgment(self, env: Environment, vars1=None, vars2=None) -> Judgment:
        return Judgment(env, self.prog1, self.prog2, self.pre, self.post, None, vars1, vars2)


def _measurement_from_json(obj, env: Environment, layout: Layout) -> list[np.ndarray]:
    if "kraus" in obj:
        return [matrix_from_json(k) for k in obj["kraus"]]
    targets = list(obj["vars"])
    ms = env.measurement(obj["name"], env.total_dim(targets))
    return [layout.embed(m, targets) for m in ms]


def derivation_from_json(obj: Any, env: Environment, vars1=None, vars2=None) -> Derivation:
    """Build a derivation tree from its JSON form.

    Node keys: ``rule``, ``prog1``, ``prog2``, ``pre``, ``post``, optional
    ``premises``, ``context`` (list of ``{"m1": ..., "m2": ...}`` with each
    measurement given as ``{"name", "vars"}`` or ``{"kraus": [...]}``) and
    ``family``/``samples``/``seed`` payloads.
    """
    l1 = Layout(env.names if vars1 is None else vars1, env)
    l2 = Layout(env.names if vars2 is None else vars2, env)

    def build(node, path: str) -> Derivation:
        if not isinstance(node, dict):
            raise FormatError(f"{path}: node must be an object")
        try:
            rule = node["rule"]
            if rule not in RULES:
                raise FormatError(f"{path}: unknown rule {rule!r}")
            ctx = tuple(
                (_measurement_from_json(c["m1"], env, l1), _measurement_from_json(c["m2"], env, l2))
                for c in node.get("context", [])
            )
            side = {}
            if "family" in node:
                side["family"] = ParameterFamily.from_json(node["family"])
            for key in ("samples", "seed"):
                if key in node:
                    side[key] = int(node[key])
            prems = [build(p, f"{path}/{i}") for i, p in enumerate(node.get("premises", []))]
            return Derivation(
                rule,
                parse(node["prog1"], env),
                parse(node["prog2"], env),
                ivp_from_json(node["pre"]),
                ivp_from_json(node["post"]),
                prems,
                ctx,
                side,
            )
        except KeyError as exc:
            raise FormatError(f"{path}: missing key {exc}") from None
        except LinalgError as exc:
            raise FormatError(f"{path}: {exc}") from None

    return build(obj, "root")


def derivation_to_json(d: Derivation) -> dict:
    out: dict[str, Any] = {
        "rule": d.rule,
        "prog1": d.prog1.to_source(),
        "prog2": d.prog2.to_source(),
        "pre": ivp_to_json(d.pre),
        "post": ivp_to_json(d.post),
        "premises": [derivation_to_json(p) for p in d.premises],
    }
    if d.context:
        out["context"] = [
            {"m1": {"kraus": [matrix_to_json(k) for k in m]}, "m2": {"kraus": [matrix_to_json(k) for k in n]}}
            for m, n in d.context
        ]
    if "family" in d.side:
        out["family"] = d.side["family"].to_json()
    for key in ("samples", "seed"):
        if key in d.side:
            out[key] = d.side[key]
    return out


# ---------------------------------------------------------------------------
# checking


def normalize(prog: Program) -> Program:
    """Canonical form up to associativity of ``;`` and ``skip`` units."""
    items = _flatten(prog)
    return seq(*items)


def _flatten(prog: Program) -> list[Program]:
    if isinstance(prog, Skip):
        return []
    if isinstance(prog, Seq):
        return _flatten(prog.first) + _flatten(prog.second)
    if isinstance(prog, IfMeas):
        return [IfMeas(prog.vars, prog.name, tuple(normalize(b) for b in prog.branches))]
    if isinstance(prog, WhileMeas):
        return [WhileMeas(prog.vars, prog.name, normalize(prog.body))]
    return [prog]


def same_program(a: Program, b: Program) -> bool:
    return normalize(a) == normalize(b)


@dataclass
class NodeFailure:
    path: str
    rule: str
    message: str
    vector: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {"path": self.path, "rule": self.rule, "message": self.message}
        if self.vector is not None:
            out["vector"] = [[float(z.real), float(z.imag)] for z in self.vector]
        return out


@dataclass
class DerivationReport:
    ok: bool
    failures: list
    nodes: int
    sampled: list

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "failures": [f.to_dict() for f in self.failures],
            "nodes": self.nodes,
            "sampled_nodes": list(self.sampled),
        }


class _Fail(Exception):
    def __init__(self, message: str, vector=None):
        super().__init__(message)
        self.vector = vector


def _contexts_equal(a, b) -> bool:
    if len(a) != len(b):
        return False
    for (m1, n1), (m2, n2) in zip(a, b):
        if len(m1) != len(m2) or len(n1) != len(n2):
            return False
        for x, y in zip(list(m1) + list(n1), list(m2) + list(n2)):
            if x.shape != y.shape or not np.allclose(x, y, atol=1e-12):
                return False
    return True


def _context_subset(sub, sup) -> bool:
    return all(any(_contexts_equal((c,), (d,)) for d in sup) for c in sub)


class _Checker:
    def __init__(self, env: Environment, vars1, vars2, samples: int, seed: int, opts: SolverOptions):
        self.env = env
        self.l1 = Layout(env.names if vars1 is None else vars1, env)
        self.l2 = Layout(env.names if vars2 is None else vars2, env)
        self.d1, self.d2 = self.l1.dim, self.l2.dim
        self.samples = samples
        self.seed = seed
        self.opts = opts
        self.failures: list[NodeFailure] = []
        self.sampled: list[str] = []
        self.nodes = 0
        self._den: dict = {}

    # helpers -------------------------------------------------------------

    def denote(self, prog: Program, side: int) -> Superoperator:
        key = (side, normalize(prog))
        if key not in self._den:
            layout = self.l1 if side == 1 else self.l2
            self._den[key] = denote(prog, self.env, layout.names)
        return self._den[key]

    def lift(self, op: np.ndarray, side: int) -> np.ndarray:
        if side == 1:
            return np.kron(op, np.eye(self.d2))
        return np.kron(np.eye(self.d1), op)

    def kraus(self, prog, side: int) -> list[np.ndarray]:
        layout = self.l1 if side == 1 else self.l2
        ms = self.env.measurement(prog.name, self.env.total_dim(prog.vars))
        return [layout.embed(m, list(prog.vars)) for m in ms]

    def equal(self, a: IVPredicate, b: IVPredicate, what: str) -> None:
        v = leq_violation(a, b, EQ_TOL)
        if v is None:
            v = leq_violation(b, a, EQ_TOL)
        if v is not None:
            raise _Fail(f"{what} differ", v)

    def leq(self, a: IVPredicate, b: IVPredicate, what: str) -> None:
        v = leq_violation(a, b, EQ_TOL)
        if v is not None:
            raise _Fail(f"{what} fails", v)

    @staticmethod
    def arity(d: Derivation, n: int) -> None:
        if len(d.premises) != n:
            raise _Fail(f"expected {n} premises, found {len(d.premises)}")

    @staticmethod
    def no_context(*nodes: Derivation) -> None:
        for nd in nodes:
            if nd.context:
                raise _Fail("this rule does not take a measurement context")

    def progs(self, d: Derivation, p1: Program, p2: Program) -> None:
        if not same_program(d.prog1, p1):
            raise _Fail(f"left program {d.prog1} does not match {p1}")
        if not same_program(d.prog2, p2):
            raise _Fail(f"right program {d.prog2} does not match {p2}")

    def one_sided(self, d: Derivation, side: int) -> tuple[Program, Program]:
        main, other = (d.prog1, d.prog2) if side == 1 else (d.prog2, d.prog1)
        if not isinstance(normalize(other), Skip):
            raise _Fail(f"one-sided rule needs skip on side {3 - side}")
        return normalize(main), other

    # traversal -----------------------------------------------------------

    def check(self, d: Derivation, path: str) -> None:
        self.nodes += 1
        if d.pre.dim != self.d1 * self.d2 or d.post.dim != self.d1 * self.d2:
            self.failures.append(NodeFailure(path, d.rule, "predicate dimension does not match the program spaces"))
            return
        try:
            handler = getattr(self, "rule_" + d.rule.replace("-", "_").replace("+", "_plus"))
        except AttributeError:
            self.failures.append(NodeFailure(path, d.rule, f"unknown rule {d.rule!r}"))
            return
        try:
            handler(d, path)
        except _Fail as exc:
            self.failures.append(NodeFailure(path, d.rule, str(exc), exc.vector))
        except (LinalgError, TransportError) as exc:
            self.failures.append(NodeFailure(path, d.rule, f"numerical error: {exc}"))
        for i, p in enumerate(d.premises):
            self.check(p, f"{path}/{i}")

    # one-sided and structural rules ------------------------------------------

    def rule_skip(self, d, path):
        self.arity(d, 0)
        self.progs(d, Skip(), Skip())
        self.equal(d.pre, d.post, "precondition and postcondition")

    def _leaf(self, d, side: int, kind):
        self.arity(d, 0)
        self.no_context(d)
        main, _ = self.one_sided(d, side)
        if not isinstance(main, kind):
            raise _Fail(f"expected a {kind.__name__} statement on side {side}")
        e = self.denote(main, side)
        ident = Superoperator.identity(self.d2 if side == 1 else self.d1)
        want = dual_product_ivp(e, ident, d.post) if side == 1 else dual_product_ivp(ident, e, d.post)
        self.equal(d.pre, want, "precondition and the rule's transformed postcondition")

    def rule_assign_L(self, d, path):
        self._leaf(d, 1, Init)

    def rule_assign_R(self, d, path):
        self._leaf(d, 2, Init)

    def rule_apply_L(self, d, path):
        self._leaf(d, 1, Unitary)

    def rule_apply_R(self, d, path):
        self._leaf(d, 2, Unitary)

    def rule_seq(self, d, path):
        self.arity(d, 2)
        a, b = d.premises
        self.no_context(d, a, b)
        self.progs(d, Seq(a.prog1, b.prog1), Seq(a.prog2, b.prog2))
        self.equal(d.pre, a.pre, "conclusion and first-premise preconditions")
        self.equal(a.post, b.pre, "intermediate predicates")
        self.equal(d.post, b.post, "conclusion and second-premise postconditions")

    def _if_one(self, d, side: int):
        self.no_context(d, *d.premises)
        main, _ = self.one_sided(d, side)
        if not isinstance(main, IfMeas):
            raise _Fail("expected a measurement branch")
        self.arity(d, len(main.branches))
        ks = self.kraus(main, side)
        total = None
        for m, (k, prem, branch) in enumerate(zip(ks, d.premises, main.branches)):
            p1, p2 = (branch, Skip()) if side == 1 else (Skip(), branch)
            self.progs(prem, p1, p2)
            self.equal(prem.post, d.post, f"branch {m} postcondition and the conclusion's")
            term = ivp_conj(self.lift(k, side), prem.pre)
            total = term if total is None else ivp_add(total, term)
        self.equal(d.pre, total, "precondition and the branch-weighted sum")

    def rule_if_L(self, d, path):
        self._if_one(d, 1)

    def rule_if_R(self, d, path):
        self._if_one(d, 2)

    def _while_one(self, d, side: int):
        self.arity(d, 1)
        prem = d.premises[0]
        self.no_context(d, prem)
        main, _ = self.one_sided(d, side)
        if not isinstance(main, WhileMeas):
            raise _Fail("expected a loop")
        p1, p2 = (main.body, Skip()) if side == 1 else (Skip(), main.body)
        self.progs(prem, p1, p2)
        k0, k1 = self.kraus(main, side)
        inv = ivp_add(ivp_conj(self.lift(k0, side), d.post), ivp_conj(self.lift(k1, side), prem.pre))
        self.equal(prem.post, inv, "premise postcondition and the loop invariant")
        self.equal(d.pre, inv, "precondition and the loop invariant")

    def rule_while_L(self, d, path):
        self._while_one(d, 1)

    def rule_while_R(self, d, path):
        self._while_one(d, 2)

    def rule_csq(self, d, path):
        self.arity(d, 1)
        prem = d.premises[0]
        if not _context_subset(prem.context, d.context):
            raise _Fail("premise context is not contained in the conclusion context")
        self.progs(d, prem.prog1, prem.prog2)
        self.leq(prem.pre, d.pre, "P >= P'")
        self.leq(d.post, prem.post, "Q' >= Q")

    def rule_duality(self, d, path):
        self.no_context(d, *d.premises)
        if not d.post.is_finite:
            raise _Fail("the duality rule needs a finite postcondition")
        e1, e2 = self.denote(d.prog1, 1), self.denote(d.prog2, 2)
        if not (is_ast(e1) and is_ast(e2)):
            raise _Fail("the duality rule needs AST programs")
        q = d.post.finite
        fam = d.side.get("family") or ParameterFamily.sampled(DUALITY_Y, DUALITY_SAMPLES, self.seed)
        if fam.kind == "explicit" and fam.family not in (None, DUALITY_Y):
            raise _Fail("the duality rule takes instances of its own family")
        insts = fam.draw(q=q, d1=self.d1, d2=self.d2, outputs=self._output_sampler(d, e1, e2), opts=self.opts)
        if d.premises and len(d.premises) != len(insts):
            raise _Fail(f"{len(d.premises)} premises for {len(insts)} instances")
        for i, (y1, y2, n) in enumerate(insts):
            y1 = check_hermitian(y1, 1e-9)
            y2 = check_hermitian(y2, 1e-9)
            if not in_duality_y(q, y1, y2, n):
                raise _Fail(f"instance {i} is not in the duality family")
            if d.premises:
                prem = d.premises[i]
                self.progs(prem, d.prog1, d.prog2)
                shifted = ivp_add(d.pre, ivp_new(n * np.eye(d.pre.dim)))
                post = ivp_new(np.kron(y1, np.eye(self.d2)) + np.kron(np.eye(self.d1), n * np.eye(self.d2) - y2))
                self.equal(prem.pre, shifted, f"instance {i} precondition P + nI")
                self.equal(prem.post, post, f"instance {i} split postcondition")
            elif not duality_instance_valid(d.pre, e1, e2, y1, y2, n):
                raise _Fail(f"premise instance {i} (n = {n}) is not valid")
        if fam.is_sampled:
            self.sampled.append(path)

    def _output_sampler(self, d: Derivation, e1, e2):
        keep = d.pre.infinite.complement().basis
        if keep.shape[1] == 0:
            return None
        from ..qwhile.semantics import apply

        def outputs(rng):
            c = rng.normal(size=keep.shape[1]) + 1j * rng.normal(size=keep.shape[1])
            psi = keep @ c
            psi /= np.linalg.norm(psi)
            rho = np.outer(psi, psi.conj())
            r1 = partial_trace(rho, 1, (self.d1, self.d2))
            r2 = partial_trace(rho, 2, (self.d1, self.d2))
            return hermitize(apply(e1, r1)), hermitize(apply(e2, r2))

        return outputs

    # two-sided rules ---------------------------------------------------------

    def _property(self, d: Derivation, path: str, m, n, qs, context) -> None:
        rep = measurement_property_sampled(
            d.pre, m, n, qs, context,
            samples=d.side.get("samples", self.samples),
            seed=d.side.get("seed", self.seed),
            opts=self.opts,
        )
        self.sampled.append(path)
        if not rep.holds:
            raise _Fail(f"measurement property fails on a sampled pair: {rep.diagnostic}")

    def rule_if(self, d, path):
        s1, s2 = normalize(d.prog1), normalize(d.prog2)
        if not (isinstance(s1, IfMeas) and isinstance(s2, IfMeas)):
            raise _Fail("expected measurement branches on both sides")
        if len(s1.branches) != len(s2.branches):
            raise _Fail("the two branchings have different outcome counts")
        self.arity(d, len(s1.branches))
        self.no_context(*d.premises)
        for k, prem in enumerate(d.premises):
            self.progs(prem, s1.branches[k], s2.branches[k])
            self.equal(prem.post, d.post, f"branch {k} postcondition and the conclusion's")
        m, n = self.kraus(s1, 1), self.kraus(s2, 2)
        self._property(d, path, m, n, [p.pre for p in d.premises], d.context)

    def rule_while(self, d, path):
        self.arity(d, 1)
        prem = d.premises[0]
        self.no_context(d, prem)
        s1, s2 = normalize(d.prog1), normalize(d.prog2)
        if not (isinstance(s1, WhileMeas) and isinstance(s2, WhileMeas)):
            raise _Fail("expected loops on both sides")
        self.progs(prem, s1.body, s2.body)
        self.equal(prem.post, d.pre, "premise postcondition and the loop invariant")
        m, n = self.kraus(s1, 1), self.kraus(s2, 2)
        self._property(d, path, m, n, [d.post, prem.pre], ())

    def rule_seq_plus(self, d, path):
        self.arity(d, 2)
        a, b = d.premises
        if not _contexts_equal(a.context, d.context):
            raise _Fail("first premise must carry the conclusion's context")
        self.progs(d, Seq(a.prog1, b.prog1), Seq(a.prog2, b.prog2))
        self.equal(d.pre, a.pre, "conclusion and first-premise preconditions")
        self.equal(a.post, b.pre, "intermediate predicates")
        self.equal(d.post, b.post, "conclusion and second-premise postconditions")
        if b.context:
            rep = entailment_check(
                self.denote(a.prog1, 1), self.denote(a.prog2, 2), d.context, b.context,
                samples=d.side.get("samples", self.samples), seed=d.side.get("seed", self.seed),
            )
            if not rep.exact:
                self.sampled.append(path)
            if not rep.holds:
                raise _Fail(f"context entailment fails: {rep.note}")


def check_derivation(
    d: Derivation,
    env: Environment,
    vars1=None,
    vars2=None,
    samples: int = SIDE_SAMPLES,
    seed: int = 0,
    opts: SolverOptions | None = None,
) -> DerivationReport:
    """Check every node of a derivation.

    Equality-shaped rules compare predicates both ways in the Loewner order
    within 1e-8; ``csq`` compares one way. Nodes whose verdict rests on
    sampling (``duality`` with a sampled family, measurement properties,
    entailments under a nonempty context) are listed in ``sampled``.
    """
    chk = _Checker(env, vars1, vars2, samples, seed, opts or SolverOptions())
    chk.check(d, "root")
    return DerivationReport(not chk.failures, chk.failures, chk.nodes, chk.sampled)


# ---------------------------------------------------------------------------
# random derivations


def _random_post(d: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q = hermitize(g @ g.conj().T)
    return q / lambda_max(q)


class _Generator:
    """Builds random accepted derivations backwards from a postcondition."""

    GATES = ("H", "X", "Z", "Y")

    def __init__(self, env: Environment, vars1, vars2, rng):
        self.env = env
        self.rng = rng
        self.chk = _Checker(env, vars1, vars2, SIDE_SAMPLES, 0, SolverOptions())
        self.vars = {1: list(self.chk.l1.names), 2: list(self.chk.l2.names)}
        self.qubits = {s: [v for v in self.vars[s] if env.dim(v) == 2] for s in (1, 2)}
        self.pairs = {
            s: [(a, b) for a in self.qubits[s] for b in self.qubits[s] if a != b] for s in (1, 2)
        }

    def _sides(self, side, main):
        return (main, Skip()) if side == 1 else (Skip(), main)

    def leaf(self, post: IVPredicate, side: int) -> Derivation:
        r = self.rng.random()
        if r < 0.15:
            main = Init(str(self.rng.choice(self.vars[side])))
            rule = "assign"
        else:
            if self.pairs[side] and r > 0.8:
                a, b = self.pairs[side][int(self.rng.integers(len(self.pairs[side])))]
                main = Unitary((a, b), "CNOT")
            else:
                main = Unitary((str(self.rng.choice(self.qubits[side])),), str(self.rng.choice(self.GATES)))
            rule = "apply"
        e = self.chk.denote(main, side)
        ident = Superoperator.identity(self.chk.d2 if side == 1 else self.chk.d1)
        pre = dual_product_ivp(e, ident, post) if side == 1 else dual_product_ivp(ident, e, post)
        p1, p2 = self._sides(side, main)
        return Derivation(f"{rule}-{'L' if side == 1 else 'R'}", p1, p2, pre, post)

    def one_sided(self, post: IVPredicate, side: int, depth: int) -> Derivation:
        if depth <= 1:
            return self.leaf(post, side)
        r = self.rng.random()
        if r < 0.3:
            second = self.one_sided(post, side, depth - 1)
            first = self.one_sided(second.pre, side, depth - 1)
            p1, p2 = self._sides(side, Seq(first.prog1 if side == 1 else first.prog2, second.prog1 if side == 1 else second.prog2))
            return Derivation("seq", p1, p2, first.pre, post, [first, second])
        if r < 0.55:
            return self.branch(post, side, depth)
        if r < 0.8 and depth >= 3:
            return self.loop(post, side)
        return self.leaf(post, side)

    def branch(self, post: IVPredicate, side: int, depth: int) -> Derivation:
        var = str(self.rng.choice(self.qubits[side]))
        arms = [self.one_sided(post, side, depth - 1) for _ in range(2)]
        bodies = [a.prog1 if side == 1 else a.prog2 for a in arms]
        main = IfMeas((var,), "comp", tuple(bodies))
        ks = self.chk.kraus(main, side)
        pre = None
        for k, a in zip(ks, arms):
            t = ivp_conj(self.chk.lift(k, side), a.pre)
            pre = t if pre is None else ivp_add(pre, t)
        p1, p2 = self._sides(side, main)
        return Derivation(f"if-{'L' if side == 1 else 'R'}", p1, p2, pre, post, arms)

    def loop(self, post: IVPredicate, side: int) -> Derivation:
        """``while M[q] = 1 do U od`` with ``U`` in {H, X} (AST) and a slack invariant."""
        var = str(self.rng.choice(self.qubits[side]))
        body = Unitary((var,), str(self.rng.choice(("H", "X"))))
        main = WhileMeas((var,), "comp", body)
        k0, k1 = (self.chk.lift(k, side) for k in self.chk.kraus(main, side))
        u = self.chk.lift(self._unitary(body, side), side)
        p = post.finite
        base = hermitize(k0.conj().T @ p @ k0)

        def step(x):
            g = base + hermitize(k1.conj().T @ x @ k1)
            return hermitize(u.conj().T @ g @ u)

        x = np.zeros_like(p)
        for _ in range(2000):
            nxt = step(x)
            if np.max(np.abs(nxt - x)) < 1e-14:
                x = nxt
                break
            x = nxt
        inv_pre = ivp_new(hermitize(x + 1e-6 * np.eye(p.shape[0])))
        g = ivp_add(ivp_conj(k0, post), ivp_conj(k1, inv_pre))
        leaf_pre = ivp_conj(u, g)
        p1, p2 = self._sides(side, body)
        leaf = Derivation(f"apply-{'L' if side == 1 else 'R'}", p1, p2, leaf_pre, g)
        weak = Derivation("csq", p1, p2, inv_pre, g, [leaf])
        q1, q2 = self._sides(side, main)
        return Derivation(f"while-{'L' if side == 1 else 'R'}", q1, q2, g, post, [weak])

    def _unitary(self, body: Unitary, side: int) -> np.ndarray:
        layout = self.chk.l1 if side == 1 else self.chk.l2
        return layout.embed(self.env.unitary(body.name), list(body.vars))

    def tree(self, post: IVPredicate, depth: int) -> Derivation:
        if depth <= 1:
            return self.leaf(post, int(self.rng.integers(1, 3)))
        r = self.rng.random()
        if r < 0.45:
            second = self.one_sided(post, 2, depth - 1)
            first = self.tree(second.pre, depth - 1)
            return Derivation("seq", Seq(first.prog1, second.prog1), Seq(first.prog2, second.prog2), first.pre, post, [first, second])
        if r < 0.75:
            second = self.one_sided(post, 1, depth - 1)
            first = self.one_sided(second.pre, 2, depth - 1)
            return Derivation("seq", Seq(first.prog1, second.prog1), Seq(first.prog2, second.prog2), first.pre, post, [first, second])
        if r < 0.9:
            # weaken: a larger precondition and a smaller postcondition
            dim = post.dim
            stronger = ivp_add(post, ivp_new(_random_post(dim, self.rng) * float(self.rng.uniform(0.0, 0.2))))
            inner = self.tree(stronger, depth - 1)
            bump = _random_post(dim, self.rng) * float(self.rng.uniform(0.0, 0.2))
            pre = ivp_add(inner.pre, ivp_new(bump))
            return Derivation("csq", inner.prog1, inner.prog2, pre, post, [inner])
        return self.one_sided(post, int(self.rng.integers(1, 3)), depth)


def random_derivation(
    env: Environment,
    rng: np.random.Generator,
    depth: int = 4,
    vars1=None,
    vars2=None,
    post=None,
) -> Derivation:
    """A random derivation of depth at most ``depth`` built from one-sided rules.

    Programs act on the qubit variables of ``vars1``/``vars2``; loops are
    ``while M[q] = 1 do U od`` with ``U`` in {H, X}, so every program is AST.
    Predicates are computed backwards from a random non-split PSD
    postcondition (unless ``post`` is given), so the tree is accepted by
    :func:`check_derivation` by construction.
    """
    gen = _Generator(env, vars1, vars2, rng)
    d = gen.chk.d1 * gen.chk.d2
    q = ivp_new(_random_post(d, rng) if post is None else post)
    return gen.tree(q, depth)

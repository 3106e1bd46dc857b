"""Command-line front end.

Every subcommand writes one JSON report (or a text summary of it) and exits
with 0 when the checked property holds, 1 when it is refuted, 2 when the
result is inconclusive and 3 on malformed input.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, TextIO

import numpy as np

from . import applications as apps
from .io import FormatError, ivp_from_json, ivp_to_json, matrix_from_json, matrix_to_json
from .linalg import PSD_TOL, LinalgError, Subspace, maxnorm
from .logic.derivation import Judgment, check_derivation, derivation_from_json
from .logic.validity import (
    INVALID,
    UNKNOWN,
    VALID,
    NonAstWarning,
    Verdict,
    check_split_valid,
    split_decompose,
    wp_two_sided,
)
from .predicates import IVPredicate, ivp_leq
from .qwhile.environment import EnvError, Environment
from .qwhile.parser import ParseError, parse
from .qwhile.semantics import FixpointError, apply_dual, denote, is_ast
from .sdp import SdpError, SdpProblem, SolverOptions
from .transport import TransportError, lifting_check, partial_strassen_check, transport_value

EXIT_HOLDS = 0
EXIT_REFUTED = 1
EXIT_UNKNOWN = 2
EXIT_INPUT = 3

_EXIT = {VALID: EXIT_HOLDS, INVALID: EXIT_REFUTED, UNKNOWN: EXIT_UNKNOWN}


class InputError(ValueError):
    """Unreadable or inconsistent command-line input."""


@dataclass(frozen=True)
class DumpingOptions(SolverOptions):
    """Solver options that write every problem in the debug format before solving.

    The first problem goes to ``path``, later ones to ``path.1``, ``path.2``, ...
    """

    path: str | None = None

    def solve(self, problem: SdpProblem):
        if self.path is not None:
            k = _DUMP_COUNT.get(self.path, 0)
            _DUMP_COUNT[self.path] = k + 1
            target = self.path if k == 0 else f"{self.path}.{k}"
            with open(target, "w", encoding="utf-8") as fh:
                problem.dump(fh)
        return super().solve(problem)


_DUMP_COUNT: dict[str, int] = {}


# ---------------------------------------------------------------------------
# inputs


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _read_json(path: str) -> Any:
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def _load_matrix(path: str) -> np.ndarray:
    try:
        return matrix_from_json(_read_json(path))
    except FormatError as exc:
        raise InputError(f"{path}: {exc}") from None


def _load_predicate(path: str) -> IVPredicate:
    obj = _read_json(path)
    try:
        if isinstance(obj, dict) and "finite" in obj:
            return ivp_from_json(obj)
        return ivp_from_json({"finite": obj})
    except FormatError as exc:
        raise InputError(f"{path}: {exc}") from None


def _load_env(path: str | None) -> Environment | None:
    if path is None:
        return None
    try:
        return Environment.from_json(_read_json(path))
    except (FormatError, EnvError, LinalgError) as exc:
        raise InputError(f"{path}: {exc}") from None


_UNKNOWN_VAR = re.compile(r"unknown variable '([^']+)'")


def _infer_env(source: str) -> Environment:
    """Environment declaring every variable of ``source`` as a qubit."""
    names: dict[str, int] = {}
    while True:
        env = Environment(names)
        try:
            parse(source, env)
            return env
        except ParseError as exc:
            m = _UNKNOWN_VAR.fullmatch(exc.message)
            if m is None or m.group(1) in names:
                raise
            names[m.group(1)] = 2


def _load_program(path: str, env: Environment | None):
    source = _read_text(path)
    try:
        if env is None:
            env = _infer_env(source)
        return parse(source, env), env
    except ParseError as exc:
        raise InputError(f"{path}:{exc}") from None


def _load_judgment(path: str) -> Judgment:
    try:
        return Judgment.from_json(_read_json(path))
    except (FormatError, ParseError, EnvError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _names(text: str | None) -> list[str]:
    if not text:
        return []
    return [t.strip() for t in text.split(",") if t.strip()]


# ---------------------------------------------------------------------------
# reports


def _jsonable(x: Any) -> Any:
    if isinstance(x, Verdict):
        return x.to_dict()
    if isinstance(x, IVPredicate):
        return ivp_to_json(x)
    if isinstance(x, np.ndarray):
        return matrix_to_json(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return 0.0 if x == 0.0 else x
    if x is None or isinstance(x, str):
        return x
    if hasattr(x, "to_dict"):
        return _jsonable(x.to_dict())
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _text_summary(report: dict) -> str:
    lines = [f"command: {report['command']}", f"status: {report['status']}"]
    if report.get("error"):
        lines.append(f"error: {report['error']}")
    result = report.get("result") or {}
    for key in sorted(result):
        val = result[key]
        if isinstance(val, dict) and "status" in val and "reason" in val:
            lines.append(f"{key}: {val['status']} ({val['reason']})")
            if val.get("margin") is not None:
                lines.append(f"margin: {val['margin']}")
        elif not isinstance(val, (dict, list)):
            lines.append(f"{key}: {val}")
    tol = report.get("tolerances", {})
    lines.append("tolerances: " + ", ".join(f"{k}={tol[k]}" for k in sorted(tol)))
    if report.get("gap") is not None:
        lines.append(f"gap: {report['gap']}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# subcommands
#
# Each handler returns (status, result dict, solver gap or None); status is
# one of valid / invalid / unknown.


def _opts(args) -> SolverOptions:
    return DumpingOptions(gap_tol=args.tol_gap, max_iter=args.max_iter, path=args.dump_sdp)


def _two_programs(args):
    env = _load_env(args.env)
    if env is None:
        src = _read_text(args.p1) + ";\n" + _read_text(args.p2)
        try:
            env = _infer_env(src)
        except ParseError as exc:
            raise InputError(str(exc)) from None
    p1, _ = _load_program(args.p1, env)
    p2, _ = _load_program(args.p2, env)
    return env, p1, p2


def cmd_wp(args):
    j = _load_judgment(args.judgment)
    e1, e2 = j.channels()
    w = wp_two_sided(e1, e2, j.post)
    pre = j.pre
    above = ivp_leq(w, pre, args.tol_psd)
    result = {"wp": w, "pre_entails_wp": above, "ast": is_ast(e1) and is_ast(e2)}
    return VALID, result, None


def cmd_check_split(args):
    j = _load_judgment(args.judgment)
    e1, e2 = j.channels()
    raw = _read_json(args.judgment)
    if "q1" in raw and "q2" in raw:
        q1, q2 = matrix_from_json(raw["q1"]), matrix_from_json(raw["q2"])
    else:
        if not j.post.is_finite:
            raise InputError("postcondition must be finite")
        parts = split_decompose(j.post.finite, e1.in_dim, e2.in_dim)
        if parts is None:
            raise InputError("postcondition is not of the form Q1 (x) I + I (x) Q2")
        q1, q2 = parts
    v = check_split_valid(j.pre, e1, e2, q1, q2, tol=args.tol_psd)
    return v.status, {"verdict": v}, None


def cmd_check(args):
    j = _load_judgment(args.judgment)
    v = j.check(restarts=args.restarts, seed=args.seed, threads=args.threads, opts=_opts(args))
    return v.status, {"verdict": v}, None


def cmd_derive_check(args):
    obj = _read_json(args.derivation)
    try:
        if isinstance(obj, dict) and "root" in obj:
            env = Environment.from_json(obj["env"]) if "env" in obj else _load_env(args.env)
            vars1, vars2, tree = obj.get("vars1"), obj.get("vars2"), obj["root"]
        else:
            env, vars1, vars2, tree = _load_env(args.env), None, None, obj
        if env is None:
            raise InputError("derivation needs an environment (--env or an 'env' key)")
        d = derivation_from_json(tree, env, vars1, vars2)
    except (FormatError, ParseError, EnvError, KeyError) as exc:
        raise InputError(f"{args.derivation}: {exc}") from None
    rep = check_derivation(d, env, vars1, vars2, seed=args.seed, opts=_opts(args))
    result = {"derivation": rep.to_dict()}
    if rep.ok and args.falsify:
        v = d.judgment(env, vars1, vars2).check(restarts=args.restarts, seed=args.seed, threads=args.threads, opts=_opts(args))
        result["root_check"] = v
        if v.invalid:
            return INVALID, result, None
    return (VALID if rep.ok else INVALID), result, None


def cmd_transport(args):
    rho1, rho2 = _load_matrix(args.rho1), _load_matrix(args.rho2)
    cost = _load_predicate(args.cost)
    res = transport_value(cost, rho1, rho2, args.mode, _opts(args))
    result = {
        "value": res.value,
        "holds": True,
        "witness": res.witness,
        "certificate": None if res.certificate is None else res.certificate.to_dict(),
        "dual_value": res.dual_value,
        "mode": res.mode,
    }
    return VALID, result, res.gap


def cmd_lift(args):
    rho1, rho2 = _load_matrix(args.rho1), _load_matrix(args.rho2)
    cost = _load_matrix(args.cost)
    try:
        eps = float(args.eps)
    except ValueError:
        raise InputError(f"--eps must be a number or 'inf', got {args.eps!r}") from None
    if not args.partial and abs(np.trace(rho1).real - np.trace(rho2).real) > 1e-9:
        raise InputError("exact lifting needs states of equal trace")
    check = partial_strassen_check if args.partial else lifting_check
    if args.partial:
        res = check(rho1, rho2, cost, eps, _opts(args))
    else:
        res = check(rho1, cost, eps, rho2, _opts(args))
    result = {
        "value": res.value,
        "holds": res.holds,
        "witness": res.witness,
        "certificate": None if res.certificate is None else res.certificate.to_dict(),
        "eps": eps,
    }
    if res.holds:
        return VALID, result, res.gap
    return (INVALID if res.certificate is not None else UNKNOWN), result, res.gap


def cmd_equiv(args):
    env, p1, p2 = _two_programs(args)
    r = apps.program_equiv(p1, p2, seed=args.seed, certify=not args.no_certify, env=env, opts=_opts(args))
    return (VALID if r.equal else INVALID), r.to_dict(), None


def cmd_trace_distance(args):
    if args.p1 is None:
        if args.rho is None or args.sigma is None:
            raise InputError("give --rho/--sigma or --p1/--p2")
        rho, sigma = _load_matrix(args.rho), _load_matrix(args.sigma)
        td = apps.trace_distance(rho, sigma)
        var, proj = apps.trace_distance_variational(rho, sigma)
        return VALID, {"trace_distance": td, "variational": var, "projector": proj}, None
    env, p1, p2 = _two_programs(args)
    d = env.total_dim(env.names)
    x = Subspace(_load_matrix(args.x)) if args.x else Subspace(np.eye(d * d))
    phi1 = _load_matrix(args.phi1) if args.phi1 else None
    phi2 = _load_matrix(args.phi2) if args.phi2 else None
    v = apps.td_encoding_check(p1, p2, x, phi1, phi2, budget=args.restarts, seed=args.seed, env=env)
    return v.status, {"verdict": v}, None


def cmd_diamond(args):
    env, p1, p2 = _two_programs(args)
    e1, e2 = denote(p1, env, env.names), denote(p2, env, env.names)
    res = apps.diamond_sdp(e1, e2, _opts(args))
    result = {"value": res.value, "input_state": res.input_state, "iterations": res.iterations}
    if args.encoding:
        enc = apps.diamond_encoding(e1, e2, budget=args.restarts, seed=args.seed)
        result["encoding"] = {"c": enc.c, "twice_c": 2 * enc.c, "accepted": enc.accepted, "rejected_below": enc.rejected_below}
    status = VALID
    if args.bound is not None:
        result["bound"] = args.bound
        result["holds"] = res.value <= args.bound + 1e-7
        status = VALID if result["holds"] else INVALID
    return status, result, res.gap


def cmd_wasserstein(args):
    env, p1, p2 = _two_programs(args)
    v = apps.wasserstein_lipschitz_check(
        p1, p2, args.lam, budget=args.budget, restarts=args.restarts, seed=args.seed, env=env, opts=_opts(args)
    )
    return v.status, {"verdict": v}, None


def cmd_noninterference(args):
    env = _load_env(args.env)
    if env is None:
        raise InputError("noninterference needs --env")
    try:
        spec = apps.QuantumSystemSpec.from_json(_read_json(args.system), env)
    except (FormatError, ParseError, LinalgError, ValueError) as exc:
        raise InputError(f"{args.system}: {exc}") from None
    try:
        r = apps.non_interference_check(spec, _names(args.g1), _names(args.g2), _names(args.commands), args.max_len)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    return (VALID if r.interference_free else INVALID), r.to_dict(), None


def cmd_dp(args):
    env = _load_env(args.env)
    prog, env = _load_program(args.prog, env)
    v = apps.dp_check(prog, args.eps, args.delta, budget=args.restarts, seed=args.seed, env=env)
    return v.status, {"verdict": v}, None


def cmd_ast_check(args):
    env = _load_env(args.env)
    prog, env = _load_program(args.prog, env)
    e = denote(prog, env, env.names)
    deficit = maxnorm(apply_dual(e, np.eye(e.out_dim)) - np.eye(e.in_dim))
    ast = is_ast(e)
    return (VALID if ast else INVALID), {"ast": ast, "trace_deficit": deficit}, None


COMMANDS = {
    "wp": cmd_wp,
    "check-split": cmd_check_split,
    "check": cmd_check,
    "derive-check": cmd_derive_check,
    "transport": cmd_transport,
    "lift": cmd_lift,
    "equiv": cmd_equiv,
    "trace-distance": cmd_trace_distance,
    "diamond": cmd_diamond,
    "wasserstein": cmd_wasserstein,
    "noninterference": cmd_noninterference,
    "dp": cmd_dp,
    "ast-check": cmd_ast_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol-psd", type=float, default=PSD_TOL)
    common.add_argument("--tol-gap", type=float, default=1e-8)
    common.add_argument("--restarts", type=int, default=32)
    common.add_argument("--max-iter", type=int, default=200)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", help="write the report here instead of stdout")
    common.add_argument("--dump-sdp", metavar="PATH", help="write every SDP in the solver's debug format")
    common.add_argument("--format", choices=("json", "text"), default="json")

    parser = argparse.ArgumentParser(prog="qotl", description="Relational verification of quantum while-programs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text)

    p = add("wp", "two-sided weakest precondition of a judgment's postcondition")
    p.add_argument("--judgment", required=True)
    p = add("check-split", "exact validity check for a split postcondition")
    p.add_argument("--judgment", required=True)
    p = add("check", "validity check for a bounded postcondition")
    p.add_argument("--judgment", required=True)
    p = add("derive-check", "check a derivation tree rule by rule")
    p.add_argument("--derivation", required=True)
    p.add_argument("--env")
    p.add_argument("--falsify", action="store_true", help="also run the falsifier on the root judgment")
    p = add("transport", "optimal transport value between two states")
    p.add_argument("--rho1", required=True)
    p.add_argument("--rho2", required=True)
    p.add_argument("--cost", required=True, help="matrix or predicate JSON")
    p.add_argument("--mode", choices=("exact", "partial"), default="exact")
    p = add("lift", "lifting with defects and its Strassen certificate")
    p.add_argument("--rho1", required=True)
    p.add_argument("--rho2", required=True)
    p.add_argument("--cost", required=True)
    p.add_argument("--eps", default="0")
    p.add_argument("--partial", action="store_true")
    for name, help_text in (
        ("equiv", "program equivalence"),
        ("diamond", "diamond distance between two programs"),
        ("wasserstein", "Wasserstein Lipschitz continuity"),
        ("trace-distance", "trace distance of states, or the trace-distance bound for programs"),
    ):
        p = add(name, help_text)
        p.add_argument("--env")
        p.add_argument("--p1", required=name != "trace-distance")
        p.add_argument("--p2", required=name != "trace-distance")
        if name == "equiv":
            p.add_argument("--no-certify", action="store_true")
        if name == "diamond":
            p.add_argument("--encoding", action="store_true", help="also run the judgment-encoding route")
            p.add_argument("--bound", type=float)
        if name == "wasserstein":
            p.add_argument("--lam", type=float, required=True)
            p.add_argument("--budget", type=int, default=16)
        if name == "trace-distance":
            p.add_argument("--rho")
            p.add_argument("--sigma")
            p.add_argument("--x", help="projector of the lifting subspace on H (x) H")
            p.add_argument("--phi1")
            p.add_argument("--phi2")
    p = add("noninterference", "interference between agent groups")
    p.add_argument("--env")
    p.add_argument("--system", required=True)
    p.add_argument("--g1", required=True)
    p.add_argument("--g2", required=True)
    p.add_argument("--commands", default="")
    p.add_argument("--max-len", type=int, default=3)
    p = add("dp", "quantum differential privacy")
    p.add_argument("--env")
    p.add_argument("--prog", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p = add("ast-check", "almost-sure termination of a program")
    p.add_argument("--env")
    p.add_argument("--prog", required=True)
    return parser


def _emit(report: dict, args, stdout: TextIO) -> None:
    data = _jsonable(report)
    if args.format == "json":
        text = json.dumps(data, sort_keys=True, indent=2) + "\n"
    else:
        text = _text_summary(data)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        stdout.write(text)


def main(argv: list[str] | None = None, stdout: TextIO | None = None) -> int:
    """Run one subcommand and return its exit code."""
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else 0
    _DUMP_COUNT.clear()
    report: dict[str, Any] = {
        "command": args.command,
        "seed": args.seed,
        "tolerances": {"psd": args.tol_psd, "gap": args.tol_gap, "max_iter": args.max_iter},
        "gap": None,
    }
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", NonAstWarning)
            status, result, gap = COMMANDS[args.command](args)
        report.update(status=status, result=result, gap=gap, error=None)
        report["warnings"] = sorted({str(w.message) for w in caught})
        code = _EXIT[status]
    except (InputError, FormatError, ParseError, EnvError, LinalgError, FixpointError) as exc:
        report.update(status="error", result=None, error=str(exc))
        code = EXIT_INPUT
    except (TransportError, SdpError) as exc:
        # a solver failure leaves the property undecided
        report.update(status=UNKNOWN, result=None, error=f"solver failure: {exc}")
        code = EXIT_UNKNOWN
    report["exit_code"] = code
    _emit(report, args, stdout)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Quantum while-programs: syntax, parser and denotational semantics."""

from .ast import Abort, IfMeas, Init, Program, Seq, Skip, Unitary, WhileMeas, depth, seq, variables
from .environment import (
    BUILTIN_UNITARIES,
    EnvError,
    Environment,
    computational_measurement,
)
from .parser import ParseError, parse
from .semantics import (
    FixpointError,
    Layout,
    Superoperator,
    apply,
    apply_dual,
    apply_dual_product,
    apply_local,
    apply_product,
    denote,
    dual,
    dual_apply_ivp,
    dual_product_ivp,
    is_ast,
    is_cp,
    loop_fixpoint,
    unroll,
)

__all__ = [
    "Abort",
    "IfMeas",
    "Init",
    "Program",
    "Seq",
    "Skip",
    "Unitary",
    "WhileMeas",
    "depth",
    "seq",
    "variables",
    "BUILTIN_UNITARIES",
    "EnvError",
    "Environment",
    "computational_measurement",
    "ParseError",
    "parse",
    "FixpointError",
    "Layout",
    "Superoperator",
    "apply",
    "apply_dual",
    "apply_dual_product",
    "apply_local",
    "apply_product",
    "denote",
    "dual",
    "dual_apply_ivp",
    "dual_product_ivp",
    "is_ast",
    "is_cp",
    "loop_fixpoint",
    "unroll",
]

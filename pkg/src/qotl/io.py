"""JSON encodings shared by the library and the command line."""

from __future__ import annotations

import math
from typing import Any

import numpy as np

from .linalg import LinalgError, Subspace, as_matrix
from .predicates import IVPredicate, ivp_new


class FormatError(ValueError):
    """Malformed JSON payload."""


def matrix_to_json(a) -> dict[str, Any]:
    """``{"rows", "cols", "data": [[re, im], ...]}`` in row-major order."""
    m = as_matrix(a)
    data = [[_clean(float(z.real)), _clean(float(z.imag))] for z in m.ravel()]
    return {"rows": m.shape[0], "cols": m.shape[1], "data": data}


def _clean(x: float) -> float:
    # avoid "-0.0" so reports are byte-stable
    return 0.0 if x == 0.0 else x


def matrix_from_json(obj: Any) -> np.ndarray:
    try:
        rows, cols, data = int(obj["rows"]), int(obj["cols"]), obj["data"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"matrix needs rows, cols and data: {exc}") from None
    if len(data) != rows * cols:
        raise FormatError(f"matrix data has {len(data)} entries, expected {rows * cols}")
    try:
        vals = np.array([complex(float(e[0]), float(e[1])) for e in data], dtype=complex)
    except (TypeError, ValueError, IndexError) as exc:
        raise FormatError(f"matrix entries must be [re, im] pairs: {exc}") from None
    if not np.all(np.isfinite(vals)):
        raise FormatError("matrix entries must be finite")
    return vals.reshape(rows, cols)


def ivp_to_json(a: IVPredicate) -> dict[str, Any]:
    inf = None if a.infinite.is_zero() else matrix_to_json(a.infinite.projector)
    return {"finite": matrix_to_json(a.finite), "infinite_projector": inf}


def ivp_from_json(obj: Any) -> IVPredicate:
    try:
        fin = matrix_from_json(obj["finite"])
    except (KeyError, TypeError):
        raise FormatError("predicate needs a 'finite' matrix") from None
    raw = obj.get("infinite_projector") if isinstance(obj, dict) else None
    try:
        x = None if raw is None else Subspace(matrix_from_json(raw))
        return ivp_new(fin, x)
    except LinalgError as exc:
        raise FormatError(f"invalid predicate: {exc}") from None


def extended_to_json(x: float):
    """Finite floats pass through, ``inf`` becomes the string ``"inf"``."""
    if math.isinf(x):
        return "inf"
    return _clean(float(x))


def extended_from_json(x) -> float:
    if isinstance(x, str):
        if x.strip().lower() in ("inf", "+inf", "infinity"):
            return math.inf
        raise FormatError(f"expected a number or 'inf', got {x!r}")
    return float(x)

"""Named variables, unitaries and measurements available to programs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ..io import FormatError, matrix_from_json
from ..linalg import maxnorm

UNITARY_TOL = 1e-9
MEASUREMENT_TOL = 1e-9
MAX_TOTAL_DIM = 256

_S = 1.0 / np.sqrt(2.0)

BUILTIN_UNITARIES: dict[str, np.ndarray] = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "H": np.array([[_S, _S], [_S, -_S]], dtype=complex),
    "CNOT": np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
    ),
    "SWAP": np.array(
        [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
    ),
}


def computational_measurement(d: int) -> list[np.ndarray]:
    """Projective measurement ``{|m><m|}`` on ``C^d``."""
    out = []
    for m in range(d):
        p = np.zeros((d, d), dtype=complex)
        p[m, m] = 1.0
        out.append(p)
    return out


class EnvError(ValueError):
    """Invalid environment entry or unresolved name."""


@dataclass(frozen=True)
class Environment:
    """Variables with their dimensions plus named gates and measurements.

    Built-in gates ``I, X, Y, Z, H, CNOT, SWAP`` and the computational
    measurements ``comp`` (any dimension, resolved at the use site),
    ``comp<d>`` and ``m01`` (qubit) are always available; user entries with
    the same name take precedence.
    """

    variables: Mapping[str, int]
    unitaries: Mapping[str, np.ndarray] = field(default_factory=dict)
    measurements: Mapping[str, tuple[np.ndarray, ...]] = field(default_factory=dict)

    def __post_init__(self):
        vars_ = {}
        for name, d in dict(self.variables).items():
            if int(d) < 1:
                raise EnvError(f"variable {name!r} must have positive dimension")
            vars_[str(name)] = int(d)
        object.__setattr__(self, "variables", vars_)
        unis = {}
        for name, u in dict(self.unitaries).items():
            u = np.asarray(u, dtype=complex)
            if u.ndim != 2 or u.shape[0] != u.shape[1]:
                raise EnvError(f"unitary {name!r} must be square")
            if maxnorm(u.conj().T @ u - np.eye(u.shape[0])) > UNITARY_TOL:
                raise EnvError(f"unitary {name!r} is not unitary")
            unis[name] = u
        object.__setattr__(self, "unitaries", unis)
        meas = {}
        for name, ms in dict(self.measurements).items():
            ms = tuple(np.asarray(m, dtype=complex) for m in ms)
            if not ms:
                raise EnvError(f"measurement {name!r} has no outcomes")
            d = ms[0].shape[1]
            if any(m.ndim != 2 or m.shape[1] != d for m in ms):
                raise EnvError(f"measurement {name!r} has inconsistent shapes")
            total = sum(m.conj().T @ m for m in ms)
            if maxnorm(total - np.eye(d)) > MEASUREMENT_TOL:
                raise EnvError(f"measurement {name!r} is not complete")
            meas[name] = ms
        object.__setattr__(self, "measurements", meas)

    @property
    def names(self) -> list[str]:
        return list(self.variables)

    def dim(self, var: str) -> int:
        try:
            return self.variables[var]
        except KeyError:
            raise EnvError(f"unknown variable {var!r}") from None

    def has_unitary(self, name: str) -> bool:
        return name in self.unitaries or name in BUILTIN_UNITARIES

    def unitary(self, name: str) -> np.ndarray:
        if name in self.unitaries:
            return self.unitaries[name]
        if name in BUILTIN_UNITARIES:
            return BUILTIN_UNITARIES[name]
        raise EnvError(f"unknown unitary {name!r}")

    def has_measurement(self, name: str) -> bool:
        return name in self.measurements or _builtin_measurement_dim(name) is not None

    def measurement(self, name: str, dim: int | None = None) -> tuple[np.ndarray, ...]:
        """Kraus operators of a measurement; ``dim`` resolves ``comp``."""
        if name in self.measurements:
            return self.measurements[name]
        d = _builtin_measurement_dim(name)
        if d is None:
            raise EnvError(f"unknown measurement {name!r}")
        if d == 0:
            if dim is None:
                raise EnvError("measurement 'comp' needs a target dimension")
            d = dim
        return tuple(computational_measurement(d))

    def total_dim(self, names) -> int:
        return int(np.prod([self.dim(v) for v in names])) if names else 1

    @classmethod
    def from_json(cls, obj: Any) -> "Environment":
        if not isinstance(obj, dict):
            raise FormatError("environment must be a JSON object")
        try:
            vars_ = obj.get("vars", {})
            unis = {k: matrix_from_json(v) for k, v in obj.get("unitaries", {}).items()}
            meas = {
                k: [matrix_from_json(m) for m in v]
                for k, v in obj.get("measurements", {}).items()
            }
            return cls(vars_, unis, meas)
        except EnvError as exc:
            raise FormatError(str(exc)) from None

    def to_json(self) -> dict[str, Any]:
        from ..io import matrix_to_json

        return {
            "vars": dict(self.variables),
            "unitaries": {k: matrix_to_json(v) for k, v in self.unitaries.items()},
            "measurements": {
                k: [matrix_to_json(m) for m in v] for k, v in self.measurements.items()
            },
        }


def _builtin_measurement_dim(name: str) -> int | None:
    if name == "comp":
        return 0
    if name == "m01":
        return 2
    if name.startswith("comp") and name[4:].isdigit() and int(name[4:]) > 0:
        return int(name[4:])
    return None

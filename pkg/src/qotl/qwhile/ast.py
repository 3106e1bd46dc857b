"""Abstract syntax of quantum while-programs."""

from __future__ import annotations

from dataclasses import dataclass


class Program:
    """Base class of AST nodes."""

    def to_source(self) -> str:
        raise NotImplementedError

    def __str__(self) -> str:
        return self.to_source()


@dataclass(frozen=True)
class Skip(Program):
    def to_source(self) -> str:
        return "skip"


@dataclass(frozen=True)
class Abort(Program):
    def to_source(self) -> str:
        return "abort"


@dataclass(frozen=True)
class Init(Program):
    """``q := |0>``."""

    var: str

    def to_source(self) -> str:
        return f"{self.var} := |0>"


@dataclass(frozen=True)
class Unitary(Program):
    """``[q1, ...] *= U(name)``."""

    vars: tuple[str, ...]
    name: str

    def to_source(self) -> str:
        return f"[{', '.join(self.vars)}] *= U({self.name})"


@dataclass(frozen=True)
class Seq(Program):
    first: Program
    second: Program

    def to_source(self) -> str:
        return f"{self.first.to_source()}; {self.second.to_source()}"


@dataclass(frozen=True)
class IfMeas(Program):
    """Measure ``vars`` with ``name`` and run ``branches[m]`` on outcome ``m``."""

    vars: tuple[str, ...]
    name: str
    branches: tuple[Program, ...]

    def to_source(self) -> str:
        arms = " ".join(f"{m} -> {{ {b.to_source()} }}" for m, b in enumerate(self.branches))
        return f"if M({self.name})[{', '.join(self.vars)}] {{ {arms} }}"


@dataclass(frozen=True)
class WhileMeas(Program):
    """Loop while the two-outcome measurement returns 1."""

    vars: tuple[str, ...]
    name: str
    body: Program

    def to_source(self) -> str:
        return f"while M({self.name})[{', '.join(self.vars)}] == 1 do {{ {self.body.to_source()} }} od"


def seq(*progs: Program) -> Program:
    """Right-nested sequence of the given programs (``skip`` if empty)."""
    if not progs:
        return Skip()
    out = progs[-1]
    for p in reversed(progs[:-1]):
        out = Seq(p, out)
    return out


def variables(prog: Program) -> list[str]:
    """Variables of a program in order of first occurrence."""
    seen: list[str] = []

    def visit(p: Program) -> None:
        if isinstance(p, Init):
            names: tuple[str, ...] = (p.var,)
        elif isinstance(p, (Unitary, IfMeas, WhileMeas)):
            names = p.vars
        else:
            names = ()
        for v in names:
            if v not in seen:
                seen.append(v)
        if isinstance(p, Seq):
            visit(p.first)
            visit(p.second)
        elif isinstance(p, IfMeas):
            for b in p.branches:
                visit(b)
        elif isinstance(p, WhileMeas):
            visit(p.body)

    visit(prog)
    return seen


def depth(prog: Program) -> int:
    if isinstance(prog, Seq):
        return 1 + max(depth(prog.first), depth(prog.second))
    if isinstance(prog, IfMeas):
        return 1 + max(depth(b) for b in prog.branches)
    if isinstance(prog, WhileMeas):
        return 1 + depth(prog.body)
    return 1

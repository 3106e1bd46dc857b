"""Recursive-descent parser for the program text format.

Grammar (statements separated by ``;``)::

    prog  := stmt (';' stmt)*
    stmt  := 'skip' | 'abort'
           | IDENT ':=' '|0>'
           | '[' idents ']' '*=' 'U' '(' IDENT ')'
           | 'if' 'M' '(' IDENT ')' '[' idents ']' '{' (INT '->' '{' prog '}')+ '}'
           | 'while' 'M' '(' IDENT ')' '[' idents ']' '==' '1' 'do' '{' prog '}' 'od'
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .ast import Abort, IfMeas, Init, Program, Seq, Skip, Unitary, WhileMeas
from .environment import Environment, EnvError


class ParseError(ValueError):
    """Syntax or resolution error with a 1-based source location."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<ket>\|0>)
  | (?P<op>:=|\*=|==|->|[;\[\](){},])
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_']*)
    """,
    re.VERBOSE,
)

_KEYWORDS = {"skip", "abort", "if", "while", "do", "od"}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    out: list[Token] = []
    pos, line, col = 0, 1, 1
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        if kind not in ("ws", "comment"):
            if kind == "ident" and text in _KEYWORDS:
                kind = text
            out.append(Token(kind, text, line, col))
        for ch in text:
            if ch == "\n":
                line, col = line + 1, 1
            else:
                col += 1
        pos = m.end()
    out.append(Token("eof", "", line, col))
    return out


class _Parser:
    def __init__(self, source: str, env: Environment):
        self.toks = tokenize(source)
        self.i = 0
        self.env = env

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str, tok: Token | None = None) -> ParseError:
        t = tok or self.tok
        return ParseError(msg, t.line, t.col)

    def expect(self, kind: str, text: str | None = None) -> Token:
        t = self.tok
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            got = t.text or t.kind
            raise self.error(f"expected {want!r}, found {got!r}")
        self.i += 1
        return t

    def at(self, kind: str, text: str | None = None) -> bool:
        t = self.tok
        return t.kind == kind and (text is None or t.text == text)

    def program(self) -> Program:
        stmts = [self.statement()]
        while self.at("op", ";"):
            self.i += 1
            stmts.append(self.statement())
        out = stmts[-1]
        for s in reversed(stmts[:-1]):
            out = Seq(s, out)
        return out

    def variable(self) -> str:
        t = self.expect("ident")
        if t.text not in self.env.variables:
            raise self.error(f"unknown variable {t.text!r}", t)
        return t.text

    def var_list(self) -> tuple[str, ...]:
        self.expect("op", "[")
        names = [self.variable()]
        while self.at("op", ","):
            self.i += 1
            names.append(self.variable())
        close = self.expect("op", "]")
        if len(set(names)) != len(names):
            raise self.error("repeated variable in target list", close)
        return tuple(names)

    def named(self, head: str) -> tuple[str, Token]:
        t = self.expect("ident")
        if t.text != head:
            raise self.error(f"expected {head!r}, found {t.text!r}", t)
        self.expect("op", "(")
        name = self.expect("ident")
        self.expect("op", ")")
        return name.text, name

    def measurement(self, name: str, tok: Token, targets: tuple[str, ...]):
        if not self.env.has_measurement(name):
            raise self.error(f"unknown measurement {name!r}", tok)
        d = self.env.total_dim(targets)
        ms = self.env.measurement(name, d)
        if ms[0].shape[1] != d:
            raise self.error(
                f"measurement {name!r} acts on dimension {ms[0].shape[1]}, targets have {d}", tok
            )
        return ms

    def statement(self) -> Program:
        t = self.tok
        if t.kind == "skip":
            self.i += 1
            return Skip()
        if t.kind == "abort":
            self.i += 1
            return Abort()
        if t.kind == "ident":
            var = self.variable()
            self.expect("op", ":=")
            self.expect("ket")
            return Init(var)
        if self.at("op", "["):
            targets = self.var_list()
            self.expect("op", "*=")
            name, ntok = self.named("U")
            if not self.env.has_unitary(name):
                raise self.error(f"unknown unitary {name!r}", ntok)
            d = self.env.total_dim(targets)
            if self.env.unitary(name).shape[0] != d:
                raise self.error(
                    f"unitary {name!r} has dimension {self.env.unitary(name).shape[0]}, targets have {d}",
                    ntok,
                )
            return Unitary(targets, name)
        if t.kind == "if":
            self.i += 1
            name, ntok = self.named("M")
            targets = self.var_list()
            ms = self.measurement(name, ntok, targets)
            self.expect("op", "{")
            branches: dict[int, Program] = {}
            while self.at("int"):
                it = self.expect("int")
                k = int(it.text)
                if k in branches:
                    raise self.error(f"duplicate branch for outcome {k}", it)
                self.expect("op", "->")
                self.expect("op", "{")
                branches[k] = self.program()
                self.expect("op", "}")
            close = self.expect("op", "}")
            if sorted(branches) != list(range(len(ms))):
                raise self.error(
                    f"branches {sorted(branches)} do not match the {len(ms)} outcomes of {name!r}",
                    close,
                )
            return IfMeas(targets, name, tuple(branches[k] for k in range(len(ms))))
        if t.kind == "while":
            self.i += 1
            name, ntok = self.named("M")
            targets = self.var_list()
            ms = self.measurement(name, ntok, targets)
            if len(ms) != 2:
                raise self.error(f"loop guard {name!r} must have exactly two outcomes", ntok)
            self.expect("op", "==")
            one = self.expect("int")
            if one.text != "1":
                raise self.error("loop guard must compare against outcome 1", one)
            self.expect("do")
            self.expect("op", "{")
            body = self.program()
            self.expect("op", "}")
            self.expect("od")
            return WhileMeas(targets, name, body)
        raise self.error(f"unexpected {t.text or t.kind!r}")


def parse(source: str, env: Environment) -> Program:
    """Parse program text against an environment.

    Raises
    ------
    ParseError
        On syntax errors, unknown names and outcome-set mismatches.
    """
    p = _Parser(source, env)
    try:
        prog = p.program()
    except EnvError as exc:
        raise p.error(str(exc)) from None
    if not p.at("eof"):
        raise p.error(f"unexpected {p.tok.text!r} after program")
    return prog

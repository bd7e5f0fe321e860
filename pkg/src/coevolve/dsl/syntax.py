"""Tokenizer, recursive-descent parser and canonical printer for reward programs.

Grammar::

    program   := component+
    component := "component" IDENT "{" field* "}"
    field     := ("temp" | "weight") "=" REAL
               | "expr" "=" expr
               | "transform" "=" IDENT
    expr      := term (("+" | "-") term)*
    term      := factor (("*" | "/") factor)*
    factor    := REAL | IDENT | "(" expr ")" | FUNC "(" args ")" | "-" factor

``temp``, ``expr`` and ``weight`` are required; ``transform`` defaults to
``exp_neg_over_temp``.  ``#`` starts a comment that runs to end of line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .nodes import (
    DEFAULT_TRANSFORM,
    FUNCTIONS,
    Binary,
    Clamp,
    Const,
    Expr,
    Feature,
    Norm,
    ParseError,
    RewardComponent,
    RewardProgram,
    Unary,
    ValidationError,
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<newline>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[{}()=,+\-*/])
    """,
    re.VERBOSE,
)

FIELDS = ("temp", "expr", "weight", "transform")


@dataclass(frozen=True)
class Token:
    kind: str  # "number", "ident", "punct", "eof"
    text: str
    line: int
    column: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "newline":
            line += 1
            line_start = m.end()
        elif kind in ("number", "ident", "punct"):
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def _error(self, expected: str) -> ParseError:
        tok = self.tok
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        return ParseError(f"expected {expected}, found {found}", tok.line, tok.column)

    def _accept(self, text: str) -> bool:
        if self.tok.kind in ("punct", "ident") and self.tok.text == text:
            self.i += 1
            return True
        return False

    def _expect(self, text: str) -> Token:
        tok = self.tok
        if not self._accept(text):
            raise self._error(repr(text))
        return tok

    def _ident(self, what: str = "identifier") -> Token:
        tok = self.tok
        if tok.kind != "ident":
            raise self._error(what)
        self.i += 1
        return tok

    def _real(self) -> float:
        sign = 1.0
        if self._accept("-"):
            sign = -1.0
        elif self._accept("+"):
            pass
        tok = self.tok
        if tok.kind != "number":
            raise self._error("number")
        self.i += 1
        return sign * float(tok.text)

    def program(self) -> RewardProgram:
        components = []
        seen: dict[str, Token] = {}
        while self.tok.kind != "eof":
            start = self.tok
            comp = self.component()
            if comp.name in seen:
                raise ValidationError(
                    f"duplicate component name {comp.name!r} (line {start.line})")
            seen[comp.name] = start
            components.append(comp)
        if not components:
            raise self._error("'component'")
        return RewardProgram(tuple(components))

    def component(self) -> RewardComponent:
        self._expect("component")
        name = self._ident("component name").text
        self._expect("{")
        values: dict[str, object] = {}
        while not self._accept("}"):
            tok = self.tok
            if tok.kind != "ident" or tok.text not in FIELDS:
                raise self._error("one of temp, expr, weight, transform or '}'")
            if tok.text in values:
                raise ParseError(f"field {tok.text!r} given twice", tok.line, tok.column)
            self.i += 1
            self._expect("=")
            if tok.text == "expr":
                values["expr"] = self.expr()
            elif tok.text == "transform":
                values["transform"] = self._ident("transform name").text
            else:
                values[tok.text] = self._real()
        for required in ("temp", "expr", "weight"):
            if required not in values:
                tok = self.tokens[self.i - 1]
                raise ParseError(
                    f"component {name!r} is missing field {required!r}", tok.line, tok.column)
        return RewardComponent(
            name=name,
            expr=values["expr"],
            temperature=values["temp"],
            weight=values["weight"],
            transform=values.get("transform", DEFAULT_TRANSFORM),
        )

    def expr(self) -> Expr:
        node = self.term()
        while self.tok.kind == "punct" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.tok.kind == "punct" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            node = Binary(op, node, self.factor())
        return node

    def factor(self) -> Expr:
        tok = self.tok
        if tok.kind == "number":
            self.i += 1
            return Const(float(tok.text))
        if self._accept("-"):
            if self.tok.kind == "number":
                # a literal directly after '-' is a negative constant
                value = float(self.tok.text)
                self.i += 1
                return Const(-value)
            return Unary("neg", self.factor())
        if self._accept("("):
            node = self.expr()
            self._expect(")")
            return node
        if tok.kind == "ident":
            self.i += 1
            if self.tok.kind == "punct" and self.tok.text == "(":
                return self.call(tok)
            return Feature(tok.text)
        raise self._error("number, feature, function call or '('")

    def call(self, name_tok: Token) -> Expr:
        name = name_tok.text
        if name not in FUNCTIONS:
            raise ValidationError(
                f"unknown function {name!r} (line {name_tok.line}, column {name_tok.column})")
        self._expect("(")
        if name == "clamp":
            child = self.expr()
            self._expect(",")
            lo = self._real()
            self._expect(",")
            hi = self._real()
            self._expect(")")
            return Clamp(child, lo, hi)
        args = [self.expr()]
        while self._accept(","):
            args.append(self.expr())
        self._expect(")")
        arity = FUNCTIONS[name]
        if arity is not None and len(args) != arity:
            raise ValidationError(
                f"{name}() takes {arity} argument(s), got {len(args)} (line {name_tok.line})")
        if name == "norm":
            return Norm(tuple(args))
        if name in ("min", "max"):
            return Binary(name, args[0], args[1])
        return Unary(name, args[0])


def parse(text: str) -> RewardProgram:
    """Parse program text; raises ParseError or ValidationError."""
    program = _Parser(text).program()
    return RewardProgram(program.components, source_text=text)


def parse_expr(text: str) -> Expr:
    parser = _Parser(text)
    node = parser.expr()
    if parser.tok.kind != "eof":
        raise parser._error("end of expression")
    return node


def format_real(value: float) -> str:
    # repr is the shortest decimal that round-trips exactly
    text = repr(float(value))
    if text in ("inf", "-inf", "nan"):
        raise ValidationError(f"cannot print non-finite value {value!r}")
    return text


def format_expr(expr: Expr) -> str:
    if isinstance(expr, Const):
        return format_real(expr.value)
    if isinstance(expr, Feature):
        return expr.name
    if isinstance(expr, Unary):
        if expr.op == "neg":
            return f"-({format_expr(expr.child)})"
        return f"{expr.op}({format_expr(expr.child)})"
    if isinstance(expr, Binary):
        if expr.op in ("min", "max"):
            return f"{expr.op}({format_expr(expr.left)}, {format_expr(expr.right)})"
        return f"({format_expr(expr.left)} {expr.op} {format_expr(expr.right)})"
    if isinstance(expr, Norm):
        return "norm(" + ", ".join(format_expr(c) for c in expr.children) + ")"
    if isinstance(expr, Clamp):
        return f"clamp({format_expr(expr.child)}, {format_real(expr.lo)}, {format_real(expr.hi)})"
    raise TypeError(f"not an expression: {expr!r}")


def to_text(program: RewardProgram) -> str:
    """Canonical text: one block per component, fields in fixed order."""
    blocks = []
    for comp in program.components:
        blocks.append(
            f"component {comp.name} {{\n"
            f"  temp = {format_real(comp.temperature)}\n"
            f"  expr = {format_expr(comp.expr)}\n"
            f"  weight = {format_real(comp.weight)}\n"
            f"  transform = {comp.transform}\n"
            "}\n"
        )
    return "\n".join(blocks)

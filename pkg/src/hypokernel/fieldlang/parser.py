"""Recursive-descent parser for the field grammar.

Grammar (documented in the README):

    matrix    = row ("|" row)*
    row       = expr (";" expr)*
    expr      = term (("+" | "-") term)*
    term      = factor (("*" | "/") factor)*
    factor    = ("+" | "-") factor | power
    power     = atom ("^" ["-"] integer)?
    atom      = number | variable | function "(" expr ")" | "(" expr ")"
    variable  = "x" digits          (1-based index, at most the dimension d)
    function  = "sin" | "cos" | "exp" | "tanh"

A text without "|" parses as a vector field (one expression per component);
with "|" it parses as a matrix field, rows separated by "|", entries by ";".
"""

from __future__ import annotations

import re

from .expr import Add, Call, Const, Div, Expr, FUNCTIONS, Mul, Neg, Pow, Sub, Var
from .fields import MatrixField, VectorField


class FieldSyntaxError(ValueError):
    """Parse failure; carries the character position in the input."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^();|]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise FieldSyntaxError(f"unexpected character {text[pos:].lstrip()[0]!r}", pos)
        if m.lastgroup == "number":
            tokens.append(("number", m.group("number"), m.start("number")))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group("name"), m.start("name")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, dim: int):
        self.text = text
        self.dim = dim
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, val, pos = self.peek()
        if kind != "op" or val != op:
            raise FieldSyntaxError(f"expected {op!r}, found {val or 'end of input'!r}", pos)
        return self.advance()

    def at_op(self, *ops: str) -> bool:
        kind, val, _ = self.peek()
        return kind == "op" and val in ops

    def parse_expr(self) -> Expr:
        e = self.parse_term()
        while self.at_op("+", "-"):
            _, op, _ = self.advance()
            rhs = self.parse_term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def parse_term(self) -> Expr:
        e = self.parse_factor()
        while self.at_op("*", "/"):
            _, op, pos = self.advance()
            rhs = self.parse_factor()
            if op == "/":
                if isinstance(rhs, Const) and rhs.value == 0.0:
                    raise FieldSyntaxError("division by the constant 0", pos)
                e = Div(e, rhs)
            else:
                e = Mul(e, rhs)
        return e

    def parse_factor(self) -> Expr:
        if self.at_op("-"):
            self.advance()
            return Neg(self.parse_factor())
        if self.at_op("+"):
            self.advance()
            return self.parse_factor()
        return self.parse_power()

    def parse_power(self) -> Expr:
        base = self.parse_atom()
        if self.at_op("^"):
            self.advance()
            sign = 1
            if self.at_op("-"):
                self.advance()
                sign = -1
            kind, val, pos = self.peek()
            if kind != "number":
                raise FieldSyntaxError(f"expected an integer exponent, found {val!r}", pos)
            if not re.fullmatch(r"\d+", val):
                raise FieldSyntaxError(f"exponent must be an integer, got {val!r}", pos)
            self.advance()
            return Pow(base, sign * int(val))
        return base

    def parse_atom(self) -> Expr:
        kind, val, pos = self.peek()
        if kind == "number":
            self.advance()
            return Const(float(val))
        if kind == "name":
            self.advance()
            if val in FUNCTIONS:
                self.expect_op("(")
                arg = self.parse_expr()
                self.expect_op(")")
                return Call(val, arg)
            m = re.fullmatch(r"x(\d+)", val)
            if m is None:
                raise FieldSyntaxError(
                    f"unknown name {val!r}; variables are x1..x{self.dim}, "
                    f"functions are {', '.join(FUNCTIONS)}", pos)
            index = int(m.group(1))
            if not 1 <= index <= self.dim:
                raise FieldSyntaxError(
                    f"variable x{index} out of range for dimension {self.dim}", pos)
            return Var(index)
        if self.at_op("("):
            self.advance()
            e = self.parse_expr()
            self.expect_op(")")
            return e
        raise FieldSyntaxError(f"expected an expression, found {val or 'end of input'!r}", pos)


def parse_expr(text: str, d: int) -> Expr:
    """Parse a single scalar expression over x1..xd."""
    p = _Parser(text, d)
    e = p.parse_expr()
    kind, val, pos = p.peek()
    if kind != "end":
        raise FieldSyntaxError(f"trailing input {val!r}", pos)
    return e


def _parse_components(p: _Parser) -> list[Expr]:
    comps = [p.parse_expr()]
    while p.at_op(";"):
        p.advance()
        comps.append(p.parse_expr())
    return comps


def parse_vector(text: str, d: int) -> VectorField:
    """Parse semicolon-separated components into a vector field of dimension d."""
    p = _Parser(text, d)
    comps = _parse_components(p)
    kind, val, pos = p.peek()
    if kind != "end":
        raise FieldSyntaxError(f"trailing input {val!r}", pos)
    if len(comps) != d:
        raise FieldSyntaxError(f"expected {d} components, found {len(comps)}", len(text))
    return VectorField(tuple(comps), d)


def parse_matrix(text: str, d: int) -> MatrixField:
    """Parse |-separated rows of ;-separated entries into a d x d matrix field."""
    p = _Parser(text, d)
    rows = [_parse_components(p)]
    while p.at_op("|"):
        p.advance()
        rows.append(_parse_components(p))
    kind, val, pos = p.peek()
    if kind != "end":
        raise FieldSyntaxError(f"trailing input {val!r}", pos)
    if len(rows) != d or any(len(r) != d for r in rows):
        shape = f"{len(rows)} rows of lengths {[len(r) for r in rows]}"
        raise FieldSyntaxError(f"expected a {d}x{d} matrix, found {shape}", len(text))
    return MatrixField(tuple(tuple(r) for r in rows), d)


def parse_field(text: str, d: int) -> VectorField | MatrixField:
    """Parse a field; "|" selects a matrix, otherwise a vector."""
    if "|" in text:
        return parse_matrix(text, d)
    return parse_vector(text, d)

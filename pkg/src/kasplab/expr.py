"""A small recursive-descent parser for real potentials in one variable ``x``.

Grammar::

    arg        := expr (cmp expr)?          cmp in <, <=, >, >=, ==, !=
    expr       := term (('+' | '-') term)*
    term       := unary (('*' | '/') unary)*
    unary      := ('+' | '-') unary | power
    power      := atom (('^' | '**') unary)?
    atom       := number | 'x' | 'pi' | 'e' | name '(' arg (',' arg)* ')' | '(' expr ')'

Functions: exp, sin, cos, log, log1p, sqrt, abs, sign, tanh, and
``piecewise(c1, v1, c2, v2, ..., default)`` which takes the first value whose
condition holds. Nothing else is evaluated; there is no access to Python.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np


class ParseError(ValueError):
    def __init__(self, message: str, text: str, pos: int, line: int | None = None):
        self.text = text
        self.pos = pos
        self.line = line
        self.column = pos + 1
        where = f"line {line}, column {self.column}" if line is not None else f"column {self.column}"
        super().__init__(f"{message} at {where}: {text!r}")

    def at_line(self, line: int) -> "ParseError":
        msg = str(self).split(" at ", 1)[0]
        return ParseError(msg, self.text, self.pos, line)


_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\*\*|<=|>=|==|!=|[-+*/^(),<>])
""", re.VERBOSE)

UNARY = {
    "exp": np.exp, "sin": np.sin, "cos": np.cos, "log": np.log, "log1p": np.log1p,
    "sqrt": np.sqrt, "abs": np.abs, "sign": np.sign, "tanh": np.tanh,
}
CONSTANTS = {"pi": np.pi, "e": np.e}
COMPARE = {"<": np.less, "<=": np.less_equal, ">": np.greater, ">=": np.greater_equal,
           "==": np.equal, "!=": np.not_equal}
BINARY = {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide, "^": np.power}


def tokenize(text: str) -> list[tuple[str, str, int]]:
    out, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(), pos))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail(self, msg, tok=None):
        tok = tok or self.peek()
        raise ParseError(msg, self.text, tok[2])

    def expect(self, value):
        tok = self.take()
        if tok[1] != value:
            self.fail(f"expected {value!r}", tok)
        return tok

    def parse(self):
        if self.peek()[0] == "end":
            self.fail("empty expression")
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected {self.peek()[1]!r}")
        return node

    def arg(self):
        left = self.expr()
        tok = self.peek()
        if tok[1] in COMPARE:
            self.take()
            return ("cmp", tok[1], left, self.expr())
        return left

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = ("bin", op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = ("bin", op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok[1] in ("+", "-"):
            self.take()
            inner = self.unary()
            return inner if tok[1] == "+" else ("neg", inner)
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] in ("^", "**"):
            self.take()
            return ("bin", "^", base, self.unary())
        return base

    def atom(self):
        tok = self.take()
        kind, val, _ = tok
        if kind == "num":
            return ("num", float(val))
        if kind == "name":
            if val == "x":
                return ("x",)
            if val in CONSTANTS and self.peek()[1] != "(":
                return ("num", CONSTANTS[val])
            if val in UNARY or val == "piecewise":
                self.expect("(")
                args = [self.arg()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.arg())
                self.expect(")")
                if val == "piecewise":
                    if len(args) < 3 or len(args) % 2 == 0:
                        self.fail("piecewise needs condition/value pairs and a default", tok)
                    for c in args[0:-1:2]:
                        if c[0] != "cmp":
                            self.fail("piecewise condition must be a comparison", tok)
                    return ("piecewise", args)
                if len(args) != 1:
                    self.fail(f"{val} takes one argument", tok)
                if args[0][0] == "cmp":
                    self.fail("comparison outside piecewise", tok)
                return ("call", val, args[0])
            self.fail(f"unknown name {val!r}", tok)
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "end":
            self.fail("unexpected end of expression", tok)
        self.fail(f"unexpected {val!r}", tok)


def _eval(node, x):
    tag = node[0]
    if tag == "num":
        return np.full_like(x, node[1])
    if tag == "x":
        return x
    if tag == "neg":
        return -_eval(node[1], x)
    if tag == "bin":
        return BINARY[node[1]](_eval(node[2], x), _eval(node[3], x))
    if tag == "call":
        return UNARY[node[1]](_eval(node[2], x))
    if tag == "cmp":
        return COMPARE[node[1]](_eval(node[2], x), _eval(node[3], x))
    if tag == "piecewise":
        args = node[1]
        conds = [_eval(c, x) for c in args[0:-1:2]]
        vals = [_eval(v, x) for v in args[1:-1:2]]
        return np.select(conds, vals, default=_eval(args[-1], x))
    raise AssertionError(tag)


@dataclass(frozen=True)
class Expression:
    """A compiled potential; callable on arrays of x."""
    expr: str
    tree: tuple

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            out = _eval(self.tree, x)
        return np.asarray(out, dtype=float) * np.ones_like(x)

    @property
    def __name__(self):
        return self.expr


def parse(text: str) -> Expression:
    return Expression(text.strip(), _Parser(text).parse())


FIRST_ORDER_HEAD = "i_d_dx"
SECOND_ORDER_HEAD = "-d2_dx2"


def parse_operator(text: str) -> tuple[str, Expression]:
    """``i_d_dx [+/- expr]`` or ``-d2_dx2 [+/- expr]`` -> (kind, potential)."""
    s = text.strip()
    for head, kind in ((FIRST_ORDER_HEAD, "first_order"), (SECOND_ORDER_HEAD, "sturm_liouville")):
        if s.startswith(head):
            rest = s[len(head):].strip()
            offset = text.index(head) + len(head)
            if not rest:
                return kind, parse("0")
            if rest[0] not in "+-":
                raise ParseError("expected '+' or '-' after the derivative", text, offset)
            sign, body = rest[0], rest[1:]
            try:
                pot = parse(body)
            except ParseError as exc:
                raise ParseError(str(exc).split(" at ", 1)[0], text,
                                 text.index(body, offset) + exc.pos) from None
            if sign == "-":
                pot = Expression(f"-({pot.expr})", ("neg", pot.tree))
            return kind, pot
    raise ParseError("operator must start with 'i_d_dx' or '-d2_dx2'", text, 0)

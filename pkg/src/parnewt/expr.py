"""A small expression language for coefficient data.

Grammar::

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := "-" factor | base ("^" ["-"] number)?
    base   := number | ident | func "(" expr ("," expr)* ")" | "(" expr ")"

Identifiers are ``x1, x2, t, u, xi1, xi2`` and the constant ``pi``.
Trees are immutable and compare structurally, so ``parse(to_text(tree))``
reproduces ``tree`` exactly.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

VARIABLES = ("x1", "x2", "t", "u", "xi1", "xi2")
CONSTANTS = {"pi": math.pi}

# name -> arity; ``ifle(a, b, p, q)`` is p where a <= b else q and only
# appears in derivatives of min/max
FUNCTIONS = {
    "sin": 1, "cos": 1, "exp": 1, "log": 1, "abs": 1, "sign": 1, "sqrt": 1,
    "min": 2, "max": 2, "ifle": 4,
}


class ExpressionError(ValueError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} at offset {offset}"
        super().__init__(message)


class ExpressionSyntaxError(ExpressionError):
    pass


class UnknownIdentifierError(ExpressionError):
    pass


class ArityError(ExpressionError):
    pass


class DomainError(ArithmeticError):
    """Evaluation left the domain of a primitive (log, division, ...).

    ``expression`` is the offending subexpression, ``index`` the flat index
    of the first bad element in the broadcast evaluation shape.
    """

    def __init__(self, message, expression=None, index=None):
        self.expression = expression
        self.index = index
        super().__init__(message)


# ---------------------------------------------------------------- trees


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Bin:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: float


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


ZERO = Num(0.0)
ONE = Num(1.0)


def variables(node) -> frozenset:
    if isinstance(node, Var):
        return frozenset([node.name])
    if isinstance(node, Num):
        return frozenset()
    if isinstance(node, Neg):
        return variables(node.arg)
    if isinstance(node, Bin):
        return variables(node.left) | variables(node.right)
    if isinstance(node, Pow):
        return variables(node.base)
    return frozenset().union(*(variables(a) for a in node.args))


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<id>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(text):
    text = text.replace("−", "-").replace("·", "*")
    tokens, pos = [], 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = len(text[pos:]) - len(text[pos:].lstrip()) + pos
            raise ExpressionSyntaxError(f"unexpected character {text[bad]!r}", bad)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.peek()
        if val != value or kind != "op":
            found = "end of input" if kind == "end" else repr(val)
            raise ExpressionSyntaxError(f"expected {value!r}, found {found}", pos)
        return self.take()

    def parse(self):
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"unexpected {val!r}", pos)
        return node

    def operand(self, rule, op_tok):
        # a binary operator with no usable right operand is reported at the operator
        kind, val, _ = self.peek()
        if kind == "end" or (kind == "op" and val not in "(-"):
            raise ExpressionSyntaxError(f"missing operand after {op_tok[1]!r}", op_tok[2])
        return rule()

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            tok = self.take()
            node = Bin(tok[1], node, self.operand(self.term, tok))
        return node

    def term(self):
        node = self.factor()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            tok = self.take()
            node = Bin(tok[1], node, self.operand(self.factor, tok))
        return node

    def factor(self):
        kind, val, pos = self.peek()
        if kind == "op" and val == "-":
            tok = self.take()
            return Neg(self.operand(self.factor, tok))
        node = self.base()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            tok = self.take()
            sign = 1.0
            if self.peek()[:2] == ("op", "-"):
                self.take()
                sign = -1.0
            kind, val, pos = self.peek()
            if kind != "num":
                raise ExpressionSyntaxError("exponent must be a number", tok[2] if kind == "end" else pos)
            self.take()
            node = Pow(node, sign * float(val))
        return node

    def base(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "id":
            if self.peek()[:2] == ("op", "("):
                if val not in FUNCTIONS:
                    raise UnknownIdentifierError(f"unknown function {val!r}", pos)
                self.take()
                args = [self.expr()]
                while self.peek()[:2] == ("op", ","):
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[val]:
                    raise ArityError(f"{val} takes {FUNCTIONS[val]} argument(s), got {len(args)}", pos)
                return Call(val, tuple(args))
            if val in CONSTANTS:
                return Num(CONSTANTS[val])
            if val in FUNCTIONS:
                raise ExpressionSyntaxError(f"function {val!r} needs arguments", pos)
            if val not in VARIABLES:
                raise UnknownIdentifierError(f"unknown identifier {val!r}", pos)
            return Var(val)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ExpressionSyntaxError(f"unexpected {found}", pos)


def parse(text: str):
    """Parse ``text`` into an expression tree."""
    if not isinstance(text, str):
        raise TypeError("expression must be a string")
    return _Parser(text).parse()


def to_text(node) -> str:
    """Fully parenthesised text that parses back to the same tree."""
    if isinstance(node, Num):
        s = repr(float(node.value))
        return f"(-{s[1:]})" if node.value < 0 or s.startswith("-") else s
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_text(node.arg)})"
    if isinstance(node, Bin):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Pow):
        return f"({to_text(node.base)}^{repr(float(node.exponent))})"
    return f"{node.name}(" + ", ".join(to_text(a) for a in node.args) + ")"


# ---------------------------------------------------------------- simplifying constructors


def _is(node, value):
    return isinstance(node, Num) and node.value == value


def neg(a):
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a, b):
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return Bin("+", a, b)


def sub(a, b):
    if _is(b, 0):
        return a
    if _is(a, 0):
        return neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    return Bin("-", a, b)


def mul(a, b):
    if _is(a, 0) or _is(b, 0):
        return ZERO
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    if _is(a, -1):
        return neg(b)
    if _is(b, -1):
        return neg(a)
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    if isinstance(b, Num):
        a, b = b, a
    if isinstance(a, Num) and isinstance(b, Bin) and b.op == "*" and isinstance(b.left, Num):
        return mul(Num(a.value * b.left.value), b.right)
    return Bin("*", a, b)


def div(a, b):
    if _is(b, 1):
        return a
    if _is(a, 0) and not _is(b, 0):
        return ZERO
    if isinstance(a, Num) and isinstance(b, Num) and b.value != 0:
        return Num(a.value / b.value)
    return Bin("/", a, b)


def power(a, c):
    if c == 1:
        return a
    if c == 0:
        return ONE
    if isinstance(a, Num) and (a.value > 0 or float(c).is_integer()) and not (a.value == 0 and c < 0):
        return Num(a.value**c)
    return Pow(a, float(c))


def call(name, *args):
    return Call(name, tuple(args))


# ---------------------------------------------------------------- differentiation


def diff(node, var: str):
    """Symbolic derivative with respect to the variable ``var``.

    Kinked primitives use fixed one-sided conventions: ``sign' = 0``,
    ``abs'(0) = 0`` and min/max follow the first argument on ties.
    """
    if var not in variables(node):
        return ZERO
    if isinstance(node, Var):
        return ONE
    if isinstance(node, Neg):
        return neg(diff(node.arg, var))
    if isinstance(node, Bin):
        a, b = node.left, node.right
        da, db = diff(a, var), diff(b, var)
        if node.op == "+":
            return add(da, db)
        if node.op == "-":
            return sub(da, db)
        if node.op == "*":
            return add(mul(da, b), mul(a, db))
        if _is(db, 0):
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), power(b, 2))
    if isinstance(node, Pow):
        return mul(mul(Num(node.exponent), power(node.base, node.exponent - 1)), diff(node.base, var))
    name, args = node.name, node.args
    if name == "ifle":
        a, b, p, q = args
        dp, dq = diff(p, var), diff(q, var)
        return dp if dp == dq else call("ifle", a, b, dp, dq)
    if name in ("min", "max"):
        a, b = args
        da, db = diff(a, var), diff(b, var)
        if da == db:
            return da
        return call("ifle", a, b, da, db) if name == "min" else call("ifle", b, a, da, db)
    (a,) = args
    da = diff(a, var)
    if name == "sin":
        return mul(call("cos", a), da)
    if name == "cos":
        return mul(neg(call("sin", a)), da)
    if name == "exp":
        return mul(node, da)
    if name == "log":
        return div(da, a)
    if name == "sqrt":
        return div(da, mul(Num(2.0), node))
    if name == "abs":
        return mul(call("sign", a), da)
    if name == "sign":
        return ZERO
    raise AssertionError(name)  # pragma: no cover


# ---------------------------------------------------------------- evaluation


def _first_bad(mask):
    flat = np.flatnonzero(np.asarray(mask).ravel())
    return int(flat[0]) if flat.size else None


def _guard(mask, message, node):
    if np.any(mask):
        raise DomainError(f"{message} in '{to_text(node)}'", to_text(node), _first_bad(mask))


def evaluate(node, env: dict):
    """Evaluate ``node`` with numpy broadcasting; ``env`` maps variable names to values."""
    with np.errstate(all="ignore"):
        return _eval(node, env)


def _eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            raise UnknownIdentifierError(f"no value bound to {node.name!r}") from None
    if isinstance(node, Neg):
        return -_eval(node.arg, env)
    if isinstance(node, Bin):
        a, b = _eval(node.left, env), _eval(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        _guard(np.asarray(b) == 0, "division by zero", node)
        return np.true_divide(a, b)
    if isinstance(node, Pow):
        a = np.asarray(_eval(node.base, env), dtype=float)
        c = node.exponent
        if not float(c).is_integer():
            _guard(a < 0, "fractional power of a negative number", node)
        if c < 0:
            _guard(a == 0, "negative power of zero", node)
        return np.power(a, c)
    args = [_eval(a, env) for a in node.args]
    name = node.name
    if name == "ifle":
        return np.where(np.asarray(args[0]) <= np.asarray(args[1]), args[2], args[3])
    if name == "min":
        return np.minimum(*args)
    if name == "max":
        return np.maximum(*args)
    (a,) = args
    if name == "log":
        _guard(np.asarray(a) <= 0, "log of a non-positive number", node)
        return np.log(a)
    if name == "sqrt":
        _guard(np.asarray(a) < 0, "sqrt of a negative number", node)
        return np.sqrt(a)
    return {"sin": np.sin, "cos": np.cos, "exp": np.exp, "abs": np.abs, "sign": np.sign}[name](a)

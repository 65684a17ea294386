"""Scalar field expressions over two variables.

A small recursive-descent parser turns text such as ``"1 - x^2 - y^2"`` into an
immutable tree that can be evaluated on numpy arrays and differentiated
symbolically. ``x`` and ``y`` are the two coordinates (``xi1``/``xi2`` are
accepted as aliases).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ExpressionError",
    "ExpressionSyntaxError",
    "UnknownIdentifierError",
    "FieldExpression",
    "parse_field_expression",
    "const",
]

VARIABLE_ALIASES = {"x": "x", "y": "y", "xi1": "x", "xi2": "y"}
CONSTANTS = {"pi": math.pi, "e": math.e}
FUNCTIONS = ("sin", "cos", "exp", "sqrt", "log")


class ExpressionError(ValueError):
    pass


class ExpressionSyntaxError(ExpressionError):
    def __init__(self, message: str, text: str, position: int):
        self.text = text
        self.position = position
        pointer = " " * position + "^"
        super().__init__(f"{message} at position {position}\n  {text}\n  {pointer}")


class UnknownIdentifierError(ExpressionSyntaxError):
    pass


# --------------------------------------------------------------------------
# tree nodes


class Node:
    __slots__ = ()

    def eval(self, env):
        raise NotImplementedError

    def diff(self, var: str) -> "Node":
        raise NotImplementedError

    def is_const(self, value=None) -> bool:
        return False


@dataclass(frozen=True)
class Const(Node):
    value: float

    def eval(self, env):
        return self.value

    def diff(self, var):
        return ZERO

    def is_const(self, value=None):
        return value is None or self.value == value

    def __str__(self):
        if self.value == int(self.value) and abs(self.value) < 1e15:
            s = str(int(self.value))
        else:
            s = repr(self.value)
        return f"({s})" if self.value < 0 else s


ZERO = Const(0.0)
ONE = Const(1.0)
TWO = Const(2.0)


@dataclass(frozen=True)
class Var(Node):
    name: str

    def eval(self, env):
        return env[self.name]

    def diff(self, var):
        return ONE if var == self.name else ZERO

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg(Node):
    arg: Node

    def eval(self, env):
        return -self.arg.eval(env)

    def diff(self, var):
        return neg(self.arg.diff(var))

    def __str__(self):
        return f"(-{self.arg})"


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node

    def eval(self, env):
        a = self.left.eval(env)
        b = self.right.eval(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            return a / b
        return _power(a, b)

    def diff(self, var):
        u, v = self.left, self.right
        du, dv = u.diff(var), v.diff(var)
        if self.op == "+":
            return add(du, dv)
        if self.op == "-":
            return sub(du, dv)
        if self.op == "*":
            return add(mul(du, v), mul(u, dv))
        if self.op == "/":
            return div(sub(mul(du, v), mul(u, dv)), power(v, TWO))
        # power
        if isinstance(v, Const):
            if v.value == 0.0:
                return ZERO
            return mul(mul(Const(v.value), power(u, Const(v.value - 1.0))), du)
        # general u^v = exp(v log u)
        return mul(self, add(mul(dv, func("log", u)), div(mul(v, du), u)))

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class Func(Node):
    name: str
    arg: Node

    def eval(self, env):
        a = self.arg.eval(env)
        return getattr(np, self.name)(a)

    def diff(self, var):
        u = self.arg
        du = u.diff(var)
        if du.is_const(0.0):
            return ZERO
        if self.name == "sin":
            outer = func("cos", u)
        elif self.name == "cos":
            outer = neg(func("sin", u))
        elif self.name == "exp":
            outer = self
        elif self.name == "sqrt":
            outer = div(ONE, mul(TWO, self))
        elif self.name == "log":
            outer = div(ONE, u)
        else:  # pragma: no cover - guarded by the parser
            raise ExpressionError(f"no derivative rule for {self.name}")
        return mul(outer, du)

    def __str__(self):
        return f"{self.name}({self.arg})"


def _power(a, b):
    if np.ndim(b) == 0 and float(b) == int(b):
        return a ** int(b) if np.ndim(a) == 0 else np.power(a, int(b))
    return np.power(a, b)


# --------------------------------------------------------------------------
# simplifying constructors


def const(value: float) -> Node:
    return Const(float(value))


def add(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if a.is_const(0.0):
        return b
    if b.is_const(0.0):
        return a
    return BinOp("+", a, b)


def sub(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if b.is_const(0.0):
        return a
    if a.is_const(0.0):
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if a.is_const(0.0) or b.is_const(0.0):
        return ZERO
    if a.is_const(1.0):
        return b
    if b.is_const(1.0):
        return a
    if a.is_const(-1.0):
        return neg(b)
    if b.is_const(-1.0):
        return neg(a)
    return BinOp("*", a, b)


def div(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    if a.is_const(0.0):
        return ZERO
    if b.is_const(1.0):
        return a
    return BinOp("/", a, b)


def power(a: Node, b: Node) -> Node:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(float(_power(a.value, b.value)))
    if b.is_const(0.0):
        return ONE
    if b.is_const(1.0):
        return a
    return BinOp("^", a, b)


def neg(a: Node) -> Node:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def func(name: str, a: Node) -> Node:
    if isinstance(a, Const):
        return Const(float(getattr(np, name)(a.value)))
    return Func(name, a)


# --------------------------------------------------------------------------
# parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExpressionSyntaxError(f"unexpected character {text[bad]!r}", text, bad)
        kind = m.lastgroup
        start = m.start(kind)
        value = m.group(kind)
        if value == "**":
            value = "^"
        tokens.append((kind, value, start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    # expr   := term (('+'|'-') term)*
    # term   := unary (('*'|'/') unary)*
    # unary  := ('+'|'-') unary | power
    # power  := atom ('^' unary)?
    # atom   := number | name | name '(' expr ')' | '(' expr ')'

    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, v, pos = self.take()
        if v != value or kind == "end":
            found = "end of input" if kind == "end" else repr(v)
            raise ExpressionSyntaxError(f"expected {value!r}, found {found}", self.text, pos)

    def parse(self) -> Node:
        node = self.expr()
        kind, v, pos = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"unexpected token {v!r}", self.text, pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            node = add(node, rhs) if op == "+" else sub(node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            node = mul(node, rhs) if op == "*" else div(node, rhs)
        return node

    def unary(self):
        kind, v, _ = self.peek()
        if kind == "op" and v in ("+", "-"):
            self.take()
            arg = self.unary()
            return arg if v == "+" else neg(arg)
        return self.power()

    def power(self):
        base = self.atom()
        kind, v, _ = self.peek()
        if kind == "op" and v == "^":
            self.take()
            return power(base, self.unary())
        return base

    def atom(self):
        kind, v, pos = self.take()
        if kind == "num":
            return Const(float(v))
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if v not in FUNCTIONS:
                    raise UnknownIdentifierError(f"unknown function {v!r}", self.text, pos)
                self.take()
                arg = self.expr()
                self.expect(")")
                return func(v, arg)
            if v in VARIABLE_ALIASES:
                return Var(VARIABLE_ALIASES[v])
            if v in CONSTANTS:
                return Const(CONSTANTS[v])
            raise UnknownIdentifierError(f"unknown identifier {v!r}", self.text, pos)
        if kind == "op" and v == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(v)
        raise ExpressionSyntaxError(f"unexpected {found}", self.text, pos)


# --------------------------------------------------------------------------
# public wrapper


class FieldExpression:
    """Immutable scalar field f(x, y) with exact symbolic derivatives."""

    def __init__(self, node: Node, text: str | None = None):
        self._node = node
        self._text = text
        self._derivs: dict[str, FieldExpression] = {}

    @property
    def node(self) -> Node:
        return self._node

    @property
    def text(self) -> str:
        return self._text if self._text is not None else str(self._node)

    def __repr__(self):
        return f"FieldExpression({self.text!r})"

    def __str__(self):
        return self.text

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            value = self._node.eval({"x": x, "y": y})
        shape = np.broadcast_shapes(x.shape, y.shape)
        return np.array(np.broadcast_to(value, shape), dtype=float)

    evaluate = __call__

    def diff(self, var: str) -> "FieldExpression":
        """Symbolic partial derivative with respect to ``x`` or ``y``."""
        var = VARIABLE_ALIASES.get(var, var)
        if var not in ("x", "y"):
            raise ExpressionError(f"cannot differentiate with respect to {var!r}")
        cache = self._derivs
        if var not in cache:
            cache[var] = FieldExpression(self._node.diff(var))
        return cache[var]

    def gradient(self):
        return self.diff("x"), self.diff("y")

    def hessian(self):
        fx, fy = self.gradient()
        fxy = fx.diff("y")
        return ((fx.diff("x"), fxy), (fxy, fy.diff("y")))

    def is_constant(self, value: float | None = None) -> bool:
        return isinstance(self._node, Const) and self._node.is_const(value)

    # arithmetic on expressions builds new trees
    def _wrap(self, other):
        if isinstance(other, FieldExpression):
            return other._node
        return Const(float(other))

    def __add__(self, other):
        return FieldExpression(add(self._node, self._wrap(other)))

    __radd__ = __add__

    def __sub__(self, other):
        return FieldExpression(sub(self._node, self._wrap(other)))

    def __rsub__(self, other):
        return FieldExpression(sub(self._wrap(other), self._node))

    def __mul__(self, other):
        return FieldExpression(mul(self._node, self._wrap(other)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return FieldExpression(div(self._node, self._wrap(other)))

    def __rtruediv__(self, other):
        return FieldExpression(div(self._wrap(other), self._node))

    def __neg__(self):
        return FieldExpression(neg(self._node))

    def __pow__(self, other):
        return FieldExpression(power(self._node, self._wrap(other)))


def parse_field_expression(text) -> FieldExpression:
    """Parse ``text`` into a :class:`FieldExpression`.

    Numbers are accepted as-is so JSON files can write ``0`` instead of ``"0"``.
    """
    if isinstance(text, FieldExpression):
        return text
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return FieldExpression(Const(float(text)), repr(text))
    if not isinstance(text, str):
        raise ExpressionError(f"expression must be a string, got {type(text).__name__}")
    if text.strip() == "":
        raise ExpressionSyntaxError("empty expression", text, 0)
    return FieldExpression(_Parser(text).parse(), text)

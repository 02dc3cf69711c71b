"""Text expressions for drift and interaction fields.

Fields are written as strings over the variables ``x0 .. x{d-1}`` and
evaluated on numpy arrays of points with shape ``(..., d)``.  First and
second derivatives are computed in forward mode with (nested) dual numbers,
so the values are exact up to round-off.

Grammar (highest precedence first)::

    atom    := number | name | name '(' expr ')' | '(' expr ')'
    power   := atom ['^' unary]          # right associative
    unary   := '-' unary | power
    term    := unary (('*' | '/') unary)*
    expr    := term (('+' | '-') term)*

Names are the variables, the constants ``pi`` and ``e``, user constants
passed to :func:`parse`, and the functions sin, cos, tan, exp, log, tanh,
sqrt, abs.  Angles are radians.  ``a ^ b`` with a non-integer exponent
requires a positive base.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

__all__ = [
    "ExprError",
    "ParseError",
    "DomainError",
    "Expr",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "Dual",
    "Field",
    "parse",
    "to_text",
    "evaluate",
    "grad",
    "jac",
    "hessian",
]

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "tanh", "sqrt", "abs")
BUILTIN_CONSTANTS = {"pi": math.pi, "e": math.e}


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    """Syntax error; ``offset`` is the byte offset into the source text."""

    def __init__(self, message: str, text: str, pos: int):
        self.offset = len(text[:pos].encode("utf-8"))
        self.text = text
        super().__init__(f"{message} at byte offset {self.offset}: {text!r}")


class DomainError(ExprError, ArithmeticError):
    def __init__(self, message: str, node: "Expr"):
        self.node = node
        super().__init__(f"{message} in sub-expression '{to_text(node)}'")


# --- AST -------------------------------------------------------------------


class Expr:
    """Base class of the expression AST (immutable, hashable)."""

    __slots__ = ()


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    index: int


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    name: str
    arg: Expr


# --- parsing ---------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str):
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[bad]!r}", text, bad)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, dimension: int, constants: Mapping[str, float]):
        self.text = text
        self.dim = dimension
        self.constants = {**BUILTIN_CONSTANTS, **dict(constants)}
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value or kind == "end":
            found = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {found}", self.text, pos)

    def parse(self) -> Expr:
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", self.text, pos)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            arg = self.unary()
            # Fold signed literals so that printing round-trips.
            if isinstance(arg, Num):
                return Num(-arg.value)
            return Neg(arg)
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val in FUNCTIONS:
                if self.peek()[1] != "(":
                    raise ParseError(f"function {val!r} needs an argument list", self.text, pos)
                self.take()
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != 1:
                    raise ParseError(
                        f"arity mismatch: {val} takes 1 argument, got {len(args)}", self.text, pos
                    )
                return Call(val, args[0])
            m = re.fullmatch(r"x(\d+)", val)
            if m:
                idx = int(m.group(1))
                if idx >= self.dim:
                    raise ParseError(
                        f"variable index out of range: {val} with dimension {self.dim}",
                        self.text,
                        pos,
                    )
                return Var(idx)
            if val in self.constants:
                return Num(float(self.constants[val]))
            raise ParseError(f"unknown identifier {val!r}", self.text, pos)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {found}", self.text, pos)


def parse(text: str, dimension: int, constants: Mapping[str, float] | None = None) -> Expr:
    """Parse ``text`` into an AST over ``dimension`` variables."""
    if not isinstance(text, str) or not text.strip():
        raise ParseError("empty expression", text if isinstance(text, str) else "", 0)
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    return _Parser(text, dimension, constants or {}).parse()


def to_text(node: Expr) -> str:
    """Render an AST as text that parses back to the same AST."""
    if isinstance(node, Num):
        r = repr(float(node.value))
        if r in ("inf", "-inf", "nan"):
            raise ExprError(f"non-finite literal {r}")
        return f"({r})" if node.value < 0 or r.startswith("-") else r
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Neg):
        return f"(-{to_text(node.arg)})"
    if isinstance(node, BinOp):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Call):
        return f"{node.name}({to_text(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


# --- dual numbers ----------------------------------------------------------


class Dual:
    """``re + du * eps`` with ``eps**2 = 0``.

    ``re`` and ``du`` may be floats, numpy arrays or Duals themselves, which
    gives second derivatives by nesting.
    """

    __slots__ = ("re", "du")

    def __init__(self, re, du):
        self.re = re
        self.du = du

    def __repr__(self):
        return f"Dual({self.re!r}, {self.du!r})"

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re + other.re, self.du + other.du)
        return Dual(self.re + other, self.du)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re - other.re, self.du - other.du)
        return Dual(self.re - other, self.du)

    def __rsub__(self, other):
        return Dual(other - self.re, -self.du)

    def __neg__(self):
        return Dual(-self.re, -self.du)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re * other.re, self.re * other.du + self.du * other.re)
        return Dual(self.re * other, self.du * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            q = self.re / other.re
            return Dual(q, (self.du - q * other.du) / other.re)
        return Dual(self.re / other, self.du / other)

    def __rtruediv__(self, other):
        q = other / self.re
        return Dual(q, -q * self.du / self.re)


def _real(v):
    while isinstance(v, Dual):
        v = v.re
    return v


def _sin(v):
    if isinstance(v, Dual):
        return Dual(_sin(v.re), _cos(v.re) * v.du)
    return np.sin(v)


def _cos(v):
    if isinstance(v, Dual):
        return Dual(_cos(v.re), -_sin(v.re) * v.du)
    return np.cos(v)


def _tan(v):
    if isinstance(v, Dual):
        t = _tan(v.re)
        return Dual(t, (1 + t * t) * v.du)
    return np.tan(v)


def _exp(v):
    if isinstance(v, Dual):
        ev = _exp(v.re)
        return Dual(ev, ev * v.du)
    return np.exp(v)


def _log(v):
    if isinstance(v, Dual):
        return Dual(_log(v.re), v.du / v.re)
    return np.log(v)


def _tanh(v):
    if isinstance(v, Dual):
        t = _tanh(v.re)
        return Dual(t, (1 - t * t) * v.du)
    return np.tanh(v)


def _sqrt(v):
    if isinstance(v, Dual):
        s = _sqrt(v.re)
        return Dual(s, v.du / (2 * s))
    return np.sqrt(v)


def _sign(v):
    return np.sign(_real(v))


def _abs(v):
    if isinstance(v, Dual):
        return Dual(_abs(v.re), _sign(v.re) * v.du)
    return np.abs(v)


_UNARY = {
    "sin": _sin,
    "cos": _cos,
    "tan": _tan,
    "exp": _exp,
    "log": _log,
    "tanh": _tanh,
    "sqrt": _sqrt,
    "abs": _abs,
}


def _pow(base, expo, node):
    ev = _real(expo)
    bv = _real(base)
    if not isinstance(expo, Dual) and np.all(np.asarray(ev) == np.round(ev)):
        k = np.asarray(ev)
        if k.ndim == 0:
            k = int(k)
            if k < 0 and np.any(bv == 0):
                raise DomainError("division by zero", node)
            return _int_pow(base, k)
    if np.any(np.asarray(bv) <= 0):
        raise DomainError("non-integer power of a non-positive base", node)
    return _exp(expo * _log(base))


def _int_pow(base, k: int):
    if k == 0:
        return base * 0 + 1.0
    if k < 0:
        return 1.0 / _int_pow(base, -k)
    result = None
    acc = base
    while k:
        if k & 1:
            result = acc if result is None else result * acc
        k >>= 1
        if k:
            acc = acc * acc
    return result


def _eval(node: Expr, xs):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return xs[node.index]
    if isinstance(node, Neg):
        return -_eval(node.arg, xs)
    if isinstance(node, BinOp):
        a = _eval(node.left, xs)
        b = _eval(node.right, xs)
        op = node.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if np.any(np.asarray(_real(b)) == 0):
                raise DomainError("division by zero", node)
            return a / b
        return _pow(a, b, node)
    if isinstance(node, Call):
        a = _eval(node.arg, xs)
        name = node.name
        av = np.asarray(_real(a))
        if name == "log" and np.any(av <= 0):
            raise DomainError("log of a non-positive value", node)
        if name == "sqrt":
            if np.any(av < 0):
                raise DomainError("sqrt of a negative value", node)
            if isinstance(a, Dual) and np.any(av == 0):
                raise DomainError("sqrt is not differentiable at 0", node)
        if name == "tan" and np.any(np.cos(av) == 0):
            raise DomainError("tan at a pole", node)
        return _UNARY[name](a)
    raise TypeError(f"not an expression node: {node!r}")


def _split(x, d: int):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != d:
        raise ValueError(f"point has trailing dimension {x.shape[-1]}, expected {d}")
    return [x[..., k] for k in range(d)], x.shape[:-1]


def _broadcast(v, shape):
    return np.broadcast_to(np.asarray(v, dtype=float), shape).copy()


def evaluate(node: Expr, x, dimension: int | None = None):
    """Value of a scalar expression at points ``x`` of shape ``(..., d)``."""
    d = np.shape(x)[-1] if dimension is None else dimension
    xs, shape = _split(x, d)
    return _broadcast(_eval(node, xs), shape)


def _directional(node: Expr, xs, k: int):
    """Derivative of ``node`` along coordinate ``k`` (one forward pass)."""
    duals = [Dual(v, 1.0 if i == k else 0.0) for i, v in enumerate(xs)]
    out = _eval(node, duals)
    return out.du if isinstance(out, Dual) else 0.0


def grad(node: Expr, x, dimension: int | None = None):
    """Gradient of a scalar expression, shape ``(..., d)``."""
    d = np.shape(x)[-1] if dimension is None else dimension
    xs, shape = _split(x, d)
    return np.stack([_broadcast(_directional(node, xs, k), shape) for k in range(d)], axis=-1)


def jac(nodes: Sequence[Expr], x, dimension: int | None = None):
    """Jacobian of a vector of expressions, shape ``(..., m, d)``."""
    return np.stack([grad(n, x, dimension) for n in nodes], axis=-2)


def hessian(node: Expr, x, dimension: int | None = None):
    """Hessian of a scalar expression via nested duals, shape ``(..., d, d)``."""
    d = np.shape(x)[-1] if dimension is None else dimension
    xs, shape = _split(x, d)
    out = np.empty(shape + (d, d))
    for i in range(d):
        for j in range(i, d):
            duals = []
            for k, v in enumerate(xs):
                inner = Dual(v, 1.0 if k == j else 0.0)
                duals.append(Dual(inner, Dual(1.0 if k == i else 0.0, 0.0)))
            res = _eval(node, duals)
            val = 0.0
            if isinstance(res, Dual) and isinstance(res.du, Dual):
                val = res.du.du
            out[..., i, j] = out[..., j, i] = _broadcast(val, shape)
    return out


Source = Union[str, Sequence[str]]


class Field:
    """A scalar or d-vector field on R^d built from text expressions.

    Immutable after construction and safe to share between workers.
    """

    def __init__(self, components: Sequence[Expr], dim: int, vector: bool, sources=None):
        self.components = tuple(components)
        self.dim = int(dim)
        self.vector = bool(vector)
        self.sources = tuple(sources) if sources is not None else tuple(
            to_text(c) for c in self.components
        )
        if self.vector and len(self.components) != self.dim:
            raise ExprError(
                f"vector field needs {self.dim} components, got {len(self.components)}"
            )
        if not self.vector and len(self.components) != 1:
            raise ExprError("scalar field needs exactly one component")

    @classmethod
    def parse(cls, source: Source, dim: int, constants: Mapping[str, float] | None = None):
        """Scalar field from a string, vector field from a list of strings."""
        if isinstance(source, str):
            return cls([parse(source, dim, constants)], dim, vector=False, sources=[source])
        source = list(source)
        nodes = [parse(s, dim, constants) for s in source]
        return cls(nodes, dim, vector=True, sources=source)

    @classmethod
    def constant(cls, values, dim: int):
        values = np.atleast_1d(np.asarray(values, dtype=float))
        return cls([Num(float(v)) for v in values], dim, vector=len(values) > 1 or dim == 1)

    @property
    def arity(self) -> int:
        return self.dim if self.vector else 1

    def __repr__(self):
        kind = "vector" if self.vector else "scalar"
        return f"Field({kind}, dim={self.dim}, {list(self.sources)!r})"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        xs, shape = _split(x, self.dim)
        vals = [_broadcast(_eval(c, xs), shape) for c in self.components]
        if self.vector:
            return np.stack(vals, axis=-1)
        return vals[0]

    eval = __call__

    def grad(self, x):
        if self.vector:
            raise ExprError("grad of a vector field; use jac")
        return grad(self.components[0], x, self.dim)

    def jac(self, x):
        if not self.vector:
            return self.grad(x)[..., None, :]
        return jac(self.components, x, self.dim)

    def hessian(self, x):
        if self.vector:
            raise ExprError("hessian of a vector field")
        return hessian(self.components[0], x, self.dim)

    @property
    def is_zero(self) -> bool:
        return all(isinstance(c, Num) and c.value == 0.0 for c in self.components)

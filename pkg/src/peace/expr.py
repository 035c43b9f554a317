"""Small expression language for structural functions and densities.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := base ('^' unary)?
    base   := number | ident | '(' expr ')' | func '(' expr (',' expr)* ')'

Functions: exp, ln, sqrt, sin, cos, abs (one argument) and pow (two).
A minus sign written directly in front of a numeric literal is folded into
the constant, so ``-2`` parses to ``Const(-2.0)`` while ``-(2)`` and ``-2^x``
stay negation nodes.  The printer relies on that to round-trip.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Union

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "ExpressionError",
    "ParseError",
    "UnknownIdentifierError",
    "ArityError",
    "NonDifferentiableError",
    "FUNCTIONS",
    "parse_expression",
    "to_string",
    "evaluate",
    "differentiate",
    "free_vars",
    "contains_call",
    "substitute",
    "simplify",
]

FUNCTIONS: dict[str, int] = {
    "exp": 1,
    "ln": 1,
    "sqrt": 1,
    "sin": 1,
    "cos": 1,
    "abs": 1,
    "pow": 2,
}


class ExpressionError(ValueError):
    """Base class for expression problems; ``position`` is a 0-based offset."""

    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class ParseError(ExpressionError):
    pass


class UnknownIdentifierError(ExpressionError):
    pass


class ArityError(ExpressionError):
    pass


class NonDifferentiableError(ExpressionError):
    """Raised when differentiating through ``abs``; callers fall back to finite differences."""


# --------------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Expr", ...]


Expr = Union[Const, Var, Neg, BinOp, Call]


# ------------------------------------------------------------------------- lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, names: frozenset[str] | None):
        self.tokens = _tokenize(source)
        self.i = 0
        self.names = names

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Token:
        if self.tok.text != text:
            found = self.tok.text or "end of input"
            raise ParseError(f"expected {text!r}, found {found!r}", self.tok.pos)
        return self.advance()

    def parse(self) -> Expr:
        node = self.expr()
        if self.tok.kind != "end":
            raise ParseError(f"unexpected token {self.tok.text!r}", self.tok.pos)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.tok.text == "-":
            self.advance()
            # fold "-2" into a constant, but keep "-2^x" as -(2^x)
            if self.tok.kind == "num" and self.tokens[self.i + 1].text != "^":
                return Const(-float(self.advance().text))
            return Neg(self.unary())
        if self.tok.text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        node = self.base()
        if self.tok.text == "^":
            self.advance()
            return BinOp("^", node, self.unary())
        return node

    def base(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Const(float(t.text))
        if t.kind == "ident":
            self.advance()
            if t.text in FUNCTIONS:
                if self.tok.text != "(":
                    raise ParseError(f"function {t.text!r} must be called", self.tok.pos)
                self.advance()
                args = [self.expr()]
                while self.tok.text == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[t.text]:
                    raise ArityError(
                        f"{t.text} takes {FUNCTIONS[t.text]} argument(s), got {len(args)}",
                        t.pos,
                    )
                return Call(t.text, tuple(args))
            if self.names is not None and t.text not in self.names:
                raise UnknownIdentifierError(f"unknown identifier `{t.text}`", t.pos)
            return Var(t.text)
        if t.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        found = t.text or "end of input"
        raise ParseError(f"unexpected token {found!r}", t.pos)


def parse_expression(source: str, variables: Iterable[str] | None = None) -> Expr:
    """Parse ``source`` into an AST.

    If ``variables`` is given, every identifier must be one of them.
    """
    names = None if variables is None else frozenset(variables)
    if names is not None:
        clash = names & FUNCTIONS.keys()
        if clash:
            raise ExpressionError(f"variable names shadow functions: {sorted(clash)}")
    return _Parser(source, names).parse()


# ----------------------------------------------------------------------- printer

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_UNARY_PREC = 3
_ATOM_PREC = 5


def _fmt_number(v: float) -> str:
    if not math.isfinite(v):
        raise ExpressionError(f"non-finite constant {v!r}")
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _prec(node: Expr) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _UNARY_PREC
    if isinstance(node, Const) and (node.value < 0 or math.copysign(1.0, node.value) < 0):
        return _UNARY_PREC
    return _ATOM_PREC


def _wrap(node: Expr, parens: bool) -> str:
    s = to_string(node)
    return f"({s})" if parens else s


def to_string(node: Expr) -> str:
    """Canonical text form; ``parse_expression(to_string(e)) == e``."""
    if isinstance(node, Const):
        if node.value == 0 and math.copysign(1.0, node.value) < 0:
            return "-0"
        return _fmt_number(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        # -(2) must keep its parentheses, otherwise it would fold into Const(-2)
        needs = _prec(node.arg) < _UNARY_PREC or isinstance(node.arg, Const)
        return "-" + _wrap(node.arg, needs)
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_string(a) for a in node.args)})"
    p = _PREC[node.op]
    if node.op == "^":
        left = _wrap(node.left, _prec(node.left) <= p)
        right = _wrap(node.right, _prec(node.right) < _UNARY_PREC)
        return f"{left}^{right}"
    left = _wrap(node.left, _prec(node.left) < p)
    right = _wrap(node.right, _prec(node.right) <= p)
    return f"{left} {node.op} {right}"


# -------------------------------------------------------------------- evaluation

_NUMPY_FUNCS: dict[str, Callable] = {
    "exp": np.exp,
    "ln": np.log,
    "sqrt": np.sqrt,
    "sin": np.sin,
    "cos": np.cos,
    "abs": np.abs,
    "pow": np.power,
}


def evaluate(node: Expr, env: Mapping[str, object]):
    """Evaluate with numpy broadcasting; ``env`` maps names to scalars or arrays.

    Domain errors (``ln`` of a negative number and friends) produce NaN
    rather than raising.
    """
    with np.errstate(all="ignore"):
        return _eval(node, env)


def _eval(node: Expr, env: Mapping[str, object]):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            raise UnknownIdentifierError(f"no value bound for `{node.name}`") from None
    if isinstance(node, Neg):
        return -_eval(node.arg, env)
    if isinstance(node, Call):
        args = [np.asarray(_eval(a, env), dtype=float) for a in node.args]
        return _NUMPY_FUNCS[node.name](*args)
    a = _eval(node.left, env)
    b = _eval(node.right, env)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        return np.true_divide(a, b)
    return np.power(np.asarray(a, dtype=float), b)


# ----------------------------------------------------------------- tree queries


def free_vars(node: Expr) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Const):
        return set()
    if isinstance(node, Neg):
        return free_vars(node.arg)
    if isinstance(node, Call):
        out: set[str] = set()
        for a in node.args:
            out |= free_vars(a)
        return out
    return free_vars(node.left) | free_vars(node.right)


def _children(node: Expr) -> tuple[Expr, ...]:
    if isinstance(node, Neg):
        return (node.arg,)
    if isinstance(node, BinOp):
        return (node.left, node.right)
    if isinstance(node, Call):
        return node.args
    return ()


def contains_call(node: Expr, name: str) -> bool:
    if isinstance(node, Call) and node.name == name:
        return True
    return any(contains_call(c, name) for c in _children(node))


def calls(node: Expr, name: str) -> list[Call]:
    """All ``Call`` nodes with the given function name, outermost first."""
    found = [node] if isinstance(node, Call) and node.name == name else []
    for c in _children(node):
        found.extend(calls(c, name))
    return found


def substitute(node: Expr, mapping: Mapping[str, Expr]) -> Expr:
    if isinstance(node, Var):
        return mapping.get(node.name, node)
    if isinstance(node, Const):
        return node
    if isinstance(node, Neg):
        return Neg(substitute(node.arg, mapping))
    if isinstance(node, Call):
        return Call(node.name, tuple(substitute(a, mapping) for a in node.args))
    return BinOp(node.op, substitute(node.left, mapping), substitute(node.right, mapping))


# ------------------------------------------------------- simplifying constructors


def _is(node: Expr, value: float) -> bool:
    return isinstance(node, Const) and node.value == value


def _add(a: Expr, b: Expr) -> Expr:
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if isinstance(b, Neg):
        return _sub(a, b.arg)
    return BinOp("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if _is(b, 0):
        return a
    if _is(a, 0):
        return _neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if isinstance(b, Neg):
        return _add(a, b.arg)
    return BinOp("-", a, b)


def _neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _mul(a: Expr, b: Expr) -> Expr:
    if _is(a, 0) or _is(b, 0):
        return Const(0.0)
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    if _is(a, -1):
        return _neg(b)
    if _is(b, -1):
        return _neg(a)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    # keep numeric factors in front: x*2 -> 2*x
    if isinstance(b, Const) and not isinstance(a, Const):
        a, b = b, a
    if isinstance(a, Neg):
        return _neg(_mul(a.arg, b))
    if isinstance(b, Neg):
        return _neg(_mul(a, b.arg))
    return BinOp("*", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _is(a, 0):
        return Const(0.0)
    if _is(b, 1):
        return a
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0:
        return Const(a.value / b.value)
    return BinOp("/", a, b)


def _pow(a: Expr, b: Expr) -> Expr:
    if _is(b, 0):
        return Const(1.0)
    if _is(b, 1):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        with np.errstate(all="ignore"):
            v = float(np.power(a.value, b.value))
        if math.isfinite(v):
            return Const(v)
    return BinOp("^", a, b)


def _call(name: str, *args: Expr) -> Expr:
    return Call(name, tuple(args))


def simplify(node: Expr) -> Expr:
    """Light bottom-up cleanup: constant folding and 0/1 identities only."""
    if isinstance(node, (Const, Var)):
        return node
    if isinstance(node, Neg):
        return _neg(simplify(node.arg))
    if isinstance(node, Call):
        return Call(node.name, tuple(simplify(a) for a in node.args))
    a, b = simplify(node.left), simplify(node.right)
    return {"+": _add, "-": _sub, "*": _mul, "/": _div, "^": _pow}[node.op](a, b)


# --------------------------------------------------------------- differentiation


def differentiate(node: Expr, var: str) -> Expr:
    """Exact partial derivative of ``node`` with respect to ``var``.

    Raises NonDifferentiableError if the tree contains ``abs``.
    """
    if contains_call(node, "abs"):
        raise NonDifferentiableError("expression contains abs(); use finite differences")
    return _d(node, var)


def _d(node: Expr, var: str) -> Expr:
    if isinstance(node, Const):
        return Const(0.0)
    if isinstance(node, Var):
        return Const(1.0 if node.name == var else 0.0)
    if var not in free_vars(node):
        return Const(0.0)
    if isinstance(node, Neg):
        return _neg(_d(node.arg, var))
    if isinstance(node, Call):
        return _d_call(node, var)
    u, v = node.left, node.right
    du, dv = _d(u, var), _d(v, var)
    if node.op == "+":
        return _add(du, dv)
    if node.op == "-":
        return _sub(du, dv)
    if node.op == "*":
        return _add(_mul(du, v), _mul(u, dv))
    if node.op == "/":
        return _div(_sub(_mul(du, v), _mul(u, dv)), _pow(v, Const(2.0)))
    return _d_pow(u, v, du, dv, var)


def _d_pow(u: Expr, v: Expr, du: Expr, dv: Expr, var: str) -> Expr:
    if var not in free_vars(v):
        # c * u^(c-1) * u'
        return _mul(_mul(v, _pow(u, _sub(v, Const(1.0)))), du)
    if var not in free_vars(u):
        # u^v * ln(u) * v'
        return _mul(_mul(_pow(u, v), _call("ln", u)), dv)
    # u^v * (v' ln u + v u'/u)
    inner = _add(_mul(dv, _call("ln", u)), _div(_mul(v, du), u))
    return _mul(_pow(u, v), inner)


def _d_call(node: Call, var: str) -> Expr:
    if node.name == "pow":
        u, v = node.args
        return _d_pow(u, v, _d(u, var), _d(v, var), var)
    (u,) = node.args
    du = _d(u, var)
    if node.name == "exp":
        outer = node
    elif node.name == "ln":
        return _div(du, u)
    elif node.name == "sqrt":
        return _div(du, _mul(Const(2.0), node))
    elif node.name == "sin":
        outer = _call("cos", u)
    elif node.name == "cos":
        outer = _neg(_call("sin", u))
    else:  # pragma: no cover - abs is rejected up front
        raise NonDifferentiableError(f"cannot differentiate {node.name}")
    return _mul(du, outer)

"""Scalar expressions: parsing, printing, evaluation and symbolic derivatives.

Grammar (``^`` binds tightest and is right-associative; unary minus sits
between ``^`` and ``* /``)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := atom ("^" unary)?
    atom    := number | identifier | func "(" expr ")" | "(" expr ")"
    func    := "tanh" | "exp" | "sin" | "cos" | "cosh" | "sinh"
             | "sqrt" | "abs" | "log"
    number  := digits ["." digits] [("e" | "E") ["+" | "-"] digits]
             | "." digits [exponent]

Identifiers listed as state variables parse to :class:`Var`; every other
identifier is a named :class:`Param`.  There is no implicit multiplication,
so ``2x`` is a syntax error.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

__all__ = [
    "Expression", "Num", "Var", "Param", "Neg", "BinOp", "Call",
    "ExprSyntaxError", "DomainError", "UnboundIdentifierError",
    "FUNCTIONS", "parse", "to_text", "evaluate", "differentiate",
    "substitute", "identifiers", "compile_vector",
]

FUNCTIONS = ("tanh", "exp", "sin", "cos", "cosh", "sinh", "sqrt", "abs", "log")


class ExprSyntaxError(ValueError):
    """Malformed expression text; ``offset`` is the UTF-8 byte offset."""

    def __init__(self, message: str, offset: int, text: str = ""):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
        self.text = text


class DomainError(ArithmeticError):
    """Evaluation left the real domain (sqrt of a negative, 1/0, overflow...)."""


class UnboundIdentifierError(LookupError):
    pass


# --------------------------------------------------------------------------
# AST

class Expression:
    __slots__ = ()

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True, slots=True)
class Num(Expression):
    value: float


@dataclass(frozen=True, slots=True)
class Var(Expression):
    name: str


@dataclass(frozen=True, slots=True)
class Param(Expression):
    name: str


@dataclass(frozen=True, slots=True)
class Neg(Expression):
    arg: Expression


@dataclass(frozen=True, slots=True)
class BinOp(Expression):
    op: str
    left: Expression
    right: Expression


@dataclass(frozen=True, slots=True)
class Call(Expression):
    func: str
    arg: Expression


ZERO = Num(0.0)
ONE = Num(1.0)
TWO = Num(2.0)


# --------------------------------------------------------------------------
# Parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}",
                                  _byte_offset(text, pos), text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str, variables: frozenset[str]):
        self.text = text
        self.variables = variables
        self.tokens = _tokenize(text)
        self.i = 0

    def error(self, message: str, pos: int | None = None) -> ExprSyntaxError:
        if pos is None:
            pos = self.tokens[self.i][2]
        return ExprSyntaxError(message, _byte_offset(self.text, pos), self.text)

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def accept(self, value: str) -> bool:
        kind, val, _ = self.tokens[self.i]
        if kind == "op" and val == value:
            self.i += 1
            return True
        return False

    def parse(self) -> Expression:
        if self.peek()[0] == "end":
            raise self.error("empty expression")
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            if val == ")":
                raise self.error("unbalanced ')'")
            raise self.error(f"unexpected token {val!r}")
        return e

    def expr(self) -> Expression:
        e = self.term()
        while True:
            if self.accept("+"):
                e = BinOp("+", e, self.term())
            elif self.accept("-"):
                e = BinOp("-", e, self.term())
            else:
                return e

    def term(self) -> Expression:
        e = self.unary()
        while True:
            if self.accept("*"):
                e = BinOp("*", e, self.unary())
            elif self.accept("/"):
                e = BinOp("/", e, self.unary())
            else:
                return e

    def unary(self) -> Expression:
        if self.accept("-"):
            arg = self.unary()
            if isinstance(arg, Num):
                return Num(-arg.value)
            return Neg(arg)
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        if self.accept("^"):
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expression:
        kind, val, pos = self.peek()
        if kind == "num":
            self.i += 1
            return Num(float(val))
        if kind == "name":
            self.i += 1
            nxt = self.peek()
            if nxt[0] == "op" and nxt[1] == "(":
                if val not in FUNCTIONS:
                    raise self.error(f"unknown function {val!r}", pos)
                self.i += 1
                arg = self.expr()
                if not self.accept(")"):
                    raise self.error("unbalanced '(': expected ')'")
                return Call(val, arg)
            if val in FUNCTIONS:
                raise self.error(f"function {val!r} needs an argument", nxt[2])
            return Var(val) if val in self.variables else Param(val)
        if kind == "op" and val == "(":
            self.i += 1
            e = self.expr()
            if not self.accept(")"):
                raise self.error("unbalanced '(': expected ')'")
            return e
        if kind == "end":
            raise self.error("unexpected end of expression")
        raise self.error(f"unexpected token {val!r}")


def parse(text: str, variables: Iterable[str] = ("x", "y")) -> Expression:
    """Parse infix ``text`` into an expression tree.

    Identifiers in ``variables`` become state variables, all others named
    parameters.  Raises :class:`ExprSyntaxError` carrying a byte offset.
    """
    if not isinstance(text, str):
        raise TypeError("expression text must be str")
    return _Parser(text, frozenset(variables)).parse()


# --------------------------------------------------------------------------
# Printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_UNARY = 3
_ATOM = 5


def _prec(e: Expression) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg) or (isinstance(e, Num) and math.copysign(1.0, e.value) < 0):
        return _UNARY
    return _ATOM


def _wrap(e: Expression, parens: bool) -> str:
    s = to_text(e)
    return f"({s})" if parens else s


def to_text(e: Expression) -> str:
    """Render ``e`` with minimal parentheses; ``parse(to_text(e))`` rebuilds it."""
    if isinstance(e, Num):
        if not math.isfinite(e.value):
            raise ValueError(f"cannot print non-finite literal {e.value}")
        return repr(float(e.value))
    if isinstance(e, (Var, Param)):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({to_text(e.arg)})"
    if isinstance(e, Neg):
        return "-" + _wrap(e.arg, _prec(e.arg) < _UNARY or isinstance(e.arg, Num))
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        if e.op == "^":
            left = _wrap(e.left, _prec(e.left) <= p)
            right = _wrap(e.right, _prec(e.right) < _UNARY)
            return f"{left}^{right}"
        left = _wrap(e.left, _prec(e.left) < p)
        right = _wrap(e.right, _prec(e.right) <= p)
        return f"{left} {e.op} {right}"
    raise TypeError(f"not an expression: {e!r}")


# --------------------------------------------------------------------------
# Evaluation

def _pow(a: float, b: float) -> float:
    if a < 0.0 and b != math.floor(b):
        raise DomainError(f"negative base {a} with non-integer exponent {b}")
    if a == 0.0 and b < 0.0:
        raise DomainError("zero to a negative power")
    try:
        return math.pow(a, b)
    except (OverflowError, ValueError) as exc:
        raise DomainError(str(exc)) from None


def _sqrt(a: float) -> float:
    if a < 0.0:
        raise DomainError(f"sqrt of negative value {a}")
    return math.sqrt(a)


def _log(a: float) -> float:
    if a <= 0.0:
        raise DomainError(f"log of non-positive value {a}")
    return math.log(a)


_FUNC_IMPL: dict[str, Callable[[float], float]] = {
    "tanh": math.tanh, "exp": math.exp, "sin": math.sin, "cos": math.cos,
    "cosh": math.cosh, "sinh": math.sinh, "sqrt": _sqrt, "abs": abs,
    "log": _log,
}


def _eval(e: Expression, b: Mapping[str, float]) -> float:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, (Var, Param)):
        try:
            return float(b[e.name])
        except KeyError:
            raise UnboundIdentifierError(f"unbound identifier {e.name!r}") from None
    if isinstance(e, Neg):
        return -_eval(e.arg, b)
    if isinstance(e, BinOp):
        x = _eval(e.left, b)
        y = _eval(e.right, b)
        if e.op == "+":
            return x + y
        if e.op == "-":
            return x - y
        if e.op == "*":
            return x * y
        if e.op == "/":
            if y == 0.0:
                raise DomainError("division by zero")
            return x / y
        return _pow(x, y)
    if isinstance(e, Call):
        try:
            return _FUNC_IMPL[e.func](_eval(e.arg, b))
        except (OverflowError, ValueError) as exc:
            raise DomainError(f"{e.func}: {exc}") from None
    raise TypeError(f"not an expression: {e!r}")


def evaluate(e: Expression, bindings: Mapping[str, float]) -> float:
    """Evaluate ``e`` in double precision; non-finite results are domain errors."""
    value = _eval(e, bindings)
    if not math.isfinite(value):
        raise DomainError(f"non-finite result {value}")
    return value


# --------------------------------------------------------------------------
# Construction helpers with literal folding

def add(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    return BinOp("+", a, b)


def sub(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    if b == ZERO:
        return a
    if a == ZERO:
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    return BinOp("*", a, b)


def div(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Num) and isinstance(b, Num) and b.value != 0.0:
        return Num(a.value / b.value)
    if b == ONE:
        return a
    if a == ZERO:
        return ZERO
    return BinOp("/", a, b)


def neg(a: Expression) -> Expression:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Num) and isinstance(b, Num):
        try:
            return Num(_pow(a.value, b.value))
        except DomainError:
            pass
    if b == ONE:
        return a
    if b == ZERO:
        return ONE
    return BinOp("^", a, b)


def call(func: str, arg: Expression) -> Expression:
    return Call(func, arg)


# --------------------------------------------------------------------------
# Symbolic differentiation

def differentiate(e: Expression, v: str) -> Expression:
    """Return the tree of d e / d v, with literal-arithmetic folding only."""
    if isinstance(e, (Num, Param)):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Neg):
        return neg(differentiate(e.arg, v))
    if isinstance(e, BinOp):
        u, w = e.left, e.right
        du, dw = differentiate(u, v), differentiate(w, v)
        if e.op == "+":
            return add(du, dw)
        if e.op == "-":
            return sub(du, dw)
        if e.op == "*":
            return add(mul(du, w), mul(u, dw))
        if e.op == "/":
            return div(sub(mul(du, w), mul(u, dw)), power(w, TWO))
        if dw == ZERO:
            return mul(mul(w, power(u, sub(w, ONE))), du)
        return mul(e, add(mul(dw, Call("log", u)), div(mul(w, du), u)))
    if isinstance(e, Call):
        u = e.arg
        du = differentiate(u, v)
        if du == ZERO:
            return ZERO
        f = e.func
        if f == "tanh":
            outer = sub(ONE, power(e, TWO))
        elif f == "exp":
            outer = e
        elif f == "sin":
            outer = Call("cos", u)
        elif f == "cos":
            outer = neg(Call("sin", u))
        elif f == "cosh":
            outer = Call("sinh", u)
        elif f == "sinh":
            outer = Call("cosh", u)
        elif f == "sqrt":
            return div(du, mul(TWO, e))
        elif f == "abs":
            outer = div(u, e)
        elif f == "log":
            return div(du, u)
        else:  # pragma: no cover - parser rejects unknown names
            raise ValueError(f"no derivative rule for {f}")
        return mul(outer, du)
    raise TypeError(f"not an expression: {e!r}")


# --------------------------------------------------------------------------
# Tree utilities

def substitute(e: Expression, mapping: Mapping[str, Expression]) -> Expression:
    """Replace variables/parameters named in ``mapping`` by sub-trees."""
    if isinstance(e, (Var, Param)):
        return mapping.get(e.name, e)
    if isinstance(e, Num):
        return e
    if isinstance(e, Neg):
        return Neg(substitute(e.arg, mapping))
    if isinstance(e, BinOp):
        return BinOp(e.op, substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Call):
        return Call(e.func, substitute(e.arg, mapping))
    raise TypeError(f"not an expression: {e!r}")


def identifiers(e: Expression) -> tuple[set[str], set[str]]:
    """Return ``(variables, parameters)`` referenced by ``e``."""
    vs: set[str] = set()
    ps: set[str] = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            vs.add(node.name)
        elif isinstance(node, Param):
            ps.add(node.name)
        elif isinstance(node, Neg):
            stack.append(node.arg)
        elif isinstance(node, BinOp):
            stack.extend((node.left, node.right))
        elif isinstance(node, Call):
            stack.append(node.arg)
    return vs, ps


# --------------------------------------------------------------------------
# Code generation for inner loops

def _emit(e: Expression, params: Mapping[str, float], locals_: Mapping[str, str]) -> str:
    if isinstance(e, Num):
        return f"({e.value!r})"
    if isinstance(e, Var):
        if e.name not in locals_:
            raise UnboundIdentifierError(f"unbound identifier {e.name!r}")
        return locals_[e.name]
    if isinstance(e, Param):
        if e.name in locals_:
            return locals_[e.name]
        if e.name not in params:
            raise UnboundIdentifierError(f"unbound identifier {e.name!r}")
        return f"({float(params[e.name])!r})"
    if isinstance(e, Neg):
        return f"(-{_emit(e.arg, params, locals_)})"
    if isinstance(e, BinOp):
        a = _emit(e.left, params, locals_)
        b = _emit(e.right, params, locals_)
        if e.op == "^":
            return f"_pow({a}, {b})"
        if e.op == "/":
            return f"_div({a}, {b})"
        return f"({a} {e.op} {b})"
    if isinstance(e, Call):
        return f"_f_{e.func}({_emit(e.arg, params, locals_)})"
    raise TypeError(f"not an expression: {e!r}")


def _div(a: float, b: float) -> float:
    if b == 0.0:
        raise DomainError("division by zero")
    return a / b


def compile_vector(exprs: Iterable[Expression], variables: Iterable[str],
                   params: Mapping[str, float]) -> Callable[..., tuple[float, ...]]:
    """Generate ``fn(*variables) -> tuple`` evaluating each expression.

    Parameters are frozen into the generated code.  Results are bit-identical
    to :func:`evaluate`; finiteness of the result is not re-checked.
    """
    variables = tuple(variables)
    locals_ = {v: f"v{i}" for i, v in enumerate(variables)}
    body = ", ".join(_emit(e, params, locals_) for e in exprs)
    args = ", ".join(locals_[v] for v in variables)
    src = (
        f"def _fn({args}):\n"
        f"    try:\n"
        f"        return ({body},)\n"
        f"    except (OverflowError, ValueError) as exc:\n"
        f"        raise DomainError(str(exc)) from None\n"
    )
    namespace: dict[str, object] = {
        "_pow": _pow, "_div": _div, "DomainError": DomainError,
    }
    namespace.update({f"_f_{k}": fn for k, fn in _FUNC_IMPL.items()})
    exec(compile(src, "<zombiesaddle.expr>", "exec"), namespace)  # noqa: S102
    return namespace["_fn"]  # type: ignore[return-value]

"""Scalar expressions in two state variables.

A small recursive-descent parser, a conservative simplifier, symbolic partial
derivatives and two evaluators (a reference tree walker and a compiled fast
path used by the integrators and grid scans).

Variables are numbered: 1 -> ``x1``, 2 -> ``x2``, 3 -> ``y1``, 4 -> ``y2``.
The velocity variables only appear in expressions built internally by the
geometry code; the parser rejects them unless ``tangent=True``.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Param",
    "Unary",
    "Binary",
    "Pow",
    "ExpressionSyntaxError",
    "UnknownIdentifierError",
    "UnboundParameterError",
    "EvalError",
    "DomainWarning",
    "parse",
    "diff",
    "simplify",
    "evaluate",
    "to_text",
    "free_vars",
    "parameters",
    "is_zero",
    "identically_zero",
    "compile_exprs",
    "VAR_NAMES",
    "FUNCTIONS",
]

VAR_NAMES = {1: "x1", 2: "x2", 3: "y1", 4: "y2"}
FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt")
_HAMILTONIAN_ALIASES = {"x": 1, "p": 2}


# ---------------------------------------------------------------------------
# errors


class ExpressionSyntaxError(ValueError):
    """Malformed expression text.

    ``offset`` is the byte offset (UTF-8) of the first offending token and
    ``expected`` the set of token kinds that would have been accepted there.
    """

    def __init__(self, message: str, offset: int, expected: Iterable[str] = ()):
        self.offset = offset
        self.expected = frozenset(expected)
        detail = f" (expected one of: {', '.join(sorted(self.expected))})" if self.expected else ""
        super().__init__(f"{message} at offset {offset}{detail}")


class UnknownIdentifierError(ValueError):
    def __init__(self, name: str, offset: int):
        self.name = name
        self.offset = offset
        super().__init__(f"unknown identifier {name!r} at offset {offset}")


class UnboundParameterError(KeyError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(name)

    def __str__(self) -> str:
        return f"parameter {self.name!r} is not bound"


class EvalError(ArithmeticError):
    """Numerical evaluation hit a singularity.

    ``kind`` is one of ``div-by-zero``, ``log-nonpositive``, ``sqrt-negative``
    or ``pow-domain`` (negative base with a non-integer exponent).
    """

    KINDS = ("div-by-zero", "log-nonpositive", "sqrt-negative", "pow-domain")

    def __init__(self, kind: str, location: str = ""):
        self.kind = kind
        self.location = location
        where = f" in {location}" if location else ""
        super().__init__(f"{kind}{where}")


class DomainWarning(UserWarning):
    """A derivative introduced a pole that the original expression lacked."""


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # neg, sin, cos, exp, ln, sqrt
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # add, sub, mul, div
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: float


Expr = Union[Const, Var, Param, Unary, Binary, Pow]

ZERO = Const(0.0)
ONE = Const(1.0)


def free_vars(e: Expr) -> frozenset:
    """Variable indices occurring in ``e``."""
    if isinstance(e, Var):
        return frozenset((e.index,))
    if isinstance(e, (Const, Param)):
        return frozenset()
    if isinstance(e, Unary):
        return free_vars(e.arg)
    if isinstance(e, Pow):
        return free_vars(e.base)
    return free_vars(e.left) | free_vars(e.right)


def parameters(e: Expr) -> frozenset:
    """Names of the parameters referenced by ``e``."""
    if isinstance(e, Param):
        return frozenset((e.name,))
    if isinstance(e, (Const, Var)):
        return frozenset()
    if isinstance(e, Unary):
        return parameters(e.arg)
    if isinstance(e, Pow):
        return parameters(e.base)
    return parameters(e.left) | parameters(e.right)


def is_zero(e: Expr) -> bool:
    return isinstance(e, Const) and e.value == 0.0


def identically_zero(e: Expr) -> bool:
    """True when ``e`` expands to the zero polynomial over its atoms.

    Sums and products are multiplied out with exact rational coefficients,
    and function arguments are normalised the same way, so cancellations
    that the conservative simplifier misses are still found. ``False`` means
    "not recognised", not "provably non-zero".
    """
    if is_zero(e):
        return True
    m = _monomials(e)
    return m is not None and not m


# ---------------------------------------------------------------------------
# parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)

_ATOM_START = frozenset({"number", "identifier", "(", "-"})
_AFTER_OPERAND = frozenset({"+", "-", "*", "/", "^", ")", "end of input"})


@dataclass(frozen=True)
class _Token:
    kind: str  # number, ident, op, end
    text: str
    offset: int  # byte offset


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    byte_pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExpressionSyntaxError(
                f"unexpected character {source[pos]!r}", byte_pos, _ATOM_START
            )
        text = m.group()
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, text, byte_pos))
        byte_pos += len(text.encode("utf-8"))
        pos = m.end()
    tokens.append(_Token("end", "", byte_pos))
    return tokens


class _Parser:
    def __init__(self, source: str, names: Mapping[str, Expr]):
        self.tokens = _tokenize(source)
        self.pos = 0
        self.names = names

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def _is_op(self, *ops: str) -> bool:
        return self.tok.kind == "op" and self.tok.text in ops

    def _advance(self) -> _Token:
        tok = self.tok
        self.pos += 1
        return tok

    def _fail(self, expected: Iterable[str]):
        tok = self.tok
        what = "end of input" if tok.kind == "end" else f"token {tok.text!r}"
        raise ExpressionSyntaxError(f"unexpected {what}", tok.offset, expected)

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok.kind != "end":
            self._fail(_AFTER_OPERAND - {"^"} if self._is_op("^") else _AFTER_OPERAND)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self._is_op("+", "-"):
            op = "add" if self._advance().text == "+" else "sub"
            e = Binary(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self._is_op("*", "/"):
            op = "mul" if self._advance().text == "*" else "div"
            e = Binary(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self._is_op("-"):
            self._advance()
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self._is_op("^"):
            self._advance()
            return Pow(base, self.exponent())
        return base

    def exponent(self) -> float:
        start = self.tok
        sign = 1.0
        if self._is_op("-"):
            self._advance()
            sign = -1.0
        if self.tok.kind == "number":
            return sign * float(self._advance().text)
        if self._is_op("("):
            self._advance()
            inner = simplify(self.expr())
            self._expect(")")
            if not isinstance(inner, Const):
                raise ExpressionSyntaxError(
                    "exponent must be a numeric constant", start.offset, {"number"}
                )
            return sign * inner.value
        self._fail({"number", "(", "-"})

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "number":
            self._advance()
            return Const(float(tok.text))
        if self._is_op("("):
            self._advance()
            e = self.expr()
            self._expect(")")
            return e
        if tok.kind == "ident":
            self._advance()
            if tok.text in FUNCTIONS:
                return Unary(tok.text, self._function_arg())
            try:
                return self.names[tok.text]
            except KeyError:
                raise UnknownIdentifierError(tok.text, tok.offset) from None
        self._fail(_ATOM_START)

    def _function_arg(self) -> Expr:
        if self._is_op("-"):
            self._advance()
            return Unary("neg", self._function_arg())
        return self.atom()

    def _expect(self, op: str) -> None:
        if not self._is_op(op):
            self._fail({op})
        self._advance()


def parse(
    source: str,
    params: Iterable[str] = (),
    *,
    hamiltonian: bool = False,
    tangent: bool = False,
) -> Expr:
    """Parse expression text into an AST.

    Parameters
    ----------
    source : str
        Expression text, e.g. ``"x2^2/(2*m) + 1 - cos(x1)"``.
    params : iterable of str
        Declared parameter names.
    hamiltonian : bool
        Accept ``x`` and ``p`` as aliases of ``x1`` and ``x2``.
    tangent : bool
        Accept the velocity coordinates ``y1`` and ``y2``.

    Raises
    ------
    ExpressionSyntaxError
        With the byte offset of the first error.
    UnknownIdentifierError
        For identifiers that are neither variables, parameters nor functions.
    """
    names: dict[str, Expr] = {name: Param(name) for name in params}
    names["x1"], names["x2"] = Var(1), Var(2)
    if hamiltonian:
        names.update({k: Var(v) for k, v in _HAMILTONIAN_ALIASES.items()})
    if tangent:
        names["y1"], names["y2"] = Var(3), Var(4)
    return _Parser(source, names).parse()


# ---------------------------------------------------------------------------
# printer

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _fmt_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC_ADD if e.op in ("add", "sub") else _PREC_MUL
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC_NEG
    if isinstance(e, Const) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return _PREC_NEG
    if isinstance(e, Pow):
        return _PREC_POW
    return _PREC_ATOM


def _wrap(e: Expr, min_prec: int) -> str:
    text = to_text(e)
    return f"({text})" if _prec(e) < min_prec else text


_BINARY_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


def to_text(e: Expr) -> str:
    """Canonical text form; ``parse(to_text(e))`` evaluates identically to ``e``."""
    if isinstance(e, Const):
        if e.value < 0 or math.copysign(1.0, e.value) < 0:
            return f"-{_fmt_number(-e.value)}"
        return _fmt_number(e.value)
    if isinstance(e, Var):
        return VAR_NAMES[e.index]
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            return "-" + _wrap(e.arg, _PREC_NEG)
        return f"{e.op}({to_text(e.arg)})"
    if isinstance(e, Pow):
        k = e.exponent
        exp_text = _fmt_number(k) if k >= 0 else f"(-{_fmt_number(-k)})"
        return f"{_wrap(e.base, _PREC_ATOM)}^{exp_text}"
    level = _prec(e)
    # right operands are wrapped at equal precedence to keep the tree shape
    return f"{_wrap(e.left, level)}{_BINARY_SYMBOL[e.op]}{_wrap(e.right, level + 1)}"


# ---------------------------------------------------------------------------
# simplifier


def _sort_key(e: Expr) -> tuple:
    return (0 if isinstance(e, Const) else 1, to_text(e))


def _fold(e: Expr) -> Expr:
    try:
        value = evaluate(e, 0.0, 0.0)
    except (EvalError, OverflowError):
        return e
    return Const(value) if math.isfinite(value) else e


def _simplify_node(e: Expr) -> Expr:
    if isinstance(e, Unary):
        a = e.arg
        if e.op == "neg":
            if isinstance(a, Unary) and a.op == "neg":
                return a.arg
            if isinstance(a, Const):
                return Const(-a.value)
            if isinstance(a, Binary) and a.op == "sub":
                return _simplify_node(Binary("sub", a.right, a.left))
            if isinstance(a, Binary) and a.op == "mul" and isinstance(a.left, Const):
                return _simplify_node(Binary("mul", Const(-a.left.value), a.right))
            return e
        return _fold(e) if isinstance(a, Const) else e

    if isinstance(e, Pow):
        if e.exponent == 1.0:
            return e.base
        if e.exponent == 0.0:
            return ONE
        return _fold(e) if isinstance(e.base, Const) else e

    if not isinstance(e, Binary):
        return e

    a, b, op = e.left, e.right, e.op
    if isinstance(a, Const) and isinstance(b, Const):
        return _fold(e)
    if op == "add":
        if is_zero(a):
            return b
        if is_zero(b):
            return a
        if _negates(a, b):
            return ZERO
        if isinstance(b, Unary) and b.op == "neg":
            return _simplify_node(Binary("sub", a, b.arg))
        if isinstance(a, Unary) and a.op == "neg":
            return _simplify_node(Binary("sub", b, a.arg))
        if _negative_coefficient(b):
            return _simplify_node(Binary("sub", a, _flip_coefficient(b)))
        if _negative_coefficient(a):
            return _simplify_node(Binary("sub", b, _flip_coefficient(a)))
        if _sort_key(b) < _sort_key(a):
            a, b = b, a
        return Binary("add", a, b)
    if op == "sub":
        if is_zero(b):
            return a
        if is_zero(a):
            return _simplify_node(Unary("neg", b))
        if isinstance(b, Unary) and b.op == "neg":
            return _simplify_node(Binary("add", a, b.arg))
        if _negative_coefficient(b):
            return _simplify_node(Binary("add", a, _flip_coefficient(b)))
        if a == b:
            return ZERO
        return e
    if op == "mul":
        if is_zero(a) or is_zero(b):
            return ZERO
        if a == ONE:
            return b
        if b == ONE:
            return a
        if a == Const(-1.0):
            return _simplify_node(Unary("neg", b))
        if b == Const(-1.0):
            return _simplify_node(Unary("neg", a))
        if isinstance(a, Unary) and a.op == "neg":
            return _simplify_node(Unary("neg", _simplify_node(Binary("mul", a.arg, b))))
        if isinstance(b, Unary) and b.op == "neg":
            return _simplify_node(Unary("neg", _simplify_node(Binary("mul", a, b.arg))))
        if _sort_key(b) < _sort_key(a):
            a, b = b, a
        # collect constant coefficients: c1*(c2*u) -> (c1*c2)*u, u*(c*v) -> c*(u*v)
        if isinstance(b, Binary) and b.op == "mul" and isinstance(b.left, Const):
            if isinstance(a, Const):
                c = a.value * b.left.value
                if math.isfinite(c):
                    return _simplify_node(Binary("mul", Const(c), b.right))
            else:
                return _simplify_node(Binary("mul", b.left, _simplify_node(Binary("mul", a, b.right))))
        if (
            not isinstance(a, Const)
            and isinstance(a, Binary)
            and a.op == "mul"
            and isinstance(a.left, Const)
        ):
            return _simplify_node(Binary("mul", a.left, _simplify_node(Binary("mul", a.right, b))))
        return Binary("mul", a, b)
    # div
    if is_zero(a) and not is_zero(b):
        return ZERO
    if b == ONE:
        return a
    if isinstance(a, Unary) and a.op == "neg":
        return _simplify_node(Unary("neg", _simplify_node(Binary("div", a.arg, b))))
    if isinstance(b, Unary) and b.op == "neg":
        return _simplify_node(Unary("neg", _simplify_node(Binary("div", a, b.arg))))
    # cancel constant coefficients: (c1*u)/c2 -> (c1/c2)*u, (c1*u)/(c2*v) -> ((c1/c2)*u)/v
    if isinstance(a, Binary) and a.op == "mul" and isinstance(a.left, Const):
        if isinstance(b, Const) and b.value != 0.0:
            c = a.left.value / b.value
            if math.isfinite(c):
                return _simplify_node(Binary("mul", Const(c), a.right))
        if isinstance(b, Binary) and b.op == "mul" and isinstance(b.left, Const) and b.left.value != 0.0:
            c = a.left.value / b.left.value
            if math.isfinite(c):
                return _simplify_node(Binary("div", _simplify_node(Binary("mul", Const(c), a.right)), b.right))
    return e


def _negates(a: Expr, b: Expr) -> bool:
    """Structural test for ``b == -a``, exact in IEEE arithmetic."""
    if isinstance(b, Unary) and b.op == "neg":
        return a == b.arg
    if isinstance(a, Unary) and a.op == "neg":
        return b == a.arg
    if isinstance(a, Const) and isinstance(b, Const):
        return a.value == -b.value and a.value != 0.0
    if not (isinstance(a, Binary) and isinstance(b, Binary)):
        return False
    if a.op == "add" and b.op == "sub":
        a, b = b, a
    if a.op == "sub" and b.op == "add":
        # -(p - q) = q + (-p)
        p, q = a.left, a.right
        return (q == b.left and _negates(p, b.right)) or (q == b.right and _negates(p, b.left))
    if a.op != b.op:
        return False
    if a.op == "add":
        return (_negates(a.left, b.left) and _negates(a.right, b.right)) or (
            _negates(a.left, b.right) and _negates(a.right, b.left)
        )
    if a.op == "sub":
        return a.left == b.right and a.right == b.left
    if a.op == "mul":
        return (
            (a.left == b.left and _negates(a.right, b.right))
            or (a.right == b.right and _negates(a.left, b.left))
            or (a.left == b.right and _negates(a.right, b.left))
            or (a.right == b.left and _negates(a.left, b.right))
        )
    if a.op == "div":
        return a.right == b.right and _negates(a.left, b.left)
    return False


# Exact normal form for zero recognition: a sum of monomials over "atoms"
# (variables, parameters, function applications, non-integer powers,
# reciprocals) with Fraction coefficients. Products of sums are expanded; None
# means the expansion got too big. Kept out of simplify(), whose rewrites must
# stay value-preserving in floating point.

_MAX_TERMS = 256
Monomials = dict  # tuple of (atom key, power) -> Fraction


def _scaled(m: Monomials, c) -> Monomials:
    return {k: v * c for k, v in m.items()}


def _add_into(out: Monomials, m: Monomials, sign: int = 1) -> Monomials:
    for k, v in m.items():
        w = out.get(k, 0) + sign * v
        if w:
            out[k] = w
        else:
            out.pop(k, None)
    return out


def _times(a: Monomials, b: Monomials) -> Monomials | None:
    if len(a) * len(b) > _MAX_TERMS:
        return None
    out: Monomials = {}
    for ka, va in a.items():
        for kb, vb in b.items():
            powers = dict(ka)
            for atom, n in kb:
                powers[atom] = powers.get(atom, 0) + n
            key = tuple(sorted((t, n) for t, n in powers.items() if n))
            _add_into(out, {key: va * vb})
    return out


def _atom(key) -> Monomials:
    return {((key, 1),): Fraction(1)}


def _atom_key(e: Expr):
    m = _monomials(e)
    return tuple(sorted(m.items())) if m is not None else ("opaque", e)


@lru_cache(maxsize=4096)
def _monomials_cached(e: Expr):
    m = _monomials_uncached(e)
    return None if m is None else tuple(m.items())


def _monomials(e: Expr) -> Monomials | None:
    m = _monomials_cached(e)
    return None if m is None else dict(m)


def _monomials_uncached(e: Expr) -> Monomials | None:
    if isinstance(e, Const):
        if not math.isfinite(e.value):
            return None
        return {(): Fraction(e.value)} if e.value else {}
    if isinstance(e, Var):
        return _atom(("var", e.index))
    if isinstance(e, Param):
        return _atom(("param", e.name))
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = _monomials(e.arg)
            return None if inner is None else _scaled(inner, -1)
        return _atom((e.op, _atom_key(e.arg)))
    if isinstance(e, Pow):
        k = e.exponent
        base = _monomials(e.base)
        if base is not None and float(k).is_integer() and 0 <= k <= 4:
            out: Monomials | None = {(): Fraction(1)}
            for _ in range(int(k)):
                out = _times(out, base)
                if out is None:
                    return None
            return out
        return _atom(("pow", _atom_key(e.base), k))
    left, right = _monomials(e.left), _monomials(e.right)
    if left is None or right is None:
        return None
    if e.op == "add":
        return _add_into(dict(left), right)
    if e.op == "sub":
        return _add_into(dict(left), right, -1)
    if e.op == "mul":
        return _times(left, right)
    if not right:
        return None
    if list(right) == [()]:
        return _scaled(left, 1 / right[()])
    return _times(left, _atom(("inv", _atom_key(e.right))))


def _negative_coefficient(e: Expr) -> bool:
    return isinstance(e, Binary) and e.op == "mul" and isinstance(e.left, Const) and e.left.value < 0


def _flip_coefficient(e: Binary) -> Expr:
    return _simplify_node(Binary("mul", Const(-e.left.value), e.right))


def simplify(e: Expr) -> Expr:
    """Bottom-up conservative simplification.

    Constant folding, additive/multiplicative identities, sign pushing,
    collection of constant factors in products and ``u - u -> 0``. Operands
    of ``+`` and ``*`` are put in a canonical order, which is exact in IEEE
    arithmetic for two operands; regrouping constant factors may move a
    result by a few ulps.
    """
    if isinstance(e, Unary):
        e = Unary(e.op, simplify(e.arg))
    elif isinstance(e, Pow):
        e = Pow(simplify(e.base), e.exponent)
    elif isinstance(e, Binary):
        e = Binary(e.op, simplify(e.left), simplify(e.right))
    return _simplify_node(e)


# ---------------------------------------------------------------------------
# differentiation


def _d(e: Expr, var: int) -> Expr:
    if var not in free_vars(e):
        return ZERO
    if isinstance(e, Var):
        return ONE
    if isinstance(e, Unary):
        u, du = e.arg, _d(e.arg, var)
        if e.op == "neg":
            return Unary("neg", du)
        if e.op == "sin":
            return Binary("mul", Unary("cos", u), du)
        if e.op == "cos":
            return Unary("neg", Binary("mul", Unary("sin", u), du))
        if e.op == "exp":
            return Binary("mul", e, du)
        if e.op == "ln":
            return Binary("div", du, u)
        if e.op == "sqrt":
            return Binary("div", du, Binary("mul", Const(2.0), e))
        raise ValueError(f"unknown function {e.op!r}")
    if isinstance(e, Pow):
        k = e.exponent
        return Binary("mul", Binary("mul", Const(k), Pow(e.base, k - 1.0)), _d(e.base, var))
    u, v = e.left, e.right
    du, dv = _d(u, var), _d(v, var)
    if e.op in ("add", "sub"):
        return Binary(e.op, du, dv)
    if e.op == "mul":
        return Binary("add", Binary("mul", du, v), Binary("mul", u, dv))
    if is_zero(simplify(dv)):
        return Binary("div", du, v)
    return Binary(
        "div",
        Binary("sub", Binary("mul", du, v), Binary("mul", u, dv)),
        Pow(v, 2.0),
    )


def _has_pole(e: Expr) -> bool:
    if isinstance(e, (Const, Var, Param)):
        return False
    if isinstance(e, Unary):
        return _has_pole(e.arg)
    if isinstance(e, Pow):
        if e.exponent < 0 and free_vars(e.base):
            return True
        return _has_pole(e.base)
    if e.op == "div" and free_vars(e.right):
        return True
    return _has_pole(e.left) or _has_pole(e.right)


def diff(e: Expr, var: int) -> Expr:
    """Exact partial derivative of ``e`` with respect to variable ``var``, simplified.

    Emits :class:`DomainWarning` when the derivative has a pole the
    expression itself did not (``sqrt(x1)``, for example).
    """
    if var not in VAR_NAMES:
        raise ValueError(f"variable index must be one of {sorted(VAR_NAMES)}, got {var!r}")
    result = simplify(_d(e, var))
    if _has_pole(result) and not _has_pole(e):
        warnings.warn(
            f"d/d{VAR_NAMES[var]} of {to_text(e)} has a pole; evaluation there raises EvalError",
            DomainWarning,
            stacklevel=2,
        )
    return result


# ---------------------------------------------------------------------------
# evaluation


def _check_pow(base: float, k: float, where: str) -> float:
    if base == 0.0 and k < 0:
        raise EvalError("div-by-zero", where)
    if base < 0.0 and not float(k).is_integer():
        raise EvalError("pow-domain", where)
    try:
        return base**k
    except OverflowError:
        return math.inf


def _check_ln(u: float, where: str = "ln") -> float:
    if not u > 0.0:
        raise EvalError("log-nonpositive", where)
    return math.log(u)


def _check_sqrt(u: float, where: str = "sqrt") -> float:
    if u < 0.0:
        raise EvalError("sqrt-negative", where)
    return math.sqrt(u)


def _check_exp(u: float) -> float:
    try:
        return math.exp(u)
    except OverflowError:
        return math.inf


_UNARY_EVAL: dict[str, Callable[[float], float]] = {
    "neg": lambda u: -u,
    "sin": math.sin,
    "cos": math.cos,
    "exp": _check_exp,
    "ln": _check_ln,
    "sqrt": _check_sqrt,
}


def _eval(e: Expr, env: Sequence[float], params: Mapping[str, float]) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return env[e.index - 1]
    if isinstance(e, Param):
        try:
            return float(params[e.name])
        except KeyError:
            raise UnboundParameterError(e.name) from None
    if isinstance(e, Unary):
        return _UNARY_EVAL[e.op](_eval(e.arg, env, params))
    if isinstance(e, Pow):
        return _check_pow(_eval(e.base, env, params), e.exponent, "pow")
    a = _eval(e.left, env, params)
    b = _eval(e.right, env, params)
    if e.op == "add":
        return a + b
    if e.op == "sub":
        return a - b
    if e.op == "mul":
        return a * b
    if b == 0.0:
        raise EvalError("div-by-zero", to_text(e))
    return a / b


def evaluate(
    e: Expr,
    x1: float,
    x2: float,
    params: Mapping[str, float] | None = None,
    y1: float = 0.0,
    y2: float = 0.0,
) -> float:
    """IEEE double value of ``e`` at the given point.

    >>> evaluate(parse("x1^2 + x2"), 2, 3)
    7.0
    """
    return float(_eval(e, (float(x1), float(x2), float(y1), float(y2)), params or {}))


# ---------------------------------------------------------------------------
# compiled evaluation


def _ln_vec(u):
    return np.log(np.where(u > 0, u, np.nan))


def _sqrt_vec(u):
    return np.sqrt(np.where(u >= 0, u, np.nan))


def _pow_vec(u, k):
    if float(k).is_integer():
        return np.power(u, k)
    return np.power(np.where(u >= 0, u, np.nan), k)


_SCALAR_NS = {
    "_sin": math.sin,
    "_cos": math.cos,
    "_exp": _check_exp,
    "_ln": _check_ln,
    "_sqrt": _check_sqrt,
    "_pow": _check_pow,
    "_div": None,  # filled below
}

_VECTOR_NS = {
    "_sin": np.sin,
    "_cos": np.cos,
    "_exp": np.exp,
    "_ln": _ln_vec,
    "_sqrt": _sqrt_vec,
    "_pow": lambda u, k, where=None: _pow_vec(u, k),
    "_div": lambda a, b, where=None: np.divide(a, b),
}


def _div_scalar(a: float, b: float, where: str = "") -> float:
    if b == 0.0:
        raise EvalError("div-by-zero", where)
    return a / b


_SCALAR_NS["_div"] = _div_scalar


class _Emitter:
    def __init__(self, params: Mapping[str, float]):
        self.params = params
        self.lines: list[str] = []
        self.names: dict[Expr, str] = {}

    def name(self, e: Expr) -> str:
        if isinstance(e, Const):
            return repr(e.value) if e.value >= 0 else f"({e.value!r})"
        if isinstance(e, Var):
            return VAR_NAMES[e.index]
        if isinstance(e, Param):
            try:
                return repr(float(self.params[e.name]))
            except KeyError:
                raise UnboundParameterError(e.name) from None
        if e in self.names:
            return self.names[e]
        if isinstance(e, Unary):
            a = self.name(e.arg)
            code = f"-{a}" if e.op == "neg" else f"_{e.op}({a})"
        elif isinstance(e, Pow):
            code = f"_pow({self.name(e.base)}, {e.exponent!r}, 'pow')"
        else:
            a, b = self.name(e.left), self.name(e.right)
            if e.op == "div":
                code = f"_div({a}, {b}, 'div')"
            else:
                code = f"{a} {_BINARY_SYMBOL[e.op]} {b}"
        tmp = f"t{len(self.names)}"
        self.lines.append(f"    {tmp} = {code}")
        self.names[e] = tmp
        return tmp


def compile_exprs(
    exprs: Sequence[Expr],
    params: Mapping[str, float] | None = None,
    *,
    vectorized: bool = False,
) -> Callable[..., tuple]:
    """Compile expressions into one function ``fn(x1, x2, y1=0, y2=0) -> tuple``.

    Common subexpressions are evaluated once. Parameters are frozen at
    compile time. The scalar version performs the same IEEE operations as
    :func:`evaluate` and raises :class:`EvalError` identically; the vectorized
    version accepts numpy arrays and maps domain errors to ``nan``/``inf``.
    """
    em = _Emitter(params or {})
    outs = [em.name(e) for e in exprs]
    if vectorized:
        # constants must broadcast to the input shape
        outs = [f"_zeros + {o}" for o in outs]
        head = ["    _zeros = x1 * 0.0 + x2 * 0.0 + y1 * 0.0 + y2 * 0.0"]
    else:
        head = []
    src = "\n".join(
        ["def _compiled(x1, x2, y1=0.0, y2=0.0):", *head, *em.lines, f"    return ({', '.join(outs)},)"]
    )
    ns = dict(_VECTOR_NS if vectorized else _SCALAR_NS)
    exec(compile(src, "<kcclab-expr>", "exec"), ns)
    return ns["_compiled"]

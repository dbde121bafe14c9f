"""Arithmetic expression DSL: parsing, evaluation, symbolic differentiation.

Right-hand sides of control systems are written in a small arithmetic
language over declared variable names.  This module parses that language,
evaluates it with explicit domain checking, takes first and second
symbolic derivatives (all the bracket calculus downstream is symbolic),
and compiles expressions to flat instruction programs executed by the
numba kernels in :mod:`flowbox.kernels`.

Grammar (EBNF)::

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := "-" factor | power
    power  := atom ("^" factor)?
    atom   := number | ident | ident "(" expr ")" | "(" expr ")"

``^`` is right associative and binds tighter than unary minus, so
``-x1^2`` parses as ``-(x1^2)``.  There is no implicit multiplication.
Known functions: sin, cos, exp, log, sqrt, tanh.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BindingError, DomainError, ParseError

__all__ = [
    "Expr", "Num", "Var", "Neg", "Add", "Sub", "Mul", "Div", "Pow", "Call",
    "parse", "evaluate", "diff", "diff2", "fold", "to_source",
    "compile_bank", "ProgramBank", "FUNCTIONS",
]

# Instruction opcodes shared with the numba kernels.
OP_CONST, OP_VAR, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW, OP_NEG = range(8)
OP_SIN, OP_COS, OP_EXP, OP_LOG, OP_SQRT, OP_TANH = range(8, 14)

FUNCTIONS = {
    "sin": OP_SIN,
    "cos": OP_COS,
    "exp": OP_EXP,
    "log": OP_LOG,
    "sqrt": OP_SQRT,
    "tanh": OP_TANH,
}


@dataclass(frozen=True)
class Expr:
    """Base class for AST nodes; nodes are immutable and hashable."""

    def __str__(self):
        return to_source(self)


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: Expr


@dataclass(frozen=True)
class Call(Expr):
    func: str
    operand: Expr


# ---------------------------------------------------------------------------
# Lexer / parser
# ---------------------------------------------------------------------------

_PUNCT = set("+-*/^()")


def _tokenize(source):
    """Yield (kind, value, offset) triples; kind in {num, ident, punct, end}."""
    tokens = []
    i, size = 0, len(source)
    while i < size:
        c = source[i]
        if c in " \t\r\n":
            i += 1
            continue
        if c in _PUNCT:
            tokens.append(("punct", c, i))
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < size and source[i + 1].isdigit()):
            j = i
            while j < size and (source[j].isdigit() or source[j] == "."):
                j += 1
            if j < size and source[j] in "eE":
                k = j + 1
                if k < size and source[k] in "+-":
                    k += 1
                if k < size and source[k].isdigit():
                    j = k
                    while j < size and source[j].isdigit():
                        j += 1
            text = source[i:j]
            try:
                value = float(text)
            except ValueError:
                raise ParseError(f"bad numeric literal {text!r}", i) from None
            tokens.append(("num", value, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < size and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("ident", source[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", size))
    return tokens


class _Parser:
    def __init__(self, tokens, names):
        self.tokens = tokens
        self.names = frozenset(names)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value):
        kind, val, off = self.peek()
        if kind != "punct" or val != value:
            raise ParseError(f"expected {value!r}", off)
        return self.advance()

    def expr(self):
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "punct" and val in "+-":
                self.advance()
                rhs = self.term()
                node = Add(node, rhs) if val == "+" else Sub(node, rhs)
            else:
                return node

    def term(self):
        node = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "punct" and val in "*/":
                self.advance()
                rhs = self.factor()
                node = Mul(node, rhs) if val == "*" else Div(node, rhs)
            else:
                return node

    def factor(self):
        kind, val, _ = self.peek()
        if kind == "punct" and val == "-":
            self.advance()
            return Neg(self.factor())
        return self.power()

    def power(self):
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "punct" and val == "^":
            self.advance()
            return Pow(base, self.factor())
        return base

    def atom(self):
        kind, val, off = self.advance()
        if kind == "num":
            return Num(val)
        if kind == "ident":
            nk, nv, _ = self.peek()
            if nk == "punct" and nv == "(":
                if val not in FUNCTIONS:
                    raise ParseError(f"unknown function {val!r}", off)
                self.advance()
                arg = self.expr()
                ck, cv, coff = self.peek()
                if ck == "punct" and cv == ")":
                    self.advance()
                    return Call(val, arg)
                raise ParseError(
                    f"{val} takes exactly one argument; expected ')'", coff)
            if val in FUNCTIONS:
                raise ParseError(f"{val!r} is a function, expected '(' after it", off)
            if val not in self.names:
                raise ParseError(f"unknown identifier {val!r}", off)
            return Var(val)
        if kind == "punct" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ParseError("expected a number, name or '('", off)


def parse(source, names):
    """Parse ``source`` into an Expr; only ``names`` are legal variables."""
    parser = _Parser(_tokenize(source), names)
    node = parser.expr()
    kind, _, off = parser.peek()
    if kind != "end":
        raise ParseError("trailing input", off)
    return node


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _check(value):
    if not math.isfinite(value):
        raise DomainError("non-finite result")
    return value


def evaluate(expr, env):
    """Evaluate ``expr`` with the variable bindings in ``env``.

    Raises BindingError for unbound names and DomainError whenever the
    computation leaves the reals (including overflow to inf/nan); a
    non-finite value never escapes silently.
    """
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        try:
            return float(env[expr.name])
        except KeyError:
            raise BindingError(f"no value bound for {expr.name!r}") from None
    if isinstance(expr, Neg):
        return -evaluate(expr.operand, env)
    if isinstance(expr, Add):
        return _check(evaluate(expr.left, env) + evaluate(expr.right, env))
    if isinstance(expr, Sub):
        return _check(evaluate(expr.left, env) - evaluate(expr.right, env))
    if isinstance(expr, Mul):
        return _check(evaluate(expr.left, env) * evaluate(expr.right, env))
    if isinstance(expr, Div):
        num, den = evaluate(expr.left, env), evaluate(expr.right, env)
        if den == 0.0:
            raise DomainError("division by zero")
        return _check(num / den)
    if isinstance(expr, Pow):
        base, exponent = evaluate(expr.base, env), evaluate(expr.exponent, env)
        try:
            return _check(math.pow(base, exponent))
        except (ValueError, OverflowError):
            raise DomainError(
                f"pow({base!r}, {exponent!r}) is undefined or overflows") from None
    if isinstance(expr, Call):
        arg = evaluate(expr.operand, env)
        try:
            if expr.func == "sin":
                return _check(math.sin(arg))
            if expr.func == "cos":
                return _check(math.cos(arg))
            if expr.func == "exp":
                return _check(math.exp(arg))
            if expr.func == "log":
                if arg <= 0.0:
                    raise DomainError(f"log of non-positive value {arg!r}")
                return _check(math.log(arg))
            if expr.func == "sqrt":
                if arg < 0.0:
                    raise DomainError(f"sqrt of negative value {arg!r}")
                return _check(math.sqrt(arg))
            if expr.func == "tanh":
                return _check(math.tanh(arg))
        except OverflowError:
            raise DomainError(f"{expr.func} overflowed") from None
    raise TypeError(f"not an Expr: {expr!r}")


# ---------------------------------------------------------------------------
# Symbolic differentiation
# ---------------------------------------------------------------------------

_ZERO, _ONE = Num(0.0), Num(1.0)


def fold(expr):
    """Constant folding plus the obvious algebraic identities.

    Number-only subtrees collapse to a Num unless evaluating them would
    raise (log(-1) stays symbolic and fails at evaluation time instead).
    """
    if isinstance(expr, (Num, Var)):
        return expr
    if isinstance(expr, Neg):
        inner = fold(expr.operand)
        if isinstance(inner, Num):
            return Num(-inner.value)
        if isinstance(inner, Neg):
            return inner.operand
        return Neg(inner)
    if isinstance(expr, Call):
        arg = fold(expr.operand)
        out = Call(expr.func, arg)
        if isinstance(arg, Num):
            try:
                return Num(evaluate(out, {}))
            except DomainError:
                return out
        return out
    left = fold(expr.left if not isinstance(expr, Pow) else expr.base)
    right = fold(expr.right if not isinstance(expr, Pow) else expr.exponent)
    ctor = type(expr)
    out = Pow(left, right) if ctor is Pow else ctor(left, right)
    if isinstance(left, Num) and isinstance(right, Num):
        try:
            return Num(evaluate(out, {}))
        except DomainError:
            return out
    if ctor is Add:
        if left == _ZERO:
            return right
        if right == _ZERO:
            return left
    elif ctor is Sub:
        if right == _ZERO:
            return left
        if left == _ZERO:
            return Num(-right.value) if isinstance(right, Num) else Neg(right)
    elif ctor is Mul:
        if left == _ZERO or right == _ZERO:
            return _ZERO
        if left == _ONE:
            return right
        if right == _ONE:
            return left
    elif ctor is Div:
        if left == _ZERO:
            return _ZERO
        if right == _ONE:
            return left
    elif ctor is Pow:
        if right == _ONE:
            return left
        if right == _ZERO:
            return _ONE
    return out


def _diff(expr, name):
    if isinstance(expr, Num):
        return _ZERO
    if isinstance(expr, Var):
        return _ONE if expr.name == name else _ZERO
    if isinstance(expr, Neg):
        return Neg(_diff(expr.operand, name))
    if isinstance(expr, Add):
        return Add(_diff(expr.left, name), _diff(expr.right, name))
    if isinstance(expr, Sub):
        return Sub(_diff(expr.left, name), _diff(expr.right, name))
    if isinstance(expr, Mul):
        u, v = expr.left, expr.right
        return Add(Mul(_diff(u, name), v), Mul(u, _diff(v, name)))
    if isinstance(expr, Div):
        u, v = expr.left, expr.right
        return Div(Sub(Mul(_diff(u, name), v), Mul(u, _diff(v, name))),
                   Pow(v, Num(2.0)))
    if isinstance(expr, Pow):
        u, v = expr.base, expr.exponent
        if isinstance(v, Num):
            return Mul(Mul(v, Pow(u, Num(v.value - 1.0))), _diff(u, name))
        if isinstance(u, Num):
            return Mul(Mul(expr, Call("log", u)), _diff(v, name))
        return Mul(expr, Add(Mul(_diff(v, name), Call("log", u)),
                             Div(Mul(v, _diff(u, name)), u)))
    if isinstance(expr, Call):
        u, du = expr.operand, _diff(expr.operand, name)
        if expr.func == "sin":
            return Mul(Call("cos", u), du)
        if expr.func == "cos":
            return Neg(Mul(Call("sin", u), du))
        if expr.func == "exp":
            return Mul(Call("exp", u), du)
        if expr.func == "log":
            return Div(du, u)
        if expr.func == "sqrt":
            return Div(du, Mul(Num(2.0), Call("sqrt", u)))
        if expr.func == "tanh":
            return Mul(Sub(_ONE, Pow(Call("tanh", u), Num(2.0))), du)
    raise TypeError(f"not an Expr: {expr!r}")


def diff(expr, name):
    """First partial derivative with respect to ``name`` (folded)."""
    return fold(_diff(expr, name))


def diff2(expr, name_a, name_b):
    """Second mixed partial, d^2 expr / (d name_a d name_b)."""
    return diff(diff(expr, name_a), name_b)


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(expr):
    if isinstance(expr, (Num, Var, Call)):
        return _PREC_ATOM
    if isinstance(expr, Pow):
        return _PREC_POW
    if isinstance(expr, Neg):
        return _PREC_NEG
    if isinstance(expr, (Mul, Div)):
        return _PREC_MUL
    return _PREC_ADD


def _wrap(expr, minimum):
    text = to_source(expr)
    return f"({text})" if _prec(expr) < minimum else text


def to_source(expr):
    """Render an Expr back to source; parse(to_source(e)) reproduces e."""
    if isinstance(expr, Num):
        value = expr.value
        if value == int(value) and abs(value) < 1e16:
            return repr(int(value)) if value >= 0 else f"({int(value)})"
        return repr(value) if value >= 0 else f"({value!r})"
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Call):
        return f"{expr.func}({to_source(expr.operand)})"
    if isinstance(expr, Neg):
        return "-" + _wrap(expr.operand, _PREC_NEG)
    if isinstance(expr, Add):
        return f"{_wrap(expr.left, _PREC_ADD)} + {_wrap(expr.right, _PREC_ADD + 1)}"
    if isinstance(expr, Sub):
        return f"{_wrap(expr.left, _PREC_ADD)} - {_wrap(expr.right, _PREC_ADD + 1)}"
    if isinstance(expr, Mul):
        return f"{_wrap(expr.left, _PREC_MUL)}*{_wrap(expr.right, _PREC_MUL + 1)}"
    if isinstance(expr, Div):
        return f"{_wrap(expr.left, _PREC_MUL)}/{_wrap(expr.right, _PREC_MUL + 1)}"
    if isinstance(expr, Pow):
        # base must sit at atom level; exponent is a grammar "factor"
        return f"{_wrap(expr.base, _PREC_ATOM)}^{_wrap(expr.exponent, _PREC_NEG)}"
    raise TypeError(f"not an Expr: {expr!r}")


# ---------------------------------------------------------------------------
# Compilation to flat programs for the numeric kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProgramBank:
    """A batch of expressions compiled to stack-machine instructions.

    ``code`` holds (opcode, argument) rows for all programs back to back;
    program ``p`` occupies rows ``starts[p]:starts[p+1]``.  Constants live
    in the shared ``consts`` pool; variables are indices into the caller's
    environment vector, fixed by ``var_order`` at compile time.
    """

    code: np.ndarray        # (K, 2) int32
    starts: np.ndarray      # (P + 1,) int32
    consts: np.ndarray      # (C,) float64
    var_order: tuple
    stack_need: int

    @property
    def count(self):
        return len(self.starts) - 1


def _emit(expr, var_index, code, consts, const_index):
    if isinstance(expr, Num):
        key = expr.value
        slot = const_index.get(key)
        if slot is None:
            slot = len(consts)
            consts.append(key)
            const_index[key] = slot
        code.append((OP_CONST, slot))
        return 1
    if isinstance(expr, Var):
        code.append((OP_VAR, var_index[expr.name]))
        return 1
    if isinstance(expr, Neg):
        depth = _emit(expr.operand, var_index, code, consts, const_index)
        code.append((OP_NEG, 0))
        return depth
    if isinstance(expr, Call):
        depth = _emit(expr.operand, var_index, code, consts, const_index)
        code.append((FUNCTIONS[expr.func], 0))
        return depth
    if isinstance(expr, Pow):
        left, right, op = expr.base, expr.exponent, OP_POW
    else:
        op = {Add: OP_ADD, Sub: OP_SUB, Mul: OP_MUL, Div: OP_DIV}[type(expr)]
        left, right = expr.left, expr.right
    d1 = _emit(left, var_index, code, consts, const_index)
    d2 = _emit(right, var_index, code, consts, const_index)
    code.append((op, 0))
    return max(d1, 1 + d2)


def compile_bank(exprs, var_order):
    """Compile a sequence of Exprs against a fixed variable layout."""
    var_index = {name: i for i, name in enumerate(var_order)}
    code, consts, const_index = [], [], {}
    starts, depth = [0], 1
    for expr in exprs:
        depth = max(depth, _emit(expr, var_index, code, consts, const_index))
        starts.append(len(code))
    return ProgramBank(
        code=np.asarray(code, dtype=np.int32).reshape(len(code), 2),
        starts=np.asarray(starts, dtype=np.int32),
        consts=np.asarray(consts, dtype=np.float64),
        var_order=tuple(var_order),
        stack_need=depth,
    )

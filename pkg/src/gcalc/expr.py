"""Arithmetic expression language for coefficients, Lyapunov candidates and payoffs.

Grammar (highest precedence first): ``^`` right-associative, unary minus,
``* /``, ``+ -``.  Atoms are numbers, declared variables, parenthesised
expressions and the function calls sin, cos, exp, log, tanh, abs, sqrt,
pos (positive part), neg (negative part), min, max.

Trees are immutable; evaluation broadcasts over numpy arrays bound to the
variables, and non-finite values propagate (callers decide how to report
them).  ``to_source`` prints a form whose re-parse reproduces the tree
node for node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ExprError(ValueError):
    """Base class for parse and evaluation errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at offset {pos})")
        self.pos = pos


class ExprNameError(ExprError):
    def __init__(self, name: str, pos: int):
        super().__init__(f"unknown identifier '{name}' (at offset {pos})")
        self.name = name
        self.pos = pos


_UNARY_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "tanh": np.tanh,
    "abs": np.abs,
    "sqrt": np.sqrt,
    "pos": lambda a: np.maximum(a, 0.0),
    "neg": lambda a: np.maximum(-a, 0.0),
}
_BINARY_FUNCS = {"min": np.minimum, "max": np.maximum}
FUNCTIONS = sorted(_UNARY_FUNCS) + sorted(_BINARY_FUNCS)


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: object


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


class Expression:
    """A parsed expression together with its declared variable set."""

    def __init__(self, root, variables):
        self.root = root
        self.variables = tuple(variables)
        self._free = frozenset(_free_vars(root))

    @property
    def free_variables(self) -> frozenset:
        return self._free

    def __call__(self, **env):
        return self.eval(env)

    def eval(self, env):
        """Evaluate with variables bound to scalars or broadcastable arrays."""
        missing = self._free.difference(env)
        if missing:
            raise ExprError(f"missing bindings for {sorted(missing)}")
        with np.errstate(all="ignore"):
            out = _eval(self.root, env)
        return out

    def to_source(self) -> str:
        return _print(self.root, 0)

    def __repr__(self):
        return f"Expression({self.to_source()!r})"

    def __eq__(self, other):
        return isinstance(other, Expression) and self.root == other.root

    def __hash__(self):
        return hash(self.to_source())


def _free_vars(node):
    if isinstance(node, Num):
        return set()
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Neg):
        return _free_vars(node.operand)
    if isinstance(node, Bin):
        return _free_vars(node.left) | _free_vars(node.right)
    if isinstance(node, Call):
        out = set()
        for a in node.args:
            out |= _free_vars(a)
        return out
    raise TypeError(f"not an expression node: {node!r}")


def _eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return np.asarray(env[node.name], dtype=float)
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, Bin):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return np.divide(a, b)
        if node.op == "^":
            return np.power(a, b)
        raise TypeError(f"bad operator {node.op}")
    if isinstance(node, Call):
        args = [_eval(a, env) for a in node.args]
        fn = _UNARY_FUNCS.get(node.func) or _BINARY_FUNCS[node.func]
        return fn(*args)
    raise TypeError(f"not an expression node: {node!r}")


# Precedence levels used for printing; mirror the parser.
_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _node_prec(node):
    if isinstance(node, (Num, Var, Call)):
        return _PREC_ATOM
    if isinstance(node, Neg):
        return _PREC_UNARY
    return {"+": _PREC_ADD, "-": _PREC_ADD, "*": _PREC_MUL, "/": _PREC_MUL, "^": _PREC_POW}[node.op]


def _print(node, parent_prec):
    if isinstance(node, Num):
        s = repr(node.value)
        return s
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        s = "-" + _print(node.operand, _PREC_UNARY)
        return f"({s})" if parent_prec > _PREC_UNARY else s
    if isinstance(node, Call):
        return f"{node.func}({', '.join(_print(a, 0) for a in node.args)})"
    p = _node_prec(node)
    if node.op == "^":
        # right-associative; the left operand must bind tighter than ^
        left = _print(node.left, _PREC_POW + 1)
        right = _print(node.right, _PREC_POW)
        s = f"{left}^{right}"
    else:
        left = _print(node.left, p)
        # left-associative: a same-precedence right operand keeps its parens
        right = _print(node.right, p + 1)
        s = f"{left} {node.op} {right}"
    return f"({s})" if parent_prec > p else s


class _Tokenizer:
    def __init__(self, source: str):
        self.src = source
        self.pos = 0

    def _skip_ws(self):
        while self.pos < len(self.src) and self.src[self.pos].isspace():
            self.pos += 1

    def next(self):
        """Return (kind, text, pos); kind in {num, ident, op, lparen, rparen, comma, end}."""
        self._skip_ws()
        if self.pos >= len(self.src):
            return ("end", "", self.pos)
        start = self.pos
        c = self.src[start]
        if c.isdigit() or (c == "." and start + 1 < len(self.src) and self.src[start + 1].isdigit()):
            i = start
            seen_dot = seen_exp = False
            while i < len(self.src):
                ch = self.src[i]
                if ch.isdigit():
                    i += 1
                elif ch == "." and not seen_dot and not seen_exp:
                    seen_dot = True
                    i += 1
                elif ch in "eE" and not seen_exp and i > start:
                    if i + 1 < len(self.src) and (self.src[i + 1].isdigit() or self.src[i + 1] in "+-"):
                        seen_exp = True
                        i += 2 if self.src[i + 1] in "+-" else 1
                    else:
                        break
                else:
                    break
            self.pos = i
            return ("num", self.src[start:i], start)
        if c.isalpha() or c == "_":
            i = start
            while i < len(self.src) and (self.src[i].isalnum() or self.src[i] == "_"):
                i += 1
            self.pos = i
            return ("ident", self.src[start:i], start)
        self.pos += 1
        if c in "+-*/^":
            return ("op", c, start)
        if c == "(":
            return ("lparen", c, start)
        if c == ")":
            return ("rparen", c, start)
        if c == ",":
            return ("comma", c, start)
        raise ExprSyntaxError(f"unexpected character {c!r}", start)


class _Parser:
    def __init__(self, source, variables, constants):
        self.tok = _Tokenizer(source)
        self.variables = set(variables)
        self.constants = dict(constants or {})
        self.cur = self.tok.next()

    def _advance(self):
        self.cur = self.tok.next()

    def _expect(self, kind, what):
        if self.cur[0] != kind:
            raise ExprSyntaxError(f"expected {what}, found {self.cur[1]!r}", self.cur[2])
        tok = self.cur
        self._advance()
        return tok

    def parse(self):
        node = self.sum()
        if self.cur[0] != "end":
            raise ExprSyntaxError(f"unexpected token {self.cur[1]!r}", self.cur[2])
        return node

    def sum(self):
        node = self.product()
        while self.cur[0] == "op" and self.cur[1] in "+-":
            op = self.cur[1]
            self._advance()
            node = Bin(op, node, self.product())
        return node

    def product(self):
        node = self.unary()
        while self.cur[0] == "op" and self.cur[1] in "*/":
            op = self.cur[1]
            self._advance()
            node = Bin(op, node, self.unary())
        return node

    def unary(self):
        if self.cur[0] == "op" and self.cur[1] == "-":
            self._advance()
            return Neg(self.unary())
        if self.cur[0] == "op" and self.cur[1] == "+":
            self._advance()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.cur[0] == "op" and self.cur[1] == "^":
            self._advance()
            # right-associative; exponent may carry a unary minus (2^-3)
            return Bin("^", base, self.unary())
        return base

    def atom(self):
        kind, text, pos = self.cur
        if kind == "num":
            self._advance()
            return Num(float(text))
        if kind == "lparen":
            self._advance()
            node = self.sum()
            self._expect("rparen", "')'")
            return node
        if kind == "ident":
            self._advance()
            if self.cur[0] == "lparen":
                if text not in _UNARY_FUNCS and text not in _BINARY_FUNCS:
                    raise ExprNameError(text, pos)
                self._advance()
                args = [self.sum()]
                while self.cur[0] == "comma":
                    self._advance()
                    args.append(self.sum())
                self._expect("rparen", "')'")
                want = 1 if text in _UNARY_FUNCS else 2
                if len(args) != want:
                    raise ExprSyntaxError(f"{text} takes {want} argument(s), got {len(args)}", pos)
                return Call(text, tuple(args))
            if text in self.variables:
                return Var(text)
            if text in self.constants:
                return Num(float(self.constants[text]))
            raise ExprNameError(text, pos)
        raise ExprSyntaxError(f"expected a value, found {text!r}" if text else "unexpected end of input", pos)


def parse(source: str, variables, constants=None) -> Expression:
    """Parse ``source`` over the declared variables.

    Identifiers found in ``constants`` are folded to numeric literals at
    parse time; anything else that is neither a variable nor a function
    raises ExprNameError with its byte offset.
    """
    root = _Parser(str(source), variables, constants).parse()
    return Expression(root, variables)


def differentiate_fd(e: Expression, var: str, point, h: float) -> float:
    """Central difference (e(p+h) - e(p-h)) / (2h) in the given variable."""
    hi = dict(point)
    lo = dict(point)
    hi[var] = np.asarray(point[var], dtype=float) + h
    lo[var] = np.asarray(point[var], dtype=float) - h
    val = (e.eval(hi) - e.eval(lo)) / (2.0 * h)
    if np.ndim(val) == 0 and not np.isfinite(val):
        raise ExprError(f"non-finite derivative of {e.to_source()!r} w.r.t. {var}")
    return float(val) if np.ndim(val) == 0 else val


def second_difference_fd(e: Expression, var1: str, var2: str, point, h: float):
    """Second derivative by 3-point (diagonal) or 4-point (mixed) stencil."""
    p = {k: np.asarray(v, dtype=float) for k, v in point.items()}
    if var1 == var2:
        hi = dict(p)
        lo = dict(p)
        hi[var1] = p[var1] + h
        lo[var1] = p[var1] - h
        val = (e.eval(hi) - 2.0 * e.eval(p) + e.eval(lo)) / (h * h)
    else:
        vals = 0.0
        for s1, s2 in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            q = dict(p)
            q[var1] = p[var1] + s1 * h
            q[var2] = p[var2] + s2 * h
            vals = vals + s1 * s2 * e.eval(q)
        val = vals / (4.0 * h * h)
    return float(val) if np.ndim(val) == 0 else val


def differentiate_symbolic(e: Expression, var: str) -> Expression:
    """Symbolic derivative for the polynomial fragment (+, -, *, ^ with
    integer-constant exponents, unary minus, constants, variables)."""
    return Expression(_simplify(_diff(e.root, var)), e.variables)


def _diff(node, var):
    if isinstance(node, Num):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0 if node.name == var else 0.0)
    if isinstance(node, Neg):
        return Neg(_diff(node.operand, var))
    if isinstance(node, Bin):
        if node.op in "+-":
            return Bin(node.op, _diff(node.left, var), _diff(node.right, var))
        if node.op == "*":
            return Bin(
                "+",
                Bin("*", _diff(node.left, var), node.right),
                Bin("*", node.left, _diff(node.right, var)),
            )
        if node.op == "^":
            if isinstance(node.right, Num) and float(node.right.value).is_integer():
                k = node.right.value
                if k == 0:
                    return Num(0.0)
                return Bin(
                    "*",
                    Bin("*", Num(k), Bin("^", node.left, Num(k - 1))),
                    _diff(node.left, var),
                )
        raise ExprError(f"symbolic differentiation unsupported for operator {node.op!r}")
    if isinstance(node, Call):
        raise ExprError(f"symbolic differentiation unsupported for {node.func}(...)")
    raise TypeError(f"not an expression node: {node!r}")


def _simplify(node):
    if isinstance(node, Neg):
        inner = _simplify(node.operand)
        if isinstance(inner, Num):
            return Num(-inner.value)
        return Neg(inner)
    if isinstance(node, Bin):
        a = _simplify(node.left)
        b = _simplify(node.right)
        if isinstance(a, Num) and isinstance(b, Num):
            return Num(_eval(Bin(node.op, a, b), {}))
        if node.op == "*":
            if (isinstance(a, Num) and a.value == 0.0) or (isinstance(b, Num) and b.value == 0.0):
                return Num(0.0)
            if isinstance(a, Num) and a.value == 1.0:
                return b
            if isinstance(b, Num) and b.value == 1.0:
                return a
        if node.op == "+":
            if isinstance(a, Num) and a.value == 0.0:
                return b
            if isinstance(b, Num) and b.value == 0.0:
                return a
        if node.op == "-" and isinstance(b, Num) and b.value == 0.0:
            return a
        if node.op == "^" and isinstance(b, Num) and b.value == 1.0:
            return a
        return Bin(node.op, a, b)
    return node


def state_variables(n: int) -> list:
    """Variable names x1..xn."""
    return [f"x{i + 1}" for i in range(n)]

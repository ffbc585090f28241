"""Closed-form scalar expressions and their derivatives at a point.

An :class:`Expr` is a small AST over reals, named parameters, coordinates
``x1..xn`` and the operators ``+ - * / ^`` with the functions ``ln exp sin
cos sqrt``.  :func:`eval_jet` evaluates an expression together with all its
partial derivatives up to order 4 by forward propagation of truncated
Taylor data; :func:`fd_jet` gives an independent central-difference
estimate for cross-checks.

Jet coefficients are the *raw* partial derivatives d^a f (not divided by
factorials), keyed by multi-index.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "Expr", "Num", "Name", "Unary", "Bin", "Call",
    "Jet", "JetSpace",
    "ExprError", "ExprDomainError",
    "parse", "to_source", "eval_jet", "fd_jet", "eval_value",
    "constant_jet", "coordinate_jets",
]

MAX_ORDER = 4
FUNCTIONS = ("ln", "exp", "sin", "cos", "sqrt")


class ExprError(ValueError):
    """Syntax or identifier error; carries the byte offset into the source."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class ExprDomainError(ArithmeticError):
    """Evaluation outside the expression's domain (log of non-positive, pole)."""


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

class Expr:
    """Base class for expression nodes."""

    __slots__ = ()


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Name(Expr):
    ident: str


@dataclass(frozen=True)
class Unary(Expr):
    op: str
    arg: Expr


@dataclass(frozen=True)
class Bin(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr


# ---------------------------------------------------------------------------
# parser (recursive descent over the grammar in the module docstring)
# ---------------------------------------------------------------------------

class _Tokenizer:
    def __init__(self, src: str):
        self.src = src
        self.pos = 0

    def _skip_ws(self):
        while self.pos < len(self.src) and self.src[self.pos].isspace():
            self.pos += 1

    def peek(self):
        self._skip_ws()
        if self.pos >= len(self.src):
            return ("eof", "", self.pos)
        c = self.src[self.pos]
        if c.isdigit() or c == ".":
            m = self.pos
            while m < len(self.src) and (self.src[m].isdigit() or self.src[m] == "."):
                m += 1
            if m < len(self.src) and self.src[m] in "eE":
                k = m + 1
                if k < len(self.src) and self.src[k] in "+-":
                    k += 1
                if k < len(self.src) and self.src[k].isdigit():
                    m = k
                    while m < len(self.src) and self.src[m].isdigit():
                        m += 1
            return ("num", self.src[self.pos:m], self.pos)
        if c.isalpha() or c == "_":
            m = self.pos
            while m < len(self.src) and (self.src[m].isalnum() or self.src[m] == "_"):
                m += 1
            return ("ident", self.src[self.pos:m], self.pos)
        if c in "+-*/^()":
            return ("op", c, self.pos)
        raise ExprError(f"unexpected character {c!r}", self.pos)

    def take(self):
        tok = self.peek()
        self.pos = tok[2] + len(tok[1])
        return tok


class _Parser:
    def __init__(self, src: str, dim: int, params):
        if not src or src.isspace():
            raise ExprError("empty expression", 0)
        self.toks = _Tokenizer(src)
        self.dim = dim
        self.params = frozenset(params)

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, off = self.toks.peek()
        if kind != "eof":
            raise ExprError(f"unexpected {text!r}", off)
        return e

    def expr(self) -> Expr:
        node = self.term()
        while True:
            kind, text, _ = self.toks.peek()
            if kind == "op" and text in "+-":
                self.toks.take()
                node = Bin(text, node, self.term())
            else:
                return node

    def term(self) -> Expr:
        node = self.unary()
        while True:
            kind, text, _ = self.toks.peek()
            if kind == "op" and text in "*/":
                self.toks.take()
                node = Bin(text, node, self.unary())
            else:
                return node

    def unary(self) -> Expr:
        kind, text, _ = self.toks.peek()
        if kind == "op" and text == "-":
            self.toks.take()
            return Unary("-", self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, text, _ = self.toks.peek()
        if kind == "op" and text == "^":
            self.toks.take()
            kind, text, off = self.toks.peek()
            if kind == "num":
                self.toks.take()
                if "." in text or "e" in text or "E" in text:
                    raise ExprError("exponent must be an integer literal", off)
                return Bin("^", base, Num(float(int(text))))
            if kind == "op" and text == "(":
                self.toks.take()
                inner = self.expr()
                self._expect(")")
                return Bin("^", base, inner)
            raise ExprError("expected integer or parenthesized exponent", off)
        return base

    def atom(self) -> Expr:
        kind, text, off = self.toks.peek()
        if kind == "num":
            self.toks.take()
            return Num(float(text))
        if kind == "ident":
            self.toks.take()
            if text in FUNCTIONS:
                k2, t2, o2 = self.toks.peek()
                if not (k2 == "op" and t2 == "("):
                    raise ExprError(f"function {text} needs an argument list", o2)
                self.toks.take()
                inner = self.expr()
                self._expect(")")
                return Call(text, inner)
            self._check_ident(text, off)
            return Name(text)
        if kind == "op" and text == "(":
            self.toks.take()
            inner = self.expr()
            self._expect(")")
            return inner
        raise ExprError(f"unexpected {text or 'end of input'!r}", off)

    def _expect(self, ch: str):
        kind, text, off = self.toks.peek()
        if kind == "op" and text == ch:
            self.toks.take()
            return
        raise ExprError(f"expected {ch!r}", off)

    def _check_ident(self, name: str, off: int):
        if name in self.params:
            return
        if name.startswith("x") and name[1:].isdigit():
            k = int(name[1:])
            if 1 <= k <= self.dim:
                return
            raise ExprError(f"coordinate {name} outside dimension {self.dim}", off)
        raise ExprError(f"unknown identifier {name!r}", off)


def parse(src: str, dim: int, params=()) -> Expr:
    """Parse an expression over coordinates x1..x<dim> and the given parameters."""
    return _Parser(src, dim, params).parse()


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_source(e: Expr) -> str:
    """Print an AST back to parseable source (minimal parentheses)."""

    def go(node: Expr, parent_prec: int, right_side: bool) -> str:
        if isinstance(node, Num):
            v = node.value
            s = repr(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(v)
            return s if v >= 0 else f"({s})"
        if isinstance(node, Name):
            return node.ident
        if isinstance(node, Call):
            return f"{node.fn}({go(node.arg, 0, False)})"
        if isinstance(node, Unary):
            inner = go(node.arg, _PREC["neg"], True)
            s = f"-{inner}"
            return f"({s})" if parent_prec > _PREC["neg"] else s
        if isinstance(node, Bin):
            if node.op == "^":
                base = go(node.left, _PREC["^"] + 1, False)
                if isinstance(node.right, Num) and float(node.right.value).is_integer() \
                        and node.right.value >= 0:
                    return f"{base}^{int(node.right.value)}"
                return f"{base}^({go(node.right, 0, False)})"
            p = _PREC[node.op]
            left = go(node.left, p, False)
            right = go(node.right, p, True)
            s = f"{left} {node.op} {right}"
            return f"({s})" if parent_prec > p or (right_side and parent_prec == p) else s
        raise TypeError(f"not an Expr: {node!r}")

    return go(e, 0, False)


# ---------------------------------------------------------------------------
# jet spaces: dense truncated derivative data
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _space(dim: int, order: int) -> "JetSpace":
    return JetSpace(dim, order)


class JetSpace:
    """Indexing and product structure for multi-indices of degree <= order."""

    def __init__(self, dim: int, order: int):
        self.dim = dim
        self.order = order
        self.multi_indices: list[tuple[int, ...]] = []
        for total in range(order + 1):
            for alpha in itertools.product(range(total + 1), repeat=dim):
                if sum(alpha) == total:
                    self.multi_indices.append(alpha)
        self.index = {a: i for i, a in enumerate(self.multi_indices)}
        self.size = len(self.multi_indices)
        ia, ib, ic, w = [], [], [], []
        for gi, gamma in enumerate(self.multi_indices):
            for beta in itertools.product(*(range(g + 1) for g in gamma)):
                rest = tuple(g - b for g, b in zip(gamma, beta))
                ia.append(self.index[beta])
                ib.append(self.index[rest])
                ic.append(gi)
                w.append(math.prod(math.comb(g, b) for g, b in zip(gamma, beta)))
        self._mul_a = np.array(ia)
        self._mul_b = np.array(ib)
        self._mul_c = np.array(ic)
        self._mul_w = np.array(w, dtype=float)
        # derivative maps: position of alpha+e_i for each alpha with |alpha| < order
        self._dmaps = []
        for i in range(dim):
            src, dst = [], []
            for ai, alpha in enumerate(self.multi_indices):
                if sum(alpha) < order:
                    up = list(alpha)
                    up[i] += 1
                    src.append(self.index[tuple(up)])
                    dst.append(ai)
            self._dmaps.append((np.array(src), np.array(dst)))

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        out = np.zeros(self.size)
        np.add.at(out, self._mul_c, self._mul_w * a[self._mul_a] * b[self._mul_b])
        return out


class Jet:
    """Value plus raw partial derivatives of a scalar field up to `order`."""

    __slots__ = ("space", "c")

    def __init__(self, space: JetSpace, c: np.ndarray):
        self.space = space
        self.c = c

    # -- constructors -------------------------------------------------------

    @staticmethod
    def constant(value: float, dim: int, order: int) -> "Jet":
        sp = _space(dim, order)
        c = np.zeros(sp.size)
        c[0] = value
        return Jet(sp, c)

    @staticmethod
    def coordinate(i: int, value: float, dim: int, order: int) -> "Jet":
        sp = _space(dim, order)
        c = np.zeros(sp.size)
        c[0] = value
        if order >= 1:
            e = tuple(1 if k == i else 0 for k in range(dim))
            c[sp.index[e]] = 1.0
        return Jet(sp, c)

    # -- accessors ----------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def order(self) -> int:
        return self.space.order

    @property
    def value(self) -> float:
        return float(self.c[0])

    @property
    def coefficients(self) -> dict[tuple[int, ...], float]:
        return {a: float(v) for a, v in zip(self.space.multi_indices, self.c)}

    def partial(self, alpha) -> float:
        return float(self.c[self.space.index[tuple(alpha)]])

    def gradient(self) -> np.ndarray:
        return np.array([self.partial(tuple(1 if k == i else 0 for k in range(self.dim)))
                         for i in range(self.dim)])

    def derivative(self, i: int) -> "Jet":
        """Jet of the i-th partial derivative (order drops by one)."""
        if self.order == 0:
            raise ValueError("cannot differentiate an order-0 jet")
        sp = _space(self.dim, self.order - 1)
        src, dst = self.space._dmaps[i]
        # graded enumeration: the first sp.size multi-indices coincide
        c = np.zeros(sp.size)
        c[dst] = self.c[src]
        return Jet(sp, c)

    def truncated(self, order: int) -> "Jet":
        if order == self.order:
            return self
        sp = _space(self.dim, order)
        c = np.zeros(sp.size)
        for i, alpha in enumerate(sp.multi_indices):
            c[i] = self.c[self.space.index[alpha]]
        return Jet(sp, c)

    # -- ring operations ----------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Jet):
            if other.space is self.space:
                return other
            order = min(self.order, other.order)
            return self.truncated(order), other.truncated(order)
        return Jet.constant(float(other), self.dim, self.order)

    def __add__(self, other):
        if isinstance(other, Jet) and other.space is not self.space:
            a, b = self._coerce(other)
            return a + b
        o = self._coerce(other)
        return Jet(self.space, self.c + o.c)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.space, -self.c)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Jet) else Jet.constant(-float(other), self.dim, self.order))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Jet(self.space, self.c * float(other))
        if other.space is not self.space:
            a, b = self._coerce(other)
            return a * b
        return Jet(self.space, self.space.mul(self.c, other.c))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return Jet(self.space, self.c / float(other))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * float(other)

    def reciprocal(self) -> "Jet":
        f0 = self.value
        if f0 == 0.0:
            raise ExprDomainError("pole: division by zero at the point")
        tilde = Jet(self.space, self.c.copy())
        tilde.c[0] = 0.0
        out = Jet.constant(1.0 / f0, self.dim, self.order)
        power = Jet.constant(1.0, self.dim, self.order)
        for k in range(1, self.order + 1):
            power = power * tilde
            out = out + power * ((-1.0) ** k / f0 ** (k + 1))
        return out

    def powi(self, k: int) -> "Jet":
        if k == 0:
            return Jet.constant(1.0, self.dim, self.order)
        if k < 0:
            return self.reciprocal().powi(-k)
        out = self
        for _ in range(k - 1):
            out = out * self
        return out

    def compose(self, derivs) -> "Jet":
        """Jet of phi(f) given univariate derivative values phi^(k)(f(point))."""
        tilde = Jet(self.space, self.c.copy())
        tilde.c[0] = 0.0
        out = Jet.constant(derivs[0], self.dim, self.order)
        power = Jet.constant(1.0, self.dim, self.order)
        for k in range(1, self.order + 1):
            power = power * tilde
            out = out + power * (derivs[k] / math.factorial(k))
        return out


def constant_jet(value: float, dim: int, order: int) -> Jet:
    return Jet.constant(value, dim, order)


def coordinate_jets(point, order: int) -> list[Jet]:
    point = np.asarray(point, dtype=float)
    return [Jet.coordinate(i, point[i], point.size, order) for i in range(point.size)]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _fn_derivs(fn: str, x: float, order: int) -> list[float]:
    if fn == "ln":
        if x <= 0.0:
            raise ExprDomainError(f"ln of non-positive value {x}")
        out = [math.log(x)]
        for k in range(1, order + 1):
            out.append((-1.0) ** (k - 1) * math.factorial(k - 1) / x ** k)
        return out
    if fn == "exp":
        return [math.exp(x)] * (order + 1)
    if fn == "sin":
        cyc = [math.sin(x), math.cos(x), -math.sin(x), -math.cos(x)]
        return [cyc[k % 4] for k in range(order + 1)]
    if fn == "cos":
        cyc = [math.cos(x), -math.sin(x), -math.cos(x), math.sin(x)]
        return [cyc[k % 4] for k in range(order + 1)]
    if fn == "sqrt":
        if x <= 0.0:
            raise ExprDomainError(f"sqrt of non-positive value {x}")
        out = [math.sqrt(x)]
        coeff = 0.5
        for k in range(1, order + 1):
            out.append(coeff * x ** (0.5 - k))
            coeff *= 0.5 - k
        return out
    raise ExprError(f"unknown function {fn}", 0)


def eval_jet(e: Expr, point, params=None, order: int = MAX_ORDER) -> Jet:
    """Evaluate `e` and all partial derivatives up to `order` at `point`."""
    if order > MAX_ORDER:
        raise ValueError(f"order {order} exceeds {MAX_ORDER}")
    point = np.asarray(point, dtype=float)
    params = dict(params or {})
    dim = point.size

    def go(node: Expr) -> Jet:
        if isinstance(node, Num):
            return Jet.constant(node.value, dim, order)
        if isinstance(node, Name):
            if node.ident in params:
                return Jet.constant(float(params[node.ident]), dim, order)
            i = int(node.ident[1:]) - 1
            return Jet.coordinate(i, point[i], dim, order)
        if isinstance(node, Unary):
            return -go(node.arg)
        if isinstance(node, Call):
            arg = go(node.arg)
            return arg.compose(_fn_derivs(node.fn, arg.value, order))
        if isinstance(node, Bin):
            if node.op == "^":
                base = go(node.left)
                if isinstance(node.right, Num) and float(node.right.value).is_integer():
                    return base.powi(int(node.right.value))
                expo = go(node.right)
                if np.max(np.abs(expo.c[1:])) == 0.0 and float(expo.value).is_integer():
                    return base.powi(int(expo.value))
                if base.value <= 0.0:
                    raise ExprDomainError("non-integer power of non-positive base")
                ln_base = base.compose(_fn_derivs("ln", base.value, order))
                prod = expo * ln_base
                return prod.compose(_fn_derivs("exp", prod.value, order))
            a, b = go(node.left), go(node.right)
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            return a / b
        raise TypeError(f"not an Expr: {node!r}")

    return go(e)


def eval_value(e: Expr, point, params=None) -> float:
    """Plain float evaluation (used by the finite-difference oracle)."""
    point = np.asarray(point, dtype=float)
    params = dict(params or {})

    def go(node: Expr) -> float:
        if isinstance(node, Num):
            return node.value
        if isinstance(node, Name):
            if node.ident in params:
                return float(params[node.ident])
            return float(point[int(node.ident[1:]) - 1])
        if isinstance(node, Unary):
            return -go(node.arg)
        if isinstance(node, Call):
            x = go(node.arg)
            if node.fn == "ln":
                if x <= 0:
                    raise ExprDomainError(f"ln of non-positive value {x}")
                return math.log(x)
            if node.fn == "sqrt":
                if x <= 0:
                    raise ExprDomainError(f"sqrt of non-positive value {x}")
                return math.sqrt(x)
            return getattr(math, node.fn)(x)
        if isinstance(node, Bin):
            a = go(node.left)
            if node.op == "^":
                b = go(node.right)
                if float(b).is_integer():
                    return a ** int(b)
                if a <= 0:
                    raise ExprDomainError("non-integer power of non-positive base")
                return a ** b
            b = go(node.right)
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            if b == 0.0:
                raise ExprDomainError("pole: division by zero at the point")
            return a / b
        raise TypeError(f"not an Expr: {node!r}")

    return go(e)


def fd_jet(e: Expr, point, params=None, order: int = MAX_ORDER, h: float = 1e-4) -> Jet:
    """Central-difference estimate of the jet; each coefficient is O(h^2) accurate."""
    if h <= 0:
        raise ValueError("h must be positive")
    point = np.asarray(point, dtype=float)
    dim = point.size
    sp = _space(dim, order)

    def fd(alpha: tuple[int, ...], x: np.ndarray) -> float:
        total = sum(alpha)
        if total == 0:
            return eval_value(e, x, params)
        i = next(k for k, v in enumerate(alpha) if v > 0)
        down = list(alpha)
        down[i] -= 1
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        return (fd(tuple(down), xp) - fd(tuple(down), xm)) / (2.0 * h)

    c = np.array([fd(alpha, point) for alpha in sp.multi_indices])
    return Jet(sp, c)

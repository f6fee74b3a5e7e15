"""Small expression language for complex-analytic formulas in one variable.

The grammar (documented again in the README):

    expr     := term (('+'|'-') term)*
    term     := factor (('*'|'/') factor)*
    factor   := '-' factor | atom ('^' exponent)?
    atom     := number | 'z' | 'j' | 'i' | name '(' expr ')' | '(' expr ')'
    exponent := ['-'] digits | 'j'

Unary minus binds looser than '^', so -z^2 is -(z^2) and (-z)^2 needs the
parentheses.

``z`` is the complex variable, ``j`` a nonnegative integer parameter bound at
evaluation time, ``i`` the imaginary unit.  A number with a trailing ``i``
(``2.5i``) is an imaginary literal.  ``exp`` is the only callable in the core
language; ``log2ceil`` (exact ceil(log2(x)) for integers x >= 1) is admitted
when parsing certificate formulas, which are expressions in ``j`` alone.

Powers take integer exponents only, either a literal or the parameter ``j``;
this keeps every program single valued and entire away from explicit poles.
Evaluation produces first-order jets (value, derivative in z) and works
elementwise over numpy arrays.  Programs that are polynomials in ``z`` can be
expanded to coefficient arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

__all__ = [
    "ExprError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "NonIntegerExponentError",
    "PoleError",
    "NotPolynomialError",
    "Jet1",
    "ExprProgram",
    "parse",
]


class ExprError(Exception):
    """Base class for expression-language failures."""


class ExprSyntaxError(ExprError):
    """Malformed source text; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownIdentifierError(ExprSyntaxError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier '{name}'", offset)
        self.name = name


class NonIntegerExponentError(ExprSyntaxError):
    def __init__(self, offset: int):
        super().__init__("exponent must be an integer literal or 'j'", offset)


class PoleError(ExprError):
    """Division hit a zero denominator (or 0 raised to a negative power)."""

    def __init__(self, where):
        super().__init__(f"pole encountered at z = {where}")
        self.where = where


class NotPolynomialError(ExprError):
    """Raised when coefficient expansion is requested for a non-polynomial."""


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Const:
    value: complex


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Param:
    pass


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * /
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: Optional[int]  # None means the parameter j
    # exponent carried separately so powers stay integer by construction


@dataclass(frozen=True)
class Call:
    name: str  # 'exp' or an admitted extra such as 'log2ceil'
    arg: "Node"


Node = Union[Const, Var, Param, Neg, Bin, Pow, Call]


# ---------------------------------------------------------------------------
# Lexer

_TK_NUM = "num"
_TK_IDENT = "ident"
_TK_OP = "op"
_TK_END = "end"


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int
    value: complex = 0j


def _lex(src: str) -> list[_Token]:
    toks: list[_Token] = []
    n = len(src)
    k = 0
    while k < n:
        c = src[k]
        if c in " \t\r\n":
            k += 1
            continue
        if c in "+-*/^(),":
            toks.append(_Token(_TK_OP, c, k))
            k += 1
            continue
        if c.isdigit() or (c == "." and k + 1 < n and src[k + 1].isdigit()):
            start = k
            while k < n and src[k].isdigit():
                k += 1
            if k < n and src[k] == ".":
                k += 1
                while k < n and src[k].isdigit():
                    k += 1
            if k < n and src[k] in "eE":
                k2 = k + 1
                if k2 < n and src[k2] in "+-":
                    k2 += 1
                if k2 < n and src[k2].isdigit():
                    k = k2
                    while k < n and src[k].isdigit():
                        k += 1
            text = src[start:k]
            imag = False
            if k < n and src[k] == "i":
                # trailing i binds to the literal only when not starting a name
                if k + 1 >= n or not (src[k + 1].isalnum() or src[k + 1] == "_"):
                    imag = True
                    k += 1
            val = float(text)
            toks.append(
                _Token(_TK_NUM, text + ("i" if imag else ""), start,
                       complex(0.0, val) if imag else complex(val, 0.0))
            )
            continue
        if c.isalpha() or c == "_":
            start = k
            while k < n and (src[k].isalnum() or src[k] == "_"):
                k += 1
            toks.append(_Token(_TK_IDENT, src[start:k], start))
            continue
        raise ExprSyntaxError(f"unexpected character {c!r}", k)
    toks.append(_Token(_TK_END, "", n))
    return toks


# ---------------------------------------------------------------------------
# Parser (precedence climbing over the grammar above)


class _Parser:
    def __init__(self, toks: list[_Token], funcs: frozenset[str]):
        self.toks = toks
        self.k = 0
        self.funcs = funcs

    def peek(self) -> _Token:
        return self.toks[self.k]

    def next(self) -> _Token:
        t = self.toks[self.k]
        self.k += 1
        return t

    def expect_op(self, text: str) -> _Token:
        t = self.peek()
        if t.kind != _TK_OP or t.text != text:
            raise ExprSyntaxError(f"expected {text!r}", t.pos)
        return self.next()

    def parse_expr(self) -> Node:
        node = self.parse_term()
        while True:
            t = self.peek()
            if t.kind == _TK_OP and t.text in "+-":
                self.next()
                node = Bin(t.text, node, self.parse_term())
            else:
                return node

    def parse_term(self) -> Node:
        node = self.parse_factor()
        while True:
            t = self.peek()
            if t.kind == _TK_OP and t.text in "*/":
                self.next()
                node = Bin(t.text, node, self.parse_factor())
            else:
                return node

    def parse_factor(self) -> Node:
        t = self.peek()
        if t.kind == _TK_OP and t.text == "-":
            # lower precedence than '^', so -z^2 means -(z^2)
            self.next()
            return Neg(self.parse_factor())
        node = self.parse_atom()
        t = self.peek()
        if t.kind == _TK_OP and t.text == "^":
            self.next()
            node = Pow(node, self.parse_exponent())
        return node

    def parse_exponent(self) -> Optional[int]:
        t = self.peek()
        sign = 1
        if t.kind == _TK_OP and t.text == "-":
            self.next()
            sign = -1
            t = self.peek()
        if t.kind == _TK_IDENT and t.text == "j" and sign == 1:
            self.next()
            return None
        if t.kind != _TK_NUM:
            raise NonIntegerExponentError(t.pos)
        self.next()
        v = t.value
        if v.imag != 0.0 or v.real != int(v.real):
            raise NonIntegerExponentError(t.pos)
        return sign * int(v.real)

    def parse_atom(self) -> Node:
        t = self.peek()
        if t.kind == _TK_OP and t.text == "(":
            self.next()
            node = self.parse_expr()
            self.expect_op(")")
            return node
        if t.kind == _TK_NUM:
            self.next()
            return Const(t.value)
        if t.kind == _TK_IDENT:
            name = t.text
            if name == "z":
                self.next()
                return Var()
            if name == "j":
                self.next()
                return Param()
            if name == "i":
                self.next()
                return Const(1j)
            if name == "exp" or name in self.funcs:
                self.next()
                self.expect_op("(")
                node = self.parse_expr()
                self.expect_op(")")
                return Call(name, node)
            raise UnknownIdentifierError(name, t.pos)
        raise ExprSyntaxError("expected a value", t.pos)


# ---------------------------------------------------------------------------
# Jets and evaluation


@dataclass(frozen=True)
class Jet1:
    """First-order jet (value, d/dz) supporting field arithmetic."""

    value: complex
    deriv: complex = 0j

    def __add__(self, other: "Jet1") -> "Jet1":
        return Jet1(self.value + other.value, self.deriv + other.deriv)

    def __sub__(self, other: "Jet1") -> "Jet1":
        return Jet1(self.value - other.value, self.deriv - other.deriv)

    def __mul__(self, other: "Jet1") -> "Jet1":
        return Jet1(self.value * other.value,
                    self.deriv * other.value + self.value * other.deriv)

    def __truediv__(self, other: "Jet1") -> "Jet1":
        if other.value == 0:
            raise PoleError(None)
        v = self.value / other.value
        return Jet1(v, (self.deriv - v * other.deriv) / other.value)

    def __pow__(self, p: int) -> "Jet1":
        if p == 0:
            return Jet1(1.0 + 0j, 0j)
        if p < 0 and self.value == 0:
            raise PoleError(None)
        v = self.value ** p
        return Jet1(v, p * self.value ** (p - 1) * self.deriv)

    def exp(self) -> "Jet1":
        e = np.exp(self.value)
        return Jet1(e, e * self.deriv)


def _first_bad(z, mask):
    """First z whose mask entry is True, for error reporting."""
    if np.isscalar(z) or np.ndim(z) == 0:
        return complex(z)
    idx = np.argmax(mask)
    flat = np.asarray(z).reshape(-1)
    badmask = np.asarray(mask).reshape(-1)
    return complex(flat[np.argmax(badmask)]) if badmask.any() else complex(flat[idx])


def _log2ceil_int(x: float) -> float:
    if x < 1 or x != int(x):
        raise ExprError(f"log2ceil requires an integer argument >= 1, got {x}")
    m = int(x)
    return float((m - 1).bit_length())


def _eval(node: Node, z, j: int):
    """Return (value, dvalue/dz); broadcasts over array-valued z."""
    if isinstance(node, Const):
        return node.value, 0j
    if isinstance(node, Var):
        return z, 1.0 + 0j
    if isinstance(node, Param):
        return complex(j), 0j
    if isinstance(node, Neg):
        v, d = _eval(node.arg, z, j)
        return -v, -d
    if isinstance(node, Bin):
        lv, ld = _eval(node.left, z, j)
        rv, rd = _eval(node.right, z, j)
        if node.op == "+":
            return lv + rv, ld + rd
        if node.op == "-":
            return lv - rv, ld - rd
        if node.op == "*":
            return lv * rv, ld * rv + lv * rd
        # division
        bad = rv == 0
        if np.any(bad):
            raise PoleError(_first_bad(z, bad))
        v = lv / rv
        return v, (ld - v * rd) / rv
    if isinstance(node, Pow):
        p = j if node.exponent is None else node.exponent
        bv, bd = _eval(node.base, z, j)
        if p == 0:
            one = np.ones_like(bv) if np.ndim(bv) else 1.0 + 0j
            return one, 0j * one
        if p < 0:
            bad = bv == 0
            if np.any(bad):
                raise PoleError(_first_bad(z, bad))
        v = bv ** p
        return v, p * bv ** (p - 1) * bd
    if isinstance(node, Call):
        if node.name == "exp":
            av, ad = _eval(node.arg, z, j)
            e = np.exp(av)
            return e, e * ad
        if node.name == "log2ceil":
            av, _ = _eval(node.arg, z, j)
            if np.ndim(av):
                raise ExprError("log2ceil is only defined for scalar integer arguments")
            av = complex(av)
            if av.imag != 0.0:
                raise ExprError("log2ceil requires a real argument")
            return complex(_log2ceil_int(av.real)), 0j
        raise ExprError(f"no evaluator for function '{node.name}'")
    raise TypeError(f"unknown node {node!r}")


# ---------------------------------------------------------------------------
# Polynomial expansion (coefficients ascending in z)


def _ptrim(c: np.ndarray) -> np.ndarray:
    nz = np.nonzero(c)[0]
    if nz.size == 0:
        return np.zeros(1, dtype=complex)
    return c[: nz[-1] + 1]


def _poly(node: Node, j: int) -> np.ndarray:
    if isinstance(node, Const):
        return np.array([node.value], dtype=complex)
    if isinstance(node, Var):
        return np.array([0.0, 1.0], dtype=complex)
    if isinstance(node, Param):
        return np.array([complex(j)], dtype=complex)
    if isinstance(node, Neg):
        return -_poly(node.arg, j)
    if isinstance(node, Bin):
        a = _poly(node.left, j)
        b = _poly(node.right, j)
        if node.op in "+-":
            m = max(a.size, b.size)
            out = np.zeros(m, dtype=complex)
            out[: a.size] = a
            out[: b.size] += b if node.op == "+" else -b
            return _ptrim(out)
        if node.op == "*":
            return _ptrim(np.convolve(a, b))
        b = _ptrim(b)
        if b.size != 1:
            raise NotPolynomialError("division by a non-constant expression")
        if b[0] == 0:
            raise PoleError(None)
        return a / b[0]
    if isinstance(node, Pow):
        p = j if node.exponent is None else node.exponent
        base = _ptrim(_poly(node.base, j))
        if p < 0:
            if base.size != 1:
                raise NotPolynomialError("negative power of a non-constant expression")
            if base[0] == 0:
                raise PoleError(None)
            return np.array([base[0] ** p], dtype=complex)
        out = np.array([1.0 + 0j])
        sq = base
        e = p
        while e:
            if e & 1:
                out = np.convolve(out, sq)
            e >>= 1
            if e:
                sq = np.convolve(sq, sq)
        return _ptrim(out)
    if isinstance(node, Call):
        if node.name == "log2ceil":
            v, _ = _eval(node, 0j, j)
            return np.array([v], dtype=complex)
        arg = _ptrim(_poly(node.arg, j))
        if node.name == "exp" and arg.size == 1:
            return np.array([np.exp(arg[0])], dtype=complex)
        raise NotPolynomialError(f"'{node.name}' of a non-constant expression")
    raise TypeError(f"unknown node {node!r}")


def _uses(node: Node, kind) -> bool:
    if isinstance(node, kind):
        return True
    if isinstance(node, Neg):
        return _uses(node.arg, kind)
    if isinstance(node, Bin):
        return _uses(node.left, kind) or _uses(node.right, kind)
    if isinstance(node, Pow):
        return _uses(node.base, kind) or (kind is Param and node.exponent is None)
    if isinstance(node, Call):
        return _uses(node.arg, kind)
    return False


# ---------------------------------------------------------------------------
# Printer.  parse(print(parse(t))) is structurally equal to parse(t).

_PREC_ADD = 1
_PREC_MUL = 2
_PREC_NEG = 3
_PREC_POW = 4
_PREC_ATOM = 5


def _fmt_real(x: float) -> str:
    if x == int(x) and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def _print(node: Node) -> tuple[str, int]:
    if isinstance(node, Const):
        v = node.value
        if v.imag == 0.0:
            if v.real < 0:
                return f"-{_fmt_real(-v.real)}", _PREC_NEG
            return _fmt_real(v.real), _PREC_ATOM
        if v.real == 0.0:
            if v.imag < 0:
                return f"-{_fmt_real(-v.imag)}i", _PREC_NEG
            if v.imag == 1.0:
                return "i", _PREC_ATOM
            return f"{_fmt_real(v.imag)}i", _PREC_ATOM
        re, im = _fmt_real(abs(v.real)), _fmt_real(abs(v.imag))
        s = ("-" if v.real < 0 else "") + re
        s += ("-" if v.imag < 0 else "+") + (im + "i")
        return f"({s})", _PREC_ATOM
    if isinstance(node, Var):
        return "z", _PREC_ATOM
    if isinstance(node, Param):
        return "j", _PREC_ATOM
    if isinstance(node, Neg):
        s, p = _print(node.arg)
        if p < _PREC_NEG:
            s = f"({s})"
        return f"-{s}", _PREC_NEG
    if isinstance(node, Bin):
        myp = _PREC_ADD if node.op in "+-" else _PREC_MUL
        ls, lp = _print(node.left)
        rs, rp = _print(node.right)
        if lp < myp:
            ls = f"({ls})"
        # right side needs parens at equal precedence: - and / left-associate
        if rp < myp or (rp == myp and node.op in "-/"):
            rs = f"({rs})"
        if node.op in "+-" and rs.startswith("-"):
            rs = f"({rs})"
        return f"{ls}{node.op}{rs}", myp
    if isinstance(node, Pow):
        bs, bp = _print(node.base)
        if bp < _PREC_ATOM:
            bs = f"({bs})"
        e = "j" if node.exponent is None else str(node.exponent)
        return f"{bs}^{e}", _PREC_POW
    if isinstance(node, Call):
        s, _ = _print(node.arg)
        return f"{node.name}({s})", _PREC_ATOM
    raise TypeError(f"unknown node {node!r}")


# ---------------------------------------------------------------------------
# Program wrapper


@dataclass(frozen=True)
class ExprProgram:
    """A parsed expression with its source text and evaluation entry points."""

    source: str
    ast: Node

    def __str__(self) -> str:
        return _print(self.ast)[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, ExprProgram) and self.ast == other.ast

    def __hash__(self) -> int:
        return hash(str(self))

    @property
    def uses_var(self) -> bool:
        return _uses(self.ast, Var)

    @property
    def uses_param(self) -> bool:
        return _uses(self.ast, Param)

    def eval(self, z, j: int = 0) -> complex:
        v, _ = _eval(self.ast, complex(z), j)
        return complex(v)

    def eval_jet(self, z, j: int = 0) -> Jet1:
        v, d = _eval(self.ast, complex(z), j)
        return Jet1(complex(v), complex(d))

    def eval_array(self, z: np.ndarray, j: int = 0) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        v, _ = _eval(self.ast, z, j)
        return np.broadcast_to(np.asarray(v, dtype=complex), z.shape).copy()

    def eval_jet_array(self, z: np.ndarray, j: int = 0):
        """Return (values, derivatives) broadcast to the shape of z."""
        z = np.asarray(z, dtype=complex)
        v, d = _eval(self.ast, z, j)
        v = np.broadcast_to(np.asarray(v, dtype=complex), z.shape).copy()
        d = np.broadcast_to(np.asarray(d, dtype=complex), z.shape).copy()
        return v, d

    def poly_coeffs(self, j: int = 0) -> np.ndarray:
        """Ascending coefficient array; NotPolynomialError when not expandable."""
        return _ptrim(_poly(self.ast, j))

    @property
    def is_polynomial(self) -> bool:
        try:
            self.poly_coeffs(0)
            if self.uses_param:
                self.poly_coeffs(3)
            return True
        except NotPolynomialError:
            return False


def parse(text: str, extra_funcs: tuple[str, ...] = ()) -> ExprProgram:
    """Parse source text into an ExprProgram.

    extra_funcs admits additional single-argument builtins (used for the
    certificate sub-language, which allows log2ceil).
    """
    toks = _lex(text)
    parser = _Parser(toks, frozenset(extra_funcs))
    ast = parser.parse_expr()
    t = parser.peek()
    if t.kind != _TK_END:
        raise ExprSyntaxError(f"unexpected trailing input {t.text!r}", t.pos)
    return ExprProgram(text, ast)


def parse_certificate(text: str) -> ExprProgram:
    """Parse a certificate formula: an expression in j with log2ceil allowed."""
    prog = parse(text, extra_funcs=("log2ceil",))
    if prog.uses_var:
        raise ExprSyntaxError("certificate formulas may not reference z", 0)
    return prog

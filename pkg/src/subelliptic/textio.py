"""Text serialization of polynomials and expressions.

Grammar (whitespace ignored)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom ('^' exponent)?
    atom   := INT | 'i' | 'sqrt2' | 'pi' | 'w' | 'wb' | 's'
            | 'psi' | 'psib' | 'g' | 'L' | '(' expr ')'

Division is allowed only by a single-term exact constant.  Negative
exponents are allowed on pi, sqrt2, constants, psi, psib and g, and g also
takes half-integer exponents such as ``g^(-1/2)``.
"""
from __future__ import annotations

import re
from fractions import Fraction
from typing import List, Tuple

from .casym import (G, HPoly, PSI, PSIB, SymExpr, psi_pow, L_SYM,
                    G_INV_SQRT, as_poly)
from .coeff import I, PI, SQRT2, Coeff, format_coeff
from .errors import DomainError

_TOKEN = re.compile(r"\s*(?:(\d+)|([A-Za-z_][A-Za-z0-9_]*)|(.))")


def _tokenize(text: str) -> List[Tuple[str, str]]:
    out = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            break
        pos = m.end()
        if m.group(1):
            out.append(("int", m.group(1)))
        elif m.group(2):
            out.append(("name", m.group(2)))
        elif m.group(3) and not m.group(3).isspace():
            out.append(("op", m.group(3)))
    out.append(("end", ""))
    return out


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self) -> Tuple[str, str]:
        return self.toks[self.i]

    def take(self, kind: str | None = None, value: str | None = None) -> Tuple[str, str]:
        tok = self.toks[self.i]
        if (kind and tok[0] != kind) or (value is not None and tok[1] != value):
            raise DomainError(f"parse error near token {tok[1]!r}")
        self.i += 1
        return tok

    def parse(self) -> SymExpr:
        e = self.expr()
        if self.peek()[0] != "end":
            raise DomainError(f"unexpected trailing input near {self.peek()[1]!r}")
        return e

    def expr(self) -> SymExpr:
        e = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            t = self.term()
            e = e + t if op == "+" else e - t
        return e

    def term(self) -> SymExpr:
        e = self.unary()
        while self.peek() in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            t = self.unary()
            if op == "*":
                e = e * t
            else:
                c = _as_constant(t)
                if c is None or not c.is_monomial():
                    raise DomainError("division only by a single-term constant")
                e = e.scale(c.inverse())
        return e

    def unary(self) -> SymExpr:
        if self.peek() == ("op", "-"):
            self.take()
            return -self.unary()
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def exponent(self) -> Fraction:
        if self.peek() == ("op", "("):
            self.take()
            sign = 1
            if self.peek() == ("op", "-"):
                self.take()
                sign = -1
            num = int(self.take("int")[1])
            den = 1
            if self.peek() == ("op", "/"):
                self.take()
                den = int(self.take("int")[1])
            self.take("op", ")")
            return Fraction(sign * num, den)
        sign = 1
        if self.peek() == ("op", "-"):
            self.take()
            sign = -1
        return Fraction(sign * int(self.take("int")[1]))

    def power(self) -> SymExpr:
        kind, val = self.peek()
        name = val if kind == "name" else None
        base = self.atom()
        if self.peek() != ("op", "^"):
            return base
        self.take()
        k = self.exponent()
        return _raise(base, name, k)

    def atom(self) -> SymExpr:
        kind, val = self.take()
        if kind == "int":
            return SymExpr.of(int(val))
        if kind == "name":
            table = {
                "i": SymExpr.of(I), "sqrt2": SymExpr.of(SQRT2), "pi": SymExpr.of(PI),
                "w": SymExpr.of(HPoly({(0, 1, 0): 1})), "wb": SymExpr.of(HPoly({(1, 0, 0): 1})),
                "s": SymExpr.of(HPoly({(0, 0, 1): 1})), "psi": PSI, "psib": PSIB, "g": G,
                "L": L_SYM,
            }
            if val not in table:
                raise DomainError(f"unknown symbol {val!r}")
            return table[val]
        if (kind, val) == ("op", "("):
            e = self.expr()
            self.take("op", ")")
            return e
        raise DomainError(f"parse error near token {val!r}")


def _as_constant(e: SymExpr) -> Coeff | None:
    p = e.as_poly()
    if p is None:
        return None
    if p.is_zero():
        return Coeff()
    if set(p.coeffs) != {(0, 0, 0)}:
        return None
    return p.coeffs[(0, 0, 0)]


def _raise(base: SymExpr, name: str | None, k: Fraction) -> SymExpr:
    if k.denominator == 1 and k >= 0:
        return base ** int(k)
    if name == "g" and k.denominator in (1, 2):
        m = k * 2  # g^(m/2)
        m = int(m)
        if m % 2:
            # g^(m/2) = g^((m+1)/2) * g^(-1/2)
            return _raise(base, "g", Fraction(m + 1, 2)) * G_INV_SQRT
        k = Fraction(m, 2)
        return psi_pow(-int(k), -int(k)) if k < 0 else base ** int(k)
    if k.denominator != 1:
        raise DomainError("fractional exponents are only allowed on g")
    n = -int(k)
    if name == "psi":
        return psi_pow(n, 0)
    if name == "psib":
        return psi_pow(0, n)
    c = _as_constant(base)
    if c is not None and c.is_monomial():
        inv = c.inverse()
        out = SymExpr.of(1)
        for _ in range(n):
            out = out.scale(inv)
        return out
    raise DomainError("negative exponents are only allowed on psi, psib, g and constants")


def parse_expr(text: str) -> SymExpr:
    return _Parser(text).parse()


def parse_poly(text: str) -> HPoly:
    e = parse_expr(text)
    p = e.as_poly()
    if p is None:
        raise DomainError("input is not a polynomial in w, wb, s")
    return p


def _mono_str(m) -> str:
    parts = []
    for name, k in (("wb", m[0]), ("w", m[1]), ("s", m[2])):
        if k == 1:
            parts.append(name)
        elif k:
            parts.append(f"{name}^{k}")
    return "*".join(parts)


def format_poly(p: HPoly) -> str:
    """Terms in graded-lex order of (degree, alpha, beta, gamma)."""
    p = as_poly(p)
    if p.is_zero():
        return "0"
    parts = []
    for m, c in p.items():
        ms = _mono_str(m)
        cs = format_coeff(c)
        if not ms:
            parts.append(cs)
        elif cs == "1":
            parts.append(ms)
        elif cs == "-1":
            parts.append("-" + ms)
        else:
            parts.append(f"{cs}*{ms}")
    out = parts[0]
    for part in parts[1:]:
        out += f" - {part[1:]}" if part.startswith("-") else f" + {part}"
    return out


def format_expr(e: SymExpr) -> str:
    e = SymExpr.of(e)
    if e.is_zero():
        return "0"
    parts = []
    for (d, c), (a, b, n) in sorted(e.terms.items()):
        factors = [f"({format_poly(n)})"]
        if a:
            factors.append(f"psi^(-{a})")
        if b:
            factors.append(f"psib^(-{b})")
        if c:
            factors.append("g^(-1/2)")
        if d == 1:
            factors.append("L")
        elif d:
            factors.append(f"L^{d}")
        parts.append("*".join(factors))
    return " + ".join(parts)

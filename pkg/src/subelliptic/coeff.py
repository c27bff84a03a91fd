"""Exact scalars in Q(i, sqrt2)[pi, 1/pi].

A ``Coeff`` is a finite sum  sum_{e,k} c_{e,k} * sqrt2**e * pi**k  with
Gaussian rational ``c_{e,k}``, ``e`` in {0, 1} and ``k`` any integer.  The
relation sqrt2**2 = 2 keeps ``e`` reduced, so equality of normal forms is
equality of numbers (pi is treated as transcendental).
"""
from __future__ import annotations

import math
from fractions import Fraction
from typing import Dict, Iterable, Tuple, Union

Gauss = Tuple[Fraction, Fraction]
Key = Tuple[int, int]

_ZERO = Fraction(0)
_SQRT2 = math.sqrt(2.0)


def _gmul(a: Gauss, b: Gauss) -> Gauss:
    return (a[0] * b[0] - a[1] * b[1], a[0] * b[1] + a[1] * b[0])


class Coeff:
    """Immutable exact scalar.  Supports +, -, *, conjugation and exact zero test."""

    __slots__ = ("_t", "_hash")

    def __init__(self, terms: Dict[Key, Gauss] | None = None, _clean: bool = False):
        if terms is None:
            terms = {}
        if not _clean:
            terms = {k: (Fraction(v[0]), Fraction(v[1])) for k, v in terms.items()
                     if v[0] != 0 or v[1] != 0}
        self._t = terms
        self._hash = None

    # construction ---------------------------------------------------------
    @classmethod
    def of(cls, value: "CoeffLike") -> "Coeff":
        if isinstance(value, Coeff):
            return value
        if isinstance(value, bool):
            raise TypeError("bool is not a coefficient")
        if isinstance(value, (int, Fraction)):
            return cls({(0, 0): (Fraction(value), _ZERO)})
        if isinstance(value, tuple) and len(value) == 2:
            return cls({(0, 0): (Fraction(value[0]), Fraction(value[1]))})
        raise TypeError(f"cannot make an exact coefficient from {value!r}")

    @classmethod
    def gauss(cls, re: int | Fraction | str, im: int | Fraction | str = 0) -> "Coeff":
        return cls({(0, 0): (Fraction(re), Fraction(im))})

    @classmethod
    def monomial(cls, re, im=0, sqrt2: int = 0, pi: int = 0) -> "Coeff":
        """c * sqrt2**sqrt2 * pi**pi for any integer power of sqrt2."""
        c = (Fraction(re), Fraction(im))
        e = sqrt2 % 2
        scale = Fraction(2) ** ((sqrt2 - e) // 2)
        return cls({(e, pi): (c[0] * scale, c[1] * scale)})

    # basic protocol -------------------------------------------------------
    @property
    def terms(self) -> Dict[Key, Gauss]:
        return dict(self._t)

    def is_zero(self) -> bool:
        return not self._t

    def __bool__(self) -> bool:
        return bool(self._t)

    def __eq__(self, other) -> bool:
        try:
            other = Coeff.of(other)
        except TypeError:
            return NotImplemented
        return self._t == other._t

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._t.items()))
        return self._hash

    def __add__(self, other: "CoeffLike") -> "Coeff":
        other = Coeff.of(other)
        if not other._t:
            return self
        if not self._t:
            return other
        out = dict(self._t)
        for k, v in other._t.items():
            if k in out:
                a = out[k]
                s = (a[0] + v[0], a[1] + v[1])
                if s[0] == 0 and s[1] == 0:
                    del out[k]
                else:
                    out[k] = s
            else:
                out[k] = v
        return Coeff(out, _clean=True)

    __radd__ = __add__

    def __neg__(self) -> "Coeff":
        return Coeff({k: (-v[0], -v[1]) for k, v in self._t.items()}, _clean=True)

    def __sub__(self, other: "CoeffLike") -> "Coeff":
        return self + (-Coeff.of(other))

    def __rsub__(self, other: "CoeffLike") -> "Coeff":
        return Coeff.of(other) - self

    def __mul__(self, other: "CoeffLike") -> "Coeff":
        other = Coeff.of(other)
        if not self._t or not other._t:
            return ZERO
        out: Dict[Key, Gauss] = {}
        for (e1, k1), a in self._t.items():
            for (e2, k2), b in other._t.items():
                p = _gmul(a, b)
                e = e1 + e2
                if e == 2:
                    p = (2 * p[0], 2 * p[1])
                    e = 0
                key = (e, k1 + k2)
                if key in out:
                    q = out[key]
                    out[key] = (q[0] + p[0], q[1] + p[1])
                else:
                    out[key] = p
        return Coeff(out)

    __rmul__ = __mul__

    def scale(self, q: int | Fraction) -> "Coeff":
        q = Fraction(q)
        if q == 0:
            return ZERO
        return Coeff({k: (v[0] * q, v[1] * q) for k, v in self._t.items()}, _clean=True)

    def times_i(self) -> "Coeff":
        return Coeff({k: (-v[1], v[0]) for k, v in self._t.items()}, _clean=True)

    def conj(self) -> "Coeff":
        return Coeff({k: (v[0], -v[1]) for k, v in self._t.items()}, _clean=True)

    def is_monomial(self) -> bool:
        return len(self._t) == 1

    def inverse(self) -> "Coeff":
        """Inverse of a single-term coefficient c*sqrt2**e*pi**k."""
        if len(self._t) != 1:
            raise ZeroDivisionError("only single-term coefficients are invertible here")
        (e, k), (re, im) = next(iter(self._t.items()))
        n = re * re + im * im
        c = (re / n, -im / n)
        if e == 1:  # 1/sqrt2 = sqrt2/2
            c = (c[0] / 2, c[1] / 2)
        return Coeff({(e, -k): c}, _clean=True)

    def __truediv__(self, other: "CoeffLike") -> "Coeff":
        return self * Coeff.of(other).inverse()

    def to_complex(self) -> complex:
        acc = 0j
        for (e, k), (re, im) in sorted(self._t.items()):
            acc += complex(float(re), float(im)) * (_SQRT2 ** e) * (math.pi ** k)
        return acc

    def pi_powers(self) -> Iterable[int]:
        return sorted({k for (_, k) in self._t})

    # formatting -----------------------------------------------------------
    def __repr__(self) -> str:
        return f"Coeff({format_coeff(self)})"

    def __str__(self) -> str:
        return format_coeff(self)


CoeffLike = Union[Coeff, int, Fraction, Tuple]

ZERO = Coeff()
ONE = Coeff.of(1)
I = Coeff.gauss(0, 1)
SQRT2 = Coeff({(1, 0): (Fraction(1), _ZERO)})
INV_SQRT2 = Coeff({(1, 0): (Fraction(1, 2), _ZERO)})
PI = Coeff({(0, 1): (Fraction(1), _ZERO)})


def _format_gauss(re: Fraction, im: Fraction) -> str:
    if im == 0:
        return str(re)
    ims = "i" if im == 1 else ("-i" if im == -1 else f"{im}*i")
    if re == 0:
        return ims
    sign = "-" if im < 0 else "+"
    mag = -im if im < 0 else im
    body = "i" if mag == 1 else f"{mag}*i"
    return f"({re}{sign}{body})"


def format_coeff(c: Coeff) -> str:
    """Deterministic text form, parseable by :mod:`subelliptic.textio`."""
    if c.is_zero():
        return "0"
    parts = []
    for (e, k), (re, im) in sorted(c.terms.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        factors = [_format_gauss(re, im)]
        if e:
            factors.append("sqrt2")
        if k == 1:
            factors.append("pi")
        elif k != 0:
            factors.append(f"pi^({k})" if k < 0 else f"pi^{k}")
        s = "*".join(factors)
        if s.startswith("1*"):
            s = s[2:]
        elif s.startswith("-1*"):
            s = "-" + s[3:]
        parts.append(s)
    if len(parts) == 1:
        return parts[0]
    return "(" + " + ".join(parts) + ")"

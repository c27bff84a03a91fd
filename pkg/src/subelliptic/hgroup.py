"""Heisenberg group arithmetic, gauges, dilations and the numerical frame.

Points are (w, s) with complex w and real s; the product is

    (w, s)(w', s') = (w + w', s + s' + 2 Im(w conj(w'))).

Exact mode: a point whose coordinates are Fractions (w given as a pair
(re, im) of Fractions) multiplies exactly.  Float mode uses complex/float.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Tuple, Union

import numpy as np

from .errors import DomainError

Number = Union[int, float, Fraction]


@dataclass(frozen=True)
class HPoint:
    """An element of H^1.  ``w`` is complex in float mode or a (re, im) pair in exact mode."""

    w: complex | Tuple[Fraction, Fraction] = 0j
    s: Number = 0.0

    @classmethod
    def exact(cls, re: Number, im: Number, s: Number) -> "HPoint":
        return cls((Fraction(re), Fraction(im)), Fraction(s))

    @property
    def is_exact(self) -> bool:
        return isinstance(self.w, tuple)

    @property
    def wc(self) -> complex:
        if self.is_exact:
            return complex(float(self.w[0]), float(self.w[1]))
        return complex(self.w)

    def as_float(self) -> "HPoint":
        return HPoint(self.wc, float(self.s))


IDENTITY = HPoint(0j, 0.0)


def mul(a: HPoint, b: HPoint) -> HPoint:
    if a.is_exact and b.is_exact:
        (ar, ai), (br, bi) = a.w, b.w
        # Im(a * conj(b)) = ai*br - ar*bi
        return HPoint((ar + br, ai + bi), a.s + b.s + 2 * (ai * br - ar * bi))
    aw, bw = a.wc, b.wc
    return HPoint(aw + bw, float(a.s) + float(b.s) + 2.0 * (aw * bw.conjugate()).imag)


def inv(a: HPoint) -> HPoint:
    if a.is_exact:
        return HPoint((-a.w[0], -a.w[1]), -a.s)
    return HPoint(-a.wc, -float(a.s))


def koranyi_gauge(u: HPoint) -> float:
    r = abs(u.wc)
    return (r ** 4 + float(u.s) ** 2) ** 0.25


def box_norm(u: HPoint) -> float:
    return abs(u.wc) + math.sqrt(abs(float(u.s)))


def quasi_distance(x: HPoint, y: HPoint) -> float:
    return box_norm(mul(inv(y), x))


def dilate(r: Number, u: HPoint) -> HPoint:
    if r <= 0:
        raise DomainError("dilation factor must be positive")
    if u.is_exact and isinstance(r, (int, Fraction)):
        r = Fraction(r)
        return HPoint((r * u.w[0], r * u.w[1]), r * r * u.s)
    r = float(r)
    return HPoint(r * u.wc, r * r * float(u.s))


# vectorized helpers --------------------------------------------------------

def mul_arrays(w1, s1, w2, s2):
    """Elementwise group product on numpy arrays."""
    w1 = np.asarray(w1, dtype=complex)
    w2 = np.asarray(w2, dtype=complex)
    return w1 + w2, np.asarray(s1, float) + np.asarray(s2, float) + 2.0 * np.imag(w1 * np.conj(w2))


def gauge_arrays(w, s):
    r = np.abs(w)
    return (r ** 4 + np.asarray(s, float) ** 2) ** 0.25


# numerical frame -----------------------------------------------------------

# one-parameter subgroups: exp(tX) = (t/2, 0), exp(tY) = (it/2, 0), exp(tT) = (0, t)
_FLOW = {"X": (0.5, 0.0), "Y": (0.5j, 0.0), "T": (0.0, 1.0)}
_D1 = ((-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0))  # /12h
_D2 = ((-2, -1.0), (-1, 16.0), (0, -30.0), (1, 16.0), (2, -1.0))  # /12h^2

FIELD_IDS = ("X", "Y", "T", "Z", "Zbar")


def _shift(x: HPoint, tag: str, t: float) -> HPoint:
    dw, ds = _FLOW[tag]
    return mul(x.as_float(), HPoint(complex(dw) * t, ds * t))


def _d1(tag: str, f: Callable[[HPoint], complex], x: HPoint, h: float) -> complex:
    acc = 0j
    for k, c in _D1:
        acc += c * complex(f(_shift(x, tag, k * h)))
    return acc / (12.0 * h)


def apply_field(tag: str, f: Callable[[HPoint], complex], x: HPoint, h: float = 1e-3) -> complex:
    """Apply X, Y, T, Z or Zbar to f at x with 4th-order centered differences along group flows."""
    if h <= 0:
        raise DomainError("step must be positive")
    if tag in _FLOW:
        return _d1(tag, f, x, h)
    if tag == "Z":
        return (_d1("X", f, x, h) - 1j * _d1("Y", f, x, h)) / math.sqrt(2.0)
    if tag == "Zbar":
        return (_d1("X", f, x, h) + 1j * _d1("Y", f, x, h)) / math.sqrt(2.0)
    raise DomainError(f"unknown field {tag!r}")


def apply_second(tag: str, f: Callable[[HPoint], complex], x: HPoint, h: float = 1e-3) -> complex:
    """Second derivative along the flow of X, Y or T (5-point, 4th order)."""
    if tag not in _FLOW:
        raise DomainError(f"second flow derivative needs X, Y or T, got {tag!r}")
    acc = 0j
    for k, c in _D2:
        acc += c * complex(f(_shift(x, tag, k * h)))
    return acc / (12.0 * h * h)


def apply_sublaplacian(f: Callable[[HPoint], complex], x: HPoint, h: float = 1e-3) -> complex:
    """Delta_b f = -(X^2 + Y^2) f."""
    return -(apply_second("X", f, x, h) + apply_second("Y", f, x, h))


def apply_kohn(f: Callable[[HPoint], complex], x: HPoint, h: float = 1e-3) -> complex:
    """box_b f = -Z Zbar f = (1/2) Delta_b f + (i/2) T f."""
    return 0.5 * apply_sublaplacian(f, x, h) + 0.5j * apply_field("T", f, x, h)


def sublaplacian_points(x: HPoint, h: float):
    """Points and weights with Delta_b f(x) = sum_j c_j f(p_j) (vectorizable form)."""
    pts, cs = [], []
    for tag in ("X", "Y"):
        for k, c in _D2:
            pts.append(_shift(x, tag, k * h))
            cs.append(-c / (12.0 * h * h))
    return pts, np.array(cs)


def field_points(tag: str, x: HPoint, h: float):
    """Points and weights for a first-order field (X, Y, T, Z, Zbar)."""
    if tag in _FLOW:
        return [_shift(x, tag, k * h) for k, _ in _D1], np.array([c for _, c in _D1]) / (12.0 * h)
    px, cx = field_points("X", x, h)
    py, cy = field_points("Y", x, h)
    sgn = -1j if tag == "Z" else 1j
    if tag not in ("Z", "Zbar"):
        raise DomainError(f"unknown field {tag!r}")
    return px + py, np.concatenate([cx, sgn * cy]) / math.sqrt(2.0)


def kohn_points(x: HPoint, h: float):
    """Points and weights with box_b f(x) = sum_j c_j f(p_j)."""
    p1, c1 = sublaplacian_points(x, h)
    p2, c2 = field_points("T", x, h)
    return p1 + p2, np.concatenate([0.5 * c1, 0.5j * c2])

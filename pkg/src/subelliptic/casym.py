"""Exact computer algebra on the Heisenberg group.

Polynomials in w, w̄, s with coefficients in Q(i, sqrt2)[pi, 1/pi], and the
larger class of expressions

    N(w, w̄, s) * psi**(-a) * psib**(-b) * g**(-c/2) * L**d

with psi = |w|^2 - i s, psib = |w|^2 + i s, g = psi*psib = |w|^4 + s^2 and
L = log(psi/psib).  The class is closed under the left-invariant frame, so
identities such as Zbar psi = 0 can be checked as exact zero tests.
"""
from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .coeff import I, INV_SQRT2, ONE, PI, SQRT2, ZERO, Coeff, CoeffLike
from .errors import ContractError, DomainError

Mono = Tuple[int, int, int]  # (alpha, beta, gamma): wbar**alpha * w**beta * s**gamma


def mono_degree(m: Mono) -> int:
    return m[0] + m[1] + 2 * m[2]


def grlex_key(m: Mono) -> Tuple[int, int, int, int]:
    return (mono_degree(m), m[0], m[1], m[2])


class HPoly:
    """Polynomial in wbar, w, s.  Immutable; zero coefficients are never stored."""

    __slots__ = ("_c", "_hash")

    def __init__(self, coeffs: Dict[Mono, CoeffLike] | None = None, _clean: bool = False):
        if coeffs is None:
            coeffs = {}
        if not _clean:
            coeffs = {tuple(m): Coeff.of(c) for m, c in coeffs.items()}
            coeffs = {m: c for m, c in coeffs.items() if not c.is_zero()}
            for m in coeffs:
                if len(m) != 3 or min(m) < 0:
                    raise DomainError(f"bad multi-index {m}")
        self._c: Dict[Mono, Coeff] = coeffs
        self._hash = None

    @classmethod
    def const(cls, c: CoeffLike) -> "HPoly":
        return cls({(0, 0, 0): c})

    @property
    def coeffs(self) -> Dict[Mono, Coeff]:
        return dict(self._c)

    def items(self) -> Iterator[Tuple[Mono, Coeff]]:
        for m in sorted(self._c, key=grlex_key):
            yield m, self._c[m]

    def __len__(self) -> int:
        return len(self._c)

    def is_zero(self) -> bool:
        return not self._c

    def __bool__(self) -> bool:
        return bool(self._c)

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, Fraction, Coeff)):
            other = HPoly.const(other)
        if not isinstance(other, HPoly):
            return NotImplemented
        return self._c == other._c

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._c.items()))
        return self._hash

    # ring operations ------------------------------------------------------
    def __add__(self, other: "HPoly") -> "HPoly":
        other = as_poly(other)
        if not other._c:
            return self
        if not self._c:
            return other
        out = dict(self._c)
        for m, c in other._c.items():
            if m in out:
                s = out[m] + c
                if s.is_zero():
                    del out[m]
                else:
                    out[m] = s
            else:
                out[m] = c
        return HPoly(out, _clean=True)

    __radd__ = __add__

    def __neg__(self) -> "HPoly":
        return HPoly({m: -c for m, c in self._c.items()}, _clean=True)

    def __sub__(self, other: "HPoly") -> "HPoly":
        return self + (-as_poly(other))

    def __rsub__(self, other) -> "HPoly":
        return as_poly(other) - self

    def __mul__(self, other) -> "HPoly":
        if isinstance(other, (int, Fraction, Coeff, tuple)):
            return self.scale(Coeff.of(other))
        other = as_poly(other)
        if not self._c or not other._c:
            return HPoly()
        out: Dict[Mono, Coeff] = {}
        for m1, c1 in self._c.items():
            for m2, c2 in other._c.items():
                m = (m1[0] + m2[0], m1[1] + m2[1], m1[2] + m2[2])
                p = c1 * c2
                if m in out:
                    out[m] = out[m] + p
                else:
                    out[m] = p
        return HPoly({m: c for m, c in out.items() if not c.is_zero()}, _clean=True)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "HPoly":
        if n < 0:
            raise DomainError("negative power of a polynomial")
        out = HPoly.const(1)
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def scale(self, c: CoeffLike) -> "HPoly":
        c = Coeff.of(c)
        if c.is_zero():
            return HPoly()
        return HPoly({m: v * c for m, v in self._c.items()}, _clean=True)

    def shift(self, m0: Mono, c: CoeffLike = ONE) -> "HPoly":
        """Multiply by the monomial c * wbar**m0[0] * w**m0[1] * s**m0[2]."""
        c = Coeff.of(c)
        return HPoly({(m[0] + m0[0], m[1] + m0[1], m[2] + m0[2]): v * c
                      for m, v in self._c.items()}, _clean=True)

    # calculus -------------------------------------------------------------
    def d_wbar(self) -> "HPoly":
        return HPoly({(m[0] - 1, m[1], m[2]): c.scale(m[0]) for m, c in self._c.items() if m[0]},
                     _clean=True)

    def d_w(self) -> "HPoly":
        return HPoly({(m[0], m[1] - 1, m[2]): c.scale(m[1]) for m, c in self._c.items() if m[1]},
                     _clean=True)

    def d_s(self) -> "HPoly":
        return HPoly({(m[0], m[1], m[2] - 1): c.scale(m[2]) for m, c in self._c.items() if m[2]},
                     _clean=True)

    def conj(self) -> "HPoly":
        return HPoly({(m[1], m[0], m[2]): c.conj() for m, c in self._c.items()}, _clean=True)

    # structure ------------------------------------------------------------
    def degrees(self) -> List[int]:
        return sorted({mono_degree(m) for m in self._c})

    def is_homogeneous(self) -> bool:
        return len(self.degrees()) <= 1

    def component(self, k: int) -> "HPoly":
        return HPoly({m: c for m, c in self._c.items() if mono_degree(m) == k}, _clean=True)

    def divide_by(self, which: str) -> Optional["HPoly"]:
        """Exact quotient by psi (``which='psi'``) or psib, or None if not divisible.

        psi = wbar*w - i*s, so the division is synthetic division in s.
        """
        sign = -1 if which == "psi" else 1  # psi: -i s ; psib: +i s
        # leading s-coefficient u = sign*i ; its inverse is -sign*i
        rem: Dict[Mono, Coeff] = dict(self._c)
        quo: Dict[Mono, Coeff] = {}
        gmax = max((m[2] for m in rem), default=0)
        for g in range(gmax, 0, -1):
            for m in [m for m in rem if m[2] == g]:
                c = rem.pop(m)
                t = c.times_i().scale(-sign)  # c / (sign*i)
                qm = (m[0], m[1], g - 1)
                quo[qm] = quo.get(qm, ZERO) + t
                # subtract t * wbar*w from the s**(g-1) slot
                lm = (m[0] + 1, m[1] + 1, g - 1)
                v = rem.get(lm, ZERO) - t
                if v.is_zero():
                    rem.pop(lm, None)
                else:
                    rem[lm] = v
        if rem:
            return None
        return HPoly({m: c for m, c in quo.items() if not c.is_zero()}, _clean=True)

    # numerics -------------------------------------------------------------
    def numeric_terms(self) -> List[Tuple[complex, int, int, int]]:
        return [(c.to_complex(), m[0], m[1], m[2]) for m, c in self.items()]

    def evaluate(self, w, s) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        s = np.asarray(s, dtype=float)
        return _eval_terms(self.numeric_terms(), w, s)

    def __repr__(self) -> str:
        from .textio import format_poly
        return f"HPoly({format_poly(self)})"

    def __str__(self) -> str:
        from .textio import format_poly
        return format_poly(self)


def _eval_terms(terms, w: np.ndarray, s: np.ndarray) -> np.ndarray:
    wb = np.conj(w)
    out = np.zeros(np.broadcast(w, s).shape, dtype=complex)
    cache: Dict[Tuple[str, int], np.ndarray] = {}

    def pw(name: str, base, k: int):
        if k == 0:
            return 1.0
        key = (name, k)
        if key not in cache:
            cache[key] = base ** k
        return cache[key]

    for c, a, b, g in terms:
        out = out + c * pw("wb", wb, a) * pw("w", w, b) * pw("s", s, g)
    return out


def as_poly(x) -> HPoly:
    if isinstance(x, HPoly):
        return x
    if isinstance(x, (int, Fraction, Coeff, tuple)):
        return HPoly.const(x)
    if isinstance(x, SymExpr):
        p = x.as_poly()
        if p is None:
            raise DomainError("expression is not a polynomial")
        return p
    raise TypeError(f"not a polynomial: {x!r}")


W = HPoly({(0, 1, 0): 1})
WB = HPoly({(1, 0, 0): 1})
S = HPoly({(0, 0, 1): 1})
PSI_P = HPoly({(1, 1, 0): 1, (0, 0, 1): Coeff.gauss(0, -1)})
PSIB_P = HPoly({(1, 1, 0): 1, (0, 0, 1): Coeff.gauss(0, 1)})
G_P = PSI_P * PSIB_P


@lru_cache(maxsize=None)
def _psi_pow(a: int, b: int) -> HPoly:
    return (PSI_P ** a) * (PSIB_P ** b)


def homogeneous_components(p: HPoly) -> List[Tuple[int, HPoly]]:
    """Split p into its non-isotropic homogeneous parts, sorted by degree."""
    return [(k, p.component(k)) for k in p.degrees()]


# ---------------------------------------------------------------------------
# extended expressions
# ---------------------------------------------------------------------------

Term = Tuple[int, int, HPoly]  # (a, b, numerator)
ClassKey = Tuple[int, int]  # (d, c)


def _reduce(a: int, b: int, num: HPoly) -> Optional[Term]:
    if num.is_zero():
        return None
    while a > 0:
        q = num.divide_by("psi")
        if q is None:
            break
        num, a = q, a - 1
    while b > 0:
        q = num.divide_by("psib")
        if q is None:
            break
        num, b = q, b - 1
    return (a, b, num)


def _combine(t1: Term, t2: Term) -> Optional[Term]:
    a1, b1, n1 = t1
    a2, b2, n2 = t2
    a, b = max(a1, a2), max(b1, b2)
    num = n1 * _psi_pow(a - a1, b - b1) + n2 * _psi_pow(a - a2, b - b2)
    return _reduce(a, b, num)


class SymExpr:
    """Exact expression  sum over (d, c) of  N psi^-a psib^-b g^(-c/2) L^d  in canonical form."""

    __slots__ = ("_t", "_hash")

    def __init__(self, terms: Dict[ClassKey, Term] | None = None, _clean: bool = False):
        terms = terms or {}
        if not _clean:
            clean: Dict[ClassKey, Term] = {}
            for (d, c), (a, b, n) in terms.items():
                if d < 0 or c not in (0, 1) or a < 0 or b < 0:
                    raise DomainError(f"bad term class {(d, c, a, b)}")
                r = _reduce(a, b, as_poly(n))
                if r is not None:
                    clean[(d, c)] = r
            terms = clean
        self._t: Dict[ClassKey, Term] = terms
        self._hash = None

    # construction ---------------------------------------------------------
    @classmethod
    def of(cls, x) -> "SymExpr":
        if isinstance(x, SymExpr):
            return x
        p = as_poly(x)
        return cls({(0, 0): (0, 0, p)})

    @classmethod
    def term(cls, num, a: int = 0, b: int = 0, c: int = 0, d: int = 0) -> "SymExpr":
        return cls({(d, c): (a, b, as_poly(num))})

    @property
    def terms(self) -> Dict[ClassKey, Term]:
        return dict(self._t)

    def is_zero(self) -> bool:
        return not self._t

    def __bool__(self) -> bool:
        return bool(self._t)

    def __eq__(self, other) -> bool:
        try:
            other = SymExpr.of(other)
        except (TypeError, DomainError):
            return NotImplemented
        return self._t == other._t

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._t.items()))
        return self._hash

    def as_poly(self) -> Optional[HPoly]:
        if not self._t:
            return HPoly()
        if set(self._t) == {(0, 0)}:
            a, b, n = self._t[(0, 0)]
            if a == 0 and b == 0:
                return n
        return None

    def is_poly(self) -> bool:
        return self.as_poly() is not None

    # arithmetic -----------------------------------------------------------
    def __add__(self, other) -> "SymExpr":
        other = SymExpr.of(other)
        out = dict(self._t)
        for k, t in other._t.items():
            if k in out:
                r = _combine(out[k], t)
                if r is None:
                    del out[k]
                else:
                    out[k] = r
            else:
                out[k] = t
        return SymExpr(out, _clean=True)

    __radd__ = __add__

    def __neg__(self) -> "SymExpr":
        return SymExpr({k: (a, b, -n) for k, (a, b, n) in self._t.items()}, _clean=True)

    def __sub__(self, other) -> "SymExpr":
        return self + (-SymExpr.of(other))

    def __rsub__(self, other) -> "SymExpr":
        return SymExpr.of(other) - self

    def __mul__(self, other) -> "SymExpr":
        if isinstance(other, (int, Fraction, Coeff, tuple)):
            return self.scale(other)
        other = SymExpr.of(other)
        acc = SymExpr()
        for (d1, c1), (a1, b1, n1) in self._t.items():
            for (d2, c2), (a2, b2, n2) in other._t.items():
                extra = 1 if (c1 and c2) else 0
                key = (d1 + d2, c1 ^ c2)
                r = _reduce(a1 + a2 + extra, b1 + b2 + extra, n1 * n2)
                if r is not None:
                    acc = acc + SymExpr({key: r}, _clean=True)
        return acc

    __rmul__ = __mul__

    def scale(self, c: CoeffLike) -> "SymExpr":
        c = Coeff.of(c)
        if c.is_zero():
            return SymExpr()
        return SymExpr({k: (a, b, n.scale(c)) for k, (a, b, n) in self._t.items()}, _clean=True)

    def __pow__(self, n: int) -> "SymExpr":
        if n < 0:
            raise DomainError("negative powers are formed with psi_pow / g_pow")
        out = SymExpr.of(1)
        for _ in range(n):
            out = out * self
        return out

    # calculus -------------------------------------------------------------
    def partial(self, var: str) -> "SymExpr":
        """Exact partial derivative in ``'w'``, ``'wbar'`` or ``'s'``."""
        if var == "w":
            dpsi, dpsib = WB, WB
            dn = HPoly.d_w
        elif var == "wbar":
            dpsi, dpsib = W, W
            dn = HPoly.d_wbar
        elif var == "s":
            dpsi, dpsib = HPoly.const(Coeff.gauss(0, -1)), HPoly.const(Coeff.gauss(0, 1))
            dn = HPoly.d_s
        else:
            raise DomainError(f"unknown variable {var!r}")
        acc = SymExpr()
        for (d, c), (a, b, n) in self._t.items():
            if a == 0 and b == 0 and c == 0 and d == 0:
                acc = acc + SymExpr({(0, 0): (0, 0, dn(n))})
                continue
            half = Fraction(c, 2)
            num = (dn(n) * G_P
                   - (n * PSIB_P * dpsi).scale(a + half)
                   - (n * PSI_P * dpsib).scale(b + half))
            acc = acc + SymExpr({(d, c): (a + 1, b + 1, num)})
            if d:
                lnum = (n * (PSIB_P * dpsi - PSI_P * dpsib)).scale(d)
                acc = acc + SymExpr({(d - 1, c): (a + 1, b + 1, lnum)})
        return acc

    def conj(self) -> "SymExpr":
        out: Dict[ClassKey, Term] = {}
        for (d, c), (a, b, n) in self._t.items():
            nc = n.conj()
            if d % 2:
                nc = -nc
            out[(d, c)] = (b, a, nc)
        return SymExpr(out, _clean=True)

    def real_part(self) -> "SymExpr":
        return (self + self.conj()).scale(Fraction(1, 2))

    # numerics -------------------------------------------------------------
    def evaluate(self, w, s, branch: str = "principal") -> np.ndarray:
        """Numerical value; ``branch`` selects log(psi/psib) on the line w = 0."""
        w = np.asarray(w, dtype=complex)
        s = np.asarray(s, dtype=float)
        r2 = np.abs(w) ** 2
        psi = r2 - 1j * s
        psib = r2 + 1j * s
        L = log_ratio(w, s, branch)
        out = np.zeros(np.broadcast(w, s).shape, dtype=complex)
        for (d, c), (a, b, n) in sorted(self._t.items()):
            v = n.evaluate(w, s) / (psi ** a * psib ** b)
            if c:
                v = v / np.sqrt(r2 * r2 + s * s)
            if d:
                v = v * L ** d
            out = out + v
        return out

    def __repr__(self) -> str:
        from .textio import format_expr
        return f"SymExpr({format_expr(self)})"

    def __str__(self) -> str:
        from .textio import format_expr
        return format_expr(self)


def log_ratio(w, s, branch: str = "principal") -> np.ndarray:
    """log(psi/psib) on the principal branch.

    Off the line w = 0 this is 2i*arg(psi).  On w = 0 the ratio is -1; the
    principal branch gives i*pi, while ``branch='limit'`` returns the limit
    from |w| > 0, which is -i*pi*sign(s).
    """
    w = np.asarray(w, dtype=complex)
    s = np.asarray(s, dtype=float)
    r2 = np.abs(w) ** 2
    L = 2j * np.arctan2(-s, r2)
    if branch == "principal":
        L = np.where(r2 == 0, 1j * np.pi, L)
    elif branch != "limit":
        raise DomainError(f"unknown branch {branch!r}")
    return L


PSI = SymExpr.of(PSI_P)
PSIB = SymExpr.of(PSIB_P)
G = SymExpr.of(G_P)
L_SYM = SymExpr.term(1, d=1)
G_INV_SQRT = SymExpr.term(1, c=1)


def psi_pow(a: int, b: int = 0) -> SymExpr:
    """psi**(-a) * psib**(-b) for a, b >= 0."""
    return SymExpr.term(1, a=a, b=b)


def conj(e: SymExpr) -> SymExpr:
    return SymExpr.of(e).conj()


def real_part(e: SymExpr) -> SymExpr:
    return SymExpr.of(e).real_part()


# ---------------------------------------------------------------------------
# derivations
# ---------------------------------------------------------------------------

class Derivation:
    """c_w d/dw + c_wbar d/dwbar + c_s d/ds with SymExpr coefficients."""

    __slots__ = ("cw", "cwb", "cs", "name")

    def __init__(self, cw=0, cwb=0, cs=0, name: str = ""):
        self.cw = SymExpr.of(cw)
        self.cwb = SymExpr.of(cwb)
        self.cs = SymExpr.of(cs)
        self.name = name

    def __call__(self, e) -> SymExpr:
        return derive(self, e)

    def __add__(self, other: "Derivation") -> "Derivation":
        return Derivation(self.cw + other.cw, self.cwb + other.cwb, self.cs + other.cs)

    def __sub__(self, other: "Derivation") -> "Derivation":
        return Derivation(self.cw - other.cw, self.cwb - other.cwb, self.cs - other.cs)

    def times(self, f) -> "Derivation":
        f = SymExpr.of(f) if not isinstance(f, Coeff) else f
        if isinstance(f, Coeff):
            return Derivation(self.cw.scale(f), self.cwb.scale(f), self.cs.scale(f))
        return Derivation(self.cw * f, self.cwb * f, self.cs * f)

    def coefficients(self) -> Tuple[SymExpr, SymExpr, SymExpr]:
        return (self.cw, self.cwb, self.cs)

    def is_polynomial(self) -> bool:
        return all(c.is_poly() for c in self.coefficients())

    def conj(self) -> "Derivation":
        # conj(D f) = conj(D) conj(f): d/dw and d/dwbar swap
        return Derivation(self.cwb.conj(), self.cw.conj(), self.cs.conj())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Derivation):
            return NotImplemented
        return self.coefficients() == other.coefficients()

    def __repr__(self) -> str:
        return f"Derivation({self.cw}, {self.cwb}, {self.cs})"


def derive_poly(D: Derivation, p: HPoly) -> HPoly:
    """Fast path for polynomial coefficients acting on a polynomial."""
    cw, cwb, cs = (c.as_poly() for c in D.coefficients())
    out = HPoly()
    if cw:
        out = out + cw * p.d_w()
    if cwb:
        out = out + cwb * p.d_wbar()
    if cs:
        out = out + cs * p.d_s()
    return out


def derive(D: Derivation, e) -> SymExpr:
    """Exact D(e) in canonical form."""
    e = SymExpr.of(e)
    p = e.as_poly()
    if p is not None and D.is_polynomial():
        return SymExpr.of(derive_poly(D, p))
    out = SymExpr()
    for coef, var in zip(D.coefficients(), ("w", "wbar", "s")):
        if coef:
            out = out + coef * e.partial(var)
    return out


# frame on H^1
Z = Derivation(INV_SQRT2, 0, HPoly({(1, 0, 0): I * INV_SQRT2}), name="Z")
ZBAR = Derivation(0, INV_SQRT2, HPoly({(0, 1, 0): -(I * INV_SQRT2)}), name="Zbar")
T = Derivation(0, 0, 1, name="T")
HALF = Coeff.gauss(Fraction(1, 2))
# X = (Z + Zbar)/sqrt2 = (1/2)(d_w + d_wbar) + (i/2)(wbar - w) d_s
X = Derivation(HALF, HALF, HPoly({(1, 0, 0): Coeff.gauss(0, Fraction(1, 2)),
                                  (0, 1, 0): Coeff.gauss(0, Fraction(-1, 2))}), name="X")
# Y = i(Z - Zbar)/sqrt2 = (i/2)(d_w - d_wbar) - (1/2)(w + wbar) d_s
Y = Derivation(Coeff.gauss(0, Fraction(1, 2)), Coeff.gauss(0, Fraction(-1, 2)),
               HPoly({(1, 0, 0): Fraction(-1, 2), (0, 1, 0): Fraction(-1, 2)}), name="Y")
FIELDS = {"X": X, "Y": Y, "T": T, "Z": Z, "Zbar": ZBAR}


def field(name: str) -> Derivation:
    try:
        return FIELDS[name]
    except KeyError:
        raise DomainError(f"unknown field {name!r}") from None


def apply_chain(ops: Sequence[Derivation], e) -> SymExpr:
    """ops[0](ops[1](...ops[-1](e)))."""
    out = SymExpr.of(e)
    for D in reversed(ops):
        out = derive(D, out)
    return out


def sublaplacian(e) -> SymExpr:
    """Delta_b e = -(Z Zbar + Zbar Z) e."""
    return -(apply_chain([Z, ZBAR], e) + apply_chain([ZBAR, Z], e))


def kohn_laplacian(e) -> SymExpr:
    """box_b e = -Z Zbar e."""
    return -apply_chain([Z, ZBAR], e)


# ---------------------------------------------------------------------------
# constructive algorithms
# ---------------------------------------------------------------------------

_I_POW = [ONE, I, -ONE, -I]


def _solve_monomial(m: Mono) -> Dict[Mono, Coeff]:
    al, be, ga = m
    out: Dict[Mono, Coeff] = {}

    def put(key: Mono, c: Coeff) -> None:
        out[key] = out.get(key, ZERO) + c

    for l in range(ga + 1):
        r = Fraction(math.factorial(ga) * math.factorial(al),
                     math.factorial(ga - l) * math.factorial(al + l + 1))
        put((al + l + 1, be + l, ga - l), (_I_POW[l % 4] * SQRT2).scale(r))
    return out


def _cr_correction(ga: int, c: Coeff) -> Dict[Mono, Coeff]:
    """-conj(c) sqrt2 w (i psi)**gamma: in the kernel of Zbar, and it cancels Re(c sqrt2 wbar s**gamma)."""
    out: Dict[Mono, Coeff] = {}
    for l in range(ga + 1):
        r = Fraction(math.factorial(ga), math.factorial(ga - l) * math.factorial(l))
        out[(l, l + 1, ga - l)] = -(_I_POW[l % 4] * SQRT2 * c.conj()).scale(r)
    return out


def solve_poly(p: HPoly, group_sign: int = -1) -> HPoly:
    """Return q, homogeneous of degree k+1, with Zbar q = p for p homogeneous of degree k >= 2.

    For pure s-monomials the two telescoping groups are joined with ``group_sign``.
    Both joinings satisfy Zbar q = p since the second group is CR; only -1 keeps
    |Re q| <= C |w|^2 (|w| + |s|).  The correction uses conj(c), so q is real-linear in p.
    """
    if group_sign not in (-1, 1):
        raise ContractError("group_sign must be -1 or 1")
    p = as_poly(p)
    degs = p.degrees()
    if len(degs) > 1:
        raise DomainError(f"input is not homogeneous (degrees {degs})")
    if not degs:
        return HPoly()
    if degs[0] < 2:
        raise DomainError(f"degree {degs[0]} < 2")
    acc: Dict[Mono, Coeff] = {}
    for m, c in p.items():
        for qm, qc in _solve_monomial(m).items():
            acc[qm] = acc.get(qm, ZERO) + qc * c
        if m[0] == 0 and m[1] == 0:
            for qm, qc in _cr_correction(m[2], c).items():
                acc[qm] = acc.get(qm, ZERO) + qc.scale(-group_sign)
    return HPoly({m: c for m, c in acc.items() if not c.is_zero()}, _clean=True)


PSI0 = PSI_P.scale(PI)


def perturbation_of(Dp: Derivation) -> Tuple[HPoly, HPoly, HPoly]:
    """Polynomial coefficients of Dp - Zbar (error if not polynomial)."""
    P = Dp - ZBAR
    polys = []
    for c in P.coefficients():
        p = c.as_poly()
        if p is None:
            raise DomainError("perturbation coefficients must be polynomials")
        polys.append(p)
    return tuple(polys)


def check_perturbation(Dp: Derivation) -> None:
    """Require d_w, d_wbar coefficients of degree >= 1 and the d_s coefficient of degree >= 2.

    d_s has weight 2 in the non-isotropic grading, so a degree-1 coefficient
    of d_s lowers degrees like Zbar itself and the phase cannot be corrected.
    """
    cw, cwb, cs = perturbation_of(Dp)
    for name, p, lo in (("d_w", cw, 1), ("d_wbar", cwb, 1), ("d_s", cs, 2)):
        if p and min(p.degrees()) < lo:
            raise DomainError(f"perturbation coefficient of {name} has a component of degree "
                              f"{min(p.degrees())} < {lo}")


def build_cr_phase(Dp: Derivation, k: int) -> HPoly:
    """pi(|w|^2 - i s) plus corrections q_3..q_{k+1} so that Dp(result) vanishes through degree k."""
    if k < 2:
        raise DomainError("k must be >= 2")
    check_perturbation(Dp)
    phase = PSI0
    for l in range(3, k + 2):
        r = derive_poly(Dp, phase)
        comp = -(r.component(l - 1))
        if comp:
            phase = phase + solve_poly(comp)
    return phase


def low_components(p: HPoly, k: int) -> HPoly:
    return HPoly({m: c for m, c in p.coeffs.items() if mono_degree(m) <= k})


def monomials_of_degree(k: int) -> List[Mono]:
    out = []
    for g in range(k // 2 + 1):
        r = k - 2 * g
        for a in range(r + 1):
            out.append((a, r - a, g))
    return sorted(out, key=grlex_key)


# ---------------------------------------------------------------------------
# random test objects
# ---------------------------------------------------------------------------

def _random_coeff(rng: np.random.Generator, den: int = 7) -> Coeff:
    re, im = rng.integers(-9, 10, 2)
    d1, d2 = rng.integers(1, den + 1, 2)
    return Coeff.gauss(Fraction(int(re), int(d1)), Fraction(int(im), int(d2)))


def random_poly(degree: int, rng: np.random.Generator, density: float = 0.6) -> HPoly:
    """Homogeneous polynomial of the given degree with random Gaussian-rational coefficients (never zero)."""
    monos = monomials_of_degree(degree)
    keep = [m for m in monos if rng.random() < density] or [monos[int(rng.integers(len(monos)))]]
    terms = {}
    for m in keep:
        c = _random_coeff(rng)
        while c.is_zero():
            c = _random_coeff(rng)
        terms[m] = c
    return HPoly(terms)


def random_expr(rng: np.random.Generator) -> SymExpr:
    """Random element of the expression class with a few terms of mixed type."""
    out = SymExpr()
    for _ in range(int(rng.integers(1, 4))):
        num = random_poly(int(rng.integers(0, 4)), rng)
        a, b, c, d = (int(v) for v in rng.integers(0, 3, 4))
        out = out + SymExpr.term(num, a, b, c % 2, d % 2)
    return out


def random_perturbation(rng: np.random.Generator) -> Derivation:
    """Zbar plus polynomial coefficients of degree >= 1 on d_w, d_wbar and >= 2 on d_s."""
    cw = random_poly(int(rng.integers(1, 3)), rng, 0.4)
    cwb = random_poly(int(rng.integers(1, 3)), rng, 0.4)
    cs = random_poly(int(rng.integers(2, 4)), rng, 0.4)
    return ZBAR + Derivation(cw, cwb, cs)

"""The fundamental kernels K, N and Pi on H^1.

    K  = (1/2pi) (|w|^4 + s^2)^(-1/2)      Delta_b K = delta  (Lebesgue dw ds)
    N  = (1/pi^2) log(psi/psib) / psi      box_b N + Pi = delta
    Pi = (1/pi^2) psi^(-2)                 Szego kernel

Pi is the distribution -(i/pi^2) d_s(1/psi).  Over every Koranyi ball the
flux of d_s(1/psi) is i pi^2/2, so this distribution equals the principal
value over Koranyi balls plus delta/2.

Each kernel is held both as an exact ``SymExpr`` and as a vectorized
numerical evaluator.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, List, Tuple

import numpy as np

from . import casym
from .casym import (HPoly, SymExpr, Derivation, L_SYM, G_INV_SQRT, PSI, ZBAR,
                    derive, derive_poly, kohn_laplacian, log_ratio, psi_pow, sublaplacian)
from .coeff import Coeff, I
from .errors import SingularityError
from .hgroup import HPoint

INV_2PI = Coeff.monomial(Fraction(1, 2), pi=-1)
INV_PI2 = Coeff.monomial(1, pi=-2)


@dataclass(frozen=True)
class KernelDef:
    name: str
    expr: SymExpr
    homogeneity_degree: int
    numeric: Callable[..., np.ndarray]
    # multiple of delta separating the distribution from its Koranyi-ball principal value
    pv_delta: float = 0.0

    def __call__(self, w, s) -> np.ndarray:
        return self.numeric(w, s)

    def at(self, u: HPoint) -> complex:
        return complex(self.numeric(np.array([u.wc]), np.array([float(u.s)]))[0])


def _check_nonzero(w, s) -> Tuple[np.ndarray, np.ndarray]:
    w = np.asarray(w, dtype=complex)
    s = np.asarray(s, dtype=float)
    if np.any((w == 0) & (s == 0)):
        raise SingularityError("kernel evaluated at the origin")
    return w, s


def k_numeric(w, s) -> np.ndarray:
    w, s = _check_nonzero(w, s)
    r2 = np.abs(w) ** 2
    return 1.0 / (2.0 * np.pi * np.sqrt(r2 * r2 + s * s))


def n_numeric(w, s, branch: str = "principal") -> np.ndarray:
    w, s = _check_nonzero(w, s)
    psi = np.abs(w) ** 2 - 1j * s
    return log_ratio(w, s, branch) / (np.pi ** 2 * psi)


def pi_numeric(w, s) -> np.ndarray:
    w, s = _check_nonzero(w, s)
    psi = np.abs(w) ** 2 - 1j * s
    return 1.0 / (np.pi ** 2 * psi * psi)


K_EXPR = G_INV_SQRT.scale(INV_2PI)
N_EXPR = (psi_pow(1) * L_SYM).scale(INV_PI2)
PI_EXPR = psi_pow(2).scale(INV_PI2)

K_DEF = KernelDef("K", K_EXPR, -2, k_numeric)
N_DEF = KernelDef("N", N_EXPR, -2, n_numeric)
PI_DEF = KernelDef("Pi", PI_EXPR, -4, pi_numeric, 0.5)
KERNELS = {"K": K_DEF, "N": N_DEF, "Pi": PI_DEF}


def eval_K(u: HPoint) -> float:
    return float(K_DEF.at(u).real)


def eval_N(u: HPoint, branch: str = "principal") -> complex:
    return complex(n_numeric(np.array([u.wc]), np.array([float(u.s)]), branch)[0])


def eval_Pi(u: HPoint) -> complex:
    return PI_DEF.at(u)


# ---------------------------------------------------------------------------
# radicals P * h^(-m/2) for an arbitrary polynomial h (independent oracle)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Radical:
    """num * base**(-m/2) with polynomial num and base."""

    num: HPoly
    base: HPoly
    m: int

    def is_zero(self) -> bool:
        return self.num.is_zero()

    def __add__(self, other: "Radical") -> "Radical":
        assert self.base == other.base and (self.m - other.m) % 2 == 0
        a, b = (self, other) if self.m >= other.m else (other, self)
        j = (a.m - b.m) // 2
        return Radical(a.num + b.num * (a.base ** j), a.base, a.m)

    def __neg__(self) -> "Radical":
        return Radical(-self.num, self.base, self.m)

    def scale(self, c) -> "Radical":
        return Radical(self.num.scale(Coeff.of(c)), self.base, self.m)

    def derive(self, D: Derivation) -> "Radical":
        # D(P h^(-m/2)) = (h DP - (m/2) P Dh) h^(-(m+2)/2)
        dp = derive_poly(D, self.num)
        dh = derive_poly(D, self.base)
        num = self.base * dp - (self.num * dh).scale(Fraction(self.m, 2))
        return Radical(num, self.base, self.m + 2)

    def evaluate(self, w, s) -> np.ndarray:
        return self.num.evaluate(w, s) / self.base.evaluate(w, s) ** (self.m / 2)


def literal_denominator() -> HPoly:
    """u1^4 + u2^4 + u3^2 written in w, wbar, s."""
    x = HPoly({(1, 0, 0): Fraction(1, 2), (0, 1, 0): Fraction(1, 2)})
    y = HPoly({(1, 0, 0): Coeff.gauss(0, Fraction(1, 2)), (0, 1, 0): Coeff.gauss(0, Fraction(-1, 2))})
    return x ** 4 + y ** 4 + casym.S ** 2


def koranyi_denominator() -> HPoly:
    return casym.G_P


def radical_sublaplacian(r: Radical) -> Radical:
    xx = r.derive(casym.X).derive(casym.X)
    yy = r.derive(casym.Y).derive(casym.Y)
    return -(xx + yy)


def verify_fundamental_K(form: str = "koranyi", scale: int = 1):
    """Delta_b applied to scale*K away from the origin.

    ``form='koranyi'`` uses (|w|^4+s^2)^(-1/2) in the SymExpr class and
    returns a SymExpr.  ``form='literal'`` uses (u1^4+u2^4+u3^2)^(-1/2) and
    returns a ``Radical`` residual.
    """
    if form == "koranyi":
        return sublaplacian(K_EXPR.scale(scale))
    if form == "literal":
        r = Radical(HPoly.const(INV_2PI.scale(scale)), literal_denominator(), 1)
        return radical_sublaplacian(r)
    raise ValueError(f"unknown form {form!r}")


def verify_fundamental_K_radical(base: HPoly) -> Radical:
    return radical_sublaplacian(Radical(HPoly.const(INV_2PI), base, 1))


def verify_boxb_N(c=1, sign: int = 1) -> SymExpr:
    """box_b(c N) + sign * c * Pi (zero for sign = +1)."""
    c = Coeff.of(c)
    return kohn_laplacian(N_EXPR.scale(c)) + PI_EXPR.scale(c).scale(sign)


def verify_Pi_identities() -> Dict[str, SymExpr]:
    """(a) -(i/pi^2) d_s(1/psi) - Pi, (b) Zbar Pi, (c) Zbar psi."""
    a = psi_pow(1).partial("s").scale(-(I * INV_PI2)) - PI_EXPR
    b = derive(ZBAR, PI_EXPR)
    c = derive(ZBAR, PSI)
    return {"ds_formula": a, "zbar_Pi": b, "zbar_psi": c}


# ---------------------------------------------------------------------------
# kernel estimates via exact Euclidean derivatives
# ---------------------------------------------------------------------------

def euclid_partial(e: SymExpr, axis: str) -> SymExpr:
    """d/du1 = d_w + d_wbar, d/du2 = i(d_w - d_wbar), d/du3 = d_s."""
    if axis == "u1":
        return e.partial("w") + e.partial("wbar")
    if axis == "u2":
        return (e.partial("w") - e.partial("wbar")).scale(I)
    if axis == "u3":
        return e.partial("s")
    raise ValueError(axis)


def multi_indices(max_norm: int) -> List[Tuple[int, int, int]]:
    """gamma = (g1, g2, g3) with non-isotropic length g1 + g2 + 2 g3 <= max_norm."""
    out = []
    for g3 in range(max_norm // 2 + 1):
        for g1 in range(max_norm + 1):
            for g2 in range(max_norm + 1):
                if g1 + g2 + 2 * g3 <= max_norm:
                    out.append((g1, g2, g3))
    return sorted(out, key=lambda g: (g[0] + g[1] + 2 * g[2], g))


def kernel_estimate_table(kdef: KernelDef, n: int, max_norm: int = 3, shells: int = 8,
                          samples: int = 64, seed: int = 0, Q: int = 4) -> Dict[Tuple[int, int, int], np.ndarray]:
    """For each gamma, the shell maxima of |d^gamma k(u)| * rho(u)^(Q+n+|gamma|) on rho in [2^-j, 2^(1-j))."""
    rng = np.random.default_rng(seed)
    out = {}
    cache = {(0, 0, 0): kdef.expr}
    for g in multi_indices(max_norm):
        if g not in cache:
            base = None
            for axis_idx, axis in enumerate(("u1", "u2", "u3")):
                prev = list(g)
                if prev[axis_idx] > 0:
                    prev[axis_idx] -= 1
                    prev = tuple(prev)
                    if prev in cache:
                        base = euclid_partial(cache[prev], axis)
                        break
            cache[g] = base
        e = cache[g]
        gl = g[0] + g[1] + 2 * g[2]
        maxima = []
        for j in range(shells):
            rho = 2.0 ** (-j) * (1.0 + rng.random(samples))
            th = rng.uniform(-np.pi / 2, np.pi / 2, samples)
            ph = rng.uniform(0, 2 * np.pi, samples)
            w = rho * np.sqrt(np.cos(th)) * np.exp(1j * ph)
            s = rho ** 2 * np.sin(th)
            v = np.abs(e.evaluate(w, s)) * rho ** (Q + n + gl)
            maxima.append(float(np.max(v)))
        out[g] = np.array(maxima)
    return out


def pi_ball_flux(a: float = 1.0, n: int = 200000) -> complex:
    """int over the Koranyi ball of radius a of d_s(1/psi), by integrating in s first.

    For fixed w the s-integral is 2iS/a^4 with S = sqrt(a^4 - |w|^4); the
    remaining radial integral is done with the midpoint rule.
    """
    r = (np.arange(n) + 0.5) * a / n
    S = np.sqrt(a ** 4 - r ** 4)
    inner = 1.0 / (r * r - 1j * S) - 1.0 / (r * r + 1j * S)
    return complex(np.sum(inner * 2 * np.pi * r) * a / n)


def pi_delta_mass(a: float = 1.0) -> complex:
    """-(i/pi^2) times the ball flux; the coefficient of delta in Pi beyond the principal value."""
    return -1j / np.pi ** 2 * pi_ball_flux(a)

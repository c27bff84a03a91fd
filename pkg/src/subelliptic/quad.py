"""Group-convolution quadrature on H^1.

The convolution is taken in the form

    (k * f)(x) = int k(y^-1 x) f(y) dy = int k(u) f(x u^-1) du

with Lebesgue measure du.  The u-integral uses Koranyi polar coordinates

    u = (rho sqrt(cos th) e^{i phi}, rho^2 sin th),   du = rho^3 drho dth dphi,

so every kernel of degree -2 or -4 becomes bounded or purely angular after
the Jacobian.  The theta variable is substituted as th = (pi/2) sin(pi t/2)
to smooth sqrt(cos th) at the poles, and rho is graded toward the origin.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import RegularGridInterpolator

from . import casym
from .casym import G_P, derive_poly
from .errors import ContractError, DomainError
from .hgroup import HPoint, inv, koranyi_gauge, kohn_points, mul, mul_arrays, sublaplacian_points
from .kernels import K_DEF, N_DEF, PI_DEF, KernelDef

BOX_GAUGE = 5.0 ** 0.25  # Koranyi gauge of the corner (sqrt2 A, A^2) of the box, per unit A
DEFAULT_N = 48


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

def _graded_axis(n: int, half: float, grading: float) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on [-half, half] pulled toward 0 by x = half*(l t + (1-l) sgn(t)|t|^(1/grading))."""
    t, wt = leggauss(n)
    lam = 0.1
    p = 1.0 / grading
    x = half * (lam * t + (1 - lam) * np.sign(t) * np.abs(t) ** p)
    dx = half * (lam + (1 - lam) * p * np.abs(t) ** (p - 1))
    return x, wt * dx


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid on [-A, A]^2 x [-A^2, A^2] graded toward the origin."""

    A: float = 1.0
    n: int = DEFAULT_N
    grading: float = 0.5

    def __post_init__(self):
        if self.A <= 0 or self.n < 2 or not (0 < self.grading <= 1):
            raise DomainError("need A > 0, n >= 2 and 0 < grading <= 1")

    @property
    def axes(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return _axes(self.A, self.n, self.grading)

    @property
    def weights(self) -> np.ndarray:
        _, wx = _graded_axis(self.n, self.A, self.grading)
        _, wt = _graded_axis(self.n, self.A ** 2, self.grading)
        return np.einsum("i,j,k->ijk", wx, wx, wt).ravel()

    @property
    def volume(self) -> float:
        return 8.0 * self.A ** 4

    def nodes(self) -> Tuple[np.ndarray, np.ndarray]:
        x, y, t = self.axes
        X, Y, T = np.meshgrid(x, y, t, indexing="ij")
        return (X + 1j * Y).ravel(), T.ravel()

    @property
    def support_radius(self) -> float:
        return BOX_GAUGE * self.A


@lru_cache(maxsize=16)
def _axes(A: float, n: int, grading: float):
    x, _ = _graded_axis(n, A, grading)
    t, _ = _graded_axis(n, A * A, grading)
    return x, x.copy(), t


DECAY_COMPACT = "compact"


@dataclass(frozen=True)
class GridFunction:
    """Values on a GridSpec plus an optional exact evaluator.

    ``decay`` is ``"compact"`` or a float p meaning |f| <= C rho^-p at infinity.
    ``support`` is an optional (center, radius) Koranyi ball containing supp f.
    """

    spec: GridSpec
    values: np.ndarray
    exact: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    decay: object = DECAY_COMPACT
    support: Optional[Tuple[HPoint, float]] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.spec.n ** 3,):
            raise ContractError("values do not match the grid")
        if not np.all(np.isfinite(v)):
            raise ContractError("grid values must be finite")
        object.__setattr__(self, "values", v)
        if self.decay != DECAY_COMPACT:
            if self.exact is None:
                raise ContractError("a decaying function needs an exact evaluator")
            object.__setattr__(self, "decay", float(self.decay))

    @classmethod
    def from_callable(cls, spec: GridSpec, fn, decay=DECAY_COMPACT, support=None) -> "GridFunction":
        w, s = spec.nodes()
        return cls(spec, np.asarray(fn(w, s), dtype=complex), fn, decay, support)

    @classmethod
    def zero(cls, spec: GridSpec) -> "GridFunction":
        return cls(spec, np.zeros(spec.n ** 3, complex), lambda w, s: np.zeros(np.shape(w), complex),
                   DECAY_COMPACT, (HPoint(0j, 0.0), 0.0))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values) and (self.support is not None and self.support[1] == 0.0)

    def __call__(self, w, s) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        s = np.asarray(s, dtype=float)
        if self.exact is not None:
            return np.asarray(self.exact(w, s), dtype=complex) * np.ones(w.shape)
        return self._interp(w, s)

    def _interp(self, w, s) -> np.ndarray:
        x, y, t = self.spec.axes
        n = self.spec.n
        vals = self.values.reshape(n, n, n)
        pts = np.stack([w.real.ravel(), w.imag.ravel(), s.ravel()], axis=-1)
        out = np.zeros(len(pts), complex)
        A = self.spec.A
        inside = (np.abs(pts[:, 0]) <= A) & (np.abs(pts[:, 1]) <= A) & (np.abs(pts[:, 2]) <= A * A)
        if np.any(inside):
            # extend the node set to the box faces with zeros so interpolation covers the full box
            xe = np.concatenate([[-A], x, [A]])
            te = np.concatenate([[-A * A], t, [A * A]])
            ve = np.zeros((n + 2, n + 2, n + 2), complex)
            ve[1:-1, 1:-1, 1:-1] = vals
            for part in (np.real, np.imag):
                ip = RegularGridInterpolator((xe, xe, te), part(ve), method="linear")
                res = ip(pts[inside])
                out[inside] += res if part is np.real else 1j * res
        return out.reshape(w.shape)

    def scaled(self, c: complex) -> "GridFunction":
        ex = None if self.exact is None else (lambda w, s, f=self.exact: c * f(w, s))
        return GridFunction(self.spec, c * self.values, ex, self.decay, self.support)

    def translated(self, a: HPoint) -> "GridFunction":
        """f o L_a, y -> f(a y); requires an exact evaluator."""
        if self.exact is None:
            raise ContractError("translation needs an exact evaluator")
        aw, as_ = a.wc, float(a.s)
        f = self.exact

        def g(w, s):
            w2, s2 = mul_arrays(aw, as_, w, s)
            return f(w2, s2)

        sup = None
        if self.support is not None:
            sup = (mul(inv(a), self.support[0]), self.support[1])
        return GridFunction.from_callable(self.spec, g, self.decay, sup)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# A={self.spec.A!r} n={self.spec.n} grading={self.spec.grading!r} decay={self.decay}\n")
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["x", "y", "t", "re", "im"])
        w, s = self.spec.nodes()
        for wi, si, v in zip(w, s, self.values):
            wr.writerow([repr(float(wi.real)), repr(float(wi.imag)), repr(float(si)),
                         repr(float(v.real)), repr(float(v.imag))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GridFunction":
        lines = text.splitlines()
        meta = {}
        body = []
        for ln in lines:
            if ln.startswith("#"):
                for tok in ln[1:].split():
                    k, _, v = tok.partition("=")
                    meta[k] = v
            elif ln.strip():
                body.append(ln)
        try:
            spec = GridSpec(float(meta["A"]), int(meta["n"]), float(meta["grading"]))
        except KeyError as exc:
            raise ContractError(f"missing metadata field {exc}") from None
        rows = list(csv.reader(body))
        if rows[0] != ["x", "y", "t", "re", "im"]:
            raise ContractError("bad CSV header")
        data = np.array([[float(v) for v in r] for r in rows[1:]])
        if len(data) != spec.n ** 3:
            raise ContractError("row count does not match the grid")
        decay = meta.get("decay", DECAY_COMPACT)
        if decay != DECAY_COMPACT:
            # decay information cannot be honored without an evaluator; fall back to the box
            decay = DECAY_COMPACT
        return cls(spec, data[:, 3] + 1j * data[:, 4], None, decay, None)


# ---------------------------------------------------------------------------
# polar quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolarRule:
    w: np.ndarray
    s: np.ndarray
    rho: np.ndarray
    theta: np.ndarray
    weight: np.ndarray  # includes the Jacobian rho^3


@lru_cache(maxsize=64)
def _polar_rule(n: int, r0: float, r1: float, mode: str, grading: float) -> PolarRule:
    tau, wtau = leggauss(n)
    th = 0.5 * np.pi * np.sin(0.5 * np.pi * tau)
    wth = wtau * 0.25 * np.pi ** 2 * np.cos(0.5 * np.pi * tau)
    v, wv = leggauss(n)
    v = 0.5 * (v + 1)
    wv = 0.5 * wv
    if mode == "ball":
        # rho = r0 + (r1 - r0) v^(1/grading)
        p = 1.0 / grading
        rho = r0 + (r1 - r0) * v ** p
        wr = wv * (r1 - r0) * p * v ** (p - 1)
    elif mode == "tail":
        rho = r0 / v
        wr = wv * r0 / v ** 2
    else:
        raise ValueError(mode)
    phi = 2 * np.pi * np.arange(n) / n
    wphi = np.full(n, 2 * np.pi / n)
    R, TH, PH = np.meshgrid(rho, th, phi, indexing="ij")
    W = np.einsum("i,j,k->ijk", wr, wth, wphi) * R ** 3
    c = np.cos(TH)
    uw = R * np.sqrt(np.maximum(c, 0.0)) * np.exp(1j * PH)
    us = R ** 2 * np.sin(TH)
    return PolarRule(uw.ravel(), us.ravel(), R.ravel(), TH.ravel(), W.ravel())


def polar_rule(n: int, r0: float, r1: float = math.inf, grading: float = 0.5) -> PolarRule:
    if math.isinf(r1):
        return _polar_rule(n, float(r0), math.inf, "tail", grading)
    return _polar_rule(n, float(r0), float(r1), "ball", grading)


def _fsum_c(z: np.ndarray) -> complex:
    return complex(math.fsum(z.real.tolist()), math.fsum(z.imag.tolist()))


def _kernel_weights(k: KernelDef, rule: PolarRule) -> np.ndarray:
    return np.asarray(k(rule.w, rule.s), dtype=complex) * rule.weight


def _check(k: KernelDef, f: GridFunction, pv: bool) -> None:
    if k.homogeneity_degree <= -4 and not pv:
        raise ContractError(f"kernel {k.name} of degree {k.homogeneity_degree} needs pv=True")
    if k.homogeneity_degree <= -5:
        raise ContractError("kernels of degree below -4 are not integrable even as principal values")
    if f.decay != DECAY_COMPACT and f.decay + (-k.homogeneity_degree) <= 4:
        raise ContractError(f"declared decay {f.decay} is too slow for kernel {k.name} at infinity")


def _support_radius(f: GridFunction, x: HPoint) -> float:
    """A radius R with f(x u^-1) = 0 for rho(u) > R (triangle inequality of the Koranyi gauge)."""
    if f.support is not None:
        c, r = f.support
        return koranyi_gauge(mul(inv(c), x.as_float())) + r
    return koranyi_gauge(x) + f.spec.support_radius


class Convolver:
    """Evaluates x -> (k * f)(x) on a fixed polar rule so the result is smooth in x."""

    def __init__(self, k: KernelDef, f: GridFunction, pv: bool = False, n: Optional[int] = None,
                 radius: Optional[float] = None):
        _check(k, f, pv)
        self.k = k
        self.f = f
        self.pv = pv
        self.n = n or f.spec.n
        self.radius = radius
        self._rules = {}

    def _parts(self, R: float):
        key = round(R, 14)
        if key not in self._rules:
            parts = [polar_rule(self.n, 0.0, R)]
            if self.f.decay != DECAY_COMPACT:
                parts.append(polar_rule(self.n, R))
            self._rules[key] = [(r, _kernel_weights(self.k, r)) for r in parts]
        return self._rules[key]

    def radius_for(self, x: HPoint) -> float:
        if self.radius is not None:
            return self.radius
        if self.f.decay != DECAY_COMPACT:
            return 1.0 + koranyi_gauge(x)
        return _support_radius(self.f, x)

    def __call__(self, x: HPoint, R: Optional[float] = None) -> complex:
        if self.f.is_zero:
            return 0j
        R = self.radius_for(x) if R is None else R
        xw, xs = x.wc, float(x.s)
        total = 0j
        for idx, (rule, kw) in enumerate(self._parts(R)):
            # x u^-1
            yw, ys = mul_arrays(xw, xs, -rule.w, -rule.s)
            fv = self.f(yw, ys)
            if self.pv and idx == 0:
                # subtract f(x) on the ball (the angular mean of the kernel vanishes there)
                # and add back the delta part of the distribution
                fx = complex(self.f(np.array([xw]), np.array([xs]))[0])
                fv = fv - fx
                total += self.k.pv_delta * fx
            total += _fsum_c(kw * fv)
        return total


def convolve(k: KernelDef, f: GridFunction, x: HPoint, pv: bool = False, n: Optional[int] = None) -> complex:
    """int k(y^-1 x) f(y) dy by graded polar quadrature."""
    return Convolver(k, f, pv, n)(x)


# ---------------------------------------------------------------------------
# manufactured data
# ---------------------------------------------------------------------------

_XG = derive_poly(casym.X, G_P)
_YG = derive_poly(casym.Y, G_P)
_LAPG = derive_poly(casym.X, _XG) + derive_poly(casym.Y, _YG)
_ZG = derive_poly(casym.Z, G_P)
_ZBG = derive_poly(casym.ZBAR, G_P)
_ZZBG = derive_poly(casym.Z, _ZBG)


@dataclass(frozen=True)
class Bump:
    """B(y) = amp * (1 - g(c^-1 y)/a^4)_+^m with g = |w|^4 + s^2."""

    center: HPoint = HPoint(0j, 0.0)
    a: float = 1.0
    m: int = 8
    amp: float = 1.0

    def _local(self, w, s):
        cw, cs = self.center.wc, float(self.center.s)
        return mul_arrays(-cw, -cs, w, s)

    def _F(self, g, order: int):
        a4 = self.a ** 4
        t = np.maximum(1.0 - g / a4, 0.0)
        m = self.m
        if order == 0:
            return self.amp * t ** m
        if order == 1:
            return self.amp * (-m / a4) * t ** (m - 1)
        return self.amp * (m * (m - 1) / a4 ** 2) * t ** (m - 2)

    def __call__(self, w, s) -> np.ndarray:
        w, s = self._local(np.asarray(w, complex), np.asarray(s, float))
        g = np.abs(w) ** 4 + s ** 2
        return self._F(g, 0).astype(complex)

    def sublaplacian(self, w, s) -> np.ndarray:
        """Delta_b B = -(F''(g)((Xg)^2 + (Yg)^2) + F'(g)(X^2 g + Y^2 g))."""
        w, s = self._local(np.asarray(w, complex), np.asarray(s, float))
        g = np.abs(w) ** 4 + s ** 2
        xg = _XG.evaluate(w, s)
        yg = _YG.evaluate(w, s)
        lap = _LAPG.evaluate(w, s)
        return -(self._F(g, 2) * (xg * xg + yg * yg) + self._F(g, 1) * lap)

    def kohn(self, w, s) -> np.ndarray:
        """box_b B = -Z Zbar B = -(F''(g) Zg Zbar g + F'(g) Z Zbar g)."""
        w, s = self._local(np.asarray(w, complex), np.asarray(s, float))
        g = np.abs(w) ** 4 + s ** 2
        return -(self._F(g, 2) * _ZG.evaluate(w, s) * _ZBG.evaluate(w, s) + self._F(g, 1) * _ZZBG.evaluate(w, s))

    @property
    def support(self) -> Tuple[HPoint, float]:
        return (self.center, self.a)

    def test_points(self, count: int = 10, seed: int = 0, frac: float = 0.6) -> List[HPoint]:
        """Deterministic interior points with rho(c^-1 x) <= frac * a."""
        rng = np.random.default_rng(seed)
        pts = []
        for _ in range(count):
            r = frac * self.a * rng.uniform(0.1, 1.0)
            th = rng.uniform(-np.pi / 2, np.pi / 2)
            ph = rng.uniform(0, 2 * np.pi)
            u = HPoint(complex(r * math.sqrt(math.cos(th)) * np.exp(1j * ph)), r * r * math.sin(th))
            pts.append(mul(self.center.as_float(), u))
        return pts


def szego_test_function(w, s) -> np.ndarray:
    """F = (|w|^2 + 1 - i s)^-2, a CR function in L^2 with F(0) = 1."""
    return 1.0 / (np.abs(w) ** 2 + 1.0 - 1j * np.asarray(s, float)) ** 2


def bump_data(kind: str, spec: GridSpec, bump: Bump) -> GridFunction:
    fn = {"sublaplacian": bump.sublaplacian, "kohn": bump.kohn, "bump": bump}[kind]
    return GridFunction.from_callable(spec, fn, DECAY_COMPACT, bump.support)


# ---------------------------------------------------------------------------
# solvers and residuals
# ---------------------------------------------------------------------------

@dataclass
class Solution:
    """Lazy result u = k * f; evaluate with ``u(x)`` or ``u.on_grid()``."""

    conv: Convolver

    def __call__(self, x: HPoint, R: Optional[float] = None) -> complex:
        return self.conv(x, R)

    def on_grid(self) -> GridFunction:
        spec = self.conv.f.spec
        w, s = spec.nodes()
        vals = np.array([self.conv(HPoint(complex(a), float(b))) for a, b in zip(w, s)])
        return GridFunction(spec, vals)


def _stencil_apply(sol: Solution, x: HPoint, pts: Sequence[HPoint], cs: np.ndarray) -> complex:
    x = x.as_float()
    margin = max(koranyi_gauge(mul(inv(x), p)) for p in pts)
    R = sol.conv.radius_for(x) + margin
    vals = np.array([sol(p, R) for p in pts])
    return complex(np.dot(cs, vals))


def solve_sublap(f: GridFunction, n: Optional[int] = None) -> Solution:
    return Solution(Convolver(K_DEF, f, False, n))


def solve_boxb(f: GridFunction, n: Optional[int] = None) -> Solution:
    return Solution(Convolver(N_DEF, f, False, n))


def szego_project(f: GridFunction, n: Optional[int] = None) -> Solution:
    if f.decay != DECAY_COMPACT and f.decay < 4:
        raise ContractError("the Szego projection needs decay of order at least 4")
    return Solution(Convolver(PI_DEF, f, True, n))


def sublap_residuals(f: GridFunction, points: Iterable[HPoint], n: Optional[int] = None,
                     h: float = 5e-3) -> np.ndarray:
    """|Delta_b(K*f)(x) - f(x)| at each point, finite-difference Delta_b."""
    u = solve_sublap(f, n)
    out = []
    for x in points:
        pts, cs = sublaplacian_points(x, h)
        lhs = _stencil_apply(u, x, pts, cs)
        out.append(abs(lhs - complex(f(np.array([x.wc]), np.array([float(x.s)]))[0])))
    return np.array(out)


def boxb_residuals(f: GridFunction, points: Iterable[HPoint], n: Optional[int] = None,
                   h: float = 5e-3) -> np.ndarray:
    """|box_b(N*f)(x) - f(x) + (Pi*f)(x)| with finite-difference box_b and PV quadrature for Pi*f."""
    u = solve_boxb(f, n)
    proj = szego_project(f, n)
    out = []
    for x in points:
        pts, cs = kohn_points(x, h)
        lhs = _stencil_apply(u, x, pts, cs)
        fx = complex(f(np.array([x.wc]), np.array([float(x.s)]))[0])
        out.append(abs(lhs - fx + proj(x)))
    return np.array(out)


def field_of_solution(sol: Solution, tag: str, x: HPoint, h: float = 5e-3) -> complex:
    from .hgroup import field_points
    pts, cs = field_points(tag, x, h)
    return _stencil_apply(sol, x, pts, cs)


def normalization_constant(n: int = DEFAULT_N, bump: Optional[Bump] = None) -> float:
    """c with Delta_b(c g^(-1/2)) = delta, measured as B(0) / int g^(-1/2) Delta_b B du."""
    bump = bump or Bump()
    rule = polar_rule(n, 0.0, bump.a * 1.0 + koranyi_gauge(bump.center))
    integrand = rule.rho ** -2 * np.real(bump.sublaplacian(rule.w, rule.s)) * rule.weight
    b0 = float(np.real(bump(np.array([0j]), np.array([0.0]))[0]))
    return b0 / math.fsum(integrand.tolist())


def ball_integral(k: KernelDef, a: float, n: int = DEFAULT_N) -> complex:
    """int over the Koranyi ball of radius a of k (principal value for degree -4)."""
    rule = polar_rule(n, 0.0, a)
    return _fsum_c(_kernel_weights(k, rule))


def shell_mean(k: KernelDef, r: float, R: float, n: int = DEFAULT_N) -> complex:
    """int_{r < rho < R} k du."""
    return _fsum_c(_kernel_weights(k, polar_rule(n, r, R)))

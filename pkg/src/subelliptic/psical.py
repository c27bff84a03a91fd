"""Sampled non-isotropic pseudodifferential calculus on H^1.

Frequencies carry the dilation (xi', xi3) -> (r xi', r^2 xi3) and the box
norm |xi'| + |xi3|^(1/2); kernels carry the dual dilation on u with
homogeneous dimension Q = 4.  A symbol of order n satisfies

    |d_x^I d_xi^alpha a(x, xi)| <= C (1 + ||xi||)^(n - ||alpha||),  ||alpha|| = a1 + a2 + 2 a3,

and its kernel behaves like ||u||^(-Q-n) near the origin.

Operators are dense matrices on a dilation-covariant Koranyi-polar grid:
the origin plus ``radial`` nodes in each dyadic shell 2^-j-1 <= rho < 2^-j,
with the same angular nodes in every shell.  Because the grid is mapped to
itself (shell by shell) under dilation by 2, discretization errors of a
homogeneous kernel are themselves homogeneous and do not bias order fits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import jv

from .errors import ContractError, DomainError
from .hgroup import mul_arrays
from .kernels import KernelDef
from .quad import ball_integral, polar_rule

Q = 4
RADII = (1.0, 1.25, 1.5, 1.75)


# ---------------------------------------------------------------------------
# frequencies and frames
# ---------------------------------------------------------------------------

def box_norm_xi(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, float)
    return np.hypot(xi[..., 0], xi[..., 1]) + np.sqrt(np.abs(xi[..., 2]))


def gauge_xi(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, float)
    h2 = xi[..., 0] ** 2 + xi[..., 1] ** 2
    return (h2 * h2 + xi[..., 2] ** 2) ** 0.25


def dilate_xi(r, xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, float)
    r = np.asarray(r, float)[..., None]
    return np.concatenate([r * xi[..., :2], (r * r) * xi[..., 2:]], axis=-1)


@dataclass(frozen=True)
class FreqPoint:
    xi1: float
    xi2: float
    xi3: float

    @property
    def norm(self) -> float:
        return math.hypot(self.xi1, self.xi2) + math.sqrt(abs(self.xi3))

    def dilate(self, r: float) -> "FreqPoint":
        return FreqPoint(r * self.xi1, r * self.xi2, r * r * self.xi3)

    def as_array(self) -> np.ndarray:
        return np.array([self.xi1, self.xi2, self.xi3])


def default_rays() -> np.ndarray:
    """Unit box-norm directions: horizontal, vertical and mixed."""
    rays = []
    for k in range(6):
        a = k * math.pi / 3
        rays.append((math.cos(a), math.sin(a), 0.0))
    rays.append((0.0, 0.0, 1.0))
    rays.append((0.0, 0.0, -1.0))
    for a, sgn in ((math.pi / 4, 1.0), (5 * math.pi / 4, -1.0)):
        rays.append((0.5 * math.cos(a), 0.5 * math.sin(a), sgn * 0.25))
    return np.array(rays)


@dataclass(frozen=True)
class FrameMap:
    """x -> A(x), a 3x3 matrix with M_x xi = A(x) xi."""

    A: Callable[[np.ndarray], np.ndarray]

    def matrix(self, x) -> np.ndarray:
        m = np.asarray(self.A(np.asarray(x, float)), float)
        if m.shape != (3, 3):
            raise ContractError("frame matrix must be 3x3")
        return m

    def inverse(self, x) -> np.ndarray:
        return np.linalg.inv(self.matrix(x))

    def check_nondegenerate(self, xs: Sequence, c: float = 1e-8) -> float:
        d = min(abs(np.linalg.det(self.matrix(x))) for x in xs)
        if d < c:
            raise ContractError(f"frame degenerates: |det A| = {d:.3e}")
        return d

    def distortion(self, other: "FrameMap", xs: Sequence, J: int = 12,
                   rays: Optional[np.ndarray] = None) -> Tuple[float, float]:
        """min and max of ||M~_x M_x^-1 xi|| / ||xi|| over xs and shells 1..2^J."""
        rays = default_rays() if rays is None else rays
        lo, hi = math.inf, 0.0
        for x in xs:
            C = other.matrix(x) @ self.inverse(x)
            for j in range(J + 1):
                xi = dilate_xi(np.full(len(rays), 2.0 ** j), rays)
                r = box_norm_xi(xi @ C.T) / box_norm_xi(xi)
                lo, hi = min(lo, float(r.min())), max(hi, float(r.max()))
        return lo, hi

    def equivalent(self, other: "FrameMap", xs: Sequence, J: int = 12, bound: float = 50.0) -> bool:
        lo, hi = self.distortion(other, xs, J)
        return lo > 1.0 / bound and hi < bound


# ---------------------------------------------------------------------------
# sampled symbols and kernels
# ---------------------------------------------------------------------------

SymbolFn = Callable[[np.ndarray, np.ndarray], np.ndarray]  # (x (3,), xi (P,3)) -> (P,)


def _shell_points(J: int, rays: np.ndarray, radii=RADII) -> np.ndarray:
    """xi[j, ray, radius] = delta_{2^j * c}(ray)."""
    out = np.empty((J + 1, len(rays), len(radii), 3))
    for j in range(J + 1):
        for m, c in enumerate(radii):
            out[j, :, m] = dilate_xi(np.full(len(rays), c * 2.0 ** j), rays)
    return out


@dataclass
class SampledSymbol:
    """a(x, xi) sampled at x in ``xs`` and xi on dyadic shells ||xi|| in [2^j, 2^(j+1)), j = 0..J."""

    fn: Optional[SymbolFn]
    n: float
    J: int = 10
    xs: np.ndarray = field(default_factory=lambda: np.zeros((1, 3)))
    rays: np.ndarray = field(default_factory=default_rays)
    values: Optional[np.ndarray] = None
    modes: Optional[Callable] = None

    def __post_init__(self):
        self.xs = np.atleast_2d(np.asarray(self.xs, float))
        if self.values is None:
            if self.fn is None:
                raise ContractError("a sampled symbol needs values or a function")
            pts = self.points().reshape(-1, 3)
            self.values = np.stack([np.asarray(self.fn(x, pts), complex).reshape(self.points().shape[:-1])
                                    for x in self.xs])
        self.values = np.asarray(self.values, complex)
        if not np.all(np.isfinite(self.values)):
            raise ContractError("symbol values must be finite")

    def points(self) -> np.ndarray:
        return _shell_points(self.J, self.rays)

    def norms(self) -> np.ndarray:
        return box_norm_xi(self.points())

    def __call__(self, x, xi) -> np.ndarray:
        if self.fn is None:
            raise ContractError("symbol has no evaluator")
        return np.asarray(self.fn(np.asarray(x, float), np.atleast_2d(xi)), complex)


def sample_symbol(fn: SymbolFn, n: float, J: int = 10, xs=None, rays=None) -> SampledSymbol:
    return SampledSymbol(fn, n, J, np.zeros((1, 3)) if xs is None else xs,
                         default_rays() if rays is None else rays)


def smooth_symbol(n: float) -> SymbolFn:
    """(1 + |xi'|^4 + xi3^2)^(n/4), smooth with order n."""
    def fn(x, xi):
        xi = np.atleast_2d(xi)
        h2 = xi[:, 0] ** 2 + xi[:, 1] ** 2
        return (1.0 + h2 * h2 + xi[:, 2] ** 2) ** (n / 4.0) + 0j
    return fn


def constant_symbol(c: complex = 1.0) -> SymbolFn:
    return lambda x, xi: np.full(len(np.atleast_2d(xi)), c, complex)


def _unit_gauge_rays(n_theta: int = 5, n_phi: int = 4) -> np.ndarray:
    """Unit Koranyi-gauge directions in u, returned as (w, s) columns."""
    out = []
    for th in np.linspace(-0.45 * math.pi, 0.45 * math.pi, n_theta):
        for ph in np.arange(n_phi) * 2 * math.pi / n_phi + 0.3:
            r = math.sqrt(math.cos(th))
            out.append((r * math.cos(ph), r * math.sin(ph), math.sin(th)))
    return np.array(out)


@dataclass
class KernelSample:
    """k(u) sampled on u-shells rho in [2^-j, 2^(1-j)), j = 0..J.

    The represented kernel is ``fn(w, s) * chi(rho / cutoff)``; use
    ``cutoff=None`` for kernels that decay on their own, optionally with
    ``extent`` bounding the region where they are not negligible.
    ``pv_delta`` is the coefficient of delta added to the principal value.
    """

    fn: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]]
    n: float
    J: int = 10
    rays: np.ndarray = field(default_factory=_unit_gauge_rays)
    values: Optional[np.ndarray] = None
    pv_delta: float = 0.0
    cutoff: Optional[float] = 1.0
    modes: Optional[Callable] = None
    extent: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        if self.values is None:
            if self.fn is None:
                raise ContractError("a kernel sample needs values or a function")
            w, s = self.points()
            self.values = np.asarray(self.fn(w, s), complex)
        self.values = np.asarray(self.values, complex)
        if not np.all(np.isfinite(self.values)):
            raise ContractError("kernel values must be finite")

    def points(self) -> Tuple[np.ndarray, np.ndarray]:
        J, R = self.J, len(self.rays)
        w = np.empty((J + 1, R, len(RADII)), complex)
        s = np.empty((J + 1, R, len(RADII)))
        for j in range(J + 1):
            for m, c in enumerate(RADII):
                r = c * 2.0 ** (-j)
                w[j, :, m] = r * (self.rays[:, 0] + 1j * self.rays[:, 1])
                s[j, :, m] = r * r * self.rays[:, 2]
        return w, s

    def radii(self) -> np.ndarray:
        w, s = self.points()
        return (np.abs(w) ** 4 + s ** 2) ** 0.25

    def full(self, w, s) -> np.ndarray:
        v = np.asarray(self.fn(w, s), complex)
        if self.cutoff is not None:
            v = v * chi((np.abs(w) ** 4 + np.asarray(s) ** 2) ** 0.25 / self.cutoff)
        return v


def kernel_sample(kdef: KernelDef, J: int = 10, cutoff: Optional[float] = 1.0) -> KernelSample:
    return KernelSample(kdef.numeric, -Q - kdef.homogeneity_degree, J,
                        pv_delta=kdef.pv_delta, cutoff=cutoff, name=kdef.name)


# ---------------------------------------------------------------------------
# order estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OrderEstimate:
    n_hat: float
    ci: Tuple[float, float]
    shells: Tuple[int, ...]
    sup: Tuple[float, ...]

    def within(self, target: float, tol: float) -> bool:
        return abs(self.n_hat - target) <= tol


def _fit(x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    sxy = float(np.sum((x - xm) * (y - ym)))
    slope = sxy / sxx
    if len(x) > 2:
        resid = y - ym - slope * (x - xm)
        se = math.sqrt(float(np.sum(resid ** 2)) / (len(x) - 2) / sxx)
    else:
        se = 0.0
    return slope, se


def _estimate(xs: np.ndarray, sups: np.ndarray, shells: Sequence[int], shift: float) -> OrderEstimate:
    if not np.any(sups > 0):
        raise ContractError("degenerate input: all sampled values vanish")
    if np.any(sups <= 0):
        raise ContractError("a shell has no nonzero samples; order is undefined")
    if len(shells) < 2:
        raise ContractError("need at least two shells to fit an order")
    slope, se = _fit(xs, np.log(sups))
    n = slope - shift
    return OrderEstimate(n, (n - 2 * se, n + 2 * se), tuple(int(j) for j in shells), tuple(float(v) for v in sups))


def estimate_order(obj, j_min: int = 2, j_max: Optional[int] = None) -> OrderEstimate:
    """Least-squares order of a SampledSymbol, KernelSample or GridOperator."""
    if isinstance(obj, GridOperator):
        return obj.estimate_order()
    if isinstance(obj, SampledSymbol):
        J = obj.J if j_max is None else j_max
        if J - j_min + 1 < 6:
            raise ContractError("need at least 6 dyadic shells")
        mags = np.abs(obj.values).max(axis=0)  # (J+1, rays, radii)
        norms = obj.norms()
        shells = list(range(j_min, J + 1))
        sups, xs = [], []
        for j in shells:
            k = int(np.argmax(mags[j]))
            sups.append(mags[j].ravel()[k])
            xs.append(math.log1p(norms[j].ravel()[k]))
        return _estimate(np.array(xs), np.array(sups), shells, 0.0)
    if isinstance(obj, KernelSample):
        J = obj.J if j_max is None else j_max
        if J - j_min + 1 < 6:
            raise ContractError("need at least 6 dyadic shells")
        mags = np.abs(obj.values)
        radii = obj.radii()
        shells = list(range(j_min, J + 1))
        sups, xs = [], []
        for j in shells:
            k = int(np.argmax(mags[j]))
            sups.append(mags[j].ravel()[k])
            xs.append(-math.log(radii[j].ravel()[k]))
        return _estimate(np.array(xs), np.array(sups), shells, Q)
    raise ContractError(f"cannot estimate the order of {type(obj).__name__}")


# ---------------------------------------------------------------------------
# symbol estimates
# ---------------------------------------------------------------------------

_FD = {0: ((0, 1.0),), 1: ((-1, -0.5), (1, 0.5)), 2: ((-1, 1.0), (0, -2.0), (1, 1.0)),
       3: ((-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)), 4: ((-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0))}


def xi_multi_indices(max_norm: int) -> List[Tuple[int, int, int]]:
    out = [(a1, a2, a3) for a3 in range(max_norm // 2 + 1) for a1 in range(max_norm + 1)
           for a2 in range(max_norm + 1) if a1 + a2 + 2 * a3 <= max_norm]
    return sorted(out, key=lambda a: (a[0] + a[1] + 2 * a[2], a))


def x_multi_indices(max_order: int) -> List[Tuple[int, int, int]]:
    out = [i for i in product(range(max_order + 1), repeat=3) if sum(i) <= max_order]
    return sorted(out, key=lambda i: (sum(i), i))


def _stencil(orders: Sequence[int]):
    if any(k not in _FD for k in orders):
        raise ContractError("finite-difference order too high for the lattice")
    for combo in product(*[_FD[k] for k in orders]):
        offs = tuple(c[0] for c in combo)
        coef = 1.0
        for c in combo:
            coef *= c[1]
        yield offs, coef


@dataclass(frozen=True)
class EstimateRow:
    I: Tuple[int, int, int]
    alpha: Tuple[int, int, int]
    sup: Tuple[float, ...]
    growth: float
    passed: bool
    non_sharp: bool
    zero: bool


@dataclass(frozen=True)
class EstimateReport:
    n: float
    rows: Tuple[EstimateRow, ...]
    bound: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def row(self, I=(0, 0, 0), alpha=(0, 0, 0)) -> EstimateRow:
        for r in self.rows:
            if r.I == tuple(I) and r.alpha == tuple(alpha):
                return r
        raise KeyError((I, alpha))


def check_symbol_estimates(a: SampledSymbol, n: float, max_order: int = 2, bound: float = 8.0,
                           h: float = 1e-2, hx: float = 1e-3) -> EstimateReport:
    """Shell sups of |d_x^I d_xi^alpha a| (1+||xi||)^(||alpha||-n); a row passes when no shell
    exceeds an earlier one by more than ``bound``."""
    needs_fd = max_order > 0
    if needs_fd and a.fn is None:
        raise ContractError("derivatives need a symbol evaluator; the lattice alone is too coarse")
    if max_order > 4:
        raise ContractError("finite differences are provided up to order 4")
    pts = a.points()  # (J+1, R, M, 3)
    J = a.J
    scale = 2.0 ** np.arange(J + 1)
    norms = a.norms()
    rows = []
    for I in x_multi_indices(max_order):
        for alpha in xi_multi_indices(max_order):
            vals = np.zeros(pts.shape[:-1] + (len(a.xs),), complex)
            for xk, x0 in enumerate(a.xs):
                acc = np.zeros(pts.shape[:-1], complex)
                for xoffs, xc in _stencil(I):
                    x = x0 + hx * np.array(xoffs, float)
                    for offs, c in _stencil(alpha):
                        d = np.array([offs[0], offs[1], offs[2]], float)
                        step = np.stack([d[0] * h * scale, d[1] * h * scale, d[2] * h * scale ** 2], axis=-1)
                        xi = pts + step[:, None, None, :]
                        if alpha == (0, 0, 0) and I == (0, 0, 0):
                            v = a.values[xk]
                        else:
                            v = a(x, xi.reshape(-1, 3)).reshape(pts.shape[:-1])
                        acc = acc + xc * c * v
                denom = hx ** sum(I) * (h * scale) ** (alpha[0] + alpha[1]) * (h * scale ** 2) ** alpha[2]
                vals[..., xk] = acc / denom[:, None, None]
            na = alpha[0] + alpha[1] + 2 * alpha[2]
            weighted = np.abs(vals).max(axis=-1) * (1.0 + norms) ** (na - n)
            sup = weighted.reshape(J + 1, -1).max(axis=1)
            zero = not np.any(sup > 0)
            if zero:
                growth = 0.0
            else:
                prev_min = np.minimum.accumulate(np.where(sup > 0, sup, np.inf))
                with np.errstate(divide="ignore", invalid="ignore"):
                    g = sup[1:] / prev_min[:-1]
                g = g[np.isfinite(g)]
                growth = float(g.max()) if len(g) else 1.0
            passed = zero or growth <= bound
            non_sharp = (not zero) and passed and sup[-1] < sup.max() / bound
            rows.append(EstimateRow(I, alpha, tuple(float(v) for v in sup), growth, passed, non_sharp, zero))
    return EstimateReport(n, tuple(rows), bound)


# ---------------------------------------------------------------------------
# smooth cutoffs and Littlewood-Paley pieces
# ---------------------------------------------------------------------------

def _f(t):
    t = np.asarray(t, float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def chi(t) -> np.ndarray:
    """Smooth cutoff, 1 for t <= 1 and 0 for t >= 2."""
    t = np.asarray(t, float)
    a = _f(2.0 - t)
    b = _f(t - 1.0)
    return a / (a + b)


LP_LO, LP_HI = 0.75, 2.5


def lp_cutoff(t) -> np.ndarray:
    """Cutoff for the dyadic decomposition: 1 for t <= 0.75, 0 for t >= 2.5.

    The wide, gentle transition keeps the Fourier transforms of the dyadic
    pieces small at high frequency, which is what the transforms rely on.
    """
    t = (np.asarray(t, float) - LP_LO) / (LP_HI - LP_LO)
    a = _f((1.0 - t) / 2.0)
    b = _f(t / 2.0)
    return a / (a + b)


def annulus(rho) -> np.ndarray:
    """lp_cutoff(rho) - lp_cutoff(2 rho), supported in 0.375 <= rho <= 2.5; dyadic dilates telescope."""
    return lp_cutoff(rho) - lp_cutoff(2.0 * rho)


# The transforms work mode by mode in the horizontal angle.  Writing
# k(r e^{i phi}, s) = sum_m k_m(r, s) e^{i m phi}, the angular integral of
# e^{i m phi} exp(-i r q cos(phi - alpha)) is 2 pi (-i)^m J_m(r q) e^{i m alpha},
# so each mode needs only a two-dimensional Hankel-Fourier integral in (r, s).

_MODE_TOL = 1e-13


@dataclass(frozen=True)
class TransformConfig:
    N: int = 128       # Gauss nodes per unit of the (r, s) piece grid
    Ns: float = 6.0    # vertical Gauss nodes per horizontal node
    M: int = 16        # angular samples used to split off horizontal modes
    j_extra: int = 6   # inverse pieces beyond the finest sampled shell
    j_fwd: int = 10    # forward pieces beyond it; the forward symbol must stay accurate over every inverse piece
    j_outer: int = 3   # kernel pieces out to rho ~ 2^j_outer without cutoff or extent
    ball_n: int = 12


@dataclass(frozen=True)
class _PieceGrid:
    r: np.ndarray
    s: np.ndarray
    weight: np.ndarray   # r dr ds, shape (len(r), len(s))
    band: Tuple[float, float]


@lru_cache(maxsize=16)
def _piece_grid(N: int, Ns: int, r_max: float, s_max: float) -> _PieceGrid:
    x, wx = leggauss(N)
    y, wy = leggauss(Ns)
    r = 0.5 * r_max * (x + 1.0)
    s = s_max * y
    weight = np.outer(0.5 * r_max * wx * r, s_max * wy)
    # Gauss rules integrate e^{i eta s} reliably while eta * half-width stays below ~0.8 n
    band = (0.8 * N / r_max, 0.8 * Ns / (2 * s_max))
    return _PieceGrid(r, s, weight, band)


_UNIT = (LP_HI, LP_HI ** 2)                 # support of annulus
_LOW = (LP_HI / 2, LP_HI ** 2 / 4)          # support of lp_cutoff(2 rho)


def _angles(M: int) -> np.ndarray:
    return 2 * math.pi * np.arange(M) / M


def _split_modes(vals: np.ndarray, M: int) -> Dict[int, np.ndarray]:
    """vals[r, l, s] sampled at phi_l = 2 pi l / M -> {m: mode array}."""
    c = np.fft.fft(vals, axis=1) / M
    scale = max(float(np.max(np.abs(c))), 1e-300)
    out = {}
    for idx in range(M):
        m = idx if idx <= M // 2 else idx - M
        cm = c[:, idx, :]
        if np.max(np.abs(cm)) > _MODE_TOL * scale:
            out[m] = cm
    return out


def _kernel_modes(k: KernelSample, r: np.ndarray, s: np.ndarray, M: int) -> Dict[int, np.ndarray]:
    if k.modes is not None:
        out = k.modes(r, s)
        if k.cutoff is not None:
            c = chi((r[:, None] ** 4 + s[None, :] ** 2) ** 0.25 / k.cutoff)
            out = {m: v * c for m, v in out.items()}
        return out
    ph = _angles(M)
    R, Pg, S = np.meshgrid(r, ph, s, indexing="ij")
    return _split_modes(k.full(R * np.exp(1j * Pg), S), M)


def _symbol_modes(a: SampledSymbol, q: np.ndarray, t: np.ndarray, M: int) -> Dict[int, np.ndarray]:
    if a.modes is not None:
        return a.modes(q, t)
    ph = _angles(M)
    Qg, P, T = np.meshgrid(q, ph, t, indexing="ij")
    xi = np.stack([Qg * np.cos(P), Qg * np.sin(P), T], axis=-1).reshape(-1, 3)
    vals = np.asarray(a(a.xs[0], xi), complex).reshape(Qg.shape)
    return _split_modes(vals, M)


def _bessel(m: int, x: np.ndarray) -> np.ndarray:
    return jv(m, x)


TAPER_START = 0.6


def _taper(x) -> np.ndarray:
    """Smooth roll-off from 1 at |x| <= TAPER_START to 0 at |x| >= 1.

    A piece is faded out before its grid stops resolving it; dropping it
    abruptly would leave jumps in the result that the inverse transform
    amplifies.
    """
    return chi(1.0 + (np.abs(x) - TAPER_START) / (1.0 - TAPER_START))


def _hankel_points(G: np.ndarray, m: int, pg: _PieceGrid, q: np.ndarray, t: np.ndarray,
                   sign: float) -> np.ndarray:
    """sum_{r,s} G[r,s] J_m(r q_p) exp(sign i s t_p) for paired (q_p, t_p), tapered at the band edge."""
    E = np.exp(sign * 1j * np.outer(pg.s, t))      # (Ns, P)
    B = _bessel(m, np.outer(pg.r, q))               # (Nr, P)
    fade = _taper(q / pg.band[0]) * _taper(t / pg.band[1])
    return np.einsum("rp,rp->p", B, G @ E) * fade


def _hankel_tensor(G: np.ndarray, m: int, pg: _PieceGrid, q: np.ndarray, t: np.ndarray,
                   sign: float) -> np.ndarray:
    """The same sum on the tensor grid q x t."""
    E = np.exp(sign * 1j * np.outer(pg.s, t)) * _taper(t / pg.band[1])
    B = _bessel(m, np.outer(q, pg.r)) * _taper(q / pg.band[0])[:, None]
    return B @ (G @ E)


def _in_band(q, t, band) -> np.ndarray:
    return (np.abs(q) < band[0]) & (np.abs(t) < band[1])


def _u_range(k: KernelSample, J_xi: int, cfg: TransformConfig) -> Tuple[int, int]:
    # pieces j >= j0 sum to lp_cutoff(2^j0 rho), which is 1 for rho <= LP_LO 2^-j0
    if k.cutoff is not None:
        j0 = -int(math.ceil(math.log2(2.0 * k.cutoff / LP_LO)))
    elif k.extent is not None:
        j0 = -int(math.ceil(math.log2(k.extent / LP_LO)))
    else:
        j0 = -cfg.j_outer
    return j0, J_xi + cfg.j_fwd


class KernelSymbol:
    """Forward transform int k(u) exp(-i u.xi) du, built from dyadic pieces of k.

    Piece j is k times annulus(delta_{2^j} u), rescaled to unit size; a piece
    is skipped at frequencies beyond what its grid resolves, where its
    transform is negligible because the piece is smooth.  The part of k
    inside rho < 2^-j1 is integrated in polar coordinates, as a principal
    value for kernels of order >= 0.
    """

    def __init__(self, k: KernelSample, J: int, cfg: TransformConfig = TransformConfig()):
        self.k = k
        self.cfg = cfg
        self.pg = _piece_grid(cfg.N, int(cfg.Ns * cfg.N), *_UNIT)
        rho = (self.pg.r[:, None] ** 4 + self.pg.s[None, :] ** 2) ** 0.25
        cut = annulus(rho) * self.pg.weight
        j0, j1 = _u_range(k, J, cfg)
        self.pieces = []
        for j in range(j0, j1 + 1):
            r = 2.0 ** (-j)
            modes = _kernel_modes(k, r * self.pg.r, r * r * self.pg.s, cfg.M)
            self.pieces.append((j, {m: v * cut for m, v in modes.items()}))
        rule = polar_rule(cfg.ball_n, 0.0, LP_HI * 2.0 ** (-j1 - 1))
        inner = lp_cutoff(2.0 ** (j1 + 1) * rule.rho)
        self.ball_u = np.stack([rule.w.real, rule.w.imag, rule.s], axis=-1)
        self.ball_kv = np.asarray(k.fn(rule.w, rule.s), complex) * inner * rule.weight
        n = cfg.ball_n
        kv = self.ball_kv.reshape(n * n, n)
        self.ball_r = np.abs(rule.w.reshape(n * n, n)[:, 0])
        self.ball_s = rule.s.reshape(n * n, n)[:, 0]
        # the phi nodes are uniform, so sum_l kv_l e^{-i u_l.xi} = n sum_m c_m (-i)^m J_m e^{i m alpha}
        self.ball_modes = {m: v[:, 0] * n / (2 * math.pi) for m, v in _split_modes(kv[:, :, None], n).items()}
        self.pv = bool(k.pv_delta) or k.n >= 0

    def _ball_const(self) -> complex:
        return (-complex(np.sum(self.ball_kv)) if self.pv else 0j) + self.k.pv_delta

    def __call__(self, x, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, float))
        q = np.hypot(xi[:, 0], xi[:, 1])
        alpha = np.arctan2(xi[:, 1], xi[:, 0])
        out = np.zeros(len(xi), complex)
        for j, modes in self.pieces:
            r = 2.0 ** (-j)
            qj, tj = r * q, r * r * xi[:, 2]
            ok = _in_band(qj, tj, self.pg.band)
            if not np.any(ok):
                continue
            for m, G in modes.items():
                h = _hankel_points(G, m, self.pg, qj[ok], tj[ok], -1.0)
                out[ok] += 2.0 ** (-Q * j) * 2 * math.pi * (-1j) ** m * np.exp(1j * m * alpha[ok]) * h
        ph = np.exp(-1j * (xi @ self.ball_u.T))
        return out + ph @ self.ball_kv + self._ball_const()

    def modes(self, q: np.ndarray, t: np.ndarray) -> Dict[int, np.ndarray]:
        """Horizontal modes of the transform on the tensor grid q x t."""
        out: Dict[int, np.ndarray] = {}
        for j, modes in self.pieces:
            r = 2.0 ** (-j)
            qm = np.abs(r * q) < self.pg.band[0]
            tm = np.abs(r * r * t) < self.pg.band[1]
            if not (np.any(qm) and np.any(tm)):
                continue
            for m, G in modes.items():
                h = np.zeros((len(q), len(t)), complex)
                h[np.ix_(qm, tm)] = _hankel_tensor(G, m, self.pg, r * q[qm], r * r * t[tm], -1.0)
                out[m] = out.get(m, 0) + 2.0 ** (-Q * j) * 2 * math.pi * (-1j) ** m * h
        # the remaining ball, mode by mode over its (rho, theta) nodes
        for m, G in self.ball_modes.items():
            B = _bessel(m, np.outer(q, self.ball_r))
            E = np.exp(-1j * np.outer(self.ball_s, t))
            out[m] = out.get(m, 0) + 2 * math.pi * (-1j) ** m * (B * G) @ E
        out[0] = out.get(0, 0) + self._ball_const()
        return out


def kernel_transform(k: KernelSample, xi: np.ndarray, J_xi: int = 10,
                     cfg: TransformConfig = TransformConfig()) -> np.ndarray:
    """Fourier transform int k(u) exp(-i u.xi) du at the rows of xi (u = (Re w, Im w, s))."""
    return KernelSymbol(k, J_xi, cfg)(None, xi)


def kernel_to_symbol(k: KernelSample, J: int = 10, cfg: TransformConfig = TransformConfig()) -> SampledSymbol:
    if not (-Q < k.n):
        raise ContractError(f"declared order {k.n} is outside (-4, inf)")
    ks = KernelSymbol(k, J, cfg)
    return SampledSymbol(ks, k.n, J, modes=ks.modes)


class SymbolKernel:
    """Inverse transform (2 pi)^-3 int a(xi) exp(i u.xi) dxi from dyadic pieces of a.

    Piece -1 is lp_cutoff(2 ||xi||) a; piece i >= 0 is annulus(delta_{2^-i} xi) a.
    """

    def __init__(self, a: SampledSymbol, I1: int, cfg: TransformConfig = TransformConfig()):
        self.cfg = cfg
        self.pieces = []
        for i in range(-1, I1 + 1):
            pg = _piece_grid(cfg.N, int(cfg.Ns * cfg.N), *(_LOW if i < 0 else _UNIT))
            rho = (pg.r[:, None] ** 4 + pg.s[None, :] ** 2) ** 0.25
            cut = (lp_cutoff(2.0 * rho) if i < 0 else annulus(rho)) * pg.weight
            r = 2.0 ** max(i, 0)
            modes = _symbol_modes(a, r * pg.r, r * r * pg.s, cfg.M)
            self.pieces.append((r, pg, {m: v * cut for m, v in modes.items()}))

    def __call__(self, w, s) -> np.ndarray:
        w = np.asarray(w, complex)
        s = np.asarray(s, float)
        shape = w.shape
        w, s = w.ravel(), np.broadcast_to(s, shape).ravel()
        rr, phi = np.abs(w), np.angle(w)
        out = np.zeros(len(w), complex)
        for r, pg, modes in self.pieces:
            qi, ti = r * rr, r * r * s
            ok = _in_band(qi, ti, pg.band)
            if not np.any(ok):
                continue
            for m, A in modes.items():
                h = _hankel_points(A, m, pg, qi[ok], ti[ok], 1.0)
                out[ok] += r ** Q * 2 * math.pi * 1j ** m * np.exp(1j * m * phi[ok]) * h
        return (out / (2 * math.pi) ** 3).reshape(shape)

    def modes(self, r_axis: np.ndarray, s_axis: np.ndarray) -> Dict[int, np.ndarray]:
        out: Dict[int, np.ndarray] = {}
        for r, pg, modes in self.pieces:
            qm = np.abs(r * r_axis) < pg.band[0]
            tm = np.abs(r * r * s_axis) < pg.band[1]
            if not (np.any(qm) and np.any(tm)):
                continue
            for m, A in modes.items():
                h = np.zeros((len(r_axis), len(s_axis)), complex)
                h[np.ix_(qm, tm)] = _hankel_tensor(A, m, pg, r * r_axis[qm], r * r * s_axis[tm], 1.0)
                out[m] = out.get(m, 0) + r ** Q * 2 * math.pi * 1j ** m * h / (2 * math.pi) ** 3
        return out


def symbol_to_kernel(a: SampledSymbol, J: int = 10, cfg: TransformConfig = TransformConfig(),
                     extent: Optional[float] = None) -> KernelSample:
    """Inverse transform; ``extent`` declares that the kernel is negligible for rho > extent."""
    if not (-Q < a.n):
        raise ContractError(f"declared order {a.n} is outside (-4, inf)")
    if a.fn is None and a.modes is None:
        raise ContractError("the inverse transform needs a symbol evaluator")
    sk = SymbolKernel(a, J + cfg.j_extra, cfg)
    return KernelSample(sk, a.n, J, cutoff=None, extent=extent, modes=sk.modes, name="inverse")


def round_trip_error(a: SampledSymbol, shells: Sequence[int] = (2, 3, 4, 5, 6),
                     cfg: TransformConfig = TransformConfig(), extent: Optional[float] = None) -> float:
    """max relative error of kernel_to_symbol(symbol_to_kernel(a)) on the given symbol shells."""
    J = max(shells)
    k = symbol_to_kernel(a, J, cfg, extent)
    pts = a.points()[list(shells)].reshape(-1, 3)
    back = KernelSymbol(k, J, cfg)(None, pts)
    ref = a.values[0][list(shells)].reshape(-1)
    return float(np.max(np.abs(back - ref) / np.abs(ref)))


# ---------------------------------------------------------------------------
# cancellation
# ---------------------------------------------------------------------------

def default_bump(w, s) -> np.ndarray:
    """chi(2 rho) (1 + s): smooth, supported in rho <= 1, not radial."""
    rho = (np.abs(w) ** 4 + np.asarray(s) ** 2) ** 0.25
    return chi(2.0 * rho) * (1.0 + np.asarray(s))


@dataclass(frozen=True)
class CancellationReport:
    n: float
    r: Tuple[float, ...]
    pairings: Tuple[complex, ...]
    scaled: Tuple[float, ...]
    ratio: float
    converged: bool
    tail: float
    bound: float
    passed: bool
    conv_tol: float = 1e-2


def check_cancellation(k: KernelSample, n: float = 0, bump=default_bump, r_list=None, depth: int = 14,
                       bound: float = 8.0, quad_n: int = 24, conv_tol: float = 1e-2) -> CancellationReport:
    """r^n |<k, phi_r>| over dyadic r, with phi_r(u) = phi(delta_{1/r} u).

    Each pairing is summed over dyadic u-shells toward the origin; the kernel
    part of the pairing must converge (last shell increment small compared to
    the largest) and the scaled pairings must stay within ``bound`` of each other.
    """
    if n < 0:
        raise ContractError("the cancellation condition applies only for n >= 0")
    r_list = [2.0 ** (-m) for m in range(1, 9)] if r_list is None else list(r_list)
    pairings, tails = [], []
    for r in r_list:
        incs = []
        for m in range(depth):
            rule = polar_rule(quad_n, r * 2.0 ** (-m - 1), r * 2.0 ** (-m))
            kv = np.asarray(k.fn(rule.w, rule.s), complex)
            pv = bump(rule.w / r, rule.s / (r * r))
            incs.append(complex(np.sum(kv * pv * rule.weight)))
        incs = np.array(incs)
        total = complex(np.sum(incs)) + k.pv_delta * complex(bump(np.array([0j]), np.array([0.0]))[0])
        peak = float(np.max(np.abs(incs)))
        tails.append(0.0 if peak == 0 else float(abs(incs[-1]) / peak))
        pairings.append(total)
    scaled = np.array([r ** n * abs(p) for r, p in zip(r_list, pairings)])
    tail = max(tails)
    converged = tail <= conv_tol
    if not np.any(scaled > 0):
        ratio = 1.0
    elif np.any(scaled == 0):
        ratio = math.inf
    else:
        ratio = float(scaled.max() / scaled.min())
    passed = converged and ratio <= bound
    return CancellationReport(n, tuple(r_list), tuple(pairings), tuple(float(v) for v in scaled), ratio,
                              converged, tail, bound, passed, conv_tol)


# ---------------------------------------------------------------------------
# grid operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolarGrid:
    w: np.ndarray
    s: np.ndarray
    weights: np.ndarray
    shell: np.ndarray  # -1 at the origin node
    rho: np.ndarray
    shells: int

    @property
    def size(self) -> int:
        return len(self.w)

    def self_radius(self) -> np.ndarray:
        """Radius of the Koranyi ball with the volume of each cell."""
        return (2.0 * self.weights / math.pi ** 2) ** 0.25


def polar_grid(shells: int = 10, radial: int = 3, angular: int = 8, outer: float = 1.0) -> PolarGrid:
    tv, tw = leggauss(radial)
    tau, wtau = leggauss(angular)
    th = 0.5 * math.pi * np.sin(0.5 * math.pi * tau)
    wth = wtau * 0.25 * math.pi ** 2 * np.cos(0.5 * math.pi * tau)
    phi = 2 * math.pi * (np.arange(angular) + 0.5) / angular
    wphi = 2 * math.pi / angular
    ws, ss, wts, sh, rh = [0j], [0.0], [0.5 * math.pi ** 2 * (outer * 2.0 ** (-shells)) ** 4], [-1], [0.0]
    for j in range(shells):
        hi = outer * 2.0 ** (-j)
        lo = hi / 2
        rho = lo + (hi - lo) * 0.5 * (tv + 1)
        wr = (hi - lo) * 0.5 * tw
        for a in range(radial):
            for b in range(angular):
                for c in range(angular):
                    r = rho[a]
                    ws.append(r * math.sqrt(math.cos(th[b])) * complex(math.cos(phi[c]), math.sin(phi[c])))
                    ss.append(r * r * math.sin(th[b]))
                    wts.append(wr[a] * wth[b] * wphi * r ** 3)
                    sh.append(j)
                    rh.append(r)
    return PolarGrid(np.array(ws), np.array(ss), np.array(wts), np.array(sh), np.array(rh), shells)


_SELF_CACHE: Dict[str, complex] = {}


def self_cell(k: KernelDef, a: np.ndarray) -> np.ndarray:
    """Integral of k over Koranyi balls of radius a (principal value plus the delta part)."""
    if k.name not in _SELF_CACHE:
        _SELF_CACHE[k.name] = ball_integral(k, 1.0)
    base = _SELF_CACHE[k.name]
    return base * np.asarray(a) ** (4 + k.homogeneity_degree) + k.pv_delta


@dataclass
class GridOperator:
    matrix: np.ndarray
    grid: PolarGrid
    order: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        if self.matrix.shape != (self.grid.size, self.grid.size):
            raise ContractError("matrix does not match the grid")
        if not np.all(np.isfinite(self.matrix)):
            raise ContractError("operator entries must be finite")

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.matrix @ f

    def center_row(self) -> np.ndarray:
        """Row of the origin node divided by the weights: samples of the kernel at x_j^-1."""
        return self.matrix[0] / self.grid.weights

    def estimate_order(self, drop: int = 2) -> OrderEstimate:
        off = self.matrix - np.diag(np.diag(self.matrix))
        if not np.any(off):
            if not np.any(self.matrix):
                raise ContractError("degenerate input: zero operator")
            return OrderEstimate(0.0, (0.0, 0.0), (), ())
        row = self.center_row()
        g = self.grid
        shells = list(range(drop, g.shells - drop))
        osc, xs = [], []
        for j in shells:
            v = row[g.shell == j]
            osc.append(float(np.max(np.abs(v - v.mean()))))
            xs.append(-math.log(float(np.exp(np.mean(np.log(g.rho[g.shell == j]))))))
        return _estimate(np.array(xs), np.array(osc), shells, Q)


def op_from_kernel(k: KernelDef, grid: Optional[PolarGrid] = None) -> GridOperator:
    g = grid or polar_grid()
    wi, wj = np.meshgrid(g.w, g.w, indexing="ij")
    si, sj = np.meshgrid(g.s, g.s, indexing="ij")
    # x_j^-1 x_i
    dw, ds = mul_arrays(-wj, -sj, wi, si)
    # pairs closer than the source cell radius count as the same cell; near the
    # Koranyi poles nodes of one shell nearly coincide and would otherwise dominate
    dist = (np.abs(dw) ** 4 + ds ** 2) ** 0.25
    off = dist >= g.self_radius()[None, :]
    np.fill_diagonal(off, False)
    M = np.zeros((g.size, g.size), complex)
    M[off] = k.numeric(dw[off], ds[off]) * np.broadcast_to(g.weights[None, :], M.shape)[off]
    M[np.diag_indices(g.size)] = self_cell(k, g.self_radius())
    return GridOperator(M, g, -Q - k.homogeneity_degree, k.name)


def identity_op(grid: Optional[PolarGrid] = None) -> GridOperator:
    g = grid or polar_grid()
    return GridOperator(np.eye(g.size, dtype=complex), g, 0.0, "Id")


def _same_grid(a: GridOperator, b: GridOperator) -> None:
    if a.grid is not b.grid and not (a.grid.size == b.grid.size and np.array_equal(a.grid.w, b.grid.w)
                                     and np.array_equal(a.grid.s, b.grid.s)):
        raise ContractError("operators live on different grids")


def compose(T1: GridOperator, T2: GridOperator) -> Tuple[GridOperator, OrderEstimate]:
    _same_grid(T1, T2)
    order = None if T1.order is None or T2.order is None else T1.order + T2.order
    T = GridOperator(T1.matrix @ T2.matrix, T1.grid, order, f"{T1.name}*{T2.name}")
    return T, T.estimate_order()


def commutator(eta: np.ndarray, T: GridOperator) -> GridOperator:
    eta = np.asarray(eta)
    M = eta[:, None] * T.matrix - T.matrix * eta[None, :]
    return GridOperator(M, T.grid, None if T.order is None else T.order - 1, f"[eta,{T.name}]")


def commutator_order(eta_fn: Callable, T: GridOperator, n: Optional[float] = None) -> float:
    """Estimated order of eta T - T eta; -inf when the commutator vanishes."""
    n = T.order if n is None else n
    if n is None or not (-3 < n < 0):
        raise ContractError("commutator_order needs -3 < n < 0")
    eta = np.asarray(eta_fn(T.grid.w, T.grid.s))
    C = commutator(eta, T)
    if not np.any(C.matrix):
        return -math.inf
    return C.estimate_order().n_hat


def smooth_bump_eta(w, s, center=(0.3, 0.2, 0.1)) -> np.ndarray:
    """Euclidean Gaussian bump centered off the origin, so its horizontal gradient at 0 is nonzero."""
    w = np.asarray(w)
    return np.exp(-((w.real - center[0]) ** 2 + (w.imag - center[1]) ** 2 + (np.asarray(s) - center[2]) ** 2))


def windowed_x(w, s) -> np.ndarray:
    w = np.asarray(w)
    return w.real * np.exp(-(np.abs(w) ** 2 + np.asarray(s) ** 2))


# ---------------------------------------------------------------------------
# asymptotic sums
# ---------------------------------------------------------------------------

def symbol_constant(a: SampledSymbol) -> float:
    return float((np.abs(a.values).max(axis=0) * (1 + a.norms()) ** (-a.n)).max())


def asymptotic_sum(symbols: Sequence[SampledSymbol], chi_fn: Callable = chi,
                   check: bool = True) -> Tuple[SampledSymbol, List[float]]:
    """sum_j (1 - chi)(||xi|| / N_j) a_j with N_j = 1 + max_{k<=j} C_k; returns the symbol and the N_j."""
    if not symbols:
        raise ContractError("need at least one symbol")
    n0 = symbols[0].n
    for j, a in enumerate(symbols):
        if abs(a.n - (n0 - j)) > 1e-12:
            raise ContractError("orders must be n, n-1, n-2, ... without gaps")
        if a.fn is None:
            raise ContractError("asymptotic sums need symbol evaluators")
        if check and not check_symbol_estimates(a, a.n, max_order=1).passed:
            raise ContractError(f"input {j} fails its symbol estimates at order {a.n}")
    Ns, run = [], 0.0
    for a in symbols:
        run = max(run, symbol_constant(a))
        Ns.append(1.0 + run)

    def fn(x, xi, Ns=tuple(Ns), fns=tuple(a.fn for a in symbols)):
        xi = np.atleast_2d(xi)
        nrm = box_norm_xi(xi)
        out = np.zeros(len(xi), complex)
        for j, (N, f) in enumerate(zip(Ns, fns)):
            cut = 1.0 if j == 0 else (1.0 - chi_fn(nrm / N))
            out = out + cut * f(x, xi)
        return out

    a0 = symbols[0]
    return SampledSymbol(fn, n0, a0.J, a0.xs, a0.rays), Ns


def partial_difference_orders(total: SampledSymbol, symbols: Sequence[SampledSymbol], Ns: Sequence[float],
                              j_min: Optional[int] = None) -> List[float]:
    """Estimated order of total - (a_0 + ... + a_k) for k = 0 .. len-2, fitted beyond the cutoffs."""
    if j_min is None:
        j_min = max(2, int(math.ceil(math.log2(2 * max(Ns)))) + 1)
    out = []
    for k in range(len(symbols) - 1):
        fns = [a.fn for a in symbols[:k + 1]]
        diff = lambda x, xi, fns=fns: total.fn(x, xi) - sum(f(x, xi) for f in fns)
        d = SampledSymbol(diff, total.n - k - 1, total.J, total.xs, total.rays)
        out.append(estimate_order(d, j_min=j_min).n_hat)
    return out


# ---------------------------------------------------------------------------
# L^p probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LpReport:
    p: float
    ratios: Tuple[float, ...]
    max_ratio: float


def lp_boundedness_probe(T: GridOperator, p: float, seed: int = 0, n_random: int = 6) -> LpReport:
    if not p > 1:
        raise DomainError("p must exceed 1")
    g = T.grid
    wts = g.weights

    def norm(f):
        return float(np.sum(wts * np.abs(f) ** p) ** (1.0 / p))

    fams = []
    for r in (0.5, 0.25, 0.125):
        for cw, cs in ((0j, 0.0), (0.1 + 0.05j, 0.02), (-0.05j, -0.03)):
            dw, ds = mul_arrays(-cw, -cs, g.w, g.s)
            fams.append(default_bump(dw / r, ds / (r * r)))
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        fams.append(rng.standard_normal(g.size) + 1j * rng.standard_normal(g.size))
    ratios = []
    for f in fams:
        nf = norm(f)
        if nf > 0:
            ratios.append(norm(T.apply(f)) / nf)
    return LpReport(p, tuple(ratios), max(ratios))

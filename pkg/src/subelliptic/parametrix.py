"""Solution theory on the compact nilmanifold Gamma \\ H^1.

Gamma is the integer lattice {(m1 + i m2, k)}.  Left translation by its
generators gives the identifications

    (x + 1, y, t - 2y) ~ (x, y, t) ~ (x, y + 1, t + 2x) ~ (x, y, t + 1)

on the fundamental domain [0,1)^3, with w = x + iy and s = t.  The fields

    X = (1/2) d_x + y d_t,    Y = (1/2) d_y - x d_t

are left invariant, so they act on Gamma-invariant functions.  Derivatives
along their flows use fourth-order central differences in the flow
parameter; the flows move x (or y) by whole grid steps and t by a
y-dependent (or x-dependent) amount, which is applied exactly on the
periodic t-lines by trigonometric interpolation.

The contact form theta = dt + 2(x dy - y dx) has theta ^ d theta = 4 dx dy dt,
so each node carries weight 4/n^3 and the total volume is 4.  Convolution
kernels such as K are normalized against Lebesgue measure dx dy dt, which is
a quarter of that weight.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, DivergenceError, PreconditionError
from .hgroup import gauge_arrays, mul_arrays



# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NilGrid:
    """n^3 nodes (a/n, b/n, c/n) on the fundamental domain, flattened as (a n + b) n + c."""

    n: int

    @property
    def size(self) -> int:
        return self.n ** 3

    @property
    def weight(self) -> Fraction:
        """theta ^ d theta mass per node."""
        return Fraction(4, self.n ** 3)

    @property
    def volume(self) -> Fraction:
        return self.weight * self.size

    @property
    def lebesgue_weight(self) -> float:
        return 1.0 / self.n ** 3

    def index(self, a, b, c):
        n = self.n
        return (np.asarray(a) * n + np.asarray(b)) * n + np.asarray(c)

    def coords(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.n
        a, b, c = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
        return a.ravel() / n, b.ravel() / n, c.ravel() / n

    def indices(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.n
        a, b, c = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
        return a.ravel(), b.ravel(), c.ravel()

    def sample(self, f: Callable) -> np.ndarray:
        x, y, t = self.coords()
        return np.asarray(f(x, y, t), float) * np.ones(self.size)

    def identify_x(self, a, b, c):
        """Node reached from (a, b, c) by the x-identification (x + 1, y, t - 2y): index form."""
        n = self.n
        return np.asarray(a), np.asarray(b), (np.asarray(c) - 2 * np.asarray(b)) % n

    def identify_y(self, a, b, c):
        """Node reached from (a, b, c) by the y-identification (x, y + 1, t + 2x): index form."""
        n = self.n
        return np.asarray(a), np.asarray(b), (np.asarray(c) + 2 * np.asarray(a)) % n

    def reduce(self, a, b, c):
        """Bring integer node labels (any range) back to the fundamental domain."""
        n = self.n
        a, b, c = (np.asarray(v, dtype=np.int64) for v in (a, b, c))
        qa, a = np.divmod(a, n)
        # crossing x by qa: t picks up +2y per unit step back
        c = c + 2 * qa * b
        qb, b = np.divmod(b, n)
        c = c - 2 * qb * a
        return a, b, c % n


def build_nilgrid(n: int) -> NilGrid:
    if not isinstance(n, (int, np.integer)) or n < 8 or n % 2:
        raise ContractError(f"nilmanifold resolution must be an even integer >= 8, got {n}")
    return NilGrid(int(n))


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

@dataclass
class GridOperator:
    """Dense real or complex matrix acting on grid functions."""

    matrix: np.ndarray
    grid: NilGrid
    name: str = ""

    def __matmul__(self, other):
        if isinstance(other, GridOperator):
            _same(self, other)
            return GridOperator(self.matrix @ other.matrix, self.grid, f"{self.name}{other.name}")
        return self.matrix @ np.asarray(other)

    def __add__(self, other: "GridOperator") -> "GridOperator":
        _same(self, other)
        return GridOperator(self.matrix + other.matrix, self.grid)

    def __sub__(self, other: "GridOperator") -> "GridOperator":
        _same(self, other)
        return GridOperator(self.matrix - other.matrix, self.grid)

    def scaled(self, c) -> "GridOperator":
        return GridOperator(c * self.matrix, self.grid, self.name)

    def norm(self) -> float:
        return spectral_norm(self.matrix)

    def to_csv(self, path, tol: float = 0.0) -> None:
        rows, cols = np.nonzero(np.abs(self.matrix) > tol)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# operator={self.name} n={self.grid.n} size={self.grid.size}\n")
            fh.write("row,col,re,im\n")
            for r, c in zip(rows.tolist(), cols.tolist()):
                v = complex(self.matrix[r, c])
                fh.write(f"{r},{c},{v.real!r},{v.imag!r}\n")


def _same(a: GridOperator, b: GridOperator) -> None:
    if a.grid != b.grid:
        raise ContractError("operators live on different grids")


def identity(grid: NilGrid) -> GridOperator:
    return GridOperator(np.eye(grid.size), grid, "I")


def spectral_norm(M: np.ndarray, iters: int = 0) -> float:
    """Largest singular value; dense SVD up to 512 unknowns, power iteration beyond."""
    M = np.asarray(M)
    if iters == 0 and M.shape[0] <= 512:
        return float(np.linalg.norm(M, 2))
    rng = np.random.default_rng(0)
    v = rng.standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    s = 0.0
    for _ in range(iters or 200):
        u = M.conj().T @ (M @ v)
        nu = np.linalg.norm(u)
        if nu == 0:
            return 0.0
        v = u / nu
        s_new = math.sqrt(nu)
        if abs(s_new - s) <= 1e-12 * s_new:
            return s_new
        s = s_new
    return s


def _t_shift(n: int, delta: float) -> np.ndarray:
    """h with f(t_c + delta) = sum_c' h[(c - c') mod n] f(t_c'), trigonometric interpolation.

    Every Fourier mode, the Nyquist mode included, is multiplied by its full
    phase, so the shift is unitary and shifts compose exactly.
    """
    k = np.fft.fftfreq(n, 1.0 / n)
    k[n // 2] = n // 2
    return np.fft.ifft(np.exp(2j * math.pi * k * delta))


def flow_shift(grid: NilGrid, axis: str, step: int) -> np.ndarray:
    """Unitary matrix of f -> f(p exp(tau V)), tau = 2 step / n, V = X (axis 'x') or Y (axis 'y')."""
    n = grid.n
    N = grid.size
    a, b, c = grid.indices()
    if axis == "x":
        a2, b2, c2 = grid.reduce(a + step, b, c)
        num = 2 * step * b      # t-shift 2 step y / n, in units of 1/n^2
    elif axis == "y":
        a2, b2, c2 = grid.reduce(a, b + step, c)
        num = -2 * step * a
    else:
        raise ValueError(f"unknown flow axis {axis!r}")
    whole, frac = np.divmod(num, n)
    c0 = (c2 + whole) % n
    M = np.zeros((N, N), complex)
    cc = np.arange(n)
    for f in np.unique(frac):
        h = _t_shift(n, f / n ** 2)
        for r in np.nonzero(frac == f)[0]:
            M[r, grid.index(a2[r], b2[r], cc)] = h[(c0[r] - cc) % n]
    return M


# -(d/dtau)^2 with the five-point fourth-order stencil factors exactly as A^H A,
# A = (I - S)(P0 I + P1 S)/h, S the unit flow step (Fejer-Riesz factorization)
P0 = (1.0 + 2.0 / math.sqrt(3.0)) / 2.0
P1 = (1.0 - 2.0 / math.sqrt(3.0)) / 2.0


@dataclass
class FlowOps:
    """Difference operators along the X and Y flows on one grid."""

    grid: NilGrid
    S: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for ax in ("x", "y"):
            self.S[ax] = flow_shift(self.grid, ax, 1)

    @property
    def h(self) -> float:
        return 2.0 / self.grid.n

    def factor(self, axis: str) -> np.ndarray:
        """A with A^H A = minus the fourth-order second difference along the flow."""
        S = self.S[axis]
        I = np.eye(self.grid.size)
        return (I - S) @ (P0 * I + P1 * S) / self.h

    def first(self, axis: str) -> np.ndarray:
        """Fourth-order central first difference."""
        S = self.S[axis]
        Si = S.conj().T
        return (8.0 * (S - Si) - (S @ S - Si @ Si)) / (12.0 * self.h)

    def second(self, axis: str) -> np.ndarray:
        A = self.factor(axis)
        return -(A.conj().T @ A)


_OPS: Dict[int, FlowOps] = {}


def flow_ops(grid: NilGrid) -> FlowOps:
    if grid.n not in _OPS:
        _OPS[grid.n] = FlowOps(grid)
    return _OPS[grid.n]


# ---------------------------------------------------------------------------
# discretized sublaplacian with perturbation
# ---------------------------------------------------------------------------

PERTURBATION_TERMS = ("XX", "XY", "YY", "X", "Y")


@dataclass
class Perturbation:
    """Coefficients of a_XX X^2 + a_XY (XY + YX)/2 + a_YY Y^2 + b_X X + b_Y Y.

    Each coefficient is a function of (x, y, t) arrays and must be
    Gamma-invariant.
    """

    coeffs: Dict[str, Callable] = field(default_factory=dict)

    def __post_init__(self):
        bad = set(self.coeffs) - set(PERTURBATION_TERMS)
        if bad:
            raise ContractError(f"unknown perturbation terms {sorted(bad)}")


def check_invariant(f: Callable, samples: int = 64, tol: float = 1e-10, seed: int = 0) -> float:
    """Largest change of f under the three lattice identifications at random points."""
    rng = np.random.default_rng(seed)
    x, y, t = rng.uniform(-1.0, 1.0, (3, samples))
    base = np.asarray(f(x, y, t), complex)
    moved = [f(x + 1, y, t - 2 * y), f(x, y + 1, t + 2 * x), f(x, y, t + 1)]
    err = max(float(np.max(np.abs(np.asarray(m, complex) - base))) for m in moved)
    scale = max(1.0, float(np.max(np.abs(base))))
    if err > tol * scale:
        raise ContractError(f"coefficient is not Gamma-invariant (defect {err:.3e})")
    return err


def discretize_op(grid: NilGrid, eps: float = 0.0,
                  perturbation: Optional[Perturbation] = None) -> GridOperator:
    """L = -(X^2 + Y^2) on the grid plus eps times the perturbation."""
    if eps < 0:
        raise ContractError("eps must be nonnegative")
    ops = flow_ops(grid)
    L = -(ops.second("x") + ops.second("y"))
    if perturbation is not None:
        for fn in perturbation.coeffs.values():
            check_invariant(fn)
        if eps != 0.0:
            X, Y = ops.first("x"), ops.first("y")
            terms = {
                "XX": ops.second("x"),
                "XY": 0.5 * (X @ Y + Y @ X),
                "YY": ops.second("y"),
                "X": X,
                "Y": Y,
            }
            for key, fn in perturbation.coeffs.items():
                L = L + eps * (grid.sample(fn)[:, None] * terms[key])
    return GridOperator(L, grid, "L")


def mean_projection(grid: NilGrid) -> GridOperator:
    """Weighted average broadcast to every node; weights are equal, so every entry is 1/N."""
    N = grid.size
    return GridOperator(np.full((N, N), 1.0 / N), grid, "C")


def canonical_solution(grid: NilGrid, L: GridOperator) -> GridOperator:
    """K with L K + C = I and C K = K C = 0, from a dense solve of (L + C) K = I - C."""
    M = L.matrix
    sym = float(np.max(np.abs(M - M.conj().T)))
    if sym > 1e-9 * max(1.0, float(np.max(np.abs(M)))):
        raise ContractError(f"L is not self-adjoint (defect {sym:.3e})")
    C = mean_projection(grid).matrix
    I = np.eye(grid.size)
    Kh = np.linalg.solve(M + C, I - C)
    res = float(np.linalg.norm(M @ Kh + C - I, 2))
    if not np.isfinite(res) or res > 1e-6:
        raise DivergenceError(f"canonical solve failed, residual {res:.3e}")
    return GridOperator(Kh, grid, "K")


def canonical_residual(L: GridOperator, Kh: GridOperator) -> float:
    C = mean_projection(L.grid).matrix
    return float(np.linalg.norm(L.matrix @ Kh.matrix + C - np.eye(L.grid.size), 2))


# ---------------------------------------------------------------------------
# truncated fundamental solution
# ---------------------------------------------------------------------------

_GL48 = np.polynomial.legendre.leggauss(48)
_GL96 = np.polynomial.legendre.leggauss(96)


@dataclass(frozen=True)
class Truncation:
    """K cut off smoothly in the gauge: K_tr = g(rho)/(2 pi) with g' = -2 chi_r(rho)/rho^3.

    chi_r is 1 below inner*radius and 0 beyond radius, so K_tr equals K minus
    a constant near the origin and vanishes beyond the radius.  Since
    rho^-2 is the radial harmonic profile, delta - Delta_b K_tr is then a
    nonnegative density of unit mass, which keeps the parametrix remainder a
    contraction on mean-free functions.
    """

    radius: float = 0.4
    inner: float = 0.8

    def __post_init__(self):
        if not (0.0 < self.radius <= 0.5):
            raise ContractError("truncation radius must lie in (0, 1/2] to stay below the injectivity radius")
        if not (0.0 < self.inner < 1.0):
            raise ContractError("inner fraction must lie in (0, 1)")

    @property
    def r0(self) -> float:
        return self.inner * self.radius

    def _cut(self, u):
        from .psical import chi
        return chi(1.0 + (u - self.r0) / (self.radius - self.r0))

    def profile(self, rho) -> np.ndarray:
        """g(rho), with g = rho^-2 - const for rho below r0."""
        rho = np.asarray(rho, float)
        r0, r1 = self.r0, self.radius
        lo = np.clip(rho, r0, r1)
        x, w = _GL48
        mid, half = (lo + r1) / 2, (r1 - lo) / 2
        u = mid[..., None] + half[..., None] * x
        outer = np.sum(w * 2.0 * self._cut(u) / u ** 3, axis=-1) * half
        with np.errstate(divide="ignore"):
            inner = np.where(rho < r0, 1.0 / rho ** 2 - 1.0 / r0 ** 2, 0.0)
        return np.where(rho >= r1, 0.0, outer + inner)

    def __call__(self, w, s) -> np.ndarray:
        return self.profile(gauge_arrays(w, s)) / (2.0 * math.pi)

    def _defect(self, rho) -> np.ndarray:
        """(rho^-2 - g(rho))/(2 pi): bounded, constant below r0."""
        rho = np.asarray(rho, float)
        c0 = (1.0 / self.r0 ** 2 - float(self.profile(np.array(self.r0)))) / (2.0 * math.pi)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = (1.0 / rho ** 2 - self.profile(rho)) / (2.0 * math.pi)
        return np.where(rho < self.r0, c0, d)

    def t_transform(self, w2, k) -> np.ndarray:
        """int K_tr(w, s) e^{-2 pi i k s} ds at |w|^2 = w2 > 0 (real, even in k)."""
        w2, k = np.broadcast_arrays(np.asarray(w2, float), np.abs(np.asarray(k, float)))
        x, wt = _GL96
        r1 = self.radius
        S = np.sqrt(np.maximum(r1 ** 4 - w2 ** 2, 0.0))
        with np.errstate(divide="ignore"):
            U = np.arcsinh(S / w2)
        # s = w2 sinh(u) removes the near singularity of K
        u = U[..., None] * x
        kk = k[..., None]
        main = np.sum(wt * np.cos(2 * math.pi * kk * w2[..., None] * np.sinh(u)), -1) * U / (2 * math.pi)
        s = S[..., None] * x
        rho = (w2[..., None] ** 2 + s ** 2) ** 0.25
        corr = np.sum(wt * self._defect(rho) * np.cos(2 * math.pi * kk * s), -1) * S
        return np.where(w2 >= r1 ** 2, 0.0, main - corr)

    def t_transform_cell(self, h: float, k: float, m: int = 48) -> float:
        """Average of t_transform over the horizontal cell [-h/2, h/2]^2 (log singular at 0)."""
        x, w = np.polynomial.legendre.leggauss(m)
        phi, wphi = (x + 1) * math.pi / 8, w * math.pi / 8
        v, wv = (x + 1) / 2, w / 2
        total = 0.0
        for p, wp in zip(phi, wphi):
            rmax = h / 2 / math.cos(p)
            r = rmax * v ** 2
            total += wp * float(np.sum(wv * 2 * rmax * v * r * self.t_transform(r * r, k)))
        return 8.0 * total / (h * h)


# ---------------------------------------------------------------------------
# cutoff pairs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CutoffPair:
    """chi and chi_tilde as functions of (x, y); chi_tilde must be 1 on supp chi."""

    chi: Callable
    chi_tilde: Callable
    label: str = ""


def _circle_dist(x, c):
    d = np.mod(np.asarray(x, float) - c, 1.0)
    return np.minimum(d, 1.0 - d)


def _circle_partition(m: int):
    from .psical import chi

    def bump(a):
        return lambda x: chi(2.0 * m * _circle_dist(x, (a + 0.5) / m))

    bumps = [bump(a) for a in range(m)]

    def piece(a):
        return lambda x: bumps[a](x) / sum(b(x) for b in bumps)

    return [piece(a) for a in range(m)]


def _circle_plateau(m: int, a: int, margin: float, width: float):
    from .psical import chi
    reach = 1.0 / m + margin
    return lambda x: chi(1.0 + np.maximum(_circle_dist(x, (a + 0.5) / m) - reach, 0.0) / width)


def default_cutoffs(pieces_x: int = 4, pieces_y: int = 2, margin: float = 0.4,
                    width: float = 0.1) -> List[CutoffPair]:
    """Products of periodic partitions in x and y; chi_tilde = 1 within `margin` of supp chi.

    With the default margin equal to the truncation radius, the cutoff
    pairs reproduce the truncated kernel exactly near the diagonal.  On the
    unit quotient that margin already wraps around, so chi_tilde is 1
    everywhere; smaller margins bring commutator terms into R.
    """
    px, py = _circle_partition(pieces_x), _circle_partition(pieces_y)
    pairs = []
    for a in range(pieces_x):
        for b in range(pieces_y):
            tx = _circle_plateau(pieces_x, a, margin, width)
            ty = _circle_plateau(pieces_y, b, margin, width)
            pairs.append(CutoffPair(
                (lambda fx, fy: lambda x, y: fx(x) * fy(y))(px[a], py[b]),
                (lambda fx, fy: lambda x, y: fx(x) * fy(y))(tx, ty),
                f"x{a}y{b}"))
    return pairs


def check_cutoffs(grid: NilGrid, pairs: Sequence[CutoffPair], tol: float = 1e-12):
    """Partition-of-unity and plateau checks at the horizontal nodes; returns (chi, chi_tilde) arrays."""
    n = grid.n
    x, y = np.meshgrid(np.arange(n) / n, np.arange(n) / n, indexing="ij")
    x, y = x.ravel(), y.ravel()
    ch = np.array([np.asarray(p.chi(x, y), float) * np.ones_like(x) for p in pairs])
    ct = np.array([np.asarray(p.chi_tilde(x, y), float) * np.ones_like(x) for p in pairs])
    defect = float(np.max(np.abs(ch.sum(axis=0) - 1.0)))
    if defect > tol:
        raise ContractError(f"cutoffs are not a partition of unity (defect {defect:.3e})")
    plateau = float(np.max(np.where(ch > 0, np.abs(ct - 1.0), 0.0)))
    if plateau > tol:
        raise ContractError(f"chi_tilde differs from 1 on supp chi (defect {plateau:.3e})")
    return ch, ct


# ---------------------------------------------------------------------------
# frozen-coefficient parametrix
# ---------------------------------------------------------------------------

def _pair_geometry(grid: NilGrid, reps: str):
    """Horizontal part w and t-offset sigma of Theta = (gamma q)^-1 p for every pair of horizontal nodes.

    The t-component of Theta is sigma + (c_p - c_q)/n.  reps = 'min' keeps
    the lattice translate with the shortest horizontal part; reps = 'all'
    returns all nine translates with m in {-1, 0, 1}^2.
    """
    n = grid.n
    a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    wq = (a.ravel() + 1j * b.ravel()) / n
    wp = wq
    out = []
    for m1 in (-1, 0, 1):
        for m2 in (-1, 0, 1):
            gw, gs = mul_arrays(m1 + 1j * m2, 0.0, wq[None, :], 0.0)
            w, s = mul_arrays(-gw, -gs, wp[:, None], 0.0)
            out.append((w, s))
    if reps == "all":
        return out
    W, S = out[0]
    best = np.abs(W)
    for w, s in out[1:]:
        sel = np.abs(w) < best - 1e-12
        W, S, best = np.where(sel, w, W), np.where(sel, s, S), np.where(sel, np.abs(w), best)
    return [(W, S)]


def truncated_kernel_matrix(grid: NilGrid, trunc: Truncation = Truncation(), reps: str = "min") -> np.ndarray:
    """Matrix of f -> int K_tr(q^-1 p) f(q) dq on grid functions.

    In t the integral is taken exactly against the trigonometric interpolant
    of f, so each t-block is circulant with symbol given by the t-transform
    of K_tr; in x and y the nodes are used directly, with the horizontal cell
    average on the diagonal where the t-transform is log singular.
    reps = 'all' sums the nine nearest lattice translates instead of taking
    the nearest one, which is the periodization cross-check.
    """
    n = grid.n
    ks = np.fft.fftfreq(n, 1.0 / n)
    ks[n // 2] = n // 2
    kabs = np.arange(n // 2 + 1)
    cell = np.array([trunc.t_transform_cell(1.0 / n, k) for k in kabs])
    coef = np.zeros((n * n, n * n, n), complex)
    for w, sig in _pair_geometry(grid, reps):
        q = np.rint(np.abs(w) ** 2 * n * n).astype(np.int64)
        uq, inv = np.unique(q, return_inverse=True)
        tab = trunc.t_transform(np.maximum(uq, 1)[:, None] / n ** 2, kabs[None, :])
        tab[uq == 0] = cell
        vals = tab[inv.reshape(q.shape)][..., np.abs(ks).astype(int)]
        coef += vals * np.exp(2j * math.pi * ks * sig[..., None])
    # t-block entry for offset d = c_p - c_q: (1/n) sum_k coef_k e^{2 pi i k d / n}
    h = np.fft.ifft(coef, axis=-1)
    d = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    blocks = h[:, :, d]                       # (P, Q, c_p, c_q)
    K = blocks.transpose(0, 2, 1, 3).reshape(grid.size, grid.size)
    return K / n ** 2


@dataclass
class Parametrix:
    K0: GridOperator
    R: GridOperator
    norm_R: float
    trunc: Truncation
    cutoffs: List[CutoffPair]

    def report(self) -> Dict[str, float]:
        return {"norm_R": self.norm_R, "radius": self.trunc.radius,
                "inner": self.trunc.inner, "pairs": len(self.cutoffs)}


def frozen_parametrix(grid: NilGrid, L: GridOperator, trunc: Truncation = Truncation(),
                      cutoffs: Optional[Sequence[CutoffPair]] = None,
                      kernel: Optional[np.ndarray] = None) -> Parametrix:
    """K0 = sum_i chi_tilde_i(p) K_tr(Theta(p, q)) chi_i(q) and R = I - C - L K0.

    C is subtracted because L K0 has mean-free range, so I - L K0 alone has
    norm at least 1 on the constants.
    """
    pairs = list(cutoffs) if cutoffs is not None else default_cutoffs(margin=trunc.radius)
    ch, ct = check_cutoffs(grid, pairs)
    Kb = truncated_kernel_matrix(grid, trunc) if kernel is None else kernel
    n = grid.n
    wpair = ct.T @ ch                          # sum_i chi_tilde_i(P) chi_i(Q) on horizontal nodes
    K0 = Kb * np.repeat(np.repeat(wpair, n, axis=0), n, axis=1)
    C = mean_projection(grid).matrix
    R = np.eye(grid.size) - C - L.matrix @ K0
    return Parametrix(GridOperator(K0, grid, "K0"), GridOperator(R, grid, "R"),
                      spectral_norm(R), trunc, pairs)


def remainder_norm(grid: NilGrid, eps: float, perturbation: Optional[Perturbation],
                   K0: GridOperator) -> float:
    L = discretize_op(grid, eps, perturbation)
    C = mean_projection(grid).matrix
    return spectral_norm(np.eye(grid.size) - C - L.matrix @ K0.matrix)


def find_eps0(grid: NilGrid, perturbation: Perturbation, K0: GridOperator,
              bound: float = 0.5, eps_max: float = 1.0, steps: int = 20) -> Tuple[float, float]:
    """Largest tested eps with ||R(eps)|| <= bound, by bisection on [0, eps_max].

    Returns (eps0, ||R(eps0)||); eps0 = -1 when even eps = 0 misses the bound.
    """
    r0 = remainder_norm(grid, 0.0, perturbation, K0)
    if r0 > bound:
        return -1.0, r0
    r_hi = remainder_norm(grid, eps_max, perturbation, K0)
    if r_hi <= bound:
        return eps_max, r_hi
    lo, hi, r_lo = 0.0, eps_max, r0
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        r = remainder_norm(grid, mid, perturbation, K0)
        if r <= bound:
            lo, r_lo = mid, r
        else:
            hi = mid
    return lo, r_lo


# ---------------------------------------------------------------------------
# Neumann series
# ---------------------------------------------------------------------------

@dataclass
class NeumannTail:
    E: GridOperator
    norm_R: float
    residuals: List[float]


def neumann_tail(R: GridOperator, k: int, L: Optional[GridOperator] = None,
                 K0: Optional[GridOperator] = None) -> NeumannTail:
    """E_k = I + R + ... + R^k with residuals ||R^{j+1}|| for j = 0..k.

    When L and K0 are given the residual is measured from its definition
    ||I - C - L K0 E_j|| instead.
    """
    if k < 0:
        raise ContractError("k must be nonnegative")
    M = R.matrix
    norm = spectral_norm(M)
    if norm >= 1.0:
        raise DivergenceError(f"||R|| = {norm:.6f} >= 1, the Neumann series does not converge")
    grid = R.grid
    I = np.eye(grid.size)
    E = I.astype(M.dtype)
    P = I.astype(M.dtype)
    residuals = []
    C = mean_projection(grid).matrix
    for j in range(k + 1):
        if j > 0:
            P = P @ M
            E = E + P
        if L is not None and K0 is not None:
            residuals.append(spectral_norm(I - C - L.matrix @ (K0.matrix @ E)))
        else:
            residuals.append(spectral_norm(P @ M))
    return NeumannTail(GridOperator(E, grid, "E"), norm, residuals)


@dataclass
class NeumannSolve:
    u: np.ndarray
    terms: int
    residual: float
    splitting_gap: float
    norm_R: float


def _series(M: np.ndarray, f: np.ndarray, tol: float, max_terms: int) -> Tuple[np.ndarray, int]:
    u = f.astype(complex)
    term = u.copy()
    scale = max(float(np.linalg.norm(f)), 1e-300)
    for j in range(1, max_terms + 1):
        term = -(M @ term)
        u = u + term
        if np.linalg.norm(term) <= tol * scale:
            return u, j
    raise DivergenceError(f"Neumann series did not reach tolerance in {max_terms} terms")


def neumann_invert(R, f, tol: float = 1e-14, max_terms: int = 400) -> NeumannSolve:
    """u = sum_j (-R)^j f, checked against both splittings of (I + R)^-1.

    (I + R)^-1 = I - R + (I + R)^-1 R^2 = I - R + R^2 (I + R)^-1.
    """
    M = R.matrix if isinstance(R, GridOperator) else np.asarray(R)
    f = np.asarray(f)
    norm = spectral_norm(M)
    if norm > 0.5 + 1e-12:  # roundoff allowance at exactly 1/2
        raise PreconditionError(
            f"||R|| = {norm:.6f} exceeds 1/2; reduce eps below eps0 so the series is safe")
    u, terms = _series(M, f, tol, max_terms)
    Rf = M @ f
    left, _ = _series(M, M @ Rf, tol, max_terms)
    u1 = f - Rf + left
    u2 = f - Rf + M @ (M @ _series(M, f, tol, max_terms)[0])
    gap = max(float(np.linalg.norm(u1 - u)), float(np.linalg.norm(u2 - u)),
              float(np.linalg.norm(u1 - u2)))
    residual = float(np.linalg.norm(u + M @ u - f))
    return NeumannSolve(u, terms, residual, gap, norm)


# ---------------------------------------------------------------------------
# gradient commutation
# ---------------------------------------------------------------------------

@dataclass
class CommutationReport:
    defect: float
    bound: float
    c_term: float
    canonical_residual: float

    @property
    def ok(self) -> bool:
        return self.defect <= self.bound


def gradient(grid: NilGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Discrete X and Y with X^H X + Y^H Y = L at eps = 0."""
    ops = flow_ops(grid)
    return ops.factor("x"), ops.factor("y")


def verify_gradient_commutation(grid: NilGrid, Kh: GridOperator, C: GridOperator,
                                T: GridOperator, W: Optional[np.ndarray] = None) -> CommutationReport:
    """Check W T = (W T K X^H) X + (W T K Y^H) Y + W T C.

    This is W T (K L + C) = W T with L = X^H X + Y^H Y, so the defect is
    bounded by ||W T|| ||K L + C - I||.  The C term vanishes when T 1 = 0.
    W defaults to the stacked horizontal gradient (X; Y).
    """
    X, Y = gradient(grid)
    if W is None:
        W = np.vstack([X, Y])
    WT = W @ T.matrix
    K = Kh.matrix
    rhs = (WT @ K @ X.conj().T) @ X + (WT @ K @ Y.conj().T) @ Y + WT @ C.matrix
    L = X.conj().T @ X + Y.conj().T @ Y
    adj = float(np.linalg.norm(K @ L + C.matrix - np.eye(grid.size), 2))
    defect = float(np.max(np.abs(WT - rhs)))
    bound = 10.0 * max(adj, 1e-15) * max(float(np.linalg.norm(WT, 2)), 1.0)
    return CommutationReport(defect, bound, float(np.max(np.abs(WT @ C.matrix))), adj)

"""Exact pseudohermitian geometry of the model manifolds S^3 and H^1.

Functions live in a polynomial ring over Q(i, sqrt2) in ambient coordinates,
optionally reduced modulo a principal ideal (|z1|^2 + |z2|^2 - 1 for S^3).
Vector fields are derivations of the ambient ring that preserve the ideal.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Callable, Dict, Optional, Sequence, Tuple

from . import casym
from .casym import SymExpr, psi_pow, PSI_P, G_P, ZBAR, derive, apply_chain
from .coeff import I, INV_SQRT2, ONE, Coeff, CoeffLike
from .errors import ContractError, DomainError

Exps = Tuple[int, ...]


class CoordRing:
    """Polynomial ring with named variables, a conjugation and an optional reducer."""

    def __init__(self, names: Sequence[str], conj_perm: Sequence[int],
                 reducer: Optional[Callable[[Dict[Exps, Coeff]], Dict[Exps, Coeff]]] = None,
                 name: str = ""):
        self.names = tuple(names)
        self.n = len(names)
        self.conj_perm = tuple(conj_perm)
        self.reducer = reducer
        self.name = name

    def var(self, name: str) -> "RPoly":
        i = self.names.index(name)
        e = [0] * self.n
        e[i] = 1
        return RPoly(self, {tuple(e): ONE})

    def const(self, c: CoeffLike) -> "RPoly":
        return RPoly(self, {(0,) * self.n: Coeff.of(c)})

    def zero(self) -> "RPoly":
        return RPoly(self, {})

    def __repr__(self) -> str:
        return f"CoordRing({self.name or ','.join(self.names)})"


def _add_into(out: Dict[Exps, Coeff], e: Exps, c: Coeff) -> None:
    v = out.get(e)
    v = c if v is None else v + c
    if v.is_zero():
        out.pop(e, None)
    else:
        out[e] = v


class RPoly:
    """Element of a CoordRing in normal form."""

    __slots__ = ("ring", "t")

    def __init__(self, ring: CoordRing, terms: Dict[Exps, Coeff], reduced: bool = False):
        self.ring = ring
        terms = {e: c for e, c in terms.items() if not c.is_zero()}
        if ring.reducer is not None and not reduced:
            terms = ring.reducer(terms)
        self.t = terms

    def _coerce(self, other) -> "RPoly":
        if isinstance(other, RPoly):
            if other.ring is not self.ring:
                raise ContractError("ring mismatch")
            return other
        return self.ring.const(other)

    def __add__(self, other) -> "RPoly":
        other = self._coerce(other)
        out = dict(self.t)
        for e, c in other.t.items():
            _add_into(out, e, c)
        return RPoly(self.ring, out, reduced=True)

    __radd__ = __add__

    def __neg__(self) -> "RPoly":
        return RPoly(self.ring, {e: -c for e, c in self.t.items()}, reduced=True)

    def __sub__(self, other) -> "RPoly":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "RPoly":
        return self._coerce(other) - self

    def __mul__(self, other) -> "RPoly":
        other = self._coerce(other)
        out: Dict[Exps, Coeff] = {}
        for e1, c1 in self.t.items():
            for e2, c2 in other.t.items():
                _add_into(out, tuple(a + b for a, b in zip(e1, e2)), c1 * c2)
        return RPoly(self.ring, out)

    __rmul__ = __mul__

    def diff(self, i: int) -> "RPoly":
        out: Dict[Exps, Coeff] = {}
        for e, c in self.t.items():
            if e[i]:
                e2 = list(e)
                e2[i] -= 1
                _add_into(out, tuple(e2), c.scale(e[i]))
        return RPoly(self.ring, out)

    def conj(self) -> "RPoly":
        p = self.ring.conj_perm
        out = {}
        for e, c in self.t.items():
            e2 = [0] * len(e)
            for i, k in enumerate(e):
                e2[p[i]] = k
            out[tuple(e2)] = c.conj()
        return RPoly(self.ring, out)

    def is_zero(self) -> bool:
        return not self.t

    def is_const(self) -> bool:
        return all(not any(e) for e in self.t)

    def const_value(self) -> Coeff:
        if not self.is_const():
            raise DomainError("not a constant")
        return self.t.get((0,) * self.ring.n, Coeff())

    def __eq__(self, other) -> bool:
        try:
            other = self._coerce(other)
        except ContractError:
            return False
        return self.t == other.t

    def __hash__(self) -> int:
        return hash(frozenset(self.t.items()))

    def __repr__(self) -> str:
        if not self.t:
            return "0"
        parts = []
        for e in sorted(self.t, key=lambda e: (sum(e), e)):
            mono = "*".join(f"{n}^{k}" if k > 1 else n for n, k in zip(self.ring.names, e) if k)
            parts.append(f"{self.t[e]}" + (f"*{mono}" if mono else ""))
        return " + ".join(parts)


def _sphere_reducer(terms: Dict[Exps, Coeff]) -> Dict[Exps, Coeff]:
    # variables (z1, z2, zb1, zb2); rewrite z1*zb1 -> 1 - z2*zb2
    out: Dict[Exps, Coeff] = {}
    for e, c in terms.items():
        m = min(e[0], e[2])
        if m == 0:
            _add_into(out, e, c)
            continue
        for j in range(m + 1):
            coef = c.scale(comb(m, j) * (-1) ** j)
            _add_into(out, (e[0] - m, e[1] + j, e[2] - m, e[3] + j), coef)
    return out


S3_RING = CoordRing(("z1", "z2", "zb1", "zb2"), (2, 3, 0, 1), _sphere_reducer, name="S3")
H1_RING = CoordRing(("w", "wb", "s"), (1, 0, 2), None, name="H1")


class VField:
    """Derivation sum_v coeff[v] d/d(var v) of a CoordRing."""

    __slots__ = ("ring", "c")

    def __init__(self, ring: CoordRing, coeffs: Sequence[RPoly]):
        if len(coeffs) != ring.n:
            raise ContractError("coefficient count does not match the ring")
        self.ring = ring
        self.c = tuple(ring.const(x) if not isinstance(x, RPoly) else x for x in coeffs)
        for x in self.c:
            if x.ring is not ring:
                raise ContractError("ring mismatch")

    def __call__(self, f: RPoly) -> RPoly:
        if f.ring is not self.ring:
            raise ContractError("ring mismatch")
        out = self.ring.zero()
        for i, ci in enumerate(self.c):
            if not ci.is_zero():
                out = out + ci * f.diff(i)
        return out

    def __add__(self, other: "VField") -> "VField":
        _same(self, other)
        return VField(self.ring, [a + b for a, b in zip(self.c, other.c)])

    def __sub__(self, other: "VField") -> "VField":
        _same(self, other)
        return VField(self.ring, [a - b for a, b in zip(self.c, other.c)])

    def __neg__(self) -> "VField":
        return VField(self.ring, [-a for a in self.c])

    def times(self, f) -> "VField":
        f = f if isinstance(f, RPoly) else self.ring.const(f)
        return VField(self.ring, [f * a for a in self.c])

    def conj(self) -> "VField":
        p = self.ring.conj_perm
        out = [None] * self.ring.n
        for i, ci in enumerate(self.c):
            out[p[i]] = ci.conj()
        return VField(self.ring, out)

    def is_zero(self) -> bool:
        return all(x.is_zero() for x in self.c)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VField) or other.ring is not self.ring:
            return False
        return all(a == b for a, b in zip(self.c, other.c))

    def __repr__(self) -> str:
        return "VField(" + ", ".join(f"{n}: {c}" for n, c in zip(self.ring.names, self.c) if not c.is_zero()) + ")"


def _same(a: VField, b: VField) -> None:
    if a.ring is not b.ring:
        raise ContractError("ring mismatch")


def commutator(V1: VField, V2: VField) -> VField:
    """[V1, V2] with coefficients V1(c2) - V2(c1), reduced."""
    _same(V1, V2)
    return VField(V1.ring, [V1(b) - V2(a) for a, b in zip(V1.c, V2.c)])


@dataclass(frozen=True)
class OneForm:
    ring: CoordRing
    c: Tuple[RPoly, ...]

    def __call__(self, V: VField) -> RPoly:
        out = self.ring.zero()
        for a, b in zip(self.c, V.c):
            out = out + a * b
        return out

    def conj(self) -> "OneForm":
        p = self.ring.conj_perm
        out = [None] * self.ring.n
        for i, ci in enumerate(self.c):
            out[p[i]] = ci.conj()
        return OneForm(self.ring, tuple(out))

    def times(self, f) -> "OneForm":
        f = f if isinstance(f, RPoly) else self.ring.const(f)
        return OneForm(self.ring, tuple(f * a for a in self.c))


@dataclass(frozen=True)
class PHFrame:
    """Frame Z, Zbar = conj(Z), T with dual coframe theta1, conj(theta1), theta."""

    ring: CoordRing
    Z: VField
    T: VField
    theta: OneForm
    theta1: OneForm
    name: str = ""

    @property
    def Zbar(self) -> VField:
        return self.Z.conj()

    @property
    def theta1bar(self) -> OneForm:
        return self.theta1.conj()

    @property
    def h(self) -> RPoly:
        """h_{1 1bar} = <Zbar, Zbar>, read off from d theta = i h theta1 ^ theta1bar."""
        return I_r(self.ring) * self.theta(commutator(self.Z, self.Zbar))

    def with_T(self, T: VField, name: str = "") -> "PHFrame":
        return PHFrame(self.ring, self.Z, T, self.theta, self.theta1, name or self.name)


def I_r(ring: CoordRing) -> RPoly:
    return ring.const(I)


def sphere_frame(phase: CoeffLike = 1) -> PHFrame:
    """Standard frame on S^3, optionally with Z multiplied by a unit constant."""
    R = S3_RING
    z1, z2, zb1, zb2 = (R.var(n) for n in R.names)
    zero = R.zero()
    c = Coeff.of(phase)
    Z = VField(R, [zb2 * INV_SQRT2, -zb1 * INV_SQRT2, zero, zero]).times(c)
    half_over_i = Coeff.gauss(0, Fraction(-1, 2))  # 1/(2i)
    T = VField(R, [-z1 * half_over_i, -z2 * half_over_i, zb1 * half_over_i, zb2 * half_over_i])
    inv_i = Coeff.gauss(0, -1)
    theta = OneForm(R, (zb1 * inv_i, zb2 * inv_i, -z1 * inv_i, -z2 * inv_i))
    sq2 = Coeff.monomial(1, sqrt2=1)
    theta1 = OneForm(R, (z2 * sq2, -z1 * sq2, zero, zero)).times(c.conj())
    return PHFrame(R, Z, T, theta, theta1, name="S3")


def heisenberg_frame() -> PHFrame:
    R = H1_RING
    w, wb, s = (R.var(n) for n in R.names)
    zero = R.zero()
    Z = VField(R, [R.const(INV_SQRT2), zero, wb * (I * INV_SQRT2)])
    T = VField(R, [zero, zero, R.const(1)])
    theta = OneForm(R, (wb * Coeff.gauss(0, -1), w * I, R.const(1)))
    sq2 = Coeff.monomial(1, sqrt2=1)
    theta1 = OneForm(R, (R.const(sq2), zero, zero))
    return PHFrame(R, Z, T, theta, theta1, name="H1")


def decompose(V: VField, frame: PHFrame) -> Tuple[RPoly, RPoly, RPoly]:
    """(a, b, c) with V = a Z + b Zbar + c T modulo the ideal."""
    a = frame.theta1(V)
    b = frame.theta1bar(V)
    c = frame.theta(V)
    resid = V - frame.Z.times(a) - frame.Zbar.times(b) - frame.T.times(c)
    if not resid.is_zero():
        raise ContractError(f"field is not expressible in the frame; residual {resid!r}")
    return a, b, c


def pi_minus(V: VField, frame: PHFrame) -> RPoly:
    """Coefficient of Zbar in V."""
    return decompose(V, frame)[1]


def verify_reeb(frame: PHFrame) -> bool:
    if not frame.theta(frame.T) == 1:
        return False
    return (frame.theta(commutator(frame.T, frame.Z)).is_zero()
            and frame.theta(commutator(frame.T, frame.Zbar)).is_zero())


@dataclass
class Connection:
    """Tanaka-Webster data: nabla_X Zbar = omega_bar(X) Zbar for X in {T, Z, Zbar}."""

    frame: PHFrame
    T_Zbar: RPoly
    Z_Zbar: RPoly
    Zbar_Zbar: RPoly

    # nabla_X Z = omega(X) Z, with omega(X) = conj(omega_bar(conj X))
    @property
    def omega_Z(self) -> RPoly:
        return self.Zbar_Zbar.conj()

    @property
    def omega_Zbar(self) -> RPoly:
        return self.Z_Zbar.conj()

    @property
    def omega_T(self) -> RPoly:
        return self.T_Zbar.conj()

    def omega(self, X: VField) -> RPoly:
        a, b, c = decompose(X, self.frame)
        return a * self.omega_Z + b * self.omega_Zbar + c * self.omega_T

    def omega_bar(self, X: VField) -> RPoly:
        a, b, c = decompose(X, self.frame)
        return a * self.Z_Zbar + b * self.Zbar_Zbar + c * self.T_Zbar

    def nabla_Zbar(self, X: VField) -> VField:
        return self.frame.Zbar.times(self.omega_bar(X))

    def nabla_Z(self, X: VField) -> VField:
        return self.frame.Z.times(self.omega(X))


def _require_constant_h(frame: PHFrame) -> RPoly:
    h = frame.h
    if not h.is_const() or h.is_zero():
        raise DomainError("only frames with constant <Zbar, Zbar> are supported")
    return h


def tanaka_webster(frame: PHFrame) -> Connection:
    """nabla_T Zbar = pi_-[T, Zbar]; nabla_Z Zbar = pi_-[Z, Zbar]; nabla_Zbar Zbar from metric compatibility."""
    _require_constant_h(frame)
    t = pi_minus(commutator(frame.T, frame.Zbar), frame)
    b = pi_minus(commutator(frame.Z, frame.Zbar), frame)
    # <Zbar, beta Zbar> = conj(beta) h = Z h - <pi_-[Z, Zbar], Zbar> = -b h  (h constant)
    beta = -(b.conj())
    return Connection(frame, t, b, beta)


def torsion(frame: PHFrame) -> RPoly:
    """A with Tor(T, Zbar) = -pi_+[T, Zbar] = A Z."""
    if not verify_reeb(frame):
        raise ContractError("T is not the Reeb field of the frame")
    a, _, _ = decompose(commutator(frame.T, frame.Zbar), frame)
    return -a


def torsion_Z_Zbar(conn: Connection) -> VField:
    """Tor(Z, Zbar) = nabla_Z Zbar - nabla_Zbar Z - [Z, Zbar]."""
    f = conn.frame
    return conn.nabla_Zbar(f.Z) - conn.nabla_Z(f.Zbar) - commutator(f.Z, f.Zbar)


def scalar_curvature(frame: PHFrame) -> RPoly:
    """R from Omega(Z, Zbar) Z = R <Zbar, Zbar> Z."""
    h = _require_constant_h(frame)
    conn = tanaka_webster(frame)
    Z, Zb = frame.Z, frame.Zbar
    coef = Z(conn.omega_Zbar) - Zb(conn.omega_Z) - conn.omega(commutator(Z, Zb))
    # Omega(Z, Zbar) Z = coef * Z  (the omega*omega products cancel)
    omegaZ = Z.times(coef)
    a, b, c = decompose(omegaZ, frame)
    if not (b.is_zero() and c.is_zero()):
        raise ContractError("Omega(Z, Zbar)Z is not proportional to Z")
    inv_h = h.const_value().inverse()
    return a * inv_h


def metric_compatibility_defect(conn: Connection, X: VField) -> RPoly:
    """X<Zbar,Zbar> - <nabla_X Zbar, Zbar> - <Zbar, nabla_Xbar Zbar>, hermitian in the first slot."""
    h = conn.frame.h
    lhs = X(h)
    rhs = conn.omega_bar(X) * h + conn.omega_bar(X.conj()).conj() * h
    return lhs - rhs


def tangency_defects(frame: PHFrame) -> Dict[str, bool]:
    """True for each frame field that annihilates |z1|^2+|z2|^2-1 modulo the ideal (always for H1)."""
    R = frame.ring
    out = {}
    if R is S3_RING:
        z1, z2, zb1, zb2 = (R.var(n) for n in R.names)
        unreduced = RPoly(R, {(1, 0, 1, 0): ONE, (0, 1, 0, 1): ONE, (0, 0, 0, 0): -ONE}, reduced=True)
        for name, V in (("Z", frame.Z), ("Zbar", frame.Zbar), ("T", frame.T)):
            out[name] = V(unreduced).is_zero()
    else:
        for name in ("Z", "Zbar", "T"):
            out[name] = True
    return out


# ---------------------------------------------------------------------------
# conformal Kohn Laplacian identity on H^1 (SymExpr class)
# ---------------------------------------------------------------------------

def conf_kohn_residual(u) -> SymExpr:
    """LHS - RHS for box_b u = |psi|^2 psi box_b(psi^-1 u) with G^2 = 1/(psi psib)."""
    u = SymExpr.of(u)
    G2 = psi_pow(1, 1)
    Ginv4 = SymExpr.of(G_P * G_P)
    lhs = -(Ginv4 * derive(casym.Z, G2 * derive(ZBAR, u)))
    weight = SymExpr.of(PSI_P * PSI_P * casym.PSIB_P)
    rhs = weight * (-apply_chain([casym.Z, ZBAR], psi_pow(1) * u))
    return lhs - rhs

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from subelliptic import parametrix as px
from subelliptic.errors import ContractError, DivergenceError, PreconditionError


@pytest.fixture(scope="module")
def g8():
    return px.build_nilgrid(8)


@pytest.fixture(scope="module")
def L8(g8):
    return px.discretize_op(g8)


@pytest.fixture(scope="module")
def C8(g8):
    return px.mean_projection(g8)


@pytest.fixture(scope="module")
def K8(g8, L8):
    return px.canonical_solution(g8, L8)


@pytest.fixture(scope="module")
def P8(g8, L8):
    return px.frozen_parametrix(g8, L8)


def theta(x, y, t):
    """Gamma-invariant function in the lowest Landau level of t-frequency 1 (eigenvalue 2 pi)."""
    tot = 0
    for k in range(-4, 5):
        tot = tot + np.exp(-4 * np.pi * (x + k) ** 2) * np.exp(-8j * np.pi * k * y)
    return np.exp(2j * np.pi * t) * np.exp(-4j * np.pi * x * y) * tot


def trig(x, y, t):
    return np.sin(2 * np.pi * x) + np.cos(2 * np.pi * y) + 0 * t


def test_build_nilgrid(g8):
    assert g8.size == 512
    assert g8.volume == 4
    for bad in (7, 6, 9, 8.0):
        with pytest.raises(ContractError):
            px.build_nilgrid(bad)


def test_identification_round_trip(g8):
    a, b, c = g8.indices()
    a2, b2, c2 = a, b, c
    for _ in range(g8.n):
        a2, b2, c2 = g8.identify_x(a2, b2, c2)
    assert np.array_equal(c2, c)
    a3, b3, c3 = g8.reduce(a + g8.n, b, c)
    assert np.array_equal(c3, (c + 2 * b) % g8.n) and np.array_equal(a3, a)
    a4, b4, c4 = g8.reduce(a, b + g8.n, c)
    assert np.array_equal(c4, (c - 2 * a) % g8.n)


def test_test_functions_are_invariant():
    px.check_invariant(theta)
    px.check_invariant(trig)
    with pytest.raises(ContractError):
        px.check_invariant(lambda x, y, t: np.sin(2 * np.pi * t) * np.cos(np.pi * x))


def test_flow_shifts_are_unitary(g8):
    for ax in ("x", "y"):
        S = px.flow_shift(g8, ax, 1)
        assert np.allclose(S.conj().T @ S, np.eye(g8.size), atol=1e-12)


def test_L_basic_properties(g8, L8):
    assert np.max(np.abs(L8 @ np.ones(g8.size))) <= 1e-10
    M = L8.matrix
    assert np.max(np.abs(M - M.conj().T)) <= 1e-12
    assert np.linalg.eigvalsh(M).min() >= -1e-10


def test_L_on_trig_and_theta(g8, L8):
    x, y, t = g8.coords()
    f = trig(x, y, t)
    assert np.max(np.abs(L8 @ f - np.pi ** 2 * f)) <= 0.1
    h = theta(x, y, t)
    assert np.max(np.abs(L8 @ h - 2 * np.pi * h)) <= 0.3 * np.max(np.abs(h))
    # the lowest nonzero eigenvalue approximates the Landau level 2 pi
    ev = np.linalg.eigvalsh(L8.matrix)
    assert ev[1] == pytest.approx(2 * np.pi, rel=0.02)


def test_L_stencil_converges_at_fourth_order():
    errs = []
    for n in (8, 12):
        g = px.build_nilgrid(n)
        x, y, t = g.coords()
        f = trig(x, y, t)
        errs.append(np.max(np.abs(px.discretize_op(g) @ f - np.pi ** 2 * f)))
    assert errs[0] / errs[1] >= 0.8 * 1.5 ** 4


def test_perturbation_contract(g8):
    with pytest.raises(ContractError):
        px.discretize_op(g8, -0.1)
    with pytest.raises(ContractError):
        px.Perturbation({"ZZ": trig})
    bad = px.Perturbation({"X": lambda x, y, t: x})
    with pytest.raises(ContractError):
        px.discretize_op(g8, 0.1, bad)


def test_mean_projection(g8, C8):
    x, y, t = g8.coords()
    assert np.allclose(C8 @ np.ones(g8.size), 1.0)
    assert np.max(np.abs(C8 @ np.sin(2 * np.pi * x))) <= 1e-14
    assert np.max(np.abs(C8.matrix @ C8.matrix - C8.matrix)) <= 1e-15


def test_canonical_solution(g8, L8, C8, K8):
    assert px.canonical_residual(L8, K8) <= 1e-8
    assert np.max(np.abs(K8 @ np.ones(g8.size))) <= 1e-12
    adj = K8.matrix @ L8.matrix + C8.matrix - np.eye(g8.size)
    assert np.linalg.norm(adj, 2) <= 1e-8
    assert np.max(np.abs(C8.matrix @ K8.matrix)) <= 1e-12
    assert np.max(np.abs(K8.matrix @ C8.matrix)) <= 1e-12


def test_canonical_solution_rejects_non_self_adjoint(g8, L8):
    bad = px.GridOperator(L8.matrix + np.triu(np.ones((g8.size, g8.size))), g8, "L")
    with pytest.raises(ContractError):
        px.canonical_solution(g8, bad)


def test_truncation_profile():
    tr = px.Truncation()
    rho = np.array([0.05, 0.1, 0.2, 0.3])
    below = tr.profile(rho) - rho ** -2.0
    assert np.ptp(below) <= 1e-9
    assert np.all(tr.profile(np.array([0.4, 0.45, 1.0])) == 0)
    assert np.all(np.diff(tr.profile(np.linspace(0.05, 0.45, 50))) <= 1e-12)
    for bad in ({"radius": 0.6}, {"radius": 0.0}, {"inner": 1.0}):
        with pytest.raises(ContractError):
            px.Truncation(**bad)


@pytest.mark.parametrize("w2, k", [(0.01, 0), (0.01, 3), (0.05, 1), (0.1, 4)])
def test_t_transform_against_adaptive_quadrature(w2, k):
    tr = px.Truncation()
    S = math.sqrt(tr.radius ** 4 - w2 ** 2)

    def integrand(s):
        return float(tr(np.array([math.sqrt(w2) + 0j]), np.array([s]))[0]) * math.cos(2 * math.pi * k * s)

    ref = 2 * quad(integrand, 0, S, limit=200, points=[w2])[0]
    assert float(tr.t_transform(w2, k)) == pytest.approx(ref, rel=1e-7, abs=1e-9)


def test_cutoffs(g8):
    pairs = px.default_cutoffs()
    ch, ct = px.check_cutoffs(g8, pairs)
    assert np.allclose(ch.sum(axis=0), 1.0)
    broken = pairs[:-1]
    with pytest.raises(ContractError):
        px.check_cutoffs(g8, broken)
    narrow = [px.CutoffPair(p.chi, lambda x, y: 0 * x, p.label) for p in pairs]
    with pytest.raises(ContractError):
        px.check_cutoffs(g8, narrow)


def test_periodization_cross_check(g8):
    tr = px.Truncation()
    near = px.truncated_kernel_matrix(g8, tr, "min")
    full = px.truncated_kernel_matrix(g8, tr, "all")
    assert np.max(np.abs(near - full)) <= 1e-12 * np.max(np.abs(near))


def test_frozen_parametrix(g8, L8, C8, P8):
    assert P8.norm_R < 1
    one = np.ones(g8.size)
    lhs = L8.matrix @ (P8.K0 @ one)
    assert np.allclose(lhs, one - C8 @ one - P8.R @ one, atol=1e-12)
    assert P8.report()["norm_R"] == P8.norm_R


def test_parametrix_remainder_shrinks_under_refinement(P8):
    g = px.build_nilgrid(12)
    P12 = px.frozen_parametrix(g, px.discretize_op(g))
    assert P12.norm_R < P8.norm_R


@pytest.mark.slow
def test_parametrix_at_n16(P8):
    g = px.build_nilgrid(16)
    P16 = px.frozen_parametrix(g, px.discretize_op(g))
    assert P16.norm_R < 1
    assert P16.norm_R < P8.norm_R


def test_neumann_tail(g8, L8, P8):
    assert px.neumann_tail(P8.R, 0).residuals == [pytest.approx(P8.norm_R, rel=1e-10)]
    tail = px.neumann_tail(P8.R, 6, L8, P8.K0)
    for k, r in enumerate(tail.residuals):
        assert r <= P8.norm_R ** (k + 1) + 1e-12
    for a, b in zip(tail.residuals, tail.residuals[1:]):
        assert b <= a * (P8.norm_R + 1e-9)
    zero = px.GridOperator(np.zeros((g8.size, g8.size)), g8, "R")
    t0 = px.neumann_tail(zero, 3)
    assert np.array_equal(t0.E.matrix, np.eye(g8.size)) and t0.residuals == [0.0] * 4
    with pytest.raises(DivergenceError):
        px.neumann_tail(px.identity(g8), 2)
    with pytest.raises(ContractError):
        px.neumann_tail(zero, -1)


def test_neumann_invert_examples(g8, P8):
    rng = np.random.default_rng(0)
    f = rng.standard_normal(g8.size)
    zero = np.zeros((g8.size, g8.size))
    assert np.array_equal(px.neumann_invert(zero, f).u, f)
    N = 16
    shift = np.roll(np.eye(N), 1, axis=0)
    e0 = np.eye(N)[0]
    exact = np.linalg.solve(np.eye(N) + 0.5 * shift, e0)
    partial, term = np.zeros(N), e0.copy()
    for k in range(30):
        partial = partial + term
        term = -0.5 * (shift @ term)
        assert np.linalg.norm(partial - exact) <= 2.0 ** -(k + 1) * 2 + 1e-15
    Q, _ = np.linalg.qr(rng.standard_normal((64, 64)))
    g = rng.standard_normal(64)
    sol = px.neumann_invert(0.5 * Q, g)
    assert sol.residual <= 1e-10 and sol.splitting_gap <= 1e-10
    with pytest.raises(PreconditionError):
        px.neumann_invert(0.6 * Q, g)
    sol = px.neumann_invert(P8.R, f)
    assert sol.residual <= 1e-10 and sol.splitting_gap <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.floats(0.0, 0.5), st.integers(0, 2 ** 32 - 1))
def test_neumann_invert_solves_random_contractions(n, scale, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    M *= scale / np.linalg.norm(M, 2)
    f = rng.standard_normal(n)
    sol = px.neumann_invert(M, f)
    assert np.linalg.norm(sol.u + M @ sol.u - f) <= 1e-10 * max(1.0, np.linalg.norm(f))
    assert sol.splitting_gap <= 1e-10 * max(1.0, np.linalg.norm(f))


def test_eps0(g8, P8):
    pert = px.Perturbation({"XX": lambda x, y, t: np.cos(2 * np.pi * x) + 0 * y,
                            "Y": lambda x, y, t: np.sin(2 * np.pi * (x + y))})
    eps0, r0 = px.find_eps0(g8, pert, P8.K0, 0.5, 1.0, steps=8)
    assert 0 < eps0 < 1 and r0 <= 0.5
    assert px.remainder_norm(g8, min(1.0, 2 * eps0 + 0.01), pert, P8.K0) > 0.5


def test_gradient_factorization(g8, L8):
    X, Y = px.gradient(g8)
    assert np.allclose(X.conj().T @ X + Y.conj().T @ Y, L8.matrix, atol=1e-10)


def test_gradient_commutation(g8, C8, K8):
    rep = px.verify_gradient_commutation(g8, K8, C8, K8)
    assert rep.ok and rep.c_term <= 1e-12
    rep = px.verify_gradient_commutation(g8, K8, C8, C8)
    assert rep.ok
    rng = np.random.default_rng(2)
    T = rng.standard_normal((g8.size, g8.size))
    T -= T.mean(axis=0, keepdims=True)      # T 1 = 0 in the column sense used by C
    Tm = px.GridOperator(T @ (np.eye(g8.size) - C8.matrix), g8, "T")
    rep = px.verify_gradient_commutation(g8, K8, C8, Tm)
    assert rep.ok and rep.c_term <= 1e-12


def test_operator_csv(tmp_path, g8, C8):
    path = tmp_path / "c.csv"
    C8.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# operator=C n=8 size=512" and lines[1] == "row,col,re,im"
    assert len(lines) == 2 + 512 * 512

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subelliptic.casym import (HPoly, L_SYM, PSI, PSI0, PSIB, S, T, W, WB, X, Y, Z, ZBAR, Derivation, SymExpr,
                               apply_chain, build_cr_phase, conj, derive, derive_poly, homogeneous_components,
                               low_components, monomials_of_degree, random_expr, random_perturbation, random_poly,
                               real_part, solve_poly)
from subelliptic.coeff import I, SQRT2, Coeff
from subelliptic.errors import ContractError, DomainError
from subelliptic.textio import parse_poly

seeds = st.integers(0, 2 ** 32 - 1)


def test_derive_examples():
    assert derive(ZBAR, PSI).is_zero()
    assert derive(T, SymExpr.of(S)) == SymExpr.of(1)
    assert derive(Z, PSI) == SymExpr.of(WB.scale(SQRT2))


def test_homogeneous_components_examples():
    assert [d for d, _ in homogeneous_components(WB * W + S)] == [2]
    assert homogeneous_components(W + S) == [(1, W), (2, S)]
    assert homogeneous_components(HPoly()) == []


@pytest.mark.parametrize("p, q", [
    ("wb*w", "sqrt2/2*wb^2*w"),
    ("s", "sqrt2*(wb*s + i/2*wb^2*w - w*s - i*wb*w^2)"),
    ("wb*s", "sqrt2*(wb^2*s/2 + i*wb^3*w/6)"),
])
def test_solve_poly_examples(p, q):
    assert solve_poly(parse_poly(p)) == parse_poly(q)


def test_solve_poly_sign_between_groups():
    # the second group is in the kernel of Zbar, so both signs solve Zbar q = s;
    # only the minus sign keeps Re q of order |w|^2 (|w| + |s|)
    good = parse_poly("sqrt2*(wb*s + i/2*wb^2*w - w*s - i*wb*w^2)")
    bad = parse_poly("sqrt2*(wb*s + i/2*wb^2*w + w*s + i*wb*w^2)")
    assert derive_poly(ZBAR, good) == S == derive_poly(ZBAR, bad)
    w, s = np.array([1e-3 + 0j]), np.array([0.5])
    bound = np.abs(w) ** 2 * (np.abs(w) + np.abs(s))
    assert abs(good.evaluate(w, s).real[0]) <= 10 * bound[0]
    assert abs(bad.evaluate(w, s).real[0]) >= 100 * bound[0]
    assert solve_poly(S) == good and solve_poly(S, group_sign=1) == bad


def test_solve_poly_group_sign_contract():
    with pytest.raises(ContractError):
        solve_poly(S, group_sign=0)
    # only pure s-monomials are affected
    assert solve_poly(WB * W, group_sign=1) == solve_poly(WB * W)


def test_solve_poly_rejects_bad_input():
    with pytest.raises(DomainError):
        solve_poly(W + S)
    with pytest.raises(DomainError):
        solve_poly(W)


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(2, 8))
def test_solve_poly_round_trip(seed, degree):
    p = random_poly(degree, np.random.default_rng(seed))
    q = solve_poly(p)
    assert derive_poly(ZBAR, q) == p
    assert q.degrees() == [degree + 1]


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(2, 6))
def test_solve_poly_is_real_linear(seed, degree):
    rng = np.random.default_rng(seed)
    p1, p2 = random_poly(degree, rng), random_poly(degree, rng)
    assert solve_poly(p1 + p2) == solve_poly(p1) + solve_poly(p2)
    assert solve_poly(p1.scale(3)) == solve_poly(p1).scale(3)


def test_solve_poly_real_part_bound():
    # Re q = O(|w|^2 (|w| + |s|)), including for complex coefficients on pure s-powers
    rng = np.random.default_rng(5)
    for degree in range(2, 9):
        for _ in range(10):
            q = solve_poly(random_poly(degree, rng))
            for scale in (1e-2, 1e-3):
                w = scale * np.exp(1j * rng.uniform(0, 2 * np.pi, 50))
                s = rng.uniform(-0.5, 0.5, 50)
                ratio = np.abs(q.evaluate(w, s).real) / (np.abs(w) ** 2 * (np.abs(w) + np.abs(s)))
                assert ratio.max() < 1e3


def test_cr_phase_examples():
    for k in (2, 3, 5):
        assert build_cr_phase(ZBAR, k) == PSI0
    D = ZBAR + Derivation(S, 0, 0)
    assert not low_components(derive_poly(D, build_cr_phase(D, 4)), 4)
    D = ZBAR + Derivation(0, 0, WB * WB)
    assert not low_components(derive_poly(D, build_cr_phase(D, 3)), 3)


def test_cr_phase_rejects_weight_one_s_coefficient():
    D = ZBAR + Derivation(0, 0, WB)
    # the degree-1 component of D(psi0) cannot be cancelled by corrections of degree >= 3
    assert derive_poly(D, PSI0).component(1)
    with pytest.raises(DomainError):
        build_cr_phase(D, 3)
    with pytest.raises(DomainError):
        build_cr_phase(ZBAR + Derivation(1, 0, 0), 3)


@settings(max_examples=15, deadline=None)
@given(seeds, st.integers(3, 5))
def test_cr_phase_random_perturbations(seed, k):
    D = random_perturbation(np.random.default_rng(seed))
    assert not low_components(derive_poly(D, build_cr_phase(D, k)), k)


def test_conj_and_real_part_examples():
    assert conj(PSI) == PSIB
    assert real_part(SymExpr.of(S.scale(I))).is_zero()
    assert conj(L_SYM) == -L_SYM


def test_bracket_and_sublaplacian_identities_on_monomials():
    for k in range(9):
        for m in monomials_of_degree(k):
            p = HPoly({m: 1})
            zzb = derive_poly(Z, derive_poly(ZBAR, p))
            zbz = derive_poly(ZBAR, derive_poly(Z, p))
            assert zzb - zbz == derive_poly(T, p).scale(-I)
            lhs = apply_chain([X, X], p) + apply_chain([Y, Y], p)
            assert lhs == SymExpr.of(zzb + zbz)
            if k >= 1:
                assert derive_poly(ZBAR, p).degrees() in ([], [k - 1])


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_canonical_form_soundness(seed):
    rng = np.random.default_rng(seed)
    e = random_expr(rng)
    assert (e - e).is_zero()
    assert conj(conj(e)) == e


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_expression_evaluation_matches_derivative(seed):
    rng = np.random.default_rng(seed)
    e = random_expr(rng)
    w0, s0, h = 0.7 + 0.4j, 0.3, 1e-5
    num = (e.evaluate(np.array([w0]), np.array([s0 + h])) - e.evaluate(np.array([w0]), np.array([s0 - h]))) / (2 * h)
    ex = e.partial("s").evaluate(np.array([w0]), np.array([s0]))
    assert abs(num[0] - ex[0]) <= 1e-5 * max(1.0, abs(ex[0]))


def test_coeff_arithmetic_is_exact():
    c = Coeff.gauss(1, 2)
    assert c * c.conj() == Coeff.of(5)
    assert SQRT2 * SQRT2 == Coeff.of(2)

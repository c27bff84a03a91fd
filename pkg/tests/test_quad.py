import math

import numpy as np
import pytest

from subelliptic.errors import ContractError
from subelliptic.hgroup import HPoint, mul
from subelliptic.kernels import K_DEF, N_DEF, PI_DEF
from subelliptic.quad import (Bump, GridFunction, GridSpec, ball_integral, bump_data, convolve, field_of_solution,
                              normalization_constant, shell_mean, solve_boxb, solve_sublap, sublap_residuals,
                              szego_project, szego_test_function)

SPEC = GridSpec(1.0, 48)
BUMP = Bump()
O = HPoint(0j, 0.0)
PTS = [HPoint(0.2 + 0.1j, 0.1), HPoint(-0.3j, -0.2), HPoint(0.1 - 0.25j, 0.3)]


def _at(f, x):
    return complex(f(np.array([x.wc]), np.array([float(x.s)]))[0])


def anti_cr(w, s):
    return np.conj(w) * np.conj(szego_test_function(w, s)) ** 2


@pytest.fixture(scope="module")
def lap_bump():
    return bump_data("sublaplacian", SPEC, BUMP)


def test_convolve_K_recovers_bump_amplitude(lap_bump):
    assert abs(convolve(K_DEF, lap_bump, O) - BUMP.amp) <= 1e-3


def test_convolve_Pi_fixes_cr_function():
    F = GridFunction.from_callable(SPEC, szego_test_function, 4.0)
    assert abs(convolve(PI_DEF, F, O, pv=True) - 1) <= 1e-3


@pytest.mark.parametrize("k", [K_DEF, N_DEF, PI_DEF], ids=["K", "N", "Pi"])
def test_zero_data_gives_zero(k):
    Z0 = GridFunction.zero(SPEC)
    assert convolve(k, Z0, PTS[0], pv=k is PI_DEF) == 0
    assert solve_sublap(Z0)(PTS[0]) == 0 and solve_boxb(Z0)(PTS[0]) == 0 and szego_project(Z0)(PTS[0]) == 0


def test_solve_sublap_recovers_bump(lap_bump):
    u = solve_sublap(lap_bump)
    for x in PTS:
        assert abs(u(x) - _at(BUMP, x)) <= 1e-3
    u2 = solve_sublap(lap_bump.scaled(2.0))
    assert u2(PTS[0]) == pytest.approx(2 * u(PTS[0]), rel=1e-12)


def test_sublap_residual_small_at_coarse_resolution(lap_bump):
    pts = BUMP.test_points(3)
    r = sublap_residuals(lap_bump, pts, 24) / np.abs(lap_bump.values).max()
    assert r.max() <= 2e-2


def test_solve_boxb_conjugate_symmetry():
    c = HPoint(0.1 + 0.2j, 0.1)
    fk = bump_data("kohn", SPEC, Bump(center=c))
    mirrored = GridFunction.from_callable(
        SPEC, lambda w, s: np.conj(fk.exact(np.conj(w), -np.asarray(s))), "compact",
        (HPoint(c.wc.conjugate(), -c.s), 1.0))
    u, v = solve_boxb(fk), solve_boxb(mirrored)
    for x in PTS:
        assert abs(u(x) - np.conj(v(HPoint(x.wc.conjugate(), -x.s)))) <= 1e-10


def test_szego_fixed_point():
    F = GridFunction.from_callable(SPEC, szego_test_function, 4.0)
    P = szego_project(F)
    assert max(abs(P(x) - _at(szego_test_function, x)) for x in [O] + PTS) <= 5e-2


def test_szego_output_is_cr():
    G = GridFunction.from_callable(SPEC, lambda w, s: szego_test_function(w, s) + anti_cr(w, s), 4.0)
    P = szego_project(G)
    for x in PTS:
        assert abs(field_of_solution(P, "Zbar", x)) <= 1e-3
        assert abs(P(x) - _at(szego_test_function, x)) <= 1e-3


def test_szego_needs_decay():
    slow = GridFunction.from_callable(SPEC, lambda w, s: 1 / (1 + np.abs(w) ** 4 + np.asarray(s) ** 2) ** 0.5, 2.0)
    with pytest.raises(ContractError):
        szego_project(slow)


def test_translation_covariance(lap_bump):
    a = HPoint(0.3 - 0.2j, 0.15)
    g = lap_bump.translated(a)
    for x in PTS[:2]:
        assert abs(convolve(K_DEF, g, x) - convolve(K_DEF, lap_bump, mul(a, x))) <= 1e-8


def test_pv_shell_means_of_Pi_vanish():
    for r, R in ((1e-3, 1.0), (1e-2, 0.5), (0.1, 10.0)):
        assert abs(shell_mean(PI_DEF, r, R)) <= 1e-12


def test_ball_integrals_match_closed_forms():
    # int_{rho<a} K = pi a^2 / 2 and int_{rho<a} N = 4 a^2 / pi on the Koranyi ball
    a = 0.7
    assert ball_integral(K_DEF, a) == pytest.approx(math.pi * a * a / 2, rel=1e-10)
    assert ball_integral(N_DEF, a) == pytest.approx(4 * a * a / math.pi, rel=1e-10)


def test_normalization_constant():
    assert 2 * math.pi * normalization_constant() == pytest.approx(1.0, rel=1e-2)


def test_gridfunction_csv_round_trip():
    spec = GridSpec(1.0, 6)
    f = GridFunction.from_callable(spec, lambda w, s: np.exp(-np.abs(w) ** 2) * (1 + 1j * np.asarray(s)))
    g = GridFunction.from_csv(f.to_csv())
    assert g.spec == spec
    assert np.array_equal(g.values, f.values)

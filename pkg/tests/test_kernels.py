import math

import numpy as np
import pytest

from subelliptic.errors import SingularityError
from subelliptic.hgroup import HPoint, dilate
from subelliptic.kernels import (K_DEF, K_EXPR, KERNELS, N_DEF, PI_DEF, eval_K, eval_N, eval_Pi,
                                 kernel_estimate_table, pi_delta_mass, verify_boxb_N, verify_fundamental_K,
                                 verify_Pi_identities)


def test_eval_K_examples():
    assert eval_K(HPoint(1 + 0j, 0.0)) == pytest.approx(1 / (2 * math.pi))
    assert eval_K(HPoint(0j, 1.0)) == pytest.approx(1 / (2 * math.pi))
    u = HPoint(1 + 0j, 1.0)
    assert eval_K(dilate(2, u)) / eval_K(u) == pytest.approx(0.25)


def test_eval_N_examples():
    assert abs(eval_N(HPoint(1 + 0j, 0.0))) <= 1e-15
    assert eval_N(HPoint(0j, 1.0)) == pytest.approx(-1 / math.pi)
    assert eval_N(HPoint(0j, -1.0)) == pytest.approx(1 / math.pi)


def test_eval_Pi_examples():
    assert eval_Pi(HPoint(1 + 0j, 0.0)) == pytest.approx(1 / math.pi ** 2)
    assert eval_Pi(HPoint(0j, 1.0)) == pytest.approx(-1 / math.pi ** 2)
    u = HPoint(1 + 0j, 0.0)
    assert eval_Pi(dilate(2, u)) / eval_Pi(u) == pytest.approx(1 / 16)


@pytest.mark.parametrize("k", list(KERNELS.values()))
def test_singular_point_raises(k):
    with pytest.raises(SingularityError):
        k(np.array([0j]), np.array([0.0]))


def test_fundamental_solution_residuals():
    assert verify_fundamental_K().is_zero()
    assert verify_fundamental_K(scale=5).is_zero()
    assert not verify_fundamental_K("literal").is_zero()


def test_kohn_laplacian_of_N():
    assert verify_boxb_N().is_zero()
    assert verify_boxb_N(c=(0, 3)).is_zero()
    wrong = verify_boxb_N(sign=-1)
    assert wrong == PI_DEF.expr.scale(-2)
    assert not wrong.is_zero()


def test_Pi_identities():
    ids = verify_Pi_identities()
    assert all(e.is_zero() for e in ids.values())


def test_delta_coefficient_of_Pi():
    assert pi_delta_mass().real == pytest.approx(0.5, abs=1e-6)
    assert abs(pi_delta_mass().imag) <= 1e-9
    assert pi_delta_mass(0.3).real == pytest.approx(0.5, abs=1e-6)


def _random_points(n, seed):
    rng = np.random.default_rng(seed)
    rho = 10.0 ** rng.uniform(-2, 2, n)
    th = rng.uniform(-np.pi / 2, np.pi / 2, n)
    ph = rng.uniform(0, 2 * np.pi, n)
    return rho * np.sqrt(np.cos(th)) * np.exp(1j * ph), rho ** 2 * np.sin(th)


@pytest.mark.parametrize("k", list(KERNELS.values()), ids=list(KERNELS))
def test_numeric_matches_symbolic(k):
    w, s = _random_points(1000, 0)
    num = k(w, s)
    sym = k.expr.evaluate(w, s)
    assert np.max(np.abs(num - sym) / np.abs(sym)) <= 1e-12


@pytest.mark.parametrize("k", list(KERNELS.values()), ids=list(KERNELS))
def test_homogeneity(k):
    w, s = _random_points(200, 1)
    for r in (0.5, 3.0):
        ratio = k(r * w, r * r * s) / k(w, s)
        assert np.allclose(ratio, r ** k.homogeneity_degree, rtol=1e-12)


def test_log_factor_is_dilation_invariant():
    from subelliptic.casym import log_ratio
    w, s = _random_points(200, 2)
    assert np.allclose(log_ratio(w, s), log_ratio(7 * w, 49 * s), atol=1e-12)


def test_conjugation_symmetry():
    w, s = _random_points(300, 3)
    assert np.allclose(np.conj(N_DEF(w, s)), N_DEF(w, -s), rtol=1e-12)
    assert np.allclose(PI_DEF(w, -s), np.conj(PI_DEF(w, s)), rtol=1e-12)


@pytest.mark.parametrize("k, n", [(K_DEF, -2), (N_DEF, -2), (PI_DEF, 0)], ids=["K", "N", "Pi"])
def test_kernel_estimates_are_scale_invariant(k, n):
    table = kernel_estimate_table(k, n, max_norm=3)
    for g, maxima in table.items():
        assert np.all(np.isfinite(maxima))
        assert maxima.max() <= 20 * max(maxima.min(), 1e-300), g


def test_K_expression_is_real():
    from subelliptic.casym import real_part
    assert real_part(K_EXPR) == K_EXPR

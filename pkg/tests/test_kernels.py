import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import erf

from dssflow.dss_core import build_grid, field_from_function, make_test_data
from dssflow.errors import CannotCertifyError, InvalidExponentError, RegionError
from dssflow.kernels import (QuadratureConfig, bilinear_B, heat_evolve, heat_kernel,
                             heat_radial_oracle, lemma28_oracle, loglog_slope,
                             oseen_grad_fourier, oseen_grad_kernel, solonnikov_constant,
                             solonnikov_sup, tsai_phi_oracle)
from dssflow.mildsolve import evolve_data
from dssflow.picard import _work_envelope

vec = st.tuples(*[st.floats(-5, 5)] * 3).filter(lambda v: np.linalg.norm(v) > 1e-2)


# -- kernels -------------------------------------------------------------------------

@given(vec, st.floats(0.05, 10.0))
def test_oseen_parabolic_scaling(x, t):
    x = np.array(x)
    T1 = oseen_grad_kernel(x, t)
    T2 = oseen_grad_kernel(2 * x, 4 * t)
    np.testing.assert_allclose(T2, T1 / 16, rtol=1e-10, atol=1e-10 * np.abs(T1).max())


@given(vec, st.floats(0.05, 10.0))
def test_heat_kernel_scaling(x, t):
    x = np.array(x)
    assert heat_kernel(3 * x, 9 * t) == pytest.approx(heat_kernel(x, t) / 27, rel=1e-10)


def test_oseen_matches_fourier(rng):
    for _ in range(10):
        x = rng.uniform(-2, 2, 3)
        t = rng.uniform(0.2, 2.0)
        A = oseen_grad_kernel(x, t)
        B = oseen_grad_fourier(x, t)
        assert np.max(np.abs(A - B)) <= 1e-4 * np.max(np.abs(A))


def test_oseen_rejects_t0():
    with pytest.raises(RegionError):
        oseen_grad_kernel([1.0, 0, 0], 0.0)


def test_solonnikov_constant_stable(rng):
    c = solonnikov_sup()
    d = rng.normal(size=(4000, 3))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    r = np.geomspace(1e-3, 1e3, 4000)
    c2 = solonnikov_constant(d * r[:, None], np.ones(4000))
    assert np.isfinite(c) and c > 0
    assert c2 <= 1.05 * c


# -- heat ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def inv_r_field():
    g = build_grid(2.0, 16, 96, 3)
    return field_from_function(g, lambda y: 1.0 / np.linalg.norm(y, axis=-1))


def erf_solution(P, T):
    r = np.linalg.norm(P, axis=-1)
    return erf(r / (2 * np.sqrt(T))) / r


def test_heat_inverse_radius(inv_r_field, rng):
    n = 24
    r = rng.uniform(1.0, 4.0, n)
    d = rng.normal(size=(n, 3))
    P = d / np.linalg.norm(d, axis=-1, keepdims=True) * r[:, None]
    T = rng.uniform(1.0, 4.0, n)
    v = heat_evolve(inv_r_field, P, T)[:, 0]
    np.testing.assert_allclose(v, erf_solution(P, T), rtol=1e-3)


def test_radial_oracle_matches_erf():
    for R, t in [(1.0, 1.0), (3.0, 0.5), (10.0, 4.0)]:
        v = heat_radial_oracle(lambda r: 1.0 / r, R, t)
        assert v == pytest.approx(erf(R / (2 * math.sqrt(t))) / R, rel=1e-8)


def test_heat_dss_commutation(swirl):
    P = np.array([[1.3, 0.4, -0.2], [0.2, 2.1, 0.9]])
    T = np.array([1.2, 2.5])
    a = heat_evolve(swirl, P, T)
    b = heat_evolve(swirl, 2 * P, 4 * T)
    np.testing.assert_allclose(b, a / 2, rtol=2e-3, atol=1e-6)


def test_heat_linear(grid, swirl):
    sp = make_test_data("point_singular", grid, q=6)
    P = np.array([[1.5, 0.3, 0.1], [-0.7, 1.2, 0.5]])
    T = np.array([1.0, 3.0])
    both = field_from_function(grid, lambda y: 2.0 * swirl.evaluate(y) - 0.5 * sp.evaluate(y),
                               keep_profile=False)
    lhs = heat_evolve(both, P, T)
    rhs = 2.0 * heat_evolve(swirl, P, T) - 0.5 * heat_evolve(sp, P, T)
    scale = np.max(np.abs(rhs))
    assert np.max(np.abs(lhs - rhs)) <= 5e-3 * scale


def test_heat_zero(grid):
    z = make_test_data("swirl", grid, amplitude=0.0)
    assert not np.any(heat_evolve(z, [[1.5, 0, 0]], [1.0]))


def test_heat_swirl_envelope(swirl):
    # sup over the band of R |e^{t Lap} u0| at |x| = R stays below sup |x||u0| = 1
    # and settles as R doubles
    d = np.array([[0.0, 0.6, 0.8], [0.6, 0.8, 0.0], [1.0, 0.0, 0.0]])
    vals = []
    for R in (2.0, 4.0, 8.0, 16.0):
        P = np.repeat(d * R, 3, axis=0)
        T = np.tile([1.0, 2.0, 4.0], len(d))
        vals.append(R * np.max(np.linalg.norm(heat_evolve(swirl, P, T), axis=-1)))
    assert max(vals) <= 1.0 + 1e-3
    assert np.all(np.diff(np.diff(vals)) < 0)


# -- B -------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def E0(tiny_spec):
    g = build_grid(2.0, 16, 96, 3)
    return evolve_data(make_test_data("swirl", g, amplitude=0.1), tiny_spec)


TARGETS = np.array([[1.5, 0.2, 0.1], [0.3, 2.5, -0.4], [4.0, 0.0, 1.0]])
TT = np.array([1.0, 2.0, 1.0])


def test_B_zero_and_symmetric(E0):
    z = E0.replace(samples=np.zeros_like(E0.samples), far_field=None, far_scale=0.0)
    z = z.replace(envelope=_work_envelope(z))
    assert not np.any(bilinear_B(z, E0, TARGETS, TT))
    assert not np.any(bilinear_B(z, z, TARGETS, TT))
    F = E0.replace(samples=E0.samples * np.array([1.0, -0.5, 2.0]), label="F")
    F = F.replace(envelope=_work_envelope(F))
    np.testing.assert_array_equal(bilinear_B(E0, F, TARGETS, TT), bilinear_B(F, E0, TARGETS, TT))


def test_B_bilinear_and_quadratic(E0):
    base = bilinear_B(E0, E0, TARGETS, TT)
    h = E0.replace(samples=3.0 * E0.samples, far_scale=3.0 * E0.far_scale)
    h = h.replace(envelope=_work_envelope(h))
    np.testing.assert_allclose(bilinear_B(h, h, TARGETS, TT), 9.0 * base, rtol=1e-10,
                               atol=1e-14)
    np.testing.assert_allclose(bilinear_B(h, E0, TARGETS, TT), 3.0 * base, rtol=1e-10,
                               atol=1e-14)


def test_B_needs_envelope(E0):
    bare = E0.replace(envelope=None)
    with pytest.raises(CannotCertifyError):
        bilinear_B(bare, E0, TARGETS, TT)


def test_B_below_kernel_envelope_bound(E0):
    # |f|, |g| <= C (|y| + sqrt s)^-1 and |grad K| <= C_S (|x|+sqrt t)^-4 give
    # |B(f, g)(x, 1)| <= C_S C^2 phi(x, 4, 2)
    C = E0.envelope.C
    CS = solonnikov_sup()
    pts = np.array([[r, 0.0, 0.0] for r in (1.2, 2.0, 3.0)]) @ np.array(
        [[0.6, 0.8, 0.0], [-0.8, 0.6, 0.0], [0.0, 0.0, 1.0]])
    v = np.linalg.norm(bilinear_B(E0, E0, pts, np.ones(len(pts))), axis=-1)
    bound = np.array([CS * C * C * tsai_phi_oracle(p, 4, 2) for p in pts])
    assert np.all(v <= bound)


# -- oracles -------------------------------------------------------------------------

def test_lemma28_ratio_bounded_and_stable():
    rs = [2.0, 4.0, 8.0, 16.0]
    r0 = [lemma28_oracle([r, 0, 0], 1.0, 2, 0.5)[2] for r in rs]
    r1 = [lemma28_oracle([r, 0, 0], 1.0, 2, 0.5, level=1)[2] for r in rs]
    assert max(r0) / min(r0) < 10
    for a, b in zip(r0, r1):
        assert 0.5 <= a / b <= 2.0


def test_lemma28_radial_reduction():
    # (a, b) = (0, 0): int_0^t int (|z| + sqrt(t-s))^-4 dz ds
    #   = 4 pi int_0^t int_0^inf r^2 (r + sqrt(s))^-4 dr ds = 4 pi int_0^t s^(-1/2) / 3 ds
    lhs, _, _ = lemma28_oracle([3.0, 0, 0], 2.0, 0, 0)
    assert lhs == pytest.approx(4 * math.pi / 3 * 2 * math.sqrt(2.0), rel=1e-3)


@pytest.mark.parametrize("ab", [(4, 1), (2.5, 2.5), (-0.1, 0), (1, 2)])
def test_lemma28_range(ab):
    with pytest.raises(InvalidExponentError):
        lemma28_oracle([2.0, 0, 0], 1.0, *ab)


def test_tsai_symmetry_and_range():
    a = tsai_phi_oracle([5.0, 0, 0], 4, 2)
    b = tsai_phi_oracle([0, 5.0, 0], 4, 2)
    assert a == pytest.approx(b, rel=1e-12)
    with pytest.raises(InvalidExponentError):
        tsai_phi_oracle([5.0, 0, 0], 1, 1)


def test_loglog_slope_exact():
    x = np.geomspace(1, 100, 7)
    assert loglog_slope(x, 3 * x ** -2.5) == pytest.approx(-2.5, abs=1e-12)


def test_quadrature_config_validates():
    with pytest.raises(RegionError):
        QuadratureConfig(rel_tol=0.0)

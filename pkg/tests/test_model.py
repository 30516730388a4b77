import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from stochastic_stefan.model import (ZetaFunction, ZetaRangeError, exact_test1, identity_zeta,
                                     make_model, stefan_zeta)

Z = stefan_zeta()
reals = st.floats(-50, 50, allow_nan=False)


def test_listed_values():
    assert Z(0.0) == 0.0 and Z.primitive(0.0) == 0.0
    assert Z(1.5) == 1.0
    assert Z(3.0) == 2.0
    assert Z.primitive(2.0) == pytest.approx(1.5, abs=1e-15)
    assert Z.primitive(3.0) == pytest.approx(3.0, abs=1e-15)
    assert Z(-2.0) == -2.0
    assert Z.primitive(-2.0) == pytest.approx(2.0, abs=1e-15)


@pytest.mark.parametrize("s", [-2.0, 0.5, 1.0, 1.7, 2.0, 3.0, 6.5])
def test_primitive_matches_quadrature(s):
    val, _ = quad(lambda x: float(Z(x)), 0.0, s, points=[1.0, 2.0], epsabs=1e-13)
    assert Z.primitive(s) == pytest.approx(val, abs=1e-12)


def test_continuity_and_right_slopes():
    for b in (1.0, 2.0):
        assert Z(b - 1e-13) == pytest.approx(Z(b), abs=1e-12)
        assert Z(b + 1e-13) == pytest.approx(Z(b), abs=1e-12)
    # right-hand slope at the breakpoints
    assert Z.derivative(1.0) == 0.0
    assert Z.derivative(2.0) == 1.0
    assert Z.derivative(0.5) == 1.0
    assert Z.plateau == (1.0, 2.0)
    assert Z.lipschitz == 1.0


def test_inverse():
    assert Z.inverse(-1.0) == -1.0
    assert Z.inverse(0.0) == 0.0
    assert Z.inverse(1.0) == 1.0
    assert Z.inverse(2.5) == 3.5
    for y in (-3.0, 0.3, 4.0):
        assert Z(Z.inverse(y)) == pytest.approx(y, abs=1e-15)


def test_inverse_out_of_range():
    bounded = ZetaFunction.from_slopes([0.0, 1.0], [1.0, 0.5, 1.0])
    assert bounded(bounded.inverse(0.2)) == pytest.approx(0.2)
    z = ZetaFunction.from_slopes([1.0], [1.0, 1.0])
    assert z.inverse(5.0) == 5.0
    with pytest.raises(ZetaRangeError):
        stefan_zeta().inverse(np.nan)


def test_from_slopes_validation():
    with pytest.raises(ValueError):
        ZetaFunction.from_slopes([1.0, 0.5], [1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        ZetaFunction.from_slopes([1.0], [1.0, -1.0])
    with pytest.raises(ValueError):
        ZetaFunction.from_slopes([1.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        ZetaFunction.from_slopes([1.0], [1.0])


def test_identity_zeta():
    z = identity_zeta()
    s = np.linspace(-3, 3, 7)
    np.testing.assert_array_equal(z(s), s)
    np.testing.assert_allclose(z.primitive(s), s ** 2 / 2, atol=1e-15)
    assert z.plateau is None


def test_exact_solution_values():
    assert exact_test1(np.array([0.0, 0.3]), 0.0) == 1.0
    assert exact_test1(np.array([0.2, 0.5]), 0.5) == pytest.approx(2 * np.exp(0.3))
    assert exact_test1(np.array([0.8, 0.5]), 0.5) == pytest.approx(np.exp(-0.3))
    # zeta is continuous (value 1) across the moving interface
    assert Z(2.0) == 1.0 and Z(1.0) == 1.0


def test_exact_solution_pde_residual(rng):
    d = 1e-4
    e1, e2 = np.array([d, 0.0]), np.array([0.0, d])
    checked = 0
    while checked < 20:
        x = rng.random(2) * 0.98 + 0.01
        t = rng.random()
        if abs(x[0] - t) < 10 * d:
            continue
        u = lambda y, s: exact_test1(y, s)
        zt = lambda y: Z(exact_test1(y, t))
        dudt = (u(x, t + d) - u(x, t - d)) / (2 * d)
        lap = (zt(x + e1) + zt(x - e1) + zt(x + e2) + zt(x - e2) - 4 * zt(x)) / d ** 2
        assert abs(dudt - lap) <= 1e-4
        checked += 1


def test_noise_amplitude():
    m = make_model(2, nf=1.0)
    np.testing.assert_array_equal(m.noise_amplitude(np.zeros(4)), 0.0)
    assert m.noise_amplitude(np.array([2.0]))[0] == pytest.approx(1.224744871, abs=1e-9)
    m0 = make_model(2, nf=0.0)
    np.testing.assert_array_equal(m0.noise_amplitude(np.array([5.0, -3.0])), 0.0)
    assert np.all(m.noise_amplitude(np.linspace(-5, 5, 101)) >= 0)


def test_model_validation():
    with pytest.raises(ValueError):
        make_model(3)
    with pytest.raises(ValueError):
        make_model(1, nf=-1.0)
    with pytest.raises(ValueError):
        make_model(1, T=0.0)
    m = make_model(2, nf=1.0)
    assert m.plateau == (1.0, 2.0)
    assert m.boundary(np.zeros((3, 2)), 0.5).tolist() == [-1.0] * 3
    assert make_model(2, plateau=(0.0, 1.0)).plateau == (0.0, 1.0)


@settings(max_examples=1000, deadline=None)
@given(reals, reals)
def test_xi_convexity_inequality(a, b):
    assert Z.primitive(b) - Z.primitive(a) <= (b - a) * Z(b) + 1e-9 * (1 + abs(b - a) * abs(b))


@settings(max_examples=1000, deadline=None)
@given(reals, reals)
def test_monotone_lipschitz_inequality(a, b):
    dz = Z(b) - Z(a)
    assert (b - a) * dz >= dz ** 2 / Z.lipschitz - 1e-9 * (1 + dz ** 2)


@settings(max_examples=1000, deadline=None)
@given(reals)
def test_zeta_bounded_by_energy(s):
    assert Z(s) ** 2 <= 2 * Z.lipschitz * Z.primitive(s) + 1e-9 * (1 + s * s)


@settings(max_examples=1000, deadline=None)
@given(reals)
def test_quadratic_growth_bound(s):
    K1, K2 = Z.quadratic_bound
    assert s * s <= K1 * Z.primitive(s) + K2 + 1e-9 * (1 + s * s)


@settings(max_examples=1000, deadline=None)
@given(reals)
def test_coercivity_and_energy_sign(s):
    c, d = Z.coercivity
    assert abs(Z(s)) >= c * abs(s) - d - 1e-12
    assert Z.primitive(s) >= 0


@settings(max_examples=1000, deadline=None)
@given(st.floats(-10, 10), st.floats(0, 10))
def test_noise_growth_bound(s, nf):
    m = make_model(2, nf=nf)
    assert m.noise_amplitude(np.array([s]))[0] ** 2 <= nf ** 2 * Z.primitive(s) * (1 + 1e-12) + 1e-300

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from ghdcorr import FreeScenario, free_fermion_ising, free_n_point, free_two_point, free_nonrel_fermion
from ghdcorr.errors import ModelError, ObservableError
from ghdcorr.free_exact import (free_generating_functional, g_coefficients, ising_energy_closed_form,
                                tonks_girardeau_closed_form)
from ghdcorr.models import lieb_liniger

_F = {
    "fermion": lambda e: -np.log(1 + np.exp(-e)),
    "boson": lambda e: np.log(1 - np.exp(-e)),
    "classical": lambda e: -np.exp(-e),
    "radiative": lambda e: np.log(e),
}


def _cauchy_g(stat, w, order, radius, M=256):
    """Taylor coefficients of F(w) - F(w - z) by the trapezoid rule on a circle (independent oracle)."""
    z = radius * np.exp(2j * np.pi * np.arange(M) / M)
    vals = _F[stat](w + 0j) - _F[stat](w - z)
    return np.array([math.factorial(N) * np.mean(vals * z ** -N).real for N in range(1, order + 1)])


@pytest.mark.parametrize("stat", sorted(_F))
@given(w=st.floats(0.5, 4.0))
@settings(max_examples=15, deadline=None)
def test_g_coefficients_against_contour_integral(stat, w):
    # nearest singularity of F(w - z): z = w (boson, radiative) or |w - i pi| (fermion)
    radius = 0.4 * min(w, abs(complex(w, np.pi)))
    ref = _cauchy_g(stat, w, 5, radius)
    got = g_coefficients(stat, w, 5)[0]
    assert np.allclose(got, ref, rtol=1e-9, atol=1e-12)


def test_low_order_g_are_occupation_and_covariance():
    w = np.array([0.3, 1.5])
    for stat, nf in [("fermion", lambda n: n * (1 - n)), ("boson", lambda n: n * (1 + n)),
                     ("classical", lambda n: n), ("radiative", lambda n: n * n)]:
        g = g_coefficients(stat, w, 2)
        n = g[:, 0]
        assert np.allclose(g[:, 1], nf(n), rtol=1e-13)


# -- closed forms -------------------------------------------------------------------


def test_ising_closed_form_values():
    assert ising_energy_closed_form(2.0, 1.0, 0.0, 1.0) == 0.0
    # on the ray x = y the value is m^3 / (8 pi t cosh^2(beta m / 2))
    assert ising_energy_closed_form(0.0, 2.0, 0.0, 1.0) == pytest.approx(1 / (16 * np.pi * np.cosh(0.5) ** 2))
    with pytest.raises(ObservableError):
        tonks_girardeau_closed_form(0.0, 0.0, 0.0, 1.0, 1.0)


@given(st.floats(-0.95, 0.95), st.floats(0.5, 3.0), st.floats(0.3, 2.0))
@settings(max_examples=25, deadline=None)
def test_free_pipeline_matches_ising_closed_form(v, t, beta):
    m = free_fermion_ising(1.0)
    sc = FreeScenario(m, lambda x, th, a: beta * m.E(th, a) + 0 * x, domain=(-30, 30))
    x = v * t + 0.2
    assert free_two_point("energy", "energy", x, t, 0.2, sc) == pytest.approx(
        ising_energy_closed_form(x, t, 0.2, beta), rel=1e-10)


@given(st.floats(-5, 5), st.floats(0.5, 3.0))
@settings(max_examples=25, deadline=None)
def test_free_pipeline_matches_tonks_girardeau(d, t):
    f = free_nonrel_fermion(0.5)
    b, mu = 2.0, 0.4
    sc = FreeScenario(f, lambda x, th, a: b * (f.E(th, a) - mu) + 0 * x, domain=(-40, 40))
    assert free_two_point("particle", "particle", d, t, 0.0, sc) == pytest.approx(
        tonks_girardeau_closed_form(d, t, 0.0, b, mu), rel=1e-10)


def test_inhomogeneous_free_two_point_uses_initial_state_at_source():
    m = free_fermion_ising(1.0)
    bt = lambda y: 1 + 0.5 * np.exp(-y ** 2)  # noqa: E731
    sc = FreeScenario(m, lambda x, th, a: bt(x) * m.E(th, a))
    for y in (-0.3, 0.0, 0.9):
        assert free_two_point("energy", "energy", y + 0.4, 1.3, y, sc) == pytest.approx(
            ising_energy_closed_form(0.4, 1.3, 0.0, bt(y)), rel=1e-10)


def test_current_insertion_carries_group_velocity():
    m = free_fermion_ising(1.0)
    sc = FreeScenario(m, lambda x, th, a: m.E(th, a) + 0 * x)
    xi = 0.35
    qq = free_two_point("energy", "energy", xi * 2.0, 2.0, 0.0, sc)
    jq = free_two_point("energy", "energy", xi * 2.0, 2.0, 0.0, sc, kinds=("current", "density"))
    assert jq == pytest.approx(xi * qq, rel=1e-12)
    with pytest.raises(ObservableError):
        free_two_point("energy", "energy", 0.0, 1.0, 0.0, sc, kinds=("flux", "density"))


def test_scenario_rejects_interacting_model():
    m = lieb_liniger(1.0)
    with pytest.raises(ModelError):
        FreeScenario(m, lambda x, th, a: th ** 2)


# -- N-point functions ------------------------------------------------------------


def test_n_point_reduces_to_two_point():
    f = free_nonrel_fermion(0.5)
    sc = FreeScenario(f, lambda x, th, a: 2.0 * (f.E(th, a) - 0.4) + 0.3 * np.tanh(x))
    r = free_n_point([(1.0, 2.0, "particle"), (0.2, 0.0, "particle")], sc)
    assert r.coefficient == pytest.approx(free_two_point("particle", "particle", 1.0, 2.0, 0.2, sc), rel=1e-12)


def test_three_point_support_and_value():
    f = free_nonrel_fermion(0.5)
    sc = FreeScenario(f, lambda x, th, a: 2.0 * (f.E(th, a) - 0.4) + 0 * x)
    assert free_n_point([(0, 0, 1), (1, 1, 1), (2.5, 2, 1)], sc).coefficient == 0.0
    r = free_n_point([(0, 0, "particle"), (1, 1, "particle"), (2, 2, "particle")], sc)
    assert r.colinear
    # v = theta / m = 1 -> theta = 0.5; |v'| = 2, p' = 1, g_3 = n f (1 - 2n) for fermions
    n = 1 / (1 + np.exp(2.0 * (0.25 - 0.4)))
    assert r.coefficient == pytest.approx(n * (1 - n) * (1 - 2 * n) / (2 * np.pi * 2 * 2), rel=1e-12)
    with pytest.raises(ObservableError):
        free_n_point([(0, 1, 1), (1, 1, 1)], sc)


def test_generating_functional_second_derivative():
    """Mixed second derivative of the generating functional vs the smeared closed form."""
    f = free_nonrel_fermion(0.5)
    b, mu, sig = 2.0, 0.4, 0.3
    sc = FreeScenario(f, lambda x, th, a: b * (f.E(th, a) - mu) + 0 * x, domain=(-5, 5))

    def G(c):
        return lambda u: np.exp(-(u - c) ** 2 / (2 * sig ** 2)) / np.sqrt(2 * np.pi * sig ** 2)

    def F(a1, a2):
        return free_generating_functional([lambda u: a1 * G(1.0)(u), lambda u: a2 * G(0.2)(u)], [2.0, 0.0],
                                          ["particle", "particle"], sc, (-14, 14))

    e = 1e-3
    d2 = (F(e, e) - F(e, -e) - F(-e, e) + F(-e, -e)) / (4 * e * e)
    s2 = np.sqrt(2) * sig
    ref = quad(lambda d: tonks_girardeau_closed_form(d, 2.0, 0.0, b, mu)
               * np.exp(-(d - 0.8) ** 2 / (2 * s2 ** 2)) / np.sqrt(2 * np.pi * s2 ** 2), -10, 10, epsabs=1e-14)[0]
    assert d2 == pytest.approx(ref, rel=1e-6)
    with pytest.raises(ObservableError):
        free_generating_functional([G(0)], [0.0, 1.0], ["particle"], sc, (-1, 1))

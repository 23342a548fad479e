import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghdcorr import (AsymptoticContext, FluidState, ObservableSpec, build_grid, free_fermion_ising, hard_rods,
                     homogeneous_two_point, ray_correlator, richardson, sinh_gordon)
from ghdcorr.errors import ObservableError


@given(st.floats(-3, 3), st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=30, deadline=None)
def test_richardson_is_exact_on_its_model(A, c1, c2):
    t = np.array([2.0, 3.0, 5.0, 8.0])
    assert richardson(t, A + c1 / t, 1) == pytest.approx(A, abs=1e-10)
    assert richardson(t, A + c1 / t + c2 / t ** 2, 2) == pytest.approx(A, abs=1e-9)


def test_richardson_needs_enough_points():
    with pytest.raises(ObservableError):
        richardson([1.0, 2.0], [0.0, 1.0], 2)


@pytest.fixture(scope="module")
def rods():
    m = hard_rods(0.5)
    g = build_grid(m.particle_types((-7, 7)), 64)

    def w(x, th, a=0):
        mu = -1.0 + 0.4 * np.tanh(x) + 5.0 * np.exp(-x ** 2)
        return th ** 2 / 2 - mu

    return AsymptoticContext(FluidState.from_profile(m, g, np.linspace(-10, 10, 201), w))


@pytest.mark.parametrize("th", [-1.0, 0.3, 1.5])
def test_equipartition_and_sum_rule(rods, th):
    ctx = rods
    ys = ctx.y_star(th)
    assert ctx.n0_at(ys, th) == pytest.approx(ctx.equipartition_value(th), abs=1e-12)
    assert abs(ctx.I_total(th)) < 1e-12
    val, scale = ctx.sum_rule(th)
    assert abs(val) < 1e-6 * scale
    assert ctx.I_function(ys - 1e-11, th) == pytest.approx(ctx.I_function(ys + 1e-11, th), abs=1e-8)


def test_equipartition_lies_between_asymptotes(rods):
    # the occupation has to cross the equipartition value inside the bump
    for th in (-1.0, 0.3, 1.5):
        nm, np_, _, _ = rods.asymptotic(th)
        n_star = rods.equipartition_value(th)
        assert not min(nm, np_) <= n_star <= max(nm, np_)
        assert len(rods.y_star_candidates(th)) >= 1


def test_r_minus_y_tends_to_constants(rods):
    for th in (-1.0, 0.3):
        r = rods.r_function([-9.5, -9.0, 9.0, 9.5], th)
        slopes = (r[1] - r[0]) / 0.5, (r[3] - r[2]) / 0.5
        assert slopes == pytest.approx((1.0, 1.0), abs=1e-3)
        assert rods.r_function([rods.y_star(th)], th)[0] == pytest.approx(0.0, abs=1e-12)
        assert rods.sigma(rods.y_star(th) + 0.1, th) == 1 and rods.sigma(rods.y_star(th) - 0.1, th) == -1


@pytest.mark.parametrize("y, side", [(-9.5, -1), (9.5, 1)])
def test_far_insertions_reduce_to_partitioning(rods, y, side):
    xi = 0.5
    A = rods.coefficient_A("particle", "particle", xi, y)
    r = ray_correlator("particle", "particle", xi, 1.0, 0.0, rods.ray, side=side)
    assert A == pytest.approx(r.value, rel=1e-3)


def test_free_coefficient_closed_form():
    m = free_fermion_ising(1.0)
    g = build_grid(m.particle_types((-8, 8)), 48)
    bt = lambda x: 1 + 0.6 * np.exp(-x ** 2) + 0.3 * np.tanh(x)  # noqa: E731
    fl = FluidState.from_profile(m, g, np.linspace(-12, 12, 241), lambda x, th, a=0: bt(x) * np.cosh(th))
    ctx = AsymptoticContext(fl)
    xi = 0.45
    th = np.arctanh(xi)
    for y in (-0.6, 0.2, 1.0):
        n = 1 / (1 + np.exp(bt(y) * np.cosh(th)))
        # rho_p f h^2 / |v'| with v = tanh, p' = E = cosh
        exact = np.cosh(th) / (2 * np.pi) * n * (1 - n) * np.cosh(th) ** 2 * np.cosh(th) ** 2
        assert ctx.coefficient_A("energy", "energy", xi, y) == pytest.approx(exact, rel=1e-10)


def test_equal_asymptotics_reduce_to_homogeneous():
    m = sinh_gordon(0.3)
    g = build_grid(m.particle_types((-6, 6)), 48)
    E = m.charge("energy")
    fl = FluidState.from_profile(m, g, np.linspace(-12, 12, 241),
                                 lambda x, th, a=0: (1.0 - 0.5 * np.exp(-x ** 2 / 2)) * E(th, a))
    ctx = AsymptoticContext(fl)
    assert ctx.equal
    q = ObservableSpec.density("energy")
    h = homogeneous_two_point(q, q, 0.4, 1.0, 0.0, fl.local_state(0))
    for y in (-11.0, 11.0):
        assert ctx.coefficient_A(q, q, 0.4, y) == pytest.approx(h, rel=1e-3)
    with pytest.raises(ObservableError):
        ctx.y_star(0.0)

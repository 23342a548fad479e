import numpy as np
import pytest

from ghdcorr import (DrivingTerm, FreeScenario, RaySolution, build_grid, free_nonrel_fermion, free_two_point,
                     lieb_liniger, ray_correlator, solve_gge, solve_rays)
from ghdcorr.errors import GhdError, ObservableError
from ghdcorr.partitioning import homogeneous_ray_correlator, rapidity_roots, u_tilde_and_V


@pytest.fixture(scope="module")
def ll_rays():
    m = lieb_liniger(1.0)
    # the jump in the ray occupation limits the theta-derivative relations to
    # grid order: 1e-3 at 64 nodes, 1e-6 at 128
    g = build_grid(m.particle_types(), 128)
    L = solve_gge(DrivingTerm.thermal(m, 1.0, 1.0), m, g)
    R = solve_gge(DrivingTerm.thermal(m, 2.0, 0.5), m, g)
    return solve_rays(L, R, np.linspace(-2, 2, 5))


@pytest.fixture(scope="module")
def free_rays():
    m = free_nonrel_fermion(0.5)
    g = build_grid(m.particle_types((-6, 6)), 64)
    L = solve_gge(DrivingTerm.thermal(m, 1.0, 1.0), m, g)
    R = solve_gge(DrivingTerm.thermal(m, 2.0, 0.2), m, g)
    return solve_rays(L, R, [])


# -- free model: everything in closed form -------------------------------------------


def test_free_ray_state_is_velocity_split(free_rays):
    ray = free_rays
    g = ray.grid
    for xi in (-1.5, 0.0, 0.8):
        v = g.theta / 0.5
        exact = np.where(v > xi, ray.left.n, ray.right.n)
        assert np.array_equal(ray.occupation(xi), exact)


def test_free_characteristics(free_rays):
    ray = free_rays
    for th in (-0.7, 0.3, 1.2):
        assert ray.xi_star(th) == pytest.approx(th / 0.5, abs=1e-12)
        assert ray.V(th) == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(ray.u_tilde([-1.0, 0.5, 3.0], th), np.array([-1.0, 0.5, 3.0]) - th / 0.5, atol=1e-12)


@pytest.mark.parametrize("y", [-0.7, -0.1, 0.25, 1.5])
def test_free_wall_correlator_matches_step_profile(free_rays, y):
    ray = free_rays
    m = ray.model
    sc = FreeScenario(m, lambda x, th, a: np.where(np.asarray(x) < 0, 1.0 * (m.E(th, a) - 1.0),
                                                   2.0 * (m.E(th, a) - 0.2)), domain=(-6, 6))
    xi, t = 0.4, 2.0
    r = ray_correlator("particle", "energy", xi, t, y, ray)
    assert r.value == pytest.approx(free_two_point("particle", "energy", xi * t, t, y, sc), rel=1e-9)


# -- interacting rays -------------------------------------------------------------


def test_ray_state_self_consistency(ll_rays):
    ray = ll_rays
    for xi in ray.xi:
        st = ray.state(xi)
        v = st.v_eff
        exact = np.where(v > xi, ray.left.n, ray.right.n)
        far = np.abs(v - xi) > 1e-8
        assert np.array_equal(st.n[far], exact[far])


def test_outside_fan_is_boundary_state(ll_rays):
    ray = ll_rays
    assert np.array_equal(ray.occupation(ray.eta_min - 1.0), ray.left.n)
    assert np.array_equal(ray.occupation(ray.eta_max + 1.0), ray.right.n)


@pytest.mark.parametrize("th", [-1.5, 0.7, 2.5])
def test_u_tilde_relations(ll_rays, th):
    ray = ll_rays
    xs = ray.xi_star(th)
    assert ray.v_eff([xs], [th])[0, 0] == pytest.approx(xs, abs=1e-10)
    V = ray.V(th)
    assert V > 0
    assert abs(ray.u_tilde(xs, th)[0]) < 1e-12
    # d_xi u~ = V and d_theta u~ = -V d_theta v^eff on the ray xi*
    assert ray.du_tilde_dxi(xs, th) / V == pytest.approx(1.0, abs=1e-6)
    dv = ray.state(xs).dv_eff_at(np.array([th]), 0)[0]
    assert ray.du_tilde_dtheta(xs, th) / V == pytest.approx(-dv, rel=1e-5)
    # outside the fan u~ is explicit
    far = ray.eta_min - 2.0
    vL = ray.left.v_eff_at(np.array([th]), 0)[0]
    assert ray.u_tilde(far, th)[0] == pytest.approx(far - vL, rel=1e-12)


def test_equal_states_give_unit_V():
    m = lieb_liniger(1.0)
    g = build_grid(m.particle_types(), 32)
    s = solve_gge(DrivingTerm.thermal(m, 1.0, 1.0), m, g)
    ray = RaySolution(s, s)
    for th in (-1.0, 0.0, 2.0):
        assert abs(ray.V(th) - 1) < 1e-12
    u, V = u_tilde_and_V(solve_rays(s, s, [0.5]), 0.3)
    assert V == 1.0 and u[0] == pytest.approx(0.5 - s.v_eff_at(np.array([0.3]), 0)[0], abs=1e-12)


def test_wall_limit_is_continuous_in_y(ll_rays):
    ray = ll_rays
    xi, t = 0.3, 1.0
    for side in (1, -1):
        lim = ray_correlator("particle", "particle", xi, t, 0.0, ray, side=side).value
        near = ray_correlator("particle", "particle", xi, t, side * 1e-4, ray).value
        assert near == pytest.approx(lim, rel=1e-3)


def test_gap_to_homogeneous_ray_state(ll_rays):
    ray = ll_rays
    xi, t = 0.3, 1.0
    for side in (1, -1):
        r = ray_correlator("particle", "particle", xi, t, 0.0, ray, side=side).value
        h = homogeneous_ray_correlator("particle", "particle", xi, t, ray, side)
        assert abs(r - h) > 1e-4 * abs(h)


def test_rapidity_roots_finds_all_sign_changes(ll_rays):
    g = ll_rays.grid
    roots = rapidity_roots(lambda th: np.cos(np.asarray(th)), g, 0)
    expect = [k * np.pi / 2 for k in (-5, -3, -1, 1, 3, 5) if abs(k * np.pi / 2) < g.types[0].domain[1]]
    assert np.allclose(np.sort(roots), expect, atol=1e-12)


def test_correlator_errors(ll_rays):
    with pytest.raises(ObservableError):
        ray_correlator("particle", "particle", 0.3, 1.0, 0.0, ll_rays)
    with pytest.raises(ObservableError):
        ray_correlator("particle", "particle", 0.3, 0.0, 0.2, ll_rays)
    with pytest.raises(ObservableError):
        ray_correlator("particle", "particle", 0.3, 1.0, 0.2, ll_rays, mode="shifted_wall", t0=1.0)
    with pytest.raises(ObservableError):
        ray_correlator("particle", "particle", 0.3, 1.0, 0.2, ll_rays, mode="other")


def test_shifted_wall_direct_term_is_finite(ll_rays):
    r = ray_correlator("particle", "particle", 0.3, 1.0, 0.6, ll_rays, mode="shifted_wall", t0=2.0)
    assert np.isfinite(r.value) and r.value > 0 and r.indirect is None


def test_grids_must_agree():
    m = lieb_liniger(1.0)
    a = solve_gge(DrivingTerm.thermal(m, 1.0), m, build_grid(m.particle_types(), 16))
    b = solve_gge(DrivingTerm.thermal(m, 1.0), m, build_grid(m.particle_types(), 24))
    with pytest.raises(GhdError):
        RaySolution(a, b)

"""Partitioning protocol: ray-dependent states and the characteristics ``u~(xi; theta)``.

Two homogeneous states joined at the origin evolve into states depending
only on the ray ``xi = x / t``,

    n(xi; theta) = n_L Theta(v^eff(xi; theta) - xi) + n_R Theta(xi - v^eff(xi; theta)).

Each ray state is found by iterating on the set of jump rapidities.  Its
occupation is discontinuous at that set, so spectral integrals use partial
quadrature weights on either side of each jump instead of node values.

The scaled characteristics are

    u~(xi; theta) = (xi - xi*) exp int_{-inf}^{xi} deta [1/(eta - v(eta; theta)) - 1/(eta - xi*)],

with ``xi*(theta)`` the ray on which ``theta`` travels.  The integrand is
finite at ``eta = xi*``; outside the fan of rays the state is exactly
``n_L`` or ``n_R`` and the integral is done analytically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre
from scipy.optimize import brentq

from .errors import DegenerateRay, GhdError, ObservableError, RayNonConvergence
from .spectral import gauss_legendre_rule
from .tba import GgeState

JUMP_TOL = 1e-13
FAN_MARGIN = 1e-3


# ---------------------------------------------------------------------------
# root finding in rapidity


def rapidity_roots(func, grid, a: int, *, xtol: float = 1e-14) -> np.ndarray:
    """Sign changes of ``func(theta)`` over type ``a``, refined by Brent's method.

    The scan uses the quadrature nodes and both domain ends.
    """
    lo, hi = grid.types[a].domain
    th = np.concatenate([[lo], grid.theta[grid.slices[a]], [hi]])
    vals = np.asarray(func(th), dtype=float)
    roots = []
    for k in range(th.size - 1):
        if vals[k] == 0.0:
            roots.append(th[k])
        elif vals[k] * vals[k + 1] < 0:
            roots.append(brentq(lambda s: float(func(np.array([s]))[0]), th[k], th[k + 1],
                                xtol=xtol, rtol=8 * np.finfo(float).eps, maxiter=200))
    if vals[-1] == 0.0:
        roots.append(th[-1])
    return np.array(roots)


# ---------------------------------------------------------------------------
# single ray


@dataclass
class RayState:
    """State on one ray with its jump rapidities (one array per type)."""

    xi: float
    state: GgeState
    jumps: list
    iterations: int = 0

    def side(self, theta, a):
        """``+1`` where the left occupation applies (``v^eff > xi``), else ``-1``."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return np.where(self.state.v_eff_at(theta, a) > self.xi, 1, -1)


def _side_intervals(grid, a: int, jumps: np.ndarray, left_first: bool):
    """Intervals of type ``a`` carrying the left occupation."""
    lo, hi = grid.types[a].domain
    edges = np.concatenate([[lo], np.sort(jumps), [hi]])
    out = []
    left = left_first
    for k in range(edges.size - 1):
        if left:
            out.append((edges[k], edges[k + 1]))
        left = not left
    return out


def _ray_state(left: GgeState, right: GgeState, xi: float, jumps: list, left_first: list) -> GgeState:
    grid = left.grid
    WL = np.zeros(grid.size)
    for a, sl in enumerate(grid.slices):
        WL[sl] = grid.interval_weights(a, _side_intervals(grid, a, jumps[a], left_first[a]))
    WR = grid.weights - WL
    measure = WL * left.n + WR * right.n
    measure_nf = WL * left.n * left.f + WR * right.n * right.f
    # node occupations: the side holding most of each node's weight
    n = np.where(WL >= 0.5 * grid.weights, left.n, right.n)
    holder = {}

    def occ(theta, a):
        st = holder["state"]
        theta = np.asarray(theta, dtype=float)
        a = np.broadcast_to(np.asarray(a), theta.shape)
        v = st.v_eff_at(theta, a)
        return np.where(v > xi, left.occupation_at(theta, a), right.occupation_at(theta, a))

    st = GgeState(left.model, grid, n, kernel=left.kernel, measure=measure, measure_nf=measure_nf,
                  occupation_at=occ)
    holder["state"] = st
    return st


def solve_ray(left: GgeState, right: GgeState, xi: float, *, init: GgeState | None = None,
              max_iter: int = 200) -> RayState:
    """Self-consistent ray state by iteration on the jump set."""
    grid = left.grid
    if not grid.same_as(right.grid):
        raise GhdError("left and right states must share the rapidity grid")
    xi = float(xi)
    current = init if init is not None else left
    history = []
    prev = None
    for it in range(1, max_iter + 1):
        jumps, left_first = [], []
        for a in range(grid.n_types):
            jumps.append(rapidity_roots(lambda th, _a=a: current.v_eff_at(th, _a) - xi, grid, a))
            lo = grid.types[a].domain[0]
            left_first.append(bool(current.v_eff_at(np.array([lo]), a)[0] > xi))
        key = [np.round(j, 12) for j in jumps]
        if prev is not None and all(p.shape == j.shape for p, j in zip(prev, jumps)):
            scale = max(1.0, max((float(np.max(np.abs(j))) for j in jumps if j.size), default=1.0))
            if all(np.max(np.abs(p - j), initial=0.0) <= JUMP_TOL * scale for p, j in zip(prev, jumps)):
                return RayState(xi, current, jumps, it)
        for old in history[:-1]:
            if all(o.shape == k.shape and np.array_equal(o, k) for o, k in zip(old, key)):
                raise RayNonConvergence(f"jump set cycles on ray xi={xi:.6g}")
        history.append(key)
        prev = jumps
        current = _ray_state(left, right, xi, jumps, left_first)
    raise RayNonConvergence(f"ray xi={xi:.6g} did not converge in {max_iter} iterations")


# ---------------------------------------------------------------------------
# the fan of rays


class RaySolution:
    """Ray states of the partitioning protocol with ``xi*``, ``u~`` and ``V``.

    Parameters
    ----------
    left, right : GgeState
        ``n_L`` and ``n_R`` on the same grid.
    xi : array_like
        Rays on which states are solved eagerly.
    panels, order : int
        Composite Gauss-Legendre rule for the ray integrals inside the fan.
    """

    def __init__(self, left: GgeState, right: GgeState, xi=(), *, panels: int = 24, order: int = 10):
        if not left.grid.same_as(right.grid):
            raise GhdError("left and right states must share the rapidity grid")
        self.left = left
        self.right = right
        self.grid = left.grid
        self.model = left.model
        self.homogeneous = bool(np.array_equal(left.n, right.n))
        self._cache: dict = {}
        self._xi_star: dict = {}  # xi* and panel velocities, keyed per rapidity
        vl = self._extreme_velocity(left, min)
        vr = self._extreme_velocity(right, max)
        self.eta_min = vl - FAN_MARGIN * max(1.0, abs(vl))
        self.eta_max = vr + FAN_MARGIN * max(1.0, abs(vr))
        if self.eta_max <= self.eta_min:
            self.eta_max = self.eta_min + FAN_MARGIN
        edges = np.linspace(self.eta_min, self.eta_max, panels + 1)
        self._panel_edges = edges
        self._gl = gauss_legendre_rule(order, -1.0, 1.0)
        self.xi = np.asarray(xi, dtype=float)
        self.states = [self.ray(x) for x in np.sort(self.xi)]

    @staticmethod
    def _extreme_velocity(state: GgeState, pick) -> float:
        vals = [state.v_eff]
        for a, t in enumerate(state.grid.types):
            vals.append(state.v_eff_at(np.array(t.domain), a))
        return float(pick(np.min(v) if pick is min else np.max(v) for v in vals))

    # -- ray states ----------------------------------------------------------

    def ray(self, xi: float) -> RayState:
        xi = float(xi)
        if xi in self._cache:
            return self._cache[xi]
        if self.homogeneous:
            rs = RayState(xi, self.left, [np.zeros(0)] * self.grid.n_types, 0)
        elif xi <= self.eta_min:
            rs = RayState(xi, self.left, [np.zeros(0)] * self.grid.n_types, 0)
        elif xi >= self.eta_max:
            rs = RayState(xi, self.right, [np.zeros(0)] * self.grid.n_types, 0)
        else:
            init = None
            if self._cache:
                keys = np.array(list(self._cache))
                init = self._cache[float(keys[np.argmin(np.abs(keys - xi))])].state
            rs = solve_ray(self.left, self.right, xi, init=init)
        self._cache[xi] = rs
        return rs

    def state(self, xi: float) -> GgeState:
        return self.ray(xi).state

    def occupation(self, xi: float) -> np.ndarray:
        """Node occupations on ray ``xi`` (each node takes the side holding it)."""
        return self.state(xi).n

    def v_eff(self, eta, theta, a=0) -> np.ndarray:
        """``v^eff(eta; theta)`` for an array of rays at fixed rapidities."""
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return np.stack([self.state(e).v_eff_at(theta, a) for e in eta])

    # -- xi*, u~ and V -----------------------------------------------------------

    def xi_star(self, theta: float, a: int = 0) -> float:
        """Ray ``xi*`` with ``v^eff(xi*; theta) = xi*``."""
        key = (float(theta), int(a))
        if key in self._xi_star:
            return self._xi_star[key]
        th = np.array([float(theta)])
        if self.homogeneous:
            val = float(self.left.v_eff_at(th, a)[0])
        else:
            F = lambda e: float(self.state(e).v_eff_at(th, a)[0]) - e  # noqa: E731
            eta = np.concatenate([[self.eta_min], self._panel_nodes().ravel(), [self.eta_max]])
            vals = np.concatenate([[F(self.eta_min)], self._panel_velocity(theta, a).ravel() - eta[1:-1],
                                   [F(self.eta_max)]])
            idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
            if idx.size == 0:
                raise DegenerateRay(f"no self-consistent ray for theta={theta:.6g}")
            k = int(idx[0])
            if vals[k] == 0.0:
                val = float(eta[k])
            elif vals[k + 1] == 0.0:
                val = float(eta[k + 1])
            else:
                val = brentq(F, eta[k], eta[k + 1], xtol=1e-14, rtol=8 * np.finfo(float).eps, maxiter=200)
        self._xi_star[key] = val
        return val

    # -- eta panels -------------------------------------------------------------

    def _panel_nodes(self) -> np.ndarray:
        """Gauss-Legendre nodes of every panel inside the fan; shape (P, q)."""
        x, _ = self._gl
        e = self._panel_edges
        return 0.5 * (e[1:] - e[:-1])[:, None] * x[None, :] + 0.5 * (e[1:] + e[:-1])[:, None]

    def _panel_velocity(self, theta: float, a: int) -> np.ndarray:
        """``v^eff(eta; theta)`` at all panel nodes (cached per rapidity)."""
        key = ("v", float(theta), int(a))
        if key not in self._xi_star:
            eta = self._panel_nodes()
            v = self.v_eff(eta.ravel(), [theta], a)[:, 0].reshape(eta.shape)
            self._xi_star[key] = v
        return self._xi_star[key]

    def _integrand(self, eta: np.ndarray, v: np.ndarray, theta: float, a: int, xs: float) -> np.ndarray:
        d = eta - xs
        close = np.abs(d) < 1e-9 * max(1.0, abs(xs))
        out = 1.0 / (eta - v) - 1.0 / np.where(close, 1.0, d)
        if np.any(close):
            # finite limit: v''/2 with v' = 0 at xi*
            h = 1e-4 * max(1.0, abs(xs))
            vv = self.v_eff(np.array([xs - h, xs, xs + h]), [theta], a)[:, 0]
            out[close] = 0.5 * (vv[0] - 2 * vv[1] + vv[2]) / (h * h)
        return out

    def _fan_integral(self, upper: float, theta: float, a: int, xs: float) -> float:
        """Integral from ``eta_min`` to ``upper`` inside the fan.

        Full panels use the Gauss rule; the last, partial panel integrates the
        Legendre interpolant of the node values, so no extra ray solves are
        needed.
        """
        eta = self._panel_nodes()
        g = self._integrand(eta, self._panel_velocity(theta, a), theta, a, xs)
        e = self._panel_edges
        x, w = self._gl
        half = 0.5 * (e[1:] - e[:-1])
        k = int(np.clip(np.searchsorted(e, upper, side="right") - 1, 0, e.size - 2))
        total = float(np.sum(half[:k] * (g[:k] @ w)))
        s = 2.0 * (upper - e[k]) / (e[k + 1] - e[k]) - 1.0
        if s >= 1.0:
            return total + float(half[k] * (g[k] @ w))
        c = legendre.legfit(x, g[k], x.size - 1)
        ci = legendre.legint(c, lbnd=-1.0)
        return total + float(half[k] * legendre.legval(s, ci))

    def exponent(self, upper: float, theta: float, a: int = 0) -> float:
        """``int_{-inf}^{upper} [1/(eta - v) - 1/(eta - xi*)] deta``."""
        xs = self.xi_star(theta, a)
        if self.homogeneous:
            return 0.0
        th = np.array([float(theta)])
        vL = float(self.left.v_eff_at(th, a)[0])
        vR = float(self.right.v_eff_at(th, a)[0])
        lo, hi = self.eta_min, self.eta_max
        if upper <= lo:
            return float(np.log(abs(upper - vL)) - np.log(abs(upper - xs)))
        total = float(np.log(abs(lo - vL)) - np.log(abs(lo - xs)))
        total += self._fan_integral(min(upper, hi), theta, a, xs)
        if upper > hi:
            total += float(np.log(abs(upper - vR)) - np.log(abs(hi - vR))
                           - np.log(abs(upper - xs)) + np.log(abs(hi - xs)))
        return total

    def u_tilde(self, xi, theta: float, a: int = 0) -> np.ndarray:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        xs = self.xi_star(theta, a)
        return np.array([(x - xs) * np.exp(self.exponent(x, theta, a)) for x in xi])

    def V(self, theta: float, a: int = 0) -> float:
        return float(np.exp(self.exponent(self.xi_star(theta, a), theta, a)))

    def du_tilde_dtheta(self, xi: float, theta: float, a: int = 0, step: float = 1e-5) -> float:
        h = step * max(1.0, abs(theta))
        up = self.u_tilde(xi, theta + h, a)[0]
        dn = self.u_tilde(xi, theta - h, a)[0]
        return float((up - dn) / (2 * h))

    def du_tilde_dxi(self, xi: float, theta: float, a: int = 0, step: float = 1e-5) -> float:
        h = step * max(1.0, abs(xi))
        u = self.u_tilde(np.array([xi - h, xi + h]), theta, a)
        return float((u[1] - u[0]) / (2 * h))

    def boundary_state(self, sign: int) -> GgeState:
        return self.right if sign > 0 else self.left


def solve_rays(n_left: GgeState, n_right: GgeState, xi_grid, **kw) -> RaySolution:
    """Ray states on ``xi_grid`` for the partitioning protocol."""
    return RaySolution(n_left, n_right, xi_grid, **kw)


def u_tilde_and_V(ray: RaySolution, theta: float, a: int = 0):
    """``(u~(xi; theta) on ray.xi, V(theta))``."""
    return ray.u_tilde(ray.xi, theta, a), ray.V(theta, a)


# ---------------------------------------------------------------------------
# correlators


def _insertion(state: GgeState, key, kind: str, theta, a):
    theta = np.atleast_1d(theta)
    h = state.charge_dr_at(key, theta, a)
    if kind == "current":
        return state.v_eff_at(theta, a) * h
    if kind != "density":
        raise ObservableError(f"unknown insertion kind {kind!r}")
    return h


def _ray_roots(ray: RaySolution, xi: float):
    """``theta`` with ``v^eff(xi; theta) = xi`` (the jump set of the ray)."""
    rs = ray.ray(xi)
    if ray.homogeneous or not any(j.size for j in rs.jumps):
        out = []
        for a in range(ray.grid.n_types):
            st = rs.state
            for th in rapidity_roots(lambda s, _a=a: st.v_eff_at(s, _a) - xi, ray.grid, a):
                out.append((float(th), a))
        return out
    return [(float(th), a) for a, js in enumerate(rs.jumps) for th in js]


def _rho_p_f(state: GgeState, theta, a, n):
    rho = state.rho_s_at(np.atleast_1d(theta), a)
    f = state.factor_at(np.atleast_1d(theta), a, np.atleast_1d(n))
    return rho * n * f


@dataclass
class RayCorrelation:
    value: float
    direct: float
    indirect: float | None = None
    roots: list = field(default_factory=list)


def ray_correlator(i, j, xi: float, t: float, y: float, ray: RaySolution, mode: str = "wall_at_zero", *,
                   side: int | None = None, kinds=("density", "density"), t0: float | None = None,
                   regularized=None) -> RayCorrelation:
    """Scaled two-point function on a ray of the partitioning protocol.

    Modes
    -----
    ``wall_at_zero``
        Wall at time 0, observation at ``(xi t, t)`` and insertion at
        ``(y, 0)``.  For ``y != 0`` a finite root sum over ``u~(xi; gamma) =
        y/t`` with ``1/|d_theta u~|`` weights; ``y = 0`` needs ``side = +1``
        or ``-1`` and gives the ``y -> 0^{+-}`` limit with the ``1/V`` factor.
    ``shifted_wall``
        Wall at time ``-t0``; both points on the ray ``xi = y / t0``.  The
        direct contribution is returned; the indirect one is computed by the
        general pipeline when ``regularized`` (a callable returning a
        two-point function for the smoothed initial state) is supplied.
    """
    if t <= 0:
        raise ObservableError("ray correlators need t > 0")
    if mode == "wall_at_zero":
        if y == 0.0:
            if side not in (1, -1):
                raise ObservableError("y = 0 needs side=+1 or side=-1")
            return _wall_limit(i, j, xi, t, side, ray, kinds)
        return _wall_root_sum(i, j, xi, t, y, ray, kinds)
    if mode == "shifted_wall":
        if t0 is None or t0 <= 0:
            raise ObservableError("shifted_wall needs t0 > 0")
        if abs(y / t0 - xi) > 1e-12 * max(1.0, abs(xi)):
            raise ObservableError("shifted_wall needs both points on the ray: y / t0 = xi")
        direct = _shifted_direct(i, j, xi, t, ray, kinds)
        indirect = None
        if regularized is not None:
            total = float(regularized(i, j, xi * (t + t0), t, y))
            indirect = total - direct.value
            return RayCorrelation(total, direct.value, indirect, direct.roots)
        return direct
    raise ObservableError(f"unknown mode {mode!r}")


def _wall_root_sum(i, j, xi, t, y, ray: RaySolution, kinds) -> RayCorrelation:
    st = ray.state(xi)
    sgn = 1 if y > 0 else -1
    bstate = ray.boundary_state(sgn)
    target = y / t
    total = 0.0
    roots = []
    for a in range(ray.grid.n_types):
        fun = lambda th, _a=a: np.array([ray.u_tilde(xi, s, _a)[0] for s in np.atleast_1d(th)]) - target  # noqa: E731
        for th in rapidity_roots(fun, ray.grid, a, xtol=1e-12):
            du = ray.du_tilde_dtheta(xi, th, a)
            if du == 0.0:
                raise DegenerateRay(f"d_theta u~ vanishes at theta={th:.6g}")
            n = bstate.occupation_at(np.array([th]), a)
            w = _rho_p_f(st, th, a, n)[0] / abs(du)
            val = w * _insertion(st, i, kinds[0], th, a)[0] * _insertion(bstate, j, kinds[1], th, a)[0]
            total += float(val)
            roots.append(dict(theta=th, type=a, du=du))
    return RayCorrelation(total / t, total / t, 0.0, roots)


def _wall_limit(i, j, xi, t, side, ray: RaySolution, kinds) -> RayCorrelation:
    st = ray.state(xi)
    bstate = ray.boundary_state(side)
    total = 0.0
    roots = []
    for th, a in _ray_roots(ray, xi):
        dv = float(st.dv_eff_at(np.array([th]), a)[0])
        if dv == 0.0:
            raise DegenerateRay(f"stationary effective velocity at theta={th:.6g}")
        V = ray.V(th, a)
        n = bstate.occupation_at(np.array([th]), a)
        w = _rho_p_f(st, th, a, n)[0] / (V * abs(dv))
        total += float(w * _insertion(st, i, kinds[0], th, a)[0] * _insertion(bstate, j, kinds[1], th, a)[0])
        roots.append(dict(theta=th, type=a, V=V, dv=dv))
    return RayCorrelation(total / t, total / t, 0.0, roots)


def _shifted_direct(i, j, xi, t, ray: RaySolution, kinds) -> RayCorrelation:
    """Direct term with both insertions in the ray state; ``n f`` at the jump is the two-sided mean."""
    st = ray.state(xi)
    total = 0.0
    roots = []
    for th, a in _ray_roots(ray, xi):
        th1 = np.array([th])
        dv = float(st.dv_eff_at(th1, a)[0])
        if dv == 0.0:
            raise DegenerateRay(f"stationary effective velocity at theta={th:.6g}")
        V = ray.V(th, a)
        nL = ray.left.occupation_at(th1, a)
        nR = ray.right.occupation_at(th1, a)
        nf = 0.5 * (nL * st.factor_at(th1, a, nL) + nR * st.factor_at(th1, a, nR))[0]
        w = st.rho_s_at(th1, a)[0] * nf / (V * abs(dv))
        total += float(w * _insertion(st, i, kinds[0], th, a)[0] * _insertion(st, j, kinds[1], th, a)[0])
        roots.append(dict(theta=th, type=a, V=V, dv=dv))
    return RayCorrelation(total / t, total / t, None, roots)


def homogeneous_ray_correlator(i, j, xi: float, t: float, ray: RaySolution, side: int,
                               kinds=("density", "density")) -> float:
    """Correlator of the homogeneous state of ray ``xi`` at separation ``xi t``.

    At the contributing rapidity the ray occupation jumps; ``side`` picks the
    one-sided value, matching the ``y -> 0^{+-}`` partitioning limit.
    """
    st = ray.state(xi)
    bstate = ray.boundary_state(side)
    total = 0.0
    for th, a in _ray_roots(ray, xi):
        th1 = np.array([th])
        dv = float(st.dv_eff_at(th1, a)[0])
        n = bstate.occupation_at(th1, a)
        w = _rho_p_f(st, th, a, n)[0] / abs(dv)
        total += float(w * _insertion(st, i, kinds[0], th, a)[0] * _insertion(st, j, kinds[1], th, a)[0])
    return total / t

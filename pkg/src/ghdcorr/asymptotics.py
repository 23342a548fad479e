"""Long-time ``1/t`` coefficients of two-point functions from localized initial data.

An initial fluid ``n_0(x; theta)`` that becomes homogeneous at both ends,
``n_0 -> n_0^{+-}``, evolves along rays into the partitioning-protocol states
built from ``(n_0^-, n_0^+)``.  The two-point function decays as

    <q_i(xi t, t) q_j(y, 0)> ~ A_ij(xi; y) / t,

where ``A_ij`` depends on the regularized wall only through ``y_*(theta)``,
the zero of the map ``r(y; theta)``.  ``y_*`` is fixed by occupation
equipartition,

    n_0(y_*) = (n_0^- rho_s^+ - n_0^+ rho_s^-) / (rho_s^+ - rho_s^-),

and ``r(y) = int_{y_*}^y rho_s(z, 0) dz / rho_s^{sgn(y - y_*)}``.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq

from .characteristics import ColumnSpline, FluidState
from .correlators import ObservableSpec, two_point
from .errors import DegenerateRay, EquipartitionUnsolvable, ObservableError
from .partitioning import RaySolution, rapidity_roots
from .spectral import TWO_PI, gauss_legendre_rule
from .tba import GgeState

EQUAL_TOL = 1e-10


class AsymptoticContext:
    """Initial fluid with its asymptotic states and the induced ray solution.

    Parameters
    ----------
    fluid0 : FluidState
        Initial state.  Its end nodes must already be in the asymptotic
        regime unless ``minus``/``plus`` are given.
    minus, plus : GgeState, optional
        ``n_0^-`` and ``n_0^+``; default to the states at the end nodes.
    panels, order : int
        Ray-integral resolution, passed to :class:`RaySolution`.
    """

    def __init__(self, fluid0: FluidState, *, minus: GgeState | None = None, plus: GgeState | None = None,
                 panels: int = 24, order: int = 10):
        self.fluid0 = fluid0
        self.grid = fluid0.grid
        self.model = fluid0.model
        self.minus = minus if minus is not None else fluid0.local_state(0)
        self.plus = plus if plus is not None else fluid0.local_state(fluid0.nx - 1)
        self.equal = float(np.max(np.abs(self.plus.n - self.minus.n))) < EQUAL_TOL
        right = self.minus if self.equal else self.plus
        self.ray = RaySolution(self.minus, right, [], panels=panels, order=order)
        self._y_star: dict = {}
        self._columns: dict = {}

    # -- per-rapidity data -----------------------------------------------------

    def asymptotic(self, theta: float, a: int = 0):
        """``(n_0^-, n_0^+, rho_s^-, rho_s^+)`` at ``theta``."""
        th = np.array([float(theta)])
        return (float(self.minus.occupation_at(th, a)[0]), float(self.plus.occupation_at(th, a)[0]),
                float(self.minus.rho_s_at(th, a)[0]), float(self.plus.rho_s_at(th, a)[0]))

    def columns(self, theta: float, a: int = 0):
        """``n_0(x; theta)`` and ``rho_s(x, 0; theta)`` over the spatial grid."""
        key = (float(theta), int(a))
        if key not in self._columns:
            n = self.fluid0.occupation_column([theta], [a])[:, 0]
            rho = self.fluid0.rho_s_at([theta], [a])[:, 0]
            self._columns[key] = (n, rho)
        return self._columns[key]

    def n0_at(self, y: float, theta: float, a: int = 0) -> float:
        return float(self.fluid0.state_at(y).occupation_at(np.array([float(theta)]), a)[0])

    def equipartition_value(self, theta: float, a: int = 0) -> float:
        nm, np_, rm, rp = self.asymptotic(theta, a)
        if rp == rm:
            raise EquipartitionUnsolvable(f"rho_s^+ = rho_s^- at theta={theta:.6g}")
        return (nm * rp - np_ * rm) / (rp - rm)

    # -- y_* -----------------------------------------------------------------------

    def y_star_candidates(self, theta: float, a: int = 0) -> list:
        """All crossings of ``n_0(y; theta)`` with the equipartition value."""
        target = self.equipartition_value(theta, a)
        x = self.fluid0.x
        n, _ = self.columns(theta, a)
        d = n - target
        out = []
        for k in range(x.size - 1):
            if d[k] == 0.0:
                out.append(float(x[k]))
            elif d[k] * d[k + 1] < 0:
                out.append(brentq(lambda y: self.n0_at(y, theta, a) - target, x[k], x[k + 1],
                                  xtol=1e-13, rtol=8 * np.finfo(float).eps))
        if d[-1] == 0.0:
            out.append(float(x[-1]))
        return out

    def y_star(self, theta: float, a: int = 0) -> float:
        """Zero of ``r(y; theta)``; among several crossings the one minimizing the sum rule."""
        if self.equal:
            raise ObservableError("y_* is undefined for equal asymptotics")
        key = (float(theta), int(a))
        if key not in self._y_star:
            cands = self.y_star_candidates(theta, a)
            if not cands:
                raise EquipartitionUnsolvable(f"no equipartition crossing at theta={theta:.6g}")
            if len(cands) == 1:
                self._y_star[key] = cands[0]
            else:
                res = [abs(self.sum_rule(theta, a, y_star=c)[0]) for c in cands]
                self._y_star[key] = cands[int(np.argmin(res))]
        return self._y_star[key]

    def sigma(self, y: float, theta: float, a: int = 0) -> int:
        return 1 if y > self.y_star(theta, a) else -1

    # -- r and I ---------------------------------------------------------------------

    def r_function(self, y, theta: float, a: int = 0) -> np.ndarray:
        """``r(y; theta) = int_{y_*}^y rho_s(z, 0) dz / rho_s^{+-}``."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        _, _, rm, rp = self.asymptotic(theta, a)
        _, rho = self.columns(theta, a)
        sp = ColumnSpline(self.fluid0.x, rho[:, None])
        ys = self.y_star(theta, a)
        diff = sp.integral(y[:, None])[:, 0] - sp.integral(np.array([[ys]]))[0, 0]
        return np.where(y > ys, diff / rp, diff / rm)

    def I_function(self, y: float, theta: float, a: int = 0) -> float:
        """Two-branch integral ``I(y; theta)`` (without assuming ``I(-inf) = 0``)."""
        nm, np_, rm, rp = self.asymptotic(theta, a)
        ys = self.y_star(theta, a)
        nstar = self.n0_at(ys, theta, a)
        ny = self.n0_at(y, theta, a)
        if y < ys:
            return (np_ - nstar) / rp + (nstar - ny) / rm
        return (np_ - ny) / rp

    def I_total(self, theta: float, a: int = 0) -> float:
        """``lim_{y -> -inf} I(y; theta)``; vanishes by equipartition."""
        nm, np_, rm, rp = self.asymptotic(theta, a)
        nstar = self.n0_at(self.y_star(theta, a), theta, a)
        return (np_ - nstar) / rp + (nstar - nm) / rm

    # -- sum rule -------------------------------------------------------------------------

    def acceleration_column(self, theta: float, a: int = 0) -> np.ndarray:
        """``a^eff_0(x; theta)`` over the spatial grid at an arbitrary rapidity."""
        fl = self.fluid0
        th = np.array([float(theta)])
        if fl.profile is not None:
            acc = fl.acceleration()
            dw_dr = -acc * fl.p_dr
            h = 1e-3 * max(1.0, float(np.max(np.abs(fl.x))) * 1e-2)
            xx = fl.x[:, None]
            w = fl.profile
            dw = (8 * (w(xx + h, th, a) - w(xx - h, th, a))
                  - (w(xx + 2 * h, th, a) - w(xx - 2 * h, th, a))) / (12 * h)
            dw = np.broadcast_to(np.asarray(dw, dtype=float), (fl.nx, 1))[:, 0]
            dr = dw + fl.scalar_dr_at(th, [a], 0.0, dw_dr)[:, 0]
            return -dr / (TWO_PI * fl.rho_s_at(th, [a])[:, 0])
        n, rho = self.columns(theta, a)
        sp = ColumnSpline(fl.x, n[:, None])
        dn = sp.derivative(fl.x)[:, 0]
        f = self.minus.factor_at(np.full(fl.nx, float(theta)), np.full(fl.nx, a), n)
        denom = TWO_PI * rho * n * f
        return np.where(denom > 0, dn / np.where(denom > 0, denom, 1.0), 0.0)

    def sum_rule(self, theta: float, a: int = 0, y_star: float | None = None):
        """``(int dz rho_p f a^eff / rho_s^{sigma(z)}, int dz |rho_p f a^eff| / rho_s^{sigma})``."""
        ys = self.y_star(theta, a) if y_star is None else y_star
        _, _, rm, rp = self.asymptotic(theta, a)
        n, rho = self.columns(theta, a)
        f = self.minus.factor_at(np.full(n.shape, float(theta)), np.full(n.shape, a), n)
        K = rho * n * f * self.acceleration_column(theta, a)
        sp = ColumnSpline(self.fluid0.x, np.stack([K, np.abs(K)], axis=1))
        x0, x1 = self.fluid0.x[0], self.fluid0.x[-1]
        below = sp.integral(np.array([[ys, ys]]))[0]
        total = sp.integral(np.array([[x1, x1]]))[0]
        val = below / rm + (total - below) / rp
        del x0
        return float(val[0]), float(val[1])

    # -- zero equation cross-check -------------------------------------------------------------

    def _J(self, gamma: float, b: int) -> float:
        """``int dz rho_s(z, 0) (n_0(z) - n_0^sigma) / rho_s^sigma`` at ``gamma``."""
        nm, np_, rm, rp = self.asymptotic(gamma, b)
        n, rho = self.columns(gamma, b)
        ys = self.y_star(gamma, b)
        F = np.stack([rho * (n - nm) / rm, rho * (n - np_) / rp], axis=1)
        sp = ColumnSpline(self.fluid0.x, F)
        x1 = self.fluid0.x[-1]
        lo = sp.integral(np.array([[ys, ys]]))[0]
        hi = sp.integral(np.array([[x1, x1]]))[0]
        return float(lo[0] + hi[1] - lo[1])

    def dressed_kernel(self, state: GgeState, theta: float, a: int, gamma: float, b: int) -> float:
        """``T^dr(theta, gamma) = ((1 - T n)^{-1} T)(theta, gamma)`` in ``state``."""
        col = state.dressed_kernel_column([gamma], [b])[:, 0]
        base = float(np.asarray(self.model.phi(theta, gamma, a, b))) / TWO_PI
        return base + float(state.kernel.row(np.array([theta]), np.array([a]))[0] @ (state.measure * col))

    def zero_equation_sides(self, theta: float, a: int = 0, n_gamma: int = 48):
        """Both sides of the equation fixing ``y_*`` through the ray states.

        The ray integral over ``eta < xi*(theta)`` with the ``1/|v'|`` Jacobian
        is carried out in the rapidity ``gamma`` of the contributing
        quasi-particle, ``eta = xi*(gamma)``.
        """
        ray = self.ray
        xs_theta = ray.xi_star(theta, a)
        lhs = 0.0
        for b in range(self.grid.n_types):
            lo, hi = self.grid.types[b].domain
            F = lambda g, _b=b: ray.xi_star(g, _b) - xs_theta  # noqa: E731
            flo, fhi = F(lo), F(hi)
            if b == a:
                edge = float(theta)
            elif flo * fhi < 0:
                edge = brentq(F, lo, hi, xtol=1e-13)
            else:
                edge = hi if fhi < 0 else lo
            rising = fhi > flo
            g_lo, g_hi = (lo, edge) if rising else (edge, hi)
            if g_hi <= g_lo:
                continue
            gs, ws = gauss_legendre_rule(n_gamma, g_lo, g_hi)
            for g, w in zip(gs, ws):
                eta = ray.xi_star(g, b)
                st = ray.state(eta)
                rho = float(st.rho_s_at(np.array([g]), b)[0])
                Tdr = self.dressed_kernel(st, theta, a, g, b)
                lhs += w * rho * Tdr * self._J(g, b) / ray.V(g, b)
        _, _, rm, _ = self.asymptotic(theta, a)
        _, rho0 = self.columns(theta, a)
        sp = ColumnSpline(self.fluid0.x, np.stack([rho0 - rm, rho0], axis=1))
        ys = self.y_star(theta, a)
        at0 = sp.integral(np.array([[0.0, 0.0]]))[0]
        atys = sp.integral(np.array([[ys, ys]]))[0]
        rhs = float(at0[0] + atys[1] - at0[1])
        return lhs, rhs

    # -- coefficient ----------------------------------------------------------------------------

    def contributing_rapidities(self, xi: float):
        """``gamma`` with ``v^eff(xi; gamma) = xi``."""
        st = self.ray.state(xi)
        out = []
        for b in range(self.grid.n_types):
            for g in rapidity_roots(lambda s, _b=b: st.v_eff_at(s, _b) - xi, self.grid, b):
                out.append((float(g), b))
        return out

    def coefficient_A(self, A: ObservableSpec, B: ObservableSpec, xi: float, y: float) -> float:
        """Coefficient ``A(xi; y)`` of the ``1/t`` decay of ``<A(xi t, t) B(y, 0)>``."""
        if isinstance(A, (str, int)):
            A = ObservableSpec.density(A)
        if isinstance(B, (str, int)):
            B = ObservableSpec.density(B)
        st_xi = self.ray.state(xi)
        st_y = self.fluid0.state_at(y)
        VB = B.values(st_y)
        g = st_y.rho_s * st_y.f * VB
        g_dr = st_y.dress(g, "vector")
        total = 0.0
        for gam, b in self.contributing_rapidities(xi):
            th = np.array([gam])
            dv = float(st_xi.dv_eff_at(th, b)[0])
            if dv == 0.0:
                raise DegenerateRay(f"stationary effective velocity at gamma={gam:.6g}")
            hi = float(A.at(st_xi, th, b)[0])
            ny = float(st_y.occupation_at(th, b)[0])
            rho_y = float(st_y.rho_s_at(th, b)[0])
            fy = float(st_y.factor_at(th, b, np.array([ny]))[0])
            vb = float(B.at(st_y, th, b)[0])
            star = float(st_y.dress_at(th, b, 0.0, g_dr, "vector")[0])
            if self.equal:
                nref = float(self.minus.occupation_at(th, b)[0])
                pref = 1.0 / abs(dv)
            elif self.fluid0.kernel.is_zero:
                # free: V = 1, rho_s is state independent and the star term vanishes
                nref = ny
                pref = 1.0 / abs(dv)
            else:
                nm, np_, rm, rp = self.asymptotic(gam, b)
                sg = self.sigma(y, gam, b)
                nref, rref = (np_, rp) if sg > 0 else (nm, rm)
                pref = float(st_xi.rho_s_at(th, b)[0]) / (rref * self.ray.V(gam, b) * abs(dv))
            total += pref * hi * (rho_y * ny * fy * vb + (ny - nref) * star)
        return total


def richardson(times, values, order: int = 1) -> float:
    """Extrapolate ``values(t) = A + sum_k c_k / t^k`` to ``t -> inf`` (least squares)."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.size < order + 1:
        raise ObservableError("not enough times for the requested extrapolation order")
    M = np.stack([t ** (-k) for k in range(order + 1)], axis=1)
    coef, *_ = np.linalg.lstsq(M, v, rcond=None)
    return float(coef[0])


def scaled_correlator(A: ObservableSpec, B: ObservableSpec, xi: float, t: float, y: float,
                      fluid0: FluidState) -> float:
    """``t <A(xi t, t) B(y, 0)>`` from the full inhomogeneous pipeline (``xi t`` must be a node)."""
    return t * two_point(A, B, xi * t, t, y, fluid0)

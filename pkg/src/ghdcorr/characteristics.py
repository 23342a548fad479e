"""Inhomogeneous fluid states and their evolution by characteristics.

A :class:`FluidState` holds the occupation ``n(x; theta)`` on a spatial grid
together with the dressing operators of every cell, computed in one batched
pass.  :func:`evolve` solves

    n_t(x; theta) = n_0(u(x, t; theta); theta)
    int_{x0}^{x} rho_s(z, t) dz = int_{x0}^{u} rho_s(z, 0) dz + v^eff rho_s (x0, 0) t

by damped iteration.  Spatial integrals use the exact antiderivative of the
cubic-spline interpolant of each rapidity column, extended linearly past the
grid ends where the state is stationary.

The resulting :class:`CharacteristicsField` evaluates ``u`` and its rapidity
derivative at arbitrary rapidities from the defining integral equation
(Nystrom evaluation of the dressed quantities), which is what the root
finding of the propagator relies on.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import CharacteristicsError, DegenerateCharacteristic, DressingSingular, GhdError
from .models import ModelSpec
from .spectral import TWO_PI, KernelOperator, SpectralGrid, Statistics, free_energy, occupation
from .tba import COND_MAX, DrivingTerm, GgeState, model_kernel, solve_pseudo_energy

STATIONARY_TOL = 1e-8


# ---------------------------------------------------------------------------
# column-wise piecewise polynomials


def pp_eval(x_breaks: np.ndarray, c: np.ndarray, xq: np.ndarray) -> np.ndarray:
    """Evaluate column ``j`` of a piecewise polynomial at ``xq[..., j]``.

    ``c`` has shape ``(k, m, ncol)`` in the scipy ``PPoly`` layout (highest
    power first).  Points outside the breakpoints use the end pieces.
    """
    xq = np.asarray(xq, dtype=float)
    m = c.shape[1]
    idx = np.clip(np.searchsorted(x_breaks, xq, side="right") - 1, 0, m - 1)
    dx = xq - x_breaks[idx]
    cols = np.broadcast_to(np.arange(c.shape[2]), xq.shape)
    out = c[0, idx, cols]
    for k in range(1, c.shape[0]):
        out = out * dx + c[k, idx, cols]
    return out


class ColumnSpline:
    """Cubic-spline interpolants of the columns of ``data(x, col)``.

    Evaluation outside the grid is constant (data assumed stationary there);
    the running integral from ``x[0]`` continues linearly accordingly.
    """

    def __init__(self, x: np.ndarray, data: np.ndarray):
        self.x = np.asarray(x, dtype=float)
        data = np.asarray(data, dtype=float)
        self.data = data
        sp = CubicSpline(self.x, data, axis=0)
        anti = sp.antiderivative()
        self._c = sp.c
        self._ac = anti.c
        self._dc = sp.derivative().c
        self.cumulative = anti(self.x)  # (nx, ncol), zero at x[0]
        self.cumulative = self.cumulative - self.cumulative[0]
        self.total = self.cumulative[-1]

    def value(self, xq):
        xq = np.asarray(xq, dtype=float)
        return pp_eval(self.x, self._c, np.clip(xq, self.x[0], self.x[-1]))

    def derivative(self, xq):
        xq = np.asarray(xq, dtype=float)
        inside = (xq >= self.x[0]) & (xq <= self.x[-1])
        return np.where(inside, pp_eval(self.x, self._dc, np.clip(xq, self.x[0], self.x[-1])), 0.0)

    def integral(self, xq):
        """``int_{x[0]}^{xq} data dz`` column by column."""
        xq = np.asarray(xq, dtype=float)
        x0, x1 = self.x[0], self.x[-1]
        inner = pp_eval(self.x, self._ac, np.clip(xq, x0, x1)) - pp_eval(
            self.x, self._ac, np.full_like(xq, x0))
        left = self.data[0] * (np.minimum(xq, x0) - x0)
        right = self.data[-1] * (np.maximum(xq, x1) - x1)
        return inner + left + right

    def invert_integral(self, target, tol: float = 1e-13, max_iter: int = 50):
        """Solve ``integral(u) = target`` columnwise; the integrand must be positive."""
        target = np.asarray(target, dtype=float)
        x, cum = self.x, self.cumulative
        x0, x1 = x[0], x[-1]
        out = np.empty(target.shape)
        below = target <= 0.0
        above = target >= self.total
        out = np.where(below, x0 + target / self.data[0], out)
        out = np.where(above, x1 + (target - self.total) / self.data[-1], out)
        mid = ~(below | above)
        if np.any(mid):
            # bracket by the node values of the running integral
            ncol = cum.shape[1]
            idx = np.empty(target.shape, dtype=int)
            flat_t = target.reshape(-1, ncol)
            flat_i = idx.reshape(-1, ncol)
            for j in range(ncol):
                flat_i[:, j] = np.searchsorted(cum[:, j], flat_t[:, j], side="right") - 1
            idx = np.clip(idx, 0, x.size - 2)
            cols = np.broadcast_to(np.arange(ncol), target.shape)
            lo, hi = x[idx], x[idx + 1]
            clo, chi = cum[idx, cols], cum[idx + 1, cols]
            u = lo + (hi - lo) * np.clip((target - clo) / np.where(chi > clo, chi - clo, 1.0), 0, 1)
            for _ in range(max_iter):
                g = self.integral(u) - target
                dg = self.value(u)
                step = np.where(dg > 0, g / np.where(dg > 0, dg, 1.0), 0.0)
                un = u - step
                # keep Newton inside the bracket; fall back to bisection
                bad = (un < lo) | (un > hi) | ~np.isfinite(un)
                gl = g < 0
                lo = np.where(gl, np.maximum(lo, u), lo)
                hi = np.where(~gl, np.minimum(hi, u), hi)
                un = np.where(bad, 0.5 * (lo + hi), un)
                done = np.max(np.abs(np.where(mid, un - u, 0.0))) < tol * max(1.0, abs(x1 - x0))
                u = un
                if done:
                    break
            out = np.where(mid, u, out)
        return out


# ---------------------------------------------------------------------------
# fluid states


def _batched_resolvents(T: np.ndarray, measure: np.ndarray):
    """Inverse matrices of ``1 - T diag(mu_x)`` and ``1 - T^T diag(mu_x)`` per cell."""
    N = T.shape[0]
    eye = np.eye(N)
    A = eye[None] - T[None, :, :] * measure[:, None, :]
    B = eye[None] - T.T[None, :, :] * measure[:, None, :]
    try:
        Rv = np.linalg.inv(A)
        Rs = np.linalg.inv(B)
    except np.linalg.LinAlgError as exc:
        raise DressingSingular(str(exc)) from None
    for M, R in ((A, Rv), (B, Rs)):
        cond = np.abs(M).sum(axis=1).max(axis=1) * np.abs(R).sum(axis=1).max(axis=1)
        if not np.all(np.isfinite(cond)) or np.any(cond > COND_MAX):
            raise DressingSingular(f"condition number {np.nanmax(cond):.3g}")
    return Rv, Rs


class FluidState:
    """Occupation field ``n(x; theta)`` with batched per-cell state data.

    Parameters
    ----------
    model, grid : ModelSpec, SpectralGrid
    x : array_like, shape (nx,)
        Strictly increasing spatial nodes; ``x[0]`` plays the role of ``x0``.
    n : array_like, shape (nx, N)
    t : float
    profile : callable, optional
        ``w(x, theta, a)`` driving-term profile that generated ``n``; allows
        exact evaluation of the occupation at any rapidity and position.
    epsilon : array_like, optional
        Pseudo-energies matching ``n``.
    """

    def __init__(self, model: ModelSpec, grid: SpectralGrid, x, n, *, t: float = 0.0,
                 kernel: KernelOperator | None = None, profile: Callable | None = None,
                 epsilon=None, source: "CharacteristicsField | None" = None):
        self.model = model
        self.grid = grid
        self.kernel = kernel if kernel is not None else model_kernel(model, grid)
        self.x = np.asarray(x, dtype=float)
        if self.x.ndim != 1 or self.x.size < 2 or np.any(np.diff(self.x) <= 0):
            raise CharacteristicsError("spatial grid must be strictly increasing with >= 2 nodes")
        n = np.array(n, dtype=float)
        if n.shape != (self.x.size, grid.size):
            raise CharacteristicsError(f"occupation has shape {n.shape}, expected {(self.x.size, grid.size)}")
        if not np.all(np.isfinite(n)) or np.any(n < 0):
            raise GhdError("occupation must be finite and non-negative")
        self.n = n
        self.t = float(t)
        self.profile = profile
        self.source = source
        self.f = grid.per_type(n, _stat_factor)
        self.epsilon = None if epsilon is None else np.asarray(epsilon, dtype=float)
        self.measure = grid.weights[None, :] * n
        T = self.kernel.matrix
        self.p_prime = np.asarray(model.dp(grid.theta, grid.type_of), dtype=float) * np.ones(grid.size)
        self.E_prime = np.asarray(model.dE(grid.theta, grid.type_of), dtype=float) * np.ones(grid.size)
        if self.kernel.is_zero:
            self.Rvec = self.Rsca = None
            self.p_dr = np.broadcast_to(self.p_prime, n.shape).copy()
            self.E_dr = np.broadcast_to(self.E_prime, n.shape).copy()
        else:
            self.Rvec, self.Rsca = _batched_resolvents(T, self.measure)
            self.p_dr = self.Rvec @ self.p_prime
            self.E_dr = self.Rvec @ self.E_prime
        self.rho_s = self.p_dr / TWO_PI
        if np.any(self.rho_s <= 0):
            raise GhdError("state density is not positive")
        self.rho_p = n * self.rho_s
        self.v_eff = self.E_dr / self.p_dr
        self._states: dict = {}

    # -- constructors ----------------------------------------------------

    @classmethod
    def from_profile(cls, model: ModelSpec, grid: SpectralGrid, x, w: Callable, *,
                     kernel: KernelOperator | None = None, tol: float = 1e-12) -> "FluidState":
        """Solve the TBA in every cell for the driving profile ``w(x, theta, a)``."""
        kernel = kernel if kernel is not None else model_kernel(model, grid)
        x = np.asarray(x, dtype=float)
        W = np.asarray(w(x[:, None], grid.theta[None, :], grid.type_of[None, :]), dtype=float)
        W = np.broadcast_to(W, (x.size, grid.size)).copy()
        eps = solve_pseudo_energy(W, kernel, grid, tol=tol)
        n = grid.per_type(eps, occupation)
        return cls(model, grid, x, n, kernel=kernel, profile=w, epsilon=eps)

    @classmethod
    def homogeneous(cls, state: GgeState, x) -> "FluidState":
        x = np.asarray(x, dtype=float)
        n = np.broadcast_to(state.n, (x.size, state.grid.size))
        profile = None
        if state.driving is not None:
            drv = state.driving
            profile = lambda xx, th, a: drv.func(th, a) + 0.0 * xx  # noqa: E731
        return cls(state.model, state.grid, x, n, kernel=state.kernel, profile=profile,
                   epsilon=np.broadcast_to(state.epsilon, n.shape) if state.driving is not None else None)

    # -- basic derived fields -----------------------------------------------

    @property
    def nx(self) -> int:
        return self.x.size

    def dress_vector(self, h):
        """Vector dressing in every cell; ``h`` has shape (N,) or (nx, N)."""
        h = np.broadcast_to(np.asarray(h, dtype=float), self.n.shape)
        if self.Rvec is None:
            return h.copy()
        return np.einsum("xij,xj->xi", self.Rvec, h)

    def dress_scalar(self, h):
        h = np.broadcast_to(np.asarray(h, dtype=float), self.n.shape)
        if self.Rsca is None:
            return h.copy()
        return np.einsum("xij,xj->xi", self.Rsca, h)

    def charge_values(self, h) -> np.ndarray:
        func = self.model.charge(h)
        return np.asarray(func(self.grid.theta, self.grid.type_of), dtype=float) * np.ones(self.grid.size)

    def charge_dr(self, h) -> np.ndarray:
        return self.dress_scalar(self.charge_values(h))

    def density(self, h) -> np.ndarray:
        """``<q_h>(x) = int dtheta/2pi p' n h^dr`` per cell."""
        return (self.measure * self.p_prime[None, :] * self.charge_dr(h)).sum(axis=1) / TWO_PI

    def current(self, h) -> np.ndarray:
        return (self.measure * self.E_prime[None, :] * self.charge_dr(h)).sum(axis=1) / TWO_PI

    def star_dress(self, g):
        """``(T n g)^dr`` in every cell for vector fields ``g`` of shape (nx, N)."""
        g = np.broadcast_to(np.asarray(g, dtype=float), self.n.shape)
        if self.Rvec is None:
            return np.zeros(self.n.shape)
        return np.einsum("xij,xj->xi", self.Rvec, (self.measure * g) @ self.kernel.matrix.T)

    def d_rho_s(self) -> np.ndarray:
        """Rapidity derivative of ``rho_s`` at the nodes, per cell."""
        d2p = np.asarray(self.model.d2p(self.grid.theta, self.grid.type_of), dtype=float) * np.ones(self.grid.size)
        if self.kernel.is_zero:
            return np.broadcast_to(d2p, self.n.shape) / TWO_PI
        dT = self.kernel.dmatrix()
        return (d2p[None, :] + (self.measure * self.p_dr) @ dT.T) / TWO_PI

    def d_E_dr(self) -> np.ndarray:
        d2E = np.asarray(self.model.d2E(self.grid.theta, self.grid.type_of), dtype=float) * np.ones(self.grid.size)
        if self.kernel.is_zero:
            return np.broadcast_to(d2E, self.n.shape).copy()
        dT = self.kernel.dmatrix()
        return d2E[None, :] + (self.measure * self.E_dr) @ dT.T

    def d_v_eff(self) -> np.ndarray:
        """Rapidity derivative of ``v_eff`` at the nodes, per cell."""
        pd, ed = self.p_dr, self.E_dr
        return (self.d_E_dr() * pd - ed * TWO_PI * self.d_rho_s()) / (pd * pd)

    # -- off-grid rapidities -------------------------------------------------

    def _vector_at(self, gamma, b, h_at, h_dr):
        """Nystrom value of a vector-dressed field at rapidities ``gamma`` for all cells."""
        gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
        b = np.broadcast_to(np.atleast_1d(b), gamma.shape)
        base = np.broadcast_to(np.asarray(h_at, dtype=float), gamma.shape)
        if self.kernel.is_zero:
            return np.broadcast_to(base, (self.nx, gamma.size)).copy()
        row = self.kernel.row(gamma, b)  # (m, N)
        return base[None, :] + (self.measure * h_dr) @ row.T

    def rho_s_at(self, gamma, b) -> np.ndarray:
        """``rho_s(x; gamma)`` for all cells; shape (nx, m)."""
        return self._vector_at(gamma, b, self.model.dp(gamma, b), self.p_dr) / TWO_PI

    def E_dr_at(self, gamma, b) -> np.ndarray:
        return self._vector_at(gamma, b, self.model.dE(gamma, b), self.E_dr)

    def d_rho_s_at(self, gamma, b) -> np.ndarray:
        gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
        b = np.broadcast_to(np.atleast_1d(b), gamma.shape)
        base = np.broadcast_to(np.asarray(self.model.d2p(gamma, b), dtype=float), gamma.shape)
        if self.kernel.is_zero:
            return np.broadcast_to(base, (self.nx, gamma.size)) / TWO_PI
        drow = self.kernel.drow(gamma, b)
        return (base[None, :] + (self.measure * self.p_dr) @ drow.T) / TWO_PI

    def d_E_dr_at(self, gamma, b) -> np.ndarray:
        gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
        b = np.broadcast_to(np.atleast_1d(b), gamma.shape)
        base = np.broadcast_to(np.asarray(self.model.d2E(gamma, b), dtype=float), gamma.shape)
        if self.kernel.is_zero:
            return np.broadcast_to(base, (self.nx, gamma.size)).copy()
        drow = self.kernel.drow(gamma, b)
        return base[None, :] + (self.measure * self.E_dr) @ drow.T

    def v_eff_at(self, gamma, b) -> np.ndarray:
        return self.E_dr_at(gamma, b) / (TWO_PI * self.rho_s_at(gamma, b))

    def scalar_dr_at(self, gamma, b, h_at, h_dr) -> np.ndarray:
        """Nystrom value of a scalar-dressed field at ``gamma``; shape (nx, m)."""
        gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
        b = np.broadcast_to(np.atleast_1d(b), gamma.shape)
        base = np.broadcast_to(np.asarray(h_at, dtype=float), gamma.shape)
        if self.kernel.is_zero:
            return np.broadcast_to(base, (self.nx, gamma.size)).copy()
        col = self.kernel.column(gamma, b)
        return base[None, :] + (self.measure * h_dr) @ col.T

    def occupation_column(self, gamma, b) -> np.ndarray:
        """``n(x; gamma)`` at every spatial node; shape (nx, m)."""
        gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
        b = np.broadcast_to(np.atleast_1d(b), gamma.shape)
        if self.profile is not None:
            eps = self.profile_epsilon()
            wv = np.asarray(self.profile(self.x[:, None], gamma[None, :], b[None, :]), dtype=float)
            wv = np.broadcast_to(wv, (self.nx, gamma.size))
            if not self.kernel.is_zero:
                F = self.grid.per_type(eps, free_energy)
                wv = wv + (self.grid.weights * F) @ self.kernel.column(gamma, b).T
            out = np.empty(wv.shape)
            for a in range(self.grid.n_types):
                mask = b == a
                out[:, mask] = occupation(self.grid.types[a].statistics, wv[:, mask])
            return out
        if self.source is not None:
            chars = self.source
            u = chars.u_at(gamma, b)[0]
            n0 = chars.fluid0.occupation_column(gamma, b)
            spl = CubicSpline(chars.fluid0.x, n0, axis=0)
            xq = np.clip(u, chars.fluid0.x[0], chars.fluid0.x[-1])
            return np.clip(pp_eval(spl.x, spl.c, xq), 0.0, None)
        from .spectral import barycentric_interpolate
        return np.stack([barycentric_interpolate(self.grid, self.n[i], gamma, b) for i in range(self.nx)])

    def profile_epsilon(self) -> np.ndarray:
        if self.epsilon is None:
            W = np.asarray(self.profile(self.x[:, None], self.grid.theta[None, :],
                                        self.grid.type_of[None, :]), dtype=float)
            W = np.broadcast_to(W, self.n.shape).copy()
            self.epsilon = solve_pseudo_energy(W, self.kernel, self.grid)
        return self.epsilon

    # -- acceleration ---------------------------------------------------------

    def acceleration(self, exact: bool = True) -> np.ndarray:
        """``a^eff(x; theta) = d_x n / (2 pi rho_p f)`` at all nodes.

        For profile-generated fluids the exact form ``-(d_x w)^dr / (p')^dr``
        is used; otherwise second-order differences of the occupation (via the
        pseudo-energy, ``a = -d_x eps / (2 pi rho_s)``, when it is finite).
        """
        if exact and self.profile is not None:
            h = 1e-3 * max(1.0, float(np.max(np.abs(self.x))) * 1e-2)
            th, ty = self.grid.theta[None, :], self.grid.type_of[None, :]
            xx = self.x[:, None]
            wfun = self.profile
            # grouped as differences so that x-independent profiles give exactly zero
            dw = (8 * (wfun(xx + h, th, ty) - wfun(xx - h, th, ty))
                  - (wfun(xx + 2 * h, th, ty) - wfun(xx - 2 * h, th, ty))) / (12 * h)
            dw = np.broadcast_to(np.asarray(dw, dtype=float), self.n.shape)
            return -self.dress_scalar(dw) / self.p_dr
        if self.nx < 3:
            raise GhdError("acceleration needs at least 3 spatial nodes")
        from .spectral import pseudo_energy
        eps = self.grid.per_type(self.n, pseudo_energy) if self.epsilon is None else self.epsilon
        if np.all(np.isfinite(eps)):
            deps = np.gradient(eps, self.x, axis=0, edge_order=2)
            return -deps / (TWO_PI * self.rho_s)
        dn = np.gradient(self.n, self.x, axis=0, edge_order=2)
        denom = TWO_PI * self.rho_p * self.f
        return np.where(denom > 0, dn / np.where(denom > 0, denom, 1.0), 0.0)

    # -- local states -----------------------------------------------------------

    def local_state(self, i: int) -> GgeState:
        i = int(i)
        if i not in self._states:
            driving = None
            eps = None
            if self.profile is not None:
                xi = self.x[i]
                prof = self.profile
                driving = DrivingTerm(lambda th, a=0, _x=xi: prof(_x, th, a))
                eps = self.profile_epsilon()[i]
            occ = None
            if driving is None and self.source is not None:
                occ = lambda th, a, _i=i: self.occupation_column(th, a)[_i]  # noqa: E731
            self._states[i] = GgeState(self.model, self.grid, self.n[i], kernel=self.kernel,
                                       epsilon=eps, driving=driving, occupation_at=occ)
        return self._states[i]

    def node_index(self, x, tol: float = 1e-9) -> int:
        i = int(np.argmin(np.abs(self.x - x)))
        if abs(self.x[i] - x) > tol * max(1.0, abs(x)):
            raise CharacteristicsError(f"position {x} is not a spatial node")
        return i

    def state_at(self, y: float) -> GgeState:
        """Local state at an arbitrary position (exact for profile fluids)."""
        try:
            return self.local_state(self.node_index(y))
        except CharacteristicsError:
            pass
        if self.profile is not None:
            prof = self.profile
            drv = DrivingTerm(lambda th, a=0: prof(y, th, a))
            eps = solve_pseudo_energy(drv.values(self.grid), self.kernel, self.grid)
            n = self.grid.per_type(eps, occupation)
            return GgeState(self.model, self.grid, n, kernel=self.kernel, epsilon=eps, driving=drv)
        n = CubicSpline(self.x, self.n, axis=0)(np.clip(y, self.x[0], self.x[-1]))
        return GgeState(self.model, self.grid, np.clip(n, 0, None), kernel=self.kernel)


def _stat_factor(stat: Statistics, n):
    from .spectral import statistical_factor
    return statistical_factor(stat, n)


# ---------------------------------------------------------------------------
# characteristics


class CharacteristicsField:
    """``u(x, t; theta)`` with its derivatives on the (x, theta) node grid.

    Besides the node arrays, the field keeps the spline data needed to
    evaluate ``u`` and ``u'`` exactly at off-grid rapidities.
    """

    def __init__(self, fluid0: FluidState, fluid_t: FluidState, u: np.ndarray, t: float,
                 iterations: int = 0, residual: float = 0.0):
        self.fluid0 = fluid0
        self.fluid_t = fluid_t
        self.u = u
        self.t = float(t)
        self.iterations = iterations
        self.residual = residual
        self.du_dx = None
        self.du_dtheta = None

    @property
    def x(self):
        return self.fluid0.x

    def u_at(self, gamma, b):
        """Exact ``u`` and ``u'`` at rapidities ``gamma`` for all x-nodes.

        Returns ``(u, du_dtheta, rho_s_t, rho_s0_at_u)`` each of shape (nx, m).
        """
        gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
        b = np.broadcast_to(np.atleast_1d(b), gamma.shape)
        f0, ft, t = self.fluid0, self.fluid_t, self.t
        x = f0.x
        rs0 = f0.rho_s_at(gamma, b)
        if t == 0.0:
            u = np.broadcast_to(x[:, None], rs0.shape).copy()
            return u, np.zeros(rs0.shape), rs0, rs0
        rst = ft.rho_s_at(gamma, b)
        drs0 = f0.d_rho_s_at(gamma, b)
        drst = ft.d_rho_s_at(gamma, b)
        E0 = f0.E_dr_at(gamma, b)[0]
        dE0 = f0.d_E_dr_at(gamma, b)[0]
        S0 = ColumnSpline(x, rs0)
        St = ColumnSpline(x, rst)
        target = St.cumulative - E0[None, :] * t / TWO_PI
        u = S0.invert_integral(target)
        rs0u = S0.value(u)
        D0 = ColumnSpline(x, drs0)
        Dt = ColumnSpline(x, drst)
        du = (Dt.cumulative - D0.integral(u) - t * dE0[None, :] / TWO_PI) / rs0u
        return u, du, rst, rs0u

    def root_set(self, y: float, x_index=None, rel_tol: float = 1e-12):
        """Rapidities with ``u(x, t; theta) = y`` at the requested x-nodes.

        Returns a list (one entry per x-node) of dicts with arrays ``theta``,
        ``type``, ``du`` (``u'`` at the root), ``rho_s`` (``rho_s(x, t)``) and
        ``rho_s0`` (``rho_s(y, 0)``).
        """
        grid = self.fluid0.grid
        nx = self.fluid0.nx
        ixs = range(nx) if x_index is None else np.atleast_1d(x_index)
        ixs = [int(i) for i in ixs]
        empty = dict(theta=np.zeros(0), type=np.zeros(0, dtype=int), du=np.zeros(0),
                     rho_s=np.zeros(0), rho_s0=np.zeros(0))
        if self.t == 0.0:
            return [dict(empty) for _ in ixs]
        # bracket the roots on the nodes plus the exact domain ends
        brackets = []  # (ix, a, lo, hi)
        for a, sl in enumerate(grid.slices):
            lo_d, hi_d = grid.types[a].domain
            ue = self.u_at(np.array([lo_d, hi_d]), a)[0]
            th = np.concatenate([[lo_d], grid.theta[sl], [hi_d]])
            for ix in ixs:
                g = np.concatenate([[ue[ix, 0]], self.u[ix, sl], [ue[ix, 1]]]) - y
                for k in range(th.size - 1):
                    if th[k + 1] <= th[k]:
                        continue
                    if g[k] == 0.0 and (k == 0 or g[k - 1] != 0.0):
                        brackets.append((ix, a, th[k], th[k]))
                    elif g[k] * g[k + 1] < 0:
                        brackets.append((ix, a, th[k], th[k + 1]))
                if g[-1] == 0.0:
                    brackets.append((ix, a, th[-1], th[-1]))
        out = {ix: [] for ix in ixs}
        if brackets:
            bix = np.array([b[0] for b in brackets])
            ba = np.array([b[1] for b in brackets])
            lo = np.array([b[2] for b in brackets], dtype=float)
            hi = np.array([b[3] for b in brackets], dtype=float)
            theta, du, rst, rs0 = self._refine(y, bix, ba, lo, hi)
            scale = np.max(np.abs(self.du_dtheta)) if self.du_dtheta is not None else 1.0
            for k in range(theta.size):
                if not abs(du[k]) > rel_tol * max(scale, 1e-300):
                    raise DegenerateCharacteristic(
                        f"u'={du[k]:.3g} at theta={theta[k]:.6g}, x={self.x[bix[k]]:.6g}")
                out[bix[k]].append((theta[k], ba[k], du[k], rst[k], rs0[k]))
        result = []
        for ix in ixs:
            items = sorted(out[ix], key=lambda r: (r[1], r[0]))
            if not items:
                result.append(dict(empty))
                continue
            arr = list(zip(*items))
            result.append(dict(theta=np.array(arr[0]), type=np.array(arr[1], dtype=int),
                               du=np.array(arr[2]), rho_s=np.array(arr[3]), rho_s0=np.array(arr[4])))
        return result

    def _refine(self, y, bix, ba, lo, hi, tol: float = 1e-12, max_iter: int = 60):
        """Safeguarded Newton on ``u(x_ix; theta) - y`` inside each bracket."""
        theta = 0.5 * (lo + hi)
        glo = None
        for it in range(max_iter):
            vals = self._u_pairs(theta, ba, bix)
            g = vals[0] - y
            if glo is None:
                glo = np.sign(self._u_pairs(lo, ba, bix)[0] - y)
            dg = vals[1]
            new = theta - g / np.where(dg != 0, dg, np.inf)
            # shrink the bracket
            same = np.sign(g) == glo
            lo = np.where(same, theta, lo)
            hi = np.where(same, hi, theta)
            outside = ~((new >= np.minimum(lo, hi)) & (new <= np.maximum(lo, hi))) | ~np.isfinite(new)
            new = np.where(outside, 0.5 * (lo + hi), new)
            new = np.where(g == 0, theta, new)
            step = np.max(np.abs(new - theta)) if new.size else 0.0
            theta = new
            if step < tol:
                break
        vals = self._u_pairs(theta, ba, bix)
        return theta, vals[1], vals[2], vals[3]

    def _u_pairs(self, gamma, ba, bix):
        k = np.arange(gamma.size)
        vals = self.u_at(gamma, ba)
        return tuple(v[bix, k] for v in vals)


def u_derivatives(chars: CharacteristicsField, fluid0: FluidState | None = None,
                  fluid_t: FluidState | None = None) -> CharacteristicsField:
    """Fill ``du_dx`` and ``du_dtheta`` on the node grid.

    ``d_x u = rho_s(x, t) / rho_s(u, 0)``; ``u'`` follows from differentiating
    the integral form of the characteristic equation in ``theta``.
    """
    f0 = fluid0 if fluid0 is not None else chars.fluid0
    ft = fluid_t if fluid_t is not None else chars.fluid_t
    t = chars.t
    S0 = ColumnSpline(f0.x, f0.rho_s)
    rs0u = S0.value(chars.u)
    if np.any(rs0u <= 0):
        raise CharacteristicsError("rho_s(u, 0) vanishes")
    chars.du_dx = ft.rho_s / rs0u
    if t == 0.0:
        chars.du_dtheta = np.zeros_like(chars.u)
        return chars
    D0 = ColumnSpline(f0.x, f0.d_rho_s())
    Dt = ColumnSpline(ft.x, ft.d_rho_s())
    dE0 = f0.d_E_dr()[0]
    chars.du_dtheta = (Dt.cumulative - D0.integral(chars.u) - t * dE0[None, :] / TWO_PI) / rs0u
    return chars


def evolve(fluid0: FluidState, t: float, *, tol: float = 1e-10, max_iter: int = 500,
           relax: float = 0.5, check_stationary: bool = True):
    """Evolve ``fluid0`` to time ``t`` by the solution by characteristics.

    Returns ``(fluid_t, chars)`` with ``chars`` carrying ``du_dx`` and
    ``du_dtheta``.
    """
    t = float(t)
    if t < 0:
        raise CharacteristicsError("evolution time must be non-negative")
    x = fluid0.x
    if t == 0.0:
        u = np.broadcast_to(x[:, None], fluid0.n.shape).copy()
        chars = CharacteristicsField(fluid0, fluid0, u, 0.0)
        return fluid0, u_derivatives(chars)
    S0 = ColumnSpline(x, fluid0.rho_s)
    flux0 = fluid0.E_dr[0] / TWO_PI  # v^eff rho_s at x0
    n0_interp = CubicSpline(x, fluid0.n, axis=0)
    lo, hi = x[0], x[-1]

    def n_at(u):
        return np.clip(pp_eval(n0_interp.x, n0_interp.c, np.clip(u, lo, hi)), 0.0, None)

    u = x[:, None] - fluid0.v_eff * t
    fluid_t = None
    res = np.inf
    for it in range(1, max_iter + 1):
        n_t = n_at(u)
        fluid_t = FluidState(fluid0.model, fluid0.grid, x, n_t, t=t, kernel=fluid0.kernel)
        St = ColumnSpline(x, fluid_t.rho_s)
        u_new = S0.invert_integral(St.cumulative - flux0[None, :] * t)
        res = float(np.max(np.abs(u_new - u)))
        if res < tol:
            u = u_new
            break
        u = (1.0 - relax) * u + relax * u_new
    else:
        raise CharacteristicsError(f"characteristics did not converge (residual {res:.3g})")
    n_t = n_at(u)
    fluid_t = FluidState(fluid0.model, fluid0.grid, x, n_t, t=t, kernel=fluid0.kernel)
    chars = CharacteristicsField(fluid0, fluid_t, u, t, iterations=it, residual=res)
    fluid_t.source = chars
    u_derivatives(chars)
    if np.any(chars.du_dx <= 0):
        raise CharacteristicsError("d_x u <= 0: characteristics are not invertible")
    if check_stationary:
        for end in (0, -1):
            dev = float(np.max(np.abs(fluid_t.n[end] - fluid0.n[end])))
            if dev > STATIONARY_TOL:
                raise CharacteristicsError(
                    f"boundary not stationary at x={x[end]:.6g} (|n_t - n_0| = {dev:.3g}); "
                    "enlarge the spatial grid")
    return fluid_t, chars


def root_set(chars: CharacteristicsField, y: float, x_index=None):
    """Module-level form of :meth:`CharacteristicsField.root_set`."""
    return chars.root_set(y, x_index)

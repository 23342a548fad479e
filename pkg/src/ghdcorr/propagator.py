"""Euler-scale propagator acting on a spectral function.

The propagator splits into a direct part, supported on the root set
``{theta : u(x, t; theta) = y}`` and always consumed analytically through
``1/|u'|`` weights, and an indirect part ``Delta g`` solving

    Delta(x) / D(x) = W(x) + int_{x0}^{x} dz (rho_s f Delta)^{*dr}(z, t),
    D(x; theta) = 2 pi a^eff_0(u(x, t; theta); theta).

The source ``W`` contains ``-Theta(u - y) S_y`` with
``S_y = (rho_s f g)^{*dr}(y, 0)``, which jumps in ``theta`` at the root set.
We therefore write ``Delta = Delta_A - D Theta S_y``: ``Delta_A`` is smooth in
``theta`` and the Heaviside factor is always integrated with partial
quadrature weights over the set ``{u(z, t; theta) > y}``.  The z-integral is
marched with the trapezoid rule; the implicit end-point term is resolved by a
dense solve in rapidity space at every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .characteristics import CharacteristicsField, ColumnSpline, FluidState, evolve
from .errors import PropagatorError
from .spectral import TWO_PI, SpectralGrid
from .tba import GgeState


@dataclass
class SpectralSource:
    """A scalar field ``g`` given at the nodes and at arbitrary rapidities."""

    values: np.ndarray
    at: callable

    @classmethod
    def from_values(cls, grid: SpectralGrid, values):
        """Node values only; off-grid values by barycentric interpolation."""
        from .spectral import barycentric_interpolate
        values = np.asarray(values, dtype=float)
        return cls(values, lambda th, a: barycentric_interpolate(grid, values, th, a))

    @classmethod
    def from_function(cls, grid: SpectralGrid, func):
        vals = np.asarray(func(grid.theta, grid.type_of), dtype=float) * np.ones(grid.size)
        return cls(vals, func)

    def scaled(self, c: float) -> "SpectralSource":
        return SpectralSource(c * self.values, lambda th, a: c * np.asarray(self.at(th, a)))

    def __add__(self, other: "SpectralSource") -> "SpectralSource":
        return SpectralSource(self.values + other.values,
                              lambda th, a: np.asarray(self.at(th, a)) + np.asarray(other.at(th, a)))


class PropagatorContext:
    """Evolved fluid and characteristics shared by all propagator actions at one time."""

    def __init__(self, fluid0: FluidState, t: float, *, evolve_tol: float = 1e-10):
        self.fluid0 = fluid0
        self.t = float(t)
        self.fluid_t, self.chars = evolve(fluid0, t, tol=evolve_tol)
        self._accel = None
        self._D = None
        self._roots: dict = {}
        self._ends = None

    @property
    def grid(self) -> SpectralGrid:
        return self.fluid0.grid

    @property
    def x(self) -> np.ndarray:
        return self.fluid0.x

    def D(self) -> np.ndarray:
        """``2 pi a^eff_0(u(x, t; theta); theta)`` at all nodes (zero off the grid)."""
        if self._D is None:
            a0 = self.fluid0.acceleration()
            if not np.any(a0) or self.t == 0.0:
                self._D = np.zeros_like(a0)
            else:
                sp = ColumnSpline(self.x, a0)
                u = self.chars.u
                inside = (u >= self.x[0]) & (u <= self.x[-1])
                self._D = np.where(inside, TWO_PI * sp.value(u), 0.0)
        return self._D

    def roots(self, y: float):
        key = float(y)
        if key not in self._roots:
            self._roots[key] = self.chars.root_set(key)
        return self._roots[key]

    def end_values(self):
        """``u`` at the exact domain ends of every type: list of (nx, 2) arrays."""
        if self._ends is None:
            self._ends = [self.chars.u_at(np.array(t.domain), a)[0]
                          for a, t in enumerate(self.grid.types)]
        return self._ends

    def theta_weights_above(self, y: float) -> np.ndarray:
        """Partial weights of ``{theta : u(x, t; theta) > y}`` per x-node; shape (nx, N)."""
        grid = self.grid
        roots = self.roots(y)
        ends = self.end_values()
        out = np.zeros((self.x.size, grid.size))
        for ix in range(self.x.size):
            r = roots[ix]
            for a, sl in enumerate(grid.slices):
                lo, hi = grid.types[a].domain
                th = np.sort(r["theta"][r["type"] == a])
                inside = ends[a][ix, 0] > y
                start = lo
                intervals = []
                for root in th:
                    if inside:
                        intervals.append((start, root))
                    inside = not inside
                    start = root
                if inside:
                    intervals.append((start, hi))
                if intervals:
                    out[ix, sl] = grid.interval_weights(a, intervals)
        return out


@dataclass
class PropagatorAction:
    """Result of applying the propagator to ``g`` from ``(y, 0)`` to ``(x, t)`` for all x-nodes.

    Attributes
    ----------
    direct : list of dict
        Per x-node root data: ``theta``, ``type``, ``weight`` (``1/|u'|``),
        ``g`` (source values at the roots), ``rho_s``, ``rho_s0``.
    delta_A : ndarray (nx, N)
        Smooth part of the indirect field.
    D, omega : ndarray (nx, N)
        ``2 pi a^eff`` at ``u`` and the partial weights of ``{u > y}``.
    S : ndarray (N,)
        ``(rho_s f g)^{*dr}(y, 0)``.
    """

    y: float
    t: float
    g: SpectralSource
    direct: list
    delta_A: np.ndarray
    D: np.ndarray
    S: np.ndarray
    omega: np.ndarray
    W1: np.ndarray
    grid: SpectralGrid = field(repr=False)
    theta_above: np.ndarray = field(repr=False, default=None)

    def indirect_field(self) -> np.ndarray:
        """``Delta g(x; theta)`` at the nodes (Heaviside at zero valued 1/2)."""
        return self.delta_A - self.D * self.theta_above * self.S[None, :]

    def integrate_indirect(self, ix: int, X) -> float:
        """``int dtheta X(theta) (Delta g)(x_ix; theta)`` for node values ``X`` (smooth)."""
        X = np.asarray(X, dtype=float)
        return float(np.sum(self.grid.weights * X * self.delta_A[ix])
                     - np.sum(self.omega[ix] * X * self.D[ix] * self.S))

    def integrate_direct(self, ix: int, X_at_roots) -> float:
        """``sum_roots X(gamma) g(gamma) / |u'(gamma)|``."""
        r = self.direct[ix]
        return float(np.sum(np.asarray(X_at_roots) * r["g"] * r["weight"]))


def _source_parts(ctx: PropagatorContext, y: float, g: SpectralSource):
    """Root-sum part ``W1`` of the source and the star-dressed jump term ``S_y``."""
    fluid0, fluid_t = ctx.fluid0, ctx.fluid_t
    grid = ctx.grid
    nx, N = fluid0.nx, grid.size
    state_y = fluid0.state_at(y)
    S = state_y.star_dress(state_y.rho_s * state_y.f * g.values)
    roots = ctx.roots(y)
    integrand = np.zeros((nx, N))
    direct = []
    for ix in range(nx):
        r = roots[ix]
        if r["theta"].size == 0:
            direct.append(dict(r, weight=np.zeros(0), g=np.zeros(0)))
            continue
        gam, typ = r["theta"], r["type"]
        n_y = state_y.occupation_at(gam, typ)
        f_y = state_y.factor_at(gam, typ, n_y)
        gv = np.asarray(g.at(gam, typ), dtype=float) * np.ones(gam.size)
        weight = 1.0 / np.abs(r["du"])
        direct.append(dict(r, weight=weight, g=gv, n0=n_y, f0=f_y))
        if fluid_t.Rvec is None:
            continue
        coef = r["rho_s"] * n_y * f_y * weight * gv  # (m,)
        cols = fluid_t.kernel.column(gam, typ)  # (m, N): T(theta_k, gamma)
        Tdr = fluid_t.Rvec[ix] @ cols.T  # (N, m)
        integrand[ix] = Tdr @ coef
    W1 = np.zeros((nx, N))
    dz = np.diff(fluid0.x)
    W1[1:] = np.cumsum(0.5 * dz[:, None] * (integrand[1:] + integrand[:-1]), axis=0)
    return W1, S, direct


def source_term_W(y: float, t: float, g: SpectralSource, fluid0: FluidState | None = None,
                  fluid_t=None, chars=None, *, context: PropagatorContext | None = None) -> np.ndarray:
    """Source ``W(x; theta)`` at the nodes (Heaviside at zero valued 1/2)."""
    ctx = context if context is not None else PropagatorContext(fluid0, t)
    W1, S, _ = _source_parts(ctx, y, g)
    return W1 - _heaviside(ctx.chars.u - y)[:, :] * S[None, :]


def _heaviside(v):
    return np.where(v > 0, 1.0, np.where(v < 0, 0.0, 0.5))


def _march(ctx: PropagatorContext, W1: np.ndarray, S: np.ndarray, omega: np.ndarray) -> np.ndarray:
    ft = ctx.fluid_t
    grid = ctx.grid
    D = ctx.D()
    x = ctx.x
    nx, N = W1.shape
    dA = np.zeros((nx, N))
    if ft.Rvec is None or not np.any(D):
        return dA
    T = ft.kernel.matrix
    wts = grid.weights
    nrf = ft.n * ft.rho_s * ft.f  # (nx, N)

    def M(i):
        return ft.Rvec[i] @ (T * (wts * nrf[i])[None, :])

    def B(i):
        return ft.Rvec[i] @ (T @ (omega[i] * nrf[i] * D[i] * S))

    eye = np.eye(N)
    J = np.zeros(N)
    M_prev = M(0)
    B_prev = B(0)
    dA[0] = D[0] * W1[0]
    for i in range(1, nx):
        h = x[i] - x[i - 1]
        Mi, Bi = M(i), B(i)
        rhs = D[i] * (W1[i] + J + 0.5 * h * (M_prev @ dA[i - 1] - B_prev - Bi))
        A = eye - 0.5 * h * D[i][:, None] * Mi
        try:
            dA[i] = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            raise PropagatorError(f"singular marching step at x={x[i]:.6g}") from None
        J = J + 0.5 * h * (M_prev @ dA[i - 1] + Mi @ dA[i] - B_prev - Bi)
        M_prev, B_prev = Mi, Bi
    return dA


def solve_indirect(y: float, t: float, g: SpectralSource, fluid0: FluidState | None = None,
                   fluid_t=None, chars=None, *, context: PropagatorContext | None = None) -> np.ndarray:
    """Indirect field ``Delta g(x; theta)`` at the nodes."""
    return apply_propagator(y, t, g, context if context is not None else PropagatorContext(fluid0, t)
                            ).indirect_field()


def apply_propagator(y: float, t: float, g: SpectralSource, context: PropagatorContext) -> PropagatorAction:
    """Direct root data and indirect field of the propagator applied to ``g``."""
    ctx = context
    if abs(ctx.t - float(t)) > 1e-14 * max(1.0, abs(t)):
        raise PropagatorError("context was built for a different time")
    if not ctx.x[0] < y:
        raise PropagatorError("source point must lie right of the left boundary")
    W1, S, direct = _source_parts(ctx, y, g)
    if ctx.t == 0.0:
        omega = np.zeros_like(W1)
    else:
        omega = ctx.theta_weights_above(y)
    dA = _march(ctx, W1, S, omega)
    return PropagatorAction(y=float(y), t=ctx.t, g=g, direct=direct, delta_A=dA, D=ctx.D(), S=S,
                            omega=omega, W1=W1, grid=ctx.grid,
                            theta_above=_heaviside(ctx.chars.u - y))


def solve_indirect_dense(ctx: PropagatorContext, action: PropagatorAction) -> np.ndarray:
    """Global dense solve of the discretized indirect equation over all (x, theta).

    Same quadrature as the marching solver, assembled as one linear system;
    used to validate the marching.
    """
    ft = ctx.fluid_t
    grid = ctx.grid
    x = ctx.x
    nx, N = action.delta_A.shape
    D = action.D
    if ft.Rvec is None or not np.any(D):
        return np.zeros((nx, N))
    T = ft.kernel.matrix
    nrf = ft.n * ft.rho_s * ft.f
    Ms = [ft.Rvec[i] @ (T * (grid.weights * nrf[i])[None, :]) for i in range(nx)]
    Bs = [ft.Rvec[i] @ (T @ (action.omega[i] * nrf[i] * D[i] * action.S)) for i in range(nx)]
    # trapezoid weights of int_{x0}^{x_i}
    c = np.zeros((nx, nx))
    for i in range(1, nx):
        h = np.diff(x[: i + 1])
        c[i, :i] += 0.5 * h
        c[i, 1: i + 1] += 0.5 * h
    A = np.eye(nx * N)
    rhs = np.zeros(nx * N)
    for i in range(nx):
        rows = slice(i * N, (i + 1) * N)
        Bsum = sum(c[i, l] * Bs[l] for l in range(i + 1)) if i else np.zeros(N)
        rhs[rows] = D[i] * (action.W1[i] - Bsum)
        for l in range(i + 1):
            if c[i, l]:
                A[rows, l * N:(l + 1) * N] -= c[i, l] * D[i][:, None] * Ms[l]
    return np.linalg.solve(A, rhs).reshape(nx, N)


def delta_residual(ctx: PropagatorContext, action: PropagatorAction) -> float:
    """Relative residual of the indirect equation for the assembled ``Delta_A``."""
    dense = solve_indirect_dense(ctx, action)
    scale = max(float(np.max(np.abs(dense))), 1e-300)
    return float(np.max(np.abs(dense - action.delta_A)) / scale)

"""Closed-form Euler-scale correlation functions of free models.

Without interactions every quasi-particle moves at its group velocity, the
indirect propagator vanishes and the N-point functions of conserved
densities reduce to sums over the rapidities whose group velocity matches the
space-time ray through the points.  The higher-point coefficients ``g_N`` are
the Taylor coefficients of ``F_a(w) - F_a(w - z)`` and are obtained here by
truncated power-series arithmetic, uniformly for all four statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import ModelError, ObservableError
from .models import ModelSpec
from .spectral import TWO_PI, Statistics, free_energy, gauss_legendre_rule, occupation, statistical_factor

SCAN_POINTS = 2001


# ---------------------------------------------------------------------------
# truncated power series (coefficients c_k of z^k, vectorized over a leading axis)


def _series_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    K = a.shape[-1]
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape))
    for k in range(K):
        out[..., k] = np.sum(a[..., : k + 1] * b[..., k::-1], axis=-1)
    return out


def _series_exp(a: np.ndarray) -> np.ndarray:
    """``exp`` of a series: ``k e_k = sum_{j=1}^k j a_j e_{k-j}``."""
    K = a.shape[-1]
    e = np.zeros(a.shape)
    e[..., 0] = np.exp(a[..., 0])
    for k in range(1, K):
        j = np.arange(1, k + 1)
        e[..., k] = np.sum(j * a[..., 1: k + 1] * e[..., k - 1:: -1][..., :k], axis=-1) / k
    return e


def _series_log(a: np.ndarray) -> np.ndarray:
    """``log`` of a series with positive constant term."""
    K = a.shape[-1]
    if np.any(a[..., 0] <= 0):
        raise ObservableError("logarithm of a non-positive argument in the free energy")
    out = np.zeros(a.shape)
    out[..., 0] = np.log(a[..., 0])
    for k in range(1, K):
        j = np.arange(1, k)
        acc = np.sum(j * out[..., 1:k] * a[..., k - 1: 0: -1], axis=-1) if k > 1 else 0.0
        out[..., k] = (k * a[..., k] - acc) / (k * a[..., 0])
    return out


def free_energy_series(stat, w, order: int) -> np.ndarray:
    """Taylor coefficients of ``z -> F_a(w - z)`` up to ``z^order``; shape ``w.shape + (order+1,)``."""
    stat = Statistics.parse(stat)
    w = np.atleast_1d(np.asarray(w, dtype=float))
    K = order + 1
    shift = np.zeros(w.shape + (K,))
    shift[..., 0] = -w
    if K > 1:
        shift[..., 1] = 1.0
    # e^{-(w - z)}
    ez = _series_exp(shift)
    if stat is Statistics.FERMION:
        one = np.zeros_like(ez)
        one[..., 0] = 1.0
        return -_series_log(one + ez)
    if stat is Statistics.BOSON:
        one = np.zeros_like(ez)
        one[..., 0] = 1.0
        return _series_log(one - ez)
    if stat is Statistics.CLASSICAL:
        return -ez
    lin = np.zeros(w.shape + (K,))
    lin[..., 0] = w
    if K > 1:
        lin[..., 1] = -1.0
    return _series_log(lin)


def g_coefficients(stat, w, order: int) -> np.ndarray:
    """``g_N`` for ``N = 1..order`` from ``F(w) - F(w - z) = sum z^N g_N / N!``; shape ``w.shape + (order,)``."""
    c = free_energy_series(stat, w, order)
    fact = np.array([math.factorial(k) for k in range(1, order + 1)], dtype=float)
    return -c[..., 1:] * fact


# ---------------------------------------------------------------------------
# scenarios


@dataclass
class FreeScenario:
    """Free model with an inhomogeneous initial driving term ``w(x, theta, a)``."""

    model: ModelSpec
    w: Callable
    domain: tuple | None = None

    def __post_init__(self):
        th = np.linspace(-1.0, 1.0, 7)
        for a in range(len(self.model.species)):
            if np.any(self.model.phi(th[:, None], th[None, :], a, a)):
                raise ModelError(f"model {self.model.name!r} is interacting; free formulas do not apply")
        if self.domain is None:
            self.domain = (-self.model.default_cutoff, self.model.default_cutoff)

    @property
    def types(self):
        return range(len(self.model.species))

    def statistics(self, a: int) -> Statistics:
        return self.model.species[a].statistics

    def occupation(self, y, theta, a):
        return occupation(self.statistics(a), self.w(y, theta, a))

    def rho_p(self, y, theta, a):
        return self.model.dp(theta, a) * self.occupation(y, theta, a) / TWO_PI

    def factor(self, y, theta, a):
        return statistical_factor(self.statistics(a), self.occupation(y, theta, a))

    def dv_gr(self, theta, a):
        m = self.model
        dp = m.dp(theta, a)
        return (m.d2E(theta, a) * dp - m.dE(theta, a) * m.d2p(theta, a)) / (dp * dp)

    def velocity_roots(self, xi: float):
        """All ``(theta, a)`` with ``v^gr = xi`` inside the rapidity domain."""
        lo, hi = self.domain
        th = np.linspace(lo, hi, SCAN_POINTS)
        out = []
        for a in self.types:
            v = self.model.group_velocity(th, a) - xi
            for k in range(th.size - 1):
                if v[k] == 0.0:
                    out.append((float(th[k]), a))
                elif v[k] * v[k + 1] < 0:
                    r = brentq(lambda s: float(self.model.group_velocity(s, a)) - xi, th[k], th[k + 1],
                               xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
                    out.append((r, a))
            if v[-1] == 0.0:
                out.append((float(th[-1]), a))
        return out


def _insertion(model: ModelSpec, key, kind: str, theta, a):
    h = np.asarray(model.charge(key)(theta, a), dtype=float)
    if kind == "current":
        return model.group_velocity(theta, a) * h
    if kind != "density":
        raise ObservableError(f"unknown insertion kind {kind!r}")
    return h


def free_two_point(i, j, x: float, t: float, y: float, scenario: FreeScenario,
                   kinds: tuple = ("density", "density")) -> float:
    """``<q_i(x, t) q_j(y, 0)>`` as a sum over roots of ``v^gr = (x - y)/t``.

    ``kinds`` selects density or current for each insertion; currents carry
    an extra factor ``v^gr``.
    """
    if t <= 0:
        raise ObservableError("free two-point formula needs t > 0")
    total = 0.0
    for th, a in scenario.velocity_roots((x - y) / t):
        dv = float(scenario.dv_gr(th, a))
        if dv == 0.0:
            raise ObservableError(f"stationary group velocity at root theta={th:.6g}")
        weight = scenario.rho_p(y, th, a) * scenario.factor(y, th, a) / (abs(dv) * t)
        total += float(weight * _insertion(scenario.model, i, kinds[0], th, a)
                       * _insertion(scenario.model, j, kinds[1], th, a))
    return total


@dataclass
class NPointResult:
    coefficient: float
    colinear: bool


def free_n_point(points: Sequence, scenario: FreeScenario, kinds: Sequence[str] | None = None,
                 tol: float = 1e-12) -> NPointResult:
    """Coefficient of the delta-function product in the N-point function.

    ``points`` is a list of ``(x_k, t_k, i_k)``.  For ``N >= 3`` the result
    is supported on colinear configurations; otherwise the coefficient is 0.
    """
    pts = [(float(x), float(t), i) for x, t, i in points]
    N = len(pts)
    if N < 2:
        raise ObservableError("N-point functions need N >= 2")
    kinds = list(kinds) if kinds is not None else ["density"] * N
    order = sorted(range(N), key=lambda k: pts[k][1])
    if pts[order[0]][1] == pts[order[-1]][1]:
        raise ObservableError("N-point formula needs at least two distinct times")
    # reference pair: earliest and latest time
    k1, k2 = order[0], order[-1]
    (x1, t1, _), (x2, t2, _) = pts[k1], pts[k2]
    dt = t2 - t1
    xi = (x2 - x1) / dt
    colinear = True
    for k in range(N):
        xk, tk, _ = pts[k]
        r = (xk - x1) - xi * (tk - t1)
        if abs(r) > tol * max(1.0, abs(xk), abs(x1), abs(tk)):
            colinear = False
    if N >= 3 and not colinear:
        return NPointResult(0.0, False)
    y0 = (x1 * t2 - x2 * t1) / dt
    total = 0.0
    for th, a in scenario.velocity_roots(xi):
        dv = float(scenario.dv_gr(th, a))
        if dv == 0.0:
            raise ObservableError(f"stationary group velocity at root theta={th:.6g}")
        w0 = scenario.w(y0, th, a)
        gN = float(np.ravel(g_coefficients(scenario.statistics(a), w0, N)[..., N - 1])[0])
        prod = 1.0
        for (xk, tk, ik), kind in zip(pts, kinds):
            prod = prod * _insertion(scenario.model, ik, kind, th, a)
        total += float(scenario.model.dp(th, a) / (TWO_PI * abs(dv) * abs(dt)) * gN * prod)
    return NPointResult(total, colinear)


def free_generating_functional(eps: Sequence[Callable], times: Sequence[float], charges: Sequence,
                               scenario: FreeScenario, u_range: tuple[float, float],
                               n_theta: int = 200, n_u: int = 2001) -> float:
    """``int dtheta/2pi p' int du [F(w(u)) - F(w(u) - sum_k eps_k(u + v t_k) h_k)]`` by double quadrature.

    The u-integral uses the trapezoid rule on ``n_u`` points over ``u_range``,
    the rapidity integral Gauss-Legendre on ``n_theta`` points per type.
    """
    if not (len(eps) == len(times) == len(charges)):
        raise ObservableError("eps, times and charges must have equal lengths")
    m = scenario.model
    lo, hi = scenario.domain
    th, wt = gauss_legendre_rule(n_theta, lo, hi)
    u = np.linspace(u_range[0], u_range[1], n_u)
    du = np.full(n_u, (u[-1] - u[0]) / (n_u - 1))
    du[[0, -1]] *= 0.5
    total = 0.0
    for a in scenario.types:
        stat = scenario.statistics(a)
        w = np.asarray(scenario.w(u[:, None], th[None, :], a), dtype=float) * np.ones((n_u, th.size))
        v = m.group_velocity(th, a)
        shift = np.zeros_like(w)
        for e, tk, ik in zip(eps, times, charges):
            shift = shift + np.asarray(e(u[:, None] + v[None, :] * tk), dtype=float) * m.charge(ik)(th, a)[None, :]
        arg = w - shift
        if stat is Statistics.BOSON and np.any(arg <= 0):
            raise ObservableError("boson free energy evaluated at a non-positive argument")
        if stat is Statistics.RADIATIVE and np.any(arg <= 0):
            raise ObservableError("radiative free energy evaluated at a non-positive argument")
        diff = free_energy(stat, w) - free_energy(stat, arg)
        total += float(np.sum(wt * m.dp(th, a) / TWO_PI * (du @ diff)))
    return total


# ---------------------------------------------------------------------------
# explicit closed forms


def ising_energy_closed_form(x: float, t: float, y: float, beta: float, m: float = 1.0) -> float:
    """Energy-density two-point function of the Ising field theory from a local thermal state."""
    if t <= 0:
        raise ObservableError("needs t > 0")
    d = x - y
    if abs(d) >= t:
        return 0.0
    s = math.sqrt(t * t - d * d)
    return m ** 3 * t ** 4 / (8.0 * math.pi * s ** 5 * math.cosh(beta * m * t / (2.0 * s)) ** 2)


def tonks_girardeau_closed_form(x: float, t: float, y: float, beta: float, mu: float, mass: float = 0.5) -> float:
    """Density two-point function of free non-relativistic fermions from a local thermal state."""
    if t <= 0:
        raise ObservableError("needs t > 0")
    e = mass * (x - y) ** 2 / (2.0 * t * t)
    return mass / (8.0 * math.pi * t * math.cosh(0.5 * beta * (e - mu)) ** 2)

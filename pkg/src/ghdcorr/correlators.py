"""Euler-scale two-point functions and hydrodynamic spectral functions.

A local observable enters the correlators only through its hydrodynamic
spectral function ``V^O(theta)``, a scalar field depending on the local state:
``h_i^dr`` for the density of charge ``i``, ``v^eff h_i^dr`` for its current,
and for generic fields a user-supplied provider (for instance a truncated
form-factor series).  The two-point function is

    <O(x, t) O'(y, 0)> = int dtheta rho_p f V^O(x, t) (Gamma V^{O'}(y, 0))(theta)

with the direct part of the propagator summed over the root set and the
indirect part integrated by quadrature.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .characteristics import FluidState
from .errors import ObservableError
from .propagator import PropagatorContext, SpectralSource, apply_propagator
from .spectral import TWO_PI, Parity
from .tba import GgeState

# ---------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class ObservableSpec:
    """Local observable described by its hydrodynamic spectral function.

    ``kind`` is ``"density"``, ``"current"`` or ``"generic"``.  Densities and
    currents carry a charge key (name, index or callable); generic
    observables carry ``provider(state, theta, a) -> V^O``.
    """

    kind: str
    charge: object = None
    provider: Callable | None = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("density", "current", "generic"):
            raise ObservableError(f"unknown observable kind {self.kind!r}")
        if self.kind == "generic" and self.provider is None:
            raise ObservableError("generic observables need a spectral-function provider")
        if self.kind != "generic" and self.charge is None:
            raise ObservableError("density and current observables need a charge")

    @classmethod
    def density(cls, i) -> "ObservableSpec":
        return cls("density", charge=i, label=f"q_{i}")

    @classmethod
    def current(cls, i) -> "ObservableSpec":
        return cls("current", charge=i, label=f"j_{i}")

    @classmethod
    def generic(cls, provider: Callable, label: str = "O") -> "ObservableSpec":
        return cls("generic", provider=provider, label=label)

    def values(self, state: GgeState) -> np.ndarray:
        """``V^O`` at the grid nodes of ``state``."""
        grid = state.grid
        if self.kind == "generic":
            return np.asarray(self.provider(state, grid.theta, grid.type_of), dtype=float) * np.ones(grid.size)
        hdr = state.charge_dr(self.charge)
        return hdr if self.kind == "density" else state.v_eff * hdr

    def at(self, state: GgeState, theta, a) -> np.ndarray:
        """``V^O`` at arbitrary rapidities (Nystrom evaluation of the dressing)."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        a = np.broadcast_to(np.atleast_1d(a), theta.shape)
        if self.kind == "generic":
            return np.asarray(self.provider(state, theta, a), dtype=float) * np.ones(theta.shape)
        hdr = state.charge_dr_at(self.charge, theta, a)
        return hdr if self.kind == "density" else state.v_eff_at(theta, a) * hdr

    def source(self, state: GgeState) -> SpectralSource:
        return SpectralSource(self.values(state), lambda th, a: self.at(state, th, a))


# ---------------------------------------------------------------------------
# two-point functions


@dataclass
class TwoPointResult:
    value: float
    direct: float
    indirect: float
    roots: dict = field(default_factory=dict)


def _context(fluid0, t, context):
    return context if context is not None else PropagatorContext(fluid0, t)


def _parts_at(A: ObservableSpec, action, ctx: PropagatorContext, ix: int) -> TwoPointResult:
    r = action.direct[ix]
    state_x = ctx.fluid_t.local_state(ix)
    direct = 0.0
    if r["theta"].size:
        VA = A.at(state_x, r["theta"], r["type"])
        direct = float(np.sum(r["rho_s"] * r["n0"] * r["f0"] * r["weight"] * VA * r["g"]))
    indirect = 0.0
    if np.any(action.D):
        X = state_x.rho_p * state_x.f * A.values(state_x)
        indirect = action.integrate_indirect(ix, X)
    return TwoPointResult(direct + indirect, direct, indirect, dict(r))


def two_point_parts(A: ObservableSpec, B: ObservableSpec, x: float, t: float, y: float,
                    fluid0: FluidState, context: PropagatorContext | None = None) -> TwoPointResult:
    """Two-point function with its direct and indirect contributions."""
    t = float(t)
    if t < 0:
        raise ObservableError("negative time separation")
    if t == 0.0:
        if x != y:
            return TwoPointResult(0.0, 0.0, 0.0)
        raise ObservableError("equal-time correlator at coinciding points is a delta function")
    ctx = _context(fluid0, t, context)
    ix = fluid0.node_index(x)
    g = B.source(fluid0.state_at(y))
    action = apply_propagator(y, t, g, ctx)
    return _parts_at(A, action, ctx, ix)


def two_point_profile(A: ObservableSpec, B: ObservableSpec, t: float, y: float, fluid0: FluidState,
                      context: PropagatorContext | None = None, x_indices=None) -> list:
    """Two-point function at many spatial nodes from a single propagator action."""
    if t <= 0:
        raise ObservableError("profiles need t > 0")
    ctx = _context(fluid0, t, context)
    g = B.source(fluid0.state_at(y))
    action = apply_propagator(y, t, g, ctx)
    return profile_from_action(A, action, ctx, x_indices)


def profile_from_action(A: ObservableSpec, action, context: PropagatorContext, x_indices=None) -> list:
    """Evaluate ``A`` against an already applied propagator at the given nodes."""
    ixs = range(context.fluid0.nx) if x_indices is None else x_indices
    return [_parts_at(A, action, context, int(i)) for i in ixs]


def two_point(A: ObservableSpec, B: ObservableSpec, x: float, t: float, y: float,
              fluid0: FluidState, context: PropagatorContext | None = None) -> float:
    """``<A(x, t) B(y, 0)>`` at the Euler scale; ``x`` must be a spatial node."""
    return two_point_parts(A, B, x, t, y, fluid0, context).value


def density_density(i, j, x, t, y, fluid0, context=None) -> float:
    return two_point(ObservableSpec.density(i), ObservableSpec.density(j), x, t, y, fluid0, context)


def current_density(i, j, x, t, y, fluid0, context=None) -> float:
    """``<j_i(x, t) q_j(y, 0)>``."""
    return two_point(ObservableSpec.current(i), ObservableSpec.density(j), x, t, y, fluid0, context)


def density_current(i, j, x, t, y, fluid0, context=None) -> float:
    """``<q_i(x, t) j_j(y, 0)>``."""
    return two_point(ObservableSpec.density(i), ObservableSpec.current(j), x, t, y, fluid0, context)


def current_current(i, j, x, t, y, fluid0, context=None) -> float:
    return two_point(ObservableSpec.current(i), ObservableSpec.current(j), x, t, y, fluid0, context)


# ---------------------------------------------------------------------------
# homogeneous states


def velocity_roots(state: GgeState, xi: float, tol: float = 1e-13):
    """All ``(theta, a)`` with ``v^eff(theta) = xi``, refined by safeguarded Newton."""
    grid = state.grid
    out = []
    for a, sl in enumerate(grid.slices):
        lo_d, hi_d = grid.types[a].domain
        th = np.concatenate([[lo_d], grid.theta[sl], [hi_d]])
        v = np.concatenate([state.v_eff_at(np.array([lo_d]), a), state.v_eff[sl],
                            state.v_eff_at(np.array([hi_d]), a)]) - xi
        for k in range(th.size - 1):
            if v[k] == 0.0:
                out.append((th[k], a))
                continue
            if v[k] * v[k + 1] >= 0:
                continue
            lo, hi = th[k], th[k + 1]
            s_lo = np.sign(v[k])
            x = 0.5 * (lo + hi)
            for _ in range(100):
                g = float(state.v_eff_at(np.array([x]), a)[0]) - xi
                dg = float(state.dv_eff_at(np.array([x]), a)[0])
                if np.sign(g) == s_lo:
                    lo = x
                else:
                    hi = x
                new = x - g / dg if dg != 0 else 0.5 * (lo + hi)
                if not (min(lo, hi) <= new <= max(lo, hi)):
                    new = 0.5 * (lo + hi)
                if abs(new - x) < tol * max(1.0, abs(x)):
                    x = new
                    break
                x = new
            out.append((x, a))
        if v[-1] == 0.0:
            out.append((th[-1], a))
    return out


def homogeneous_two_point(A: ObservableSpec, B: ObservableSpec, x: float, t: float, y: float,
                          state: GgeState) -> float:
    """``t^{-1} sum_{v^eff = (x-y)/t} rho_p f V^A V^B / |(v^eff)'|`` in a homogeneous GGE."""
    if t <= 0:
        raise ObservableError("homogeneous formula needs t > 0")
    roots = velocity_roots(state, (x - y) / t)
    total = 0.0
    for th, a in roots:
        th1 = np.array([th])
        n = state.occupation_at(th1, a)
        f = state.factor_at(th1, a, n)
        rho_p = n * state.rho_s_at(th1, a)
        dv = abs(float(state.dv_eff_at(th1, a)[0]))
        if dv == 0:
            raise ObservableError("stationary effective velocity at a contributing rapidity")
        total += float(rho_p[0] * f[0] * A.at(state, th1, a)[0] * B.at(state, th1, a)[0]) / dv
    return total / t


def projection_matrices(state: GgeState):
    """Correlation, current-charge and flux-Jacobian matrices in the node basis.

    With ``P`` the scalar dressing matrix and node charges ``h = e_k``,
    ``C = P^T W rho_p f P``, ``B = P^T W rho_p f v P`` and ``A = B C^{-1}``,
    which equals ``P^T v P^{-T}``.
    """
    grid = state.grid
    P = state.dress(np.eye(grid.size), Parity.SCALAR)
    d = grid.weights * state.rho_p * state.f
    C = P.T @ (d[:, None] * P)
    B = P.T @ ((d * state.v_eff)[:, None] * P)
    A = P.T @ (state.v_eff[:, None] * np.linalg.inv(P).T)
    return C, B, A


# ---------------------------------------------------------------------------
# form-factor (Leclair-Mussardo) spectral functions


@dataclass
class FormFactorFamily:
    """Connected diagonal form factors ``F_k(theta_1, ..., theta_k)``.

    ``func(k, *thetas)`` must broadcast over array arguments.
    """

    func: Callable
    k_max: int = 3
    label: str = "O"

    def __call__(self, k: int, *thetas):
        if k > self.k_max + 1:
            raise ObservableError(f"form factor order {k} beyond the supplied family")
        return self.func(k, *thetas)

    def check_symmetric(self, k: int, points, rtol: float = 1e-12) -> bool:
        base = np.asarray(self.func(k, *points), dtype=float)
        for perm in itertools.permutations(range(k)):
            other = np.asarray(self.func(k, *[points[p] for p in perm]), dtype=float)
            if not np.allclose(other, base, rtol=rtol, atol=0):
                return False
        return True


def conserved_form_factors(model, charge, kind: str = "density", k_max: int = 3) -> FormFactorFamily:
    """Form factors of a conserved density or current, as chains of kernels.

    ``F_k = sum over orderings sigma of phi(t_s1 - t_s2) ... phi(t_s(k-1) - t_sk) h(t_s1) X(t_sk)``
    with ``X = p'`` for densities and ``E'`` for currents.
    """
    h = model.charge(charge)
    X = model.dp if kind == "density" else model.dE
    phi = model.phi

    def F(k, *th):
        if len(th) != k:
            raise ObservableError("wrong number of rapidities")
        total = 0.0
        for perm in itertools.permutations(range(k)):
            term = h(th[perm[0]]) * X(th[perm[-1]])
            for s in range(k - 1):
                term = term * phi(th[perm[s]], th[perm[s + 1]])
            total = total + term
        return total

    return FormFactorFamily(F, k_max=k_max, label=f"{kind}:{charge}")


MAX_LM_ORDER = 3


def lm_terms(ff: FormFactorFamily, state: GgeState, order: int = 2, theta=None) -> list:
    """Individual orders ``k = 0..order`` of the series for ``2 pi rho_s V^O``.

    Returns a list of arrays at ``theta`` (grid nodes by default).
    """
    if order < 0 or order > MAX_LM_ORDER:
        raise ObservableError(f"truncation order must lie in [0, {MAX_LM_ORDER}]")
    grid = state.grid
    if grid.n_types != 1:
        raise ObservableError("form-factor series implemented for single-type models")
    target = grid.theta if theta is None else np.atleast_1d(np.asarray(theta, dtype=float))
    meas = state.measure / TWO_PI
    out = []
    for k in range(order + 1):
        shape = [1] * (k + 1)
        args = []
        for j in range(k):
            s = list(shape)
            s[j] = grid.size
            args.append(grid.theta.reshape(s))
        s = list(shape)
        s[k] = target.size
        args.append(target.reshape(s))
        vals = np.asarray(ff(k + 1, *args), dtype=float)
        vals = np.broadcast_to(vals, tuple([grid.size] * k + [target.size]))
        for _ in range(k):
            vals = np.tensordot(meas, vals, axes=(0, 0))
        out.append(vals / math.factorial(k))
    return out


def lm_spectral(ff: FormFactorFamily, state: GgeState, order: int = 2, theta=None, a=0) -> np.ndarray:
    """Truncated form-factor series for ``V^O`` at the nodes (or at ``theta``)."""
    terms = lm_terms(ff, state, order, theta)
    rho = state.rho_s if theta is None else state.rho_s_at(np.atleast_1d(theta), a)
    return sum(terms) / (TWO_PI * rho)


def lm_observable(ff: FormFactorFamily, order: int = 2) -> ObservableSpec:
    return ObservableSpec.generic(lambda st, th, a: lm_spectral(ff, st, order, th, a), label=ff.label)


def neumann_terms(state: GgeState, h, parity, order: int) -> list:
    """Terms ``(T n)^m h`` (vector) or ``(T^T n)^m h`` (scalar), ``m = 0..order``."""
    T = state.kernel.matrix
    op = T if Parity.parse(parity) is Parity.VECTOR else T.T
    terms = [np.asarray(h, dtype=float)]
    for _ in range(order):
        terms.append(op @ (state.measure * terms[-1]))
    return terms


# ---------------------------------------------------------------------------
# sinh-Gordon exponential fields


def _chi(a_coupling: float, j: int):
    phase = np.exp(2j * j * np.pi * a_coupling)

    def chi(theta, alpha):
        d = np.asarray(theta, dtype=float) - np.asarray(alpha, dtype=float)
        return 2.0 * np.imag(phase / np.sinh(d - 1j * np.pi * a_coupling))

    return chi


class ShgVertexData:
    """``j``-dressed functions and ``H_j`` factors of a sinh-Gordon state."""

    def __init__(self, state: GgeState, k: int):
        if state.model.name != "sinh_gordon":
            raise ObservableError("vertex spectral functions need a sinh-Gordon state")
        self.state = state
        self.a = state.model.params["a"]
        self.k = abs(int(k))
        grid = state.grid
        th = grid.theta
        mu = state.measure
        self.em, self.ep, self.H, self.chis = [], [], [], []
        for j in range(self.k):
            chi = _chi(self.a, j)
            K = chi(th[:, None], th[None, :]) / TWO_PI
            Av = np.eye(grid.size) - K * mu[None, :]
            As = np.eye(grid.size) - K.T * mu[None, :]
            for M in (Av, As):
                if np.linalg.cond(M) > 1e12:
                    from .errors import DressingSingular
                    raise DressingSingular(f"chi_{j} resolvent")
            em = np.linalg.solve(Av, np.exp(-th))
            ep = np.linalg.solve(As, np.exp(th))
            s = np.sin(np.pi * self.a * (2 * j + 1))
            H = 1.0 + 4.0 * s * np.sum(mu * np.exp(th) * em) / TWO_PI
            self.em.append(em)
            self.ep.append(ep)
            self.H.append(H)
            self.chis.append(chi)

    def expectation(self) -> float:
        """``<exp(k g Phi)> = prod_j H_j``."""
        return float(np.prod(self.H)) if self.H else 1.0

    def spectral(self, theta=None) -> np.ndarray:
        st = self.state
        grid = st.grid
        if theta is None:
            em, ep, rho = self.em, self.ep, st.rho_s
        else:
            theta = np.atleast_1d(np.asarray(theta, dtype=float))
            mu = st.measure
            em = [np.exp(-theta) + (self.chis[j](theta[:, None], grid.theta[None, :]) / TWO_PI) @ (mu * self.em[j])
                  for j in range(self.k)]
            ep = [np.exp(theta) + (self.chis[j](grid.theta[None, :], theta[:, None]) / TWO_PI) @ (mu * self.ep[j])
                  for j in range(self.k)]
            rho = st.rho_s_at(theta, 0)
        out = np.zeros_like(rho)
        for j in range(self.k):
            s = np.sin(np.pi * self.a * (2 * j + 1))
            others = np.prod([self.H[l] for l in range(self.k) if l != j]) if self.k > 1 else 1.0
            out = out + s * ep[j] * em[j] * others
        return 2.0 * out / (np.pi * rho)


def shg_vertex_spectral(k: int, state: GgeState, theta=None) -> np.ndarray:
    """Spectral function of ``exp(k g Phi)`` in a sinh-Gordon state (``V^{-k} = V^k``)."""
    return ShgVertexData(state, k).spectral(theta)


def shg_vertex_expectation(k: int, state: GgeState) -> float:
    return ShgVertexData(state, k).expectation()


def shg_vertex_observable(k: int) -> ObservableSpec:
    return ObservableSpec.generic(lambda st, th, a: shg_vertex_spectral(k, st, th), label=f"exp({k} g Phi)")


# ---------------------------------------------------------------------------
# Lieb-Liniger density powers

MAX_LL_POWER = 3


def _pair_product(c: float, ps):
    """``prod_{j > l} (p_j - p_l) / ((p_j - p_l)^2 + c^2)``."""
    out = 1.0
    for j in range(len(ps)):
        for l in range(j):
            d = ps[j] - ps[l]
            out = out * d / (d * d + c * c)
    return out


def _ll_check(K: int, state: GgeState) -> float:
    if state.model.name != "lieb_liniger":
        raise ObservableError("density powers need a Lieb-Liniger state")
    if not 1 <= int(K) <= MAX_LL_POWER:
        raise ObservableError(f"density power K must lie in [1, {MAX_LL_POWER}]")
    return state.model.params["c"]


def ll_density_power_expectation(K: int, state: GgeState) -> float:
    """``<O_K> = int prod_r (dp_r/2pi n h_r^dr) prod_{j>l} (...)``."""
    c = _ll_check(K, state)
    grid = state.grid
    p = grid.theta
    hdr = [state.dress(p ** r, Parity.SCALAR) for r in range(K)]
    args = [p.reshape([-1 if i == r else 1 for i in range(K)]) for r in range(K)]
    G = np.broadcast_to(_pair_product(c, args), (grid.size,) * K)
    for r in range(K):
        G = np.tensordot(state.measure * hdr[r] / TWO_PI, G, axes=(0, 0))
    return float(G)


def ll_density_power_spectral(K: int, state: GgeState, theta=None) -> np.ndarray:
    """Spectral function of the ``K``-th density power in a Lieb-Liniger state.

    ``V(p) = sum_s int prod_{r != s} (dp_r/2pi n h_r^dr) h_s^dr(p) g_s^dr(p) / 1^dr(p)``
    where ``g_s`` is the pair product seen as a vector field in ``p_s``.
    """
    c = _ll_check(K, state)
    grid = state.grid
    p = grid.theta
    N = grid.size
    hdr = [state.dress(p ** r, Parity.SCALAR) for r in range(K)]
    meas = [state.measure * hdr[r] / TWO_PI for r in range(K)]
    one_dr = hdr[0]
    if theta is not None:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
    out = np.zeros(N if theta is None else theta.size)
    for s in range(K):
        others = [r for r in range(K) if r != s]
        # node grid: axis 0 is p_s, remaining axes the other variables
        args = [None] * K
        args[s] = p.reshape([-1] + [1] * len(others))
        for pos, r in enumerate(others):
            shape = [1] * K
            shape[pos + 1] = -1
            args[r] = p.reshape(shape)
        G = np.broadcast_to(_pair_product(c, args), (N,) * K)
        Gflat = G.reshape(N, -1)
        gdr = state.dress(Gflat, Parity.VECTOR)  # dress in p_s for every fixed configuration
        if theta is not None:
            argt = list(args)
            argt[s] = theta.reshape([-1] + [1] * len(others))
            Gt = np.broadcast_to(_pair_product(c, argt), (theta.size,) + (N,) * len(others)).reshape(theta.size, -1)
            row = state.kernel.row(theta, 0)  # (m, N)
            gdr = Gt + row @ (state.measure[:, None] * gdr)
        red = gdr.reshape((-1,) + (N,) * len(others))
        for pos, r in enumerate(others):
            red = np.tensordot(red, meas[r], axes=(1, 0))
        hs = hdr[s] if theta is None else state.charge_dr_at(lambda q, a=0: np.asarray(q) ** s, theta, 0)
        out = out + hs * red
    one = one_dr if theta is None else state.charge_dr_at(lambda q, a=0: np.ones_like(np.asarray(q, dtype=float)), theta, 0)
    return out / one


def ll_density_power_observable(K: int) -> ObservableSpec:
    return ObservableSpec.generic(lambda st, th, a: ll_density_power_spectral(K, st, th), label=f"O_{K}")

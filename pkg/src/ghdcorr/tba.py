"""Thermodynamic Bethe ansatz: GGE states, dressing and one-point averages.

Conventions
-----------
The dressing of a vector field (a rapidity derivative such as ``p'``) solves
``h^dr = h + T n h^dr`` and that of a scalar field (a one-particle eigenvalue)
solves ``h^dr = h + T^T n h^dr``.  On the grid the integral ``int dalpha``
becomes a weighted sum, so the operators are ``1 - T diag(mu)`` and
``1 - T^T diag(mu)`` with the occupation measure ``mu_k = w_k n_k``.

States whose occupation jumps inside the rapidity domain (ray states of the
partitioning protocol) replace ``mu`` by a measure built from partial
quadrature weights; everything else is unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import (AccelerationSingular, BoseCondensation, DressingSingular, GhdError,
                     TbaDivergence)
from .models import ModelSpec
from .spectral import (TWO_PI, KernelOperator, Parity, SpectralFunction, SpectralGrid,
                       Statistics, barycentric_interpolate, free_energy, kernel_matrix,
                       occupation, pseudo_energy, statistical_factor)

COND_MAX = 1e12


def model_kernel(model: ModelSpec, grid: SpectralGrid) -> KernelOperator:
    return kernel_matrix(model.phi, grid, model.dphi)


@dataclass
class DrivingTerm:
    """GGE driving term ``w(theta) = sum_i beta_i h_i(theta)``.

    ``func(theta, a)`` evaluates the driving term anywhere; ``betas`` records
    the decomposition when the term was built from charges.
    """

    func: Callable
    betas: dict = field(default_factory=dict)

    @classmethod
    def from_charges(cls, model: ModelSpec, betas: dict) -> "DrivingTerm":
        hs = [(model.charge(k), float(b)) for k, b in betas.items()]

        def w(theta, a=0):
            theta = np.asarray(theta, dtype=float)
            out = np.zeros(np.broadcast_shapes(theta.shape, np.shape(a)))
            for h, b in hs:
                out = out + b * h(theta, a)
            return out

        return cls(w, dict(betas))

    @classmethod
    def thermal(cls, model: ModelSpec, beta: float, mu: float = 0.0) -> "DrivingTerm":
        def w(theta, a=0):
            return beta * (model.E(theta, a) - mu)
        return cls(w, {"energy": beta, "chemical_potential": mu})

    def values(self, grid: SpectralGrid) -> np.ndarray:
        out = np.asarray(self.func(grid.theta, grid.type_of), dtype=float)
        return np.broadcast_to(out, grid.theta.shape).copy()

    def as_spectral(self, grid: SpectralGrid) -> SpectralFunction:
        return SpectralFunction(grid, self.values(grid), Parity.SCALAR)


def solve_pseudo_energy(w: np.ndarray, kernel: KernelOperator, grid: SpectralGrid,
                        tol: float = 1e-12, max_iter: int = 10_000,
                        damping: float = 0.5) -> np.ndarray:
    """Solve ``eps = w + int dgamma/2pi phi(gamma, theta) F(eps(gamma))``.

    ``w`` may carry leading batch dimensions; each row is an independent
    state.  Damped fixed-point iteration; the damping is halved whenever the
    residual grows.
    """
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)):
        raise TbaDivergence("non-finite driving term")
    stats = [t.statistics for t in grid.types]
    needs_positive = any(s in (Statistics.BOSON, Statistics.RADIATIVE) for s in stats)
    TW = kernel.matrix * grid.weights[:, None]  # (k, j): T[k, j] w_k

    def check(eps):
        if needs_positive:
            for a, sl in enumerate(grid.slices):
                if stats[a] is Statistics.BOSON and np.any(eps[..., sl] <= 0):
                    raise BoseCondensation(f"min pseudo-energy {eps[..., sl].min():.3g}")
                if stats[a] is Statistics.RADIATIVE and np.any(eps[..., sl] <= 0):
                    raise TbaDivergence("radiative pseudo-energy must stay positive")

    eps = w.copy()
    if kernel.is_zero:
        check(eps)
        return eps
    lam = float(damping)
    prev = np.inf
    for _ in range(int(max_iter)):
        check(eps)
        target = w + grid.per_type(eps, free_energy) @ TW
        diff = target - eps
        res = np.max(np.abs(diff) / np.maximum(1.0, np.abs(eps)))
        if not np.isfinite(res):
            raise TbaDivergence("non-finite pseudo-energy during iteration")
        if res < tol:
            check(target)
            return target
        if res > prev:
            lam = max(0.5 * lam, 1e-4)
        prev = res
        eps = eps + lam * diff
    raise TbaDivergence(f"no convergence after {max_iter} iterations (residual {prev:.3g})")


class GgeState:
    """A GGE given by its occupation function, with derived quantities.

    Parameters
    ----------
    model : ModelSpec
    grid : SpectralGrid
    n : array_like
        Occupation at the grid nodes.
    kernel : KernelOperator, optional
        Reused if given.
    epsilon : array_like, optional
        Pseudo-energies; inferred from ``n`` otherwise.
    driving : DrivingTerm, optional
        Enables exact off-grid evaluation of the occupation.
    measure, measure_nf : array_like, optional
        Quadrature measures replacing ``w n`` and ``w n f`` (for occupations
        with jumps).
    occupation_at : callable, optional
        ``(theta, a) -> n`` off the grid; overrides the default evaluation.
    """

    def __init__(self, model: ModelSpec, grid: SpectralGrid, n, *, kernel: KernelOperator | None = None,
                 epsilon=None, driving: DrivingTerm | None = None, measure=None, measure_nf=None,
                 occupation_at: Callable | None = None):
        self.model = model
        self.grid = grid
        self.kernel = kernel if kernel is not None else model_kernel(model, grid)
        n = np.array(n, dtype=float).reshape(grid.size)
        if not np.all(np.isfinite(n)) or np.any(n < 0):
            raise GhdError("occupation must be finite and non-negative")
        for a, sl in enumerate(grid.slices):
            if grid.types[a].statistics is Statistics.FERMION and np.any(n[sl] > 1.0 + 1e-12):
                raise GhdError("fermionic occupation exceeds 1")
        self.n = n
        self.f = grid.per_type(n, statistical_factor)
        self.epsilon = (np.asarray(epsilon, dtype=float) if epsilon is not None
                        else grid.per_type(n, pseudo_energy))
        self.driving = driving
        self.measure = grid.weights * n if measure is None else np.asarray(measure, dtype=float)
        self.measure_nf = (grid.weights * n * self.f if measure_nf is None
                           else np.asarray(measure_nf, dtype=float))
        self._occupation_at = occupation_at

        th, ty = grid.theta, grid.type_of
        self.p_prime = np.asarray(model.dp(th, ty), dtype=float) * np.ones(grid.size)
        self.E_prime = np.asarray(model.dE(th, ty), dtype=float) * np.ones(grid.size)
        T = self.kernel.matrix
        eye = np.eye(grid.size)
        self._vec = eye - T * self.measure[None, :]
        self._sca = eye - T.T * self.measure[None, :]
        for mat in (self._vec, self._sca):
            cond = np.linalg.cond(mat)
            if not np.isfinite(cond) or cond > COND_MAX:
                raise DressingSingular(f"condition number {cond:.3g}")
        self._lu_vec = lu_factor(self._vec)
        self._lu_sca = lu_factor(self._sca)
        self.p_dr = lu_solve(self._lu_vec, self.p_prime)
        self.E_dr = lu_solve(self._lu_vec, self.E_prime)
        self.rho_s = self.p_dr / TWO_PI
        self.rho_p = self.n * self.rho_s
        self.v_eff = self.E_dr / self.p_dr
        if np.any(self.rho_s <= 0):
            raise GhdError("state density is not positive")

    # -- dressing -------------------------------------------------------

    def dress(self, h, parity=None):
        """Dress ``h``; returns the same kind of object that was passed.

        ``h`` is a :class:`SpectralFunction` or an array (with ``parity``)
        whose first axis runs over the grid nodes.
        """
        if isinstance(h, SpectralFunction):
            return SpectralFunction(self.grid, self.dress(h.values, h.parity), h.parity)
        parity = Parity.parse(parity)
        lu = self._lu_vec if parity is Parity.VECTOR else self._lu_sca
        return lu_solve(lu, np.asarray(h, dtype=float))

    def star_dress(self, g):
        """``g^{*dr} = (T n g)^dr = g^dr - g`` for a vector field ``g``."""
        if isinstance(g, SpectralFunction):
            if g.parity is not Parity.VECTOR:
                raise GhdError("star-dressing acts on vector fields")
            return SpectralFunction(self.grid, self.star_dress(g.values), Parity.VECTOR)
        g = np.asarray(g, dtype=float)
        m = self.measure.reshape((-1,) + (1,) * (g.ndim - 1))
        return lu_solve(self._lu_vec, self.kernel.matrix @ (m * g))

    def dressed_kernel_column(self, gamma, b) -> np.ndarray:
        """``T^dr(theta_j, gamma) = ((1 - T n)^{-1} T)(theta_j, gamma)``; shape (N, m)."""
        cols = self.kernel.column(np.atleast_1d(gamma), np.atleast_1d(b))
        return lu_solve(self._lu_vec, np.array(cols).T)

    # -- off-grid (Nystrom) evaluation ---------------------------------

    def dress_at(self, theta, a, h_at, h_dr, parity) -> np.ndarray:
        """Dressed value at off-grid rapidities from node values ``h_dr``."""
        parity = Parity.parse(parity)
        mh = self.measure * np.asarray(h_dr, dtype=float)
        if parity is Parity.VECTOR:
            return np.asarray(h_at) + self.kernel.row(theta, a) @ mh
        return np.asarray(h_at) + self.kernel.column(theta, a) @ mh

    def d_dress_at(self, theta, a, dh_at, h_dr) -> np.ndarray:
        """Rapidity derivative of a dressed vector field at off-grid points."""
        return np.asarray(dh_at) + self.kernel.drow(theta, a) @ (self.measure * np.asarray(h_dr))

    def p_dr_at(self, theta, a):
        return self.dress_at(theta, a, self.model.dp(theta, a), self.p_dr, Parity.VECTOR)

    def E_dr_at(self, theta, a):
        return self.dress_at(theta, a, self.model.dE(theta, a), self.E_dr, Parity.VECTOR)

    def rho_s_at(self, theta, a):
        return self.p_dr_at(theta, a) / TWO_PI

    def v_eff_at(self, theta, a):
        return self.E_dr_at(theta, a) / self.p_dr_at(theta, a)

    def dv_eff_at(self, theta, a):
        """``d v_eff / d theta`` off the grid."""
        pd = self.p_dr_at(theta, a)
        ed = self.E_dr_at(theta, a)
        dpd = self.d_dress_at(theta, a, self.model.d2p(theta, a), self.p_dr)
        ded = self.d_dress_at(theta, a, self.model.d2E(theta, a), self.E_dr)
        return (ded * pd - ed * dpd) / (pd * pd)

    def charge_dr(self, h) -> np.ndarray:
        """Node values of ``h^dr`` for a charge key or callable (scalar field)."""
        func = self.model.charge(h)
        return self.dress(func(self.grid.theta, self.grid.type_of) * np.ones(self.grid.size), Parity.SCALAR)

    def charge_dr_at(self, h, theta, a, h_dr=None):
        func = self.model.charge(h)
        if h_dr is None:
            h_dr = self.charge_dr(func)
        return self.dress_at(theta, a, func(theta, a), h_dr, Parity.SCALAR)

    def epsilon_at(self, theta, a):
        """Pseudo-energy off the grid from the TBA equation (needs a driving term)."""
        if self.driving is None:
            raise GhdError("state has no driving term")
        F = self.grid.per_type(self.epsilon, free_energy)
        return self.driving.func(theta, a) + self.kernel.column(theta, a) @ (self.grid.weights * F)

    def occupation_at(self, theta, a):
        """Occupation at off-grid rapidities."""
        theta = np.asarray(theta, dtype=float)
        a = np.broadcast_to(np.asarray(a), theta.shape)
        if self._occupation_at is not None:
            return np.asarray(self._occupation_at(theta, a), dtype=float)
        if self.driving is not None:
            eps = self.epsilon_at(theta, a)
        else:
            finite = np.isfinite(self.epsilon)
            if np.all(finite):
                eps = barycentric_interpolate(self.grid, self.epsilon, theta, a)
            else:
                out = barycentric_interpolate(self.grid, self.n, theta, a)
                return np.clip(out, 0.0, None)
        out = np.empty(theta.shape)
        for b in range(self.grid.n_types):
            mask = a == b
            out[mask] = occupation(self.grid.types[b].statistics, eps[mask])
        return out

    def factor_at(self, theta, a, n_at=None):
        """Statistical factor at off-grid rapidities."""
        theta = np.asarray(theta, dtype=float)
        a = np.broadcast_to(np.asarray(a), theta.shape)
        n_at = self.occupation_at(theta, a) if n_at is None else np.asarray(n_at)
        out = np.empty(theta.shape)
        for b in range(self.grid.n_types):
            mask = a == b
            out[mask] = statistical_factor(self.grid.types[b].statistics, n_at[mask])
        return out

    def with_occupation(self, n) -> "GgeState":
        return GgeState(self.model, self.grid, n, kernel=self.kernel)


def _as_values(h, grid: SpectralGrid, model: ModelSpec, parity=Parity.SCALAR) -> np.ndarray:
    if isinstance(h, SpectralFunction):
        return np.asarray(h.values)
    if callable(h) or isinstance(h, (str, int, np.integer)):
        func = model.charge(h)
        return np.asarray(func(grid.theta, grid.type_of), dtype=float) * np.ones(grid.size)
    return np.asarray(h, dtype=float)


def dress(h: SpectralFunction, state: GgeState) -> SpectralFunction:
    """Dress a spectral function in ``state`` according to its parity."""
    return state.dress(h)


def star_dress(g: SpectralFunction, state: GgeState) -> SpectralFunction:
    """Star-dressing ``(T n g)^dr`` of a vector field."""
    return state.star_dress(g)


def solve_gge(w, model: ModelSpec, grid: SpectralGrid, *, tol: float = 1e-12,
              max_iter: int = 10_000, damping: float = 0.5,
              kernel: KernelOperator | None = None) -> GgeState:
    """GGE from its driving term.

    Parameters
    ----------
    w : DrivingTerm, callable ``(theta, a)`` or SpectralFunction
        Driving term.  Only a :class:`DrivingTerm` or a callable allows exact
        off-grid evaluation of the occupation afterwards.
    """
    kernel = kernel if kernel is not None else model_kernel(model, grid)
    if isinstance(w, SpectralFunction):
        driving = None
        wv = np.asarray(w.values)
    else:
        driving = w if isinstance(w, DrivingTerm) else DrivingTerm(w)
        wv = driving.values(grid)
    eps = solve_pseudo_energy(wv, kernel, grid, tol=tol, max_iter=max_iter, damping=damping)
    n = grid.per_type(eps, occupation)
    return GgeState(model, grid, n, kernel=kernel, epsilon=eps, driving=driving)


def average_density(state: GgeState, h) -> float:
    """``<q_h> = int dtheta/2pi p' n h^dr``."""
    hv = _as_values(h, state.grid, state.model)
    hdr = state.dress(hv, Parity.SCALAR)
    return float(np.sum(state.measure * state.p_prime * hdr) / TWO_PI)


def average_current(state: GgeState, h) -> float:
    """``<j_h> = int dtheta/2pi E' n h^dr``."""
    hv = _as_values(h, state.grid, state.model)
    hdr = state.dress(hv, Parity.SCALAR)
    return float(np.sum(state.measure * state.E_prime * hdr) / TWO_PI)


def occupation_derivative(state: GgeState, h) -> np.ndarray:
    """``d n / d beta_h = -h^dr n f``."""
    hv = _as_values(h, state.grid, state.model)
    return -state.dress(hv, Parity.SCALAR) * state.n * state.f


def effective_acceleration(fluid, x_index: int) -> SpectralFunction:
    """``a_eff = d_x n / (2 pi rho_p f)`` at one spatial node of a fluid.

    ``d_x`` uses second-order central differences (second-order one-sided at
    the ends).  The result transforms as the inverse of a vector field, so it
    is returned with scalar parity as a plain rate.
    """
    x = np.asarray(fluid.x)
    if x.size < 3:
        raise GhdError("effective acceleration needs at least 3 spatial nodes")
    dn = np.gradient(fluid.n, x, axis=0, edge_order=2)[x_index]
    denom = TWO_PI * fluid.rho_p[x_index] * fluid.f[x_index]
    zero = denom == 0
    if np.any(zero & (np.abs(dn) > 0)):
        raise AccelerationSingular(f"rho_p f vanishes where d_x n != 0 at x={x[x_index]:.6g}")
    out = np.where(zero, 0.0, dn / np.where(zero, 1.0, denom))
    return SpectralFunction(fluid.grid, out, Parity.SCALAR)


def state_derivative_check(state: GgeState, g: SpectralFunction, h: SpectralFunction,
                           delta_n: SpectralFunction, step: float = 1e-5) -> tuple[float, float]:
    """Compare both sides of the occupation-derivative identity.

    ``lhs`` is the central difference of ``int dtheta/2pi g n h^dr`` under
    ``n -> n + s delta_n``; ``rhs`` is ``int dtheta/2pi g^dr delta_n h^dr``.
    """
    if g.parity is h.parity:
        raise GhdError("g and h must have opposite parity")
    grid = state.grid
    dn = np.asarray(delta_n.values)
    if not np.any(dn):
        return 0.0, 0.0

    def functional(n):
        st = GgeState(state.model, grid, n, kernel=state.kernel)
        return float(np.sum(grid.weights * g.values * n * st.dress(h.values, h.parity)) / TWO_PI)

    lhs = (functional(state.n + step * dn) - functional(state.n - step * dn)) / (2 * step)
    gdr = state.dress(g.values, g.parity)
    hdr = state.dress(h.values, h.parity)
    rhs = float(np.sum(grid.weights * gdr * dn * hdr) / TWO_PI)
    return lhs, rhs

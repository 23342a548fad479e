"""Spectral space discretization.

A spectral grid is a union of particle types, each carrying a finite rapidity
interval discretized by a quadrature rule.  Functions on the grid remember
whether they transform as scalar fields (one-particle eigenvalues such as
``h_i``) or as vector fields (derivatives such as ``p'``), and the two-body
scattering kernel is stored as a dense matrix ``T = phi / (2 pi)``.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import legendre
from scipy.special import expit

from .errors import GridError, KernelError

TWO_PI = 2.0 * np.pi


class Statistics(str, Enum):
    """Quasi-particle statistics, fixing the free-energy function ``F``."""

    FERMION = "fermion"
    BOSON = "boson"
    CLASSICAL = "classical_particle"
    RADIATIVE = "radiative"

    @classmethod
    def parse(cls, value) -> "Statistics":
        if isinstance(value, Statistics):
            return value
        key = str(value).lower()
        if key == "classical":
            key = "classical_particle"
        return cls(key)


# Free-energy function and its derivatives for each statistics.  The occupation
# is n = dF/d(eps) and the statistical factor f = -d(log n)/d(eps).


def free_energy(stat: Statistics, eps):
    """``F(eps)`` entering the pseudo-energy equation."""
    eps = np.asarray(eps, dtype=float)
    if stat is Statistics.FERMION:
        return -np.logaddexp(0.0, -eps)
    if stat is Statistics.BOSON:
        return np.log(-np.expm1(-eps))
    if stat is Statistics.CLASSICAL:
        return -np.exp(-eps)
    return np.log(eps)


def occupation(stat: Statistics, eps):
    """Occupation ``n = dF/d(eps)``."""
    eps = np.asarray(eps, dtype=float)
    if stat is Statistics.FERMION:
        return expit(-eps)
    if stat is Statistics.BOSON:
        with np.errstate(over="ignore", divide="ignore"):
            return 1.0 / np.expm1(eps)
    if stat is Statistics.CLASSICAL:
        with np.errstate(over="ignore"):
            return np.exp(-eps)
    with np.errstate(divide="ignore"):
        return 1.0 / eps


def pseudo_energy(stat: Statistics, n):
    """Inverse of :func:`occupation`."""
    n = np.asarray(n, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if stat is Statistics.FERMION:
            return np.log1p(-n) - np.log(n)
        if stat is Statistics.BOSON:
            return np.log1p(1.0 / n)
        if stat is Statistics.CLASSICAL:
            return -np.log(n)
        return 1.0 / n


def statistical_factor(stat: Statistics, n):
    """``f = 1 - n``, ``1 + n``, ``1`` or ``n`` by statistics."""
    n = np.asarray(n, dtype=float)
    if stat is Statistics.FERMION:
        return 1.0 - n
    if stat is Statistics.BOSON:
        return 1.0 + n
    if stat is Statistics.CLASSICAL:
        return np.ones_like(n)
    return n.copy()


@dataclass(frozen=True)
class ParticleType:
    """A quasi-particle species with its rapidity interval."""

    name: str
    statistics: Statistics
    domain: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "statistics", Statistics.parse(self.statistics))
        lo, hi = (float(v) for v in self.domain)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise GridError(f"non-finite rapidity domain for type {self.name!r}")
        if not lo < hi:
            raise GridError(f"empty rapidity domain [{lo}, {hi}] for type {self.name!r}")
        object.__setattr__(self, "domain", (lo, hi))


def gauss_legendre_rule(n: int, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to ``[lo, hi]``."""
    x, w = legendre.leggauss(int(n))
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


def trapezoid_rule(n: int, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Uniform trapezoid nodes (endpoints included) and weights."""
    if n < 2:
        raise GridError("trapezoid rule needs at least two points")
    x = np.linspace(lo, hi, int(n))
    h = (hi - lo) / (n - 1)
    w = np.full(int(n), h)
    w[0] = w[-1] = 0.5 * h
    return x, w


_RULES = {"gauss_legendre": gauss_legendre_rule, "uniform_trapezoid": trapezoid_rule}

MIN_POINTS = 8


class SpectralGrid:
    """Quadrature discretization of the spectral space.

    Nodes of all particle types are concatenated into flat arrays; ``type_of``
    gives the particle-type index of each node and ``slices`` the node range
    of each type.
    """

    def __init__(self, types: Sequence[ParticleType], points_per_type: int, scheme: str):
        if scheme not in _RULES:
            raise GridError(f"unknown quadrature scheme {scheme!r}")
        self.types = tuple(types)
        self.scheme = scheme
        self.points_per_type = int(points_per_type)
        nodes, weights, kinds = [], [], []
        for a, ptype in enumerate(self.types):
            x, w = _RULES[scheme](self.points_per_type, *ptype.domain)
            nodes.append(x)
            weights.append(w)
            kinds.append(np.full(x.size, a, dtype=int))
        self.theta = np.concatenate(nodes)
        self.weights = np.concatenate(weights)
        self.type_of = np.concatenate(kinds)
        self.slices = tuple(
            slice(a * self.points_per_type, (a + 1) * self.points_per_type)
            for a in range(len(self.types))
        )
        for arr in (self.theta, self.weights):
            arr.setflags(write=False)
        self.type_of.setflags(write=False)
        self._legendre_cache: dict = {}

    @property
    def size(self) -> int:
        return self.theta.size

    @property
    def n_types(self) -> int:
        return len(self.types)

    def statistics(self, a: int) -> Statistics:
        return self.types[a].statistics

    def integrate(self, values) -> float:
        """``sum_k w_k f(theta_k)`` over all types."""
        values = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise GridError("cannot integrate non-finite values")
        return float(self.weights @ values)

    def same_as(self, other: "SpectralGrid") -> bool:
        return other is self or (
            self.scheme == other.scheme
            and self.types == other.types
            and self.points_per_type == other.points_per_type
        )

    def per_type(self, values, fn: Callable):
        """Apply ``fn(stat, values[slice])`` type by type."""
        values = np.asarray(values, dtype=float)
        out = np.empty(np.broadcast_shapes(values.shape, self.theta.shape[-1:]), dtype=float)
        for a, sl in enumerate(self.slices):
            out[..., sl] = fn(self.types[a].statistics, values[..., sl])
        return out

    # Partial quadrature weights.  For a smooth function g known at the nodes
    # of type a, ``partial_weights(a, s) @ g[slice]`` integrates the
    # interpolant of g from the lower domain end up to s.  This lets integrands
    # with a jump at a known rapidity keep the accuracy of the full rule.

    def partial_weights(self, a: int, upper) -> np.ndarray:
        """Weights integrating the node interpolant from ``theta_min`` to ``upper``.

        ``upper`` may be an array; the result has shape ``upper.shape + (n,)``.
        """
        lo, hi = self.types[a].domain
        upper = np.clip(np.asarray(upper, dtype=float), lo, hi)
        nodes = self.theta[self.slices[a]]
        w = self.weights[self.slices[a]]
        if self.scheme == "gauss_legendre":
            n = nodes.size
            key = a
            if key not in self._legendre_cache:
                xk = 2.0 * (nodes - lo) / (hi - lo) - 1.0
                pk = legendre.legvander(xk, n - 1)  # (n, n) : P_m(x_k)
                coef = w[:, None] * pk * (np.arange(n) + 0.5)[None, :]
                self._legendre_cache[key] = coef
            coef = self._legendre_cache[key]
            s = 2.0 * (upper - lo) / (hi - lo) - 1.0
            pm = legendre.legvander(s, n)  # P_0..P_n at s
            integ = np.empty(s.shape + (n,))
            integ[..., 0] = s + 1.0
            m = np.arange(1, n)
            integ[..., 1:] = (pm[..., 2:] - pm[..., :-2]) / (2 * m + 1)
            # the mapped weights w already carry the interval Jacobian
            return np.einsum("...m,km->...k", integ, coef)
        # piecewise-linear interpolant for the trapezoid rule
        h = nodes[1] - nodes[0]
        pos = (upper - lo) / h
        j = np.minimum(np.floor(pos).astype(int), nodes.size - 2)
        frac = pos - j
        idx = np.arange(nodes.size)
        jj = j[..., None]
        out = np.where(idx < jj, h, 0.0)
        out = out - np.where(idx == 0, 0.5 * h, 0.0) * (jj > 0)
        out = out + np.where(idx == jj, 0.5 * h, 0.0) * (jj > 0)
        out = out + np.where(idx == jj, h * (frac - 0.5 * frac**2)[..., None], 0.0)
        out = out + np.where(idx == jj + 1, h * (0.5 * frac**2)[..., None], 0.0)
        return out

    def interval_weights(self, a: int, intervals) -> np.ndarray:
        """Weights for the indicator of a union of rapidity intervals of type ``a``."""
        w = np.zeros(self.points_per_type)
        for lo, hi in intervals:
            if hi <= lo:
                continue
            w += self.partial_weights(a, hi) - self.partial_weights(a, lo)
        return w


def build_grid(types: Sequence[ParticleType], points_per_type: int = 64,
               scheme: str = "gauss_legendre") -> SpectralGrid:
    """Build a :class:`SpectralGrid`.

    Parameters
    ----------
    types : sequence of ParticleType
        Particle types with finite rapidity domains.
    points_per_type : int
        Number of quadrature nodes per type (at least 8).
    scheme : {"gauss_legendre", "uniform_trapezoid"}
    """
    if int(points_per_type) < MIN_POINTS:
        raise GridError(f"points_per_type={points_per_type} is below the minimum of {MIN_POINTS}")
    if not types:
        raise GridError("at least one particle type is required")
    return SpectralGrid(types, points_per_type, scheme)


class Parity(str, Enum):
    SCALAR = "scalar_field"
    VECTOR = "vector_field"

    @classmethod
    def parse(cls, value) -> "Parity":
        if isinstance(value, Parity):
            return value
        key = str(value).lower()
        if key in ("scalar", "vector"):
            key += "_field"
        return cls(key)


class SpectralFunction:
    """Values of a spectral function on a grid, tagged with its parity.

    Sums and differences require equal parity.  Products follow the change of
    variables rule: scalar times scalar is scalar, scalar times vector is
    vector; the product of two vector fields is not a spectral function of
    either kind and is rejected.
    """

    __array_priority__ = 100

    def __init__(self, grid: SpectralGrid, values, parity):
        values = np.array(values, dtype=float).reshape(grid.size)
        if not np.all(np.isfinite(values)):
            raise GridError("spectral function values must be finite")
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.parity = Parity.parse(parity)

    def _check(self, other: "SpectralFunction"):
        if not self.grid.same_as(other.grid):
            raise GridError("spectral functions live on different grids")

    def __add__(self, other):
        if isinstance(other, SpectralFunction):
            self._check(other)
            if other.parity is not self.parity:
                raise GridError("cannot add scalar and vector fields")
            return SpectralFunction(self.grid, self.values + other.values, self.parity)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, SpectralFunction):
            return self + (-other)
        return NotImplemented

    def __neg__(self):
        return SpectralFunction(self.grid, -self.values, self.parity)

    def __mul__(self, other):
        if isinstance(other, SpectralFunction):
            self._check(other)
            if self.parity is Parity.VECTOR and other.parity is Parity.VECTOR:
                raise GridError("product of two vector fields is not a spectral function")
            parity = Parity.VECTOR if Parity.VECTOR in (self.parity, other.parity) else Parity.SCALAR
            return SpectralFunction(self.grid, self.values * other.values, parity)
        if np.isscalar(other):
            return SpectralFunction(self.grid, self.values * float(other), self.parity)
        return NotImplemented

    __rmul__ = __mul__

    def __repr__(self):
        return f"SpectralFunction({self.parity.value}, n={self.values.size})"


def integrate(f: SpectralFunction) -> float:
    """Quadrature of a spectral function over all particle types."""
    return f.grid.integrate(f.values)


def as_typed_kernel(phi: Callable) -> Callable:
    """Wrap ``phi(theta, alpha)`` into the four-argument typed form."""
    try:
        nparams = len(inspect.signature(phi).parameters)
    except (TypeError, ValueError):
        nparams = 4
    if nparams >= 4:
        return phi
    return lambda theta, alpha, a=0, b=0: phi(theta, alpha)


def _fd_first_argument(phi: Callable, step: float = 1e-3) -> Callable:
    def dphi(theta, alpha, a=0, b=0):
        h = step
        return (
            -phi(theta + 2 * h, alpha, a, b) + 8 * phi(theta + h, alpha, a, b)
            - 8 * phi(theta - h, alpha, a, b) + phi(theta - 2 * h, alpha, a, b)
        ) / (12 * h)
    return dphi


class KernelOperator:
    """Dense scattering operator ``T(theta_j, alpha_k) = phi / (2 pi)``.

    Besides the node matrix, the operator keeps the kernel function so that
    rows and columns can be evaluated at rapidities off the grid (Nystrom
    interpolation of dressed quantities).
    """

    def __init__(self, grid: SpectralGrid, phi: Callable, dphi: Callable | None = None,
                 matrix: np.ndarray | None = None, transposed: bool = False):
        self.grid = grid
        self.phi = as_typed_kernel(phi)
        self.dphi = as_typed_kernel(dphi) if dphi is not None else _fd_first_argument(self.phi)
        self.transposed = transposed
        if matrix is None:
            th, al = np.meshgrid(grid.theta, grid.theta, indexing="ij")
            a, b = np.meshgrid(grid.type_of, grid.type_of, indexing="ij")
            matrix = np.asarray(self.phi(th, al, a, b), dtype=float) / TWO_PI
            matrix = np.broadcast_to(matrix, th.shape).copy()
            if not np.all(np.isfinite(matrix)):
                raise KernelError("non-finite kernel value at a node pair")
            if transposed:
                matrix = matrix.T.copy()
        matrix.setflags(write=False)
        self.matrix = matrix
        self.is_zero = not np.any(matrix)

    @property
    def T(self) -> "KernelOperator":
        return KernelOperator(self.grid, self.phi, self.dphi, self.matrix.T.copy(),
                              not self.transposed)

    def row(self, theta, a) -> np.ndarray:
        """``T(theta, alpha_k)`` for off-grid ``theta``; shape ``theta.shape + (N,)``."""
        theta = np.asarray(theta, dtype=float)[..., None]
        a = np.asarray(a)[..., None]
        out = self.phi(theta, self.grid.theta, a, self.grid.type_of) / TWO_PI
        return np.broadcast_to(out, theta.shape[:-1] + (self.grid.size,))

    def column(self, gamma, b) -> np.ndarray:
        """``T(alpha_k, gamma)`` for off-grid ``gamma``; shape ``gamma.shape + (N,)``."""
        gamma = np.asarray(gamma, dtype=float)[..., None]
        b = np.asarray(b)[..., None]
        out = self.phi(self.grid.theta, gamma, self.grid.type_of, b) / TWO_PI
        return np.broadcast_to(out, gamma.shape[:-1] + (self.grid.size,))

    def drow(self, theta, a) -> np.ndarray:
        """First-argument derivative ``d/dtheta T(theta, alpha_k)``."""
        theta = np.asarray(theta, dtype=float)[..., None]
        a = np.asarray(a)[..., None]
        out = self.dphi(theta, self.grid.theta, a, self.grid.type_of) / TWO_PI
        return np.broadcast_to(out, theta.shape[:-1] + (self.grid.size,))

    def dmatrix(self) -> np.ndarray:
        """``d/dtheta_j T(theta_j, alpha_k)`` at node pairs."""
        return self.drow(self.grid.theta, self.grid.type_of)


def kernel_matrix(phi: Callable, grid: SpectralGrid, dphi: Callable | None = None) -> KernelOperator:
    """Materialize ``T = phi/(2 pi)`` on the node pairs of ``grid``."""
    return KernelOperator(grid, phi, dphi)


def barycentric_interpolate(grid: SpectralGrid, values, theta, a) -> np.ndarray:
    """Interpolate node values of type ``a`` at rapidities ``theta``.

    Used only as a fallback when a quantity cannot be evaluated off the grid
    from its defining equation.
    """
    from scipy.interpolate import BarycentricInterpolator  # noqa: WPS433

    theta = np.asarray(theta, dtype=float)
    a = np.broadcast_to(np.asarray(a), theta.shape)
    values = np.asarray(values, dtype=float)
    out = np.empty(theta.shape)
    for b, sl in enumerate(grid.slices):
        mask = a == b
        if not np.any(mask):
            continue
        if grid.scheme == "gauss_legendre":
            interp = BarycentricInterpolator(grid.theta[sl], values[sl])
            out[mask] = interp(theta[mask])
        else:
            out[mask] = np.interp(theta[mask], grid.theta[sl], values[sl])
    return out

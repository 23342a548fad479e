"""Built-in integrable models.

A model fixes the one-particle momentum and energy, the two-body scattering
kernel ``phi(theta, alpha)``, the quasi-particle statistics and the family of
conserved-charge eigenvalues ``h_i``.  All callables take rapidities and
particle-type indices ``(theta, a)`` and broadcast over arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .errors import ModelError
from .spectral import ParticleType, Statistics

Func = Callable[..., np.ndarray]


def _zero(*args):
    return np.zeros(np.broadcast_shapes(*(np.shape(x) for x in args[:2])))


@dataclass(frozen=True)
class Species:
    name: str
    statistics: Statistics


@dataclass(frozen=True)
class ModelSpec:
    """Model data.

    Attributes
    ----------
    p, E : callable
        Momentum and energy ``f(theta, a)``.
    dp, dE, d2p, d2E : callable
        First and second rapidity derivatives.
    phi, dphi : callable
        Kernel ``phi(theta, alpha, a, b)`` and its derivative in ``theta``.
    charges : dict
        Named one-particle eigenvalues; integer indices are resolved by
        ``charge_family``.
    """

    name: str
    species: tuple[Species, ...]
    p: Func
    E: Func
    dp: Func
    dE: Func
    d2p: Func
    d2E: Func
    phi: Func
    dphi: Func | None
    charges: dict = field(default_factory=dict)
    charge_family: Callable[[int], Func] | None = None
    params: dict = field(default_factory=dict)
    interacting: bool = True
    default_cutoff: float = 10.0

    def particle_types(self, domain: tuple[float, float] | None = None) -> list[ParticleType]:
        if domain is None:
            domain = (-self.default_cutoff, self.default_cutoff)
        return [ParticleType(s.name, s.statistics, domain) for s in self.species]

    def charge(self, key) -> Func:
        """Return ``h(theta, a)`` for a charge name, integer index or callable."""
        if callable(key):
            return key
        if isinstance(key, str) and key in self.charges:
            return self.charges[key]
        try:
            index = int(key)
        except (TypeError, ValueError):
            raise ModelError(f"model {self.name!r} has no charge {key!r}") from None
        if self.charge_family is None:
            raise ModelError(f"model {self.name!r} has no indexed charges")
        return self.charge_family(index)

    def group_velocity(self, theta, a=0):
        return self.dE(theta, a) / self.dp(theta, a)

    def check(self, theta: np.ndarray, a=0, rtol: float = 1e-8) -> None:
        """Verify ``p' > 0`` and the supplied derivatives against differences."""
        theta = np.asarray(theta, dtype=float)
        if np.any(self.dp(theta, a) <= 0):
            raise ModelError(f"p' is not positive on the grid for model {self.name!r}")
        h = 1e-4
        for f, df in ((self.p, self.dp), (self.E, self.dE), (self.dp, self.d2p), (self.dE, self.d2E)):
            fd = (-f(theta + 2 * h, a) + 8 * f(theta + h, a) - 8 * f(theta - h, a) + f(theta - 2 * h, a)) / (12 * h)
            exact = df(theta, a)
            scale = np.maximum(np.abs(exact), np.max(np.abs(exact)) * 1e-3 + 1e-300)
            if np.any(np.abs(fd - exact) > rtol * scale + 1e-10):
                raise ModelError(f"supplied derivative inconsistent for model {self.name!r}")


def _exp_family(s: int) -> Func:
    if s % 2 == 0:
        raise ModelError(f"charge index must be an odd spin, got {s}")
    return lambda theta, a=0: np.exp(s * np.asarray(theta, dtype=float))


def _power_family(r: int) -> Func:
    if r < 1:
        raise ModelError(f"charge index must be >= 1, got {r}")
    return lambda theta, a=0: np.asarray(theta, dtype=float) ** (r - 1)


def _rel_kinematics(m: float):
    return dict(
        p=lambda th, a=0: m * np.sinh(th),
        E=lambda th, a=0: m * np.cosh(th),
        dp=lambda th, a=0: m * np.cosh(th),
        dE=lambda th, a=0: m * np.sinh(th),
        d2p=lambda th, a=0: m * np.sinh(th),
        d2E=lambda th, a=0: m * np.cosh(th),
    )


def sinh_gordon(a: float, m: float = 1.0) -> ModelSpec:
    """sinh-Gordon model with coupling ``0 < a < 1``; charges ``h_s = exp(s theta)``, ``s`` odd."""
    if not 0.0 < a < 1.0:
        raise ModelError(f"sinh-Gordon coupling must lie in (0, 1), got {a}")
    if m <= 0:
        raise ModelError("mass must be positive")
    s = np.sin(np.pi * a)
    s2 = s * s

    def phi(theta, alpha, ta=0, tb=0):
        sh = np.sinh(np.asarray(theta) - alpha)
        return 2.0 * s / (sh * sh + s2)

    def dphi(theta, alpha, ta=0, tb=0):
        d = np.asarray(theta) - alpha
        sh = np.sinh(d)
        return -2.0 * s * np.sinh(2.0 * d) / (sh * sh + s2) ** 2

    kin = _rel_kinematics(m)
    charges = {"energy": kin["E"], "momentum": kin["p"]}
    return ModelSpec("sinh_gordon", (Species("particle", Statistics.FERMION),), phi=phi, dphi=dphi,
                     charges=charges, charge_family=_exp_family, params={"a": a, "m": m},
                     default_cutoff=12.0, **kin)


def lieb_liniger(c: float) -> ModelSpec:
    """Lieb-Liniger gas in the momentum parametrization; charges ``h_r = p^(r-1)``."""
    if not c > 0:
        raise ModelError(f"Lieb-Liniger coupling must be positive, got {c}")

    def phi(theta, alpha, ta=0, tb=0):
        d = np.asarray(theta) - alpha
        return 2.0 * c / (d * d + c * c)

    def dphi(theta, alpha, ta=0, tb=0):
        d = np.asarray(theta) - alpha
        return -4.0 * c * d / (d * d + c * c) ** 2

    kin = dict(
        p=lambda th, a=0: np.asarray(th, dtype=float) * 1.0,
        E=lambda th, a=0: np.asarray(th, dtype=float) ** 2,
        dp=lambda th, a=0: np.ones_like(np.asarray(th, dtype=float)),
        dE=lambda th, a=0: 2.0 * np.asarray(th, dtype=float),
        d2p=lambda th, a=0: np.zeros_like(np.asarray(th, dtype=float)),
        d2E=lambda th, a=0: np.full_like(np.asarray(th, dtype=float), 2.0),
    )
    charges = {"particle": _power_family(1), "momentum": _power_family(2), "energy": _power_family(3)}
    return ModelSpec("lieb_liniger", (Species("particle", Statistics.FERMION),), phi=phi, dphi=dphi,
                     charges=charges, charge_family=_power_family, params={"c": c},
                     default_cutoff=8.0, **kin)


def _galilean(mass: float):
    return dict(
        p=lambda th, a=0: np.asarray(th, dtype=float) * 1.0,
        E=lambda th, a=0: np.asarray(th, dtype=float) ** 2 / (2.0 * mass),
        dp=lambda th, a=0: np.ones_like(np.asarray(th, dtype=float)),
        dE=lambda th, a=0: np.asarray(th, dtype=float) / mass,
        d2p=lambda th, a=0: np.zeros_like(np.asarray(th, dtype=float)),
        d2E=lambda th, a=0: np.full_like(np.asarray(th, dtype=float), 1.0 / mass),
    )


def hard_rods(d: float) -> ModelSpec:
    """Classical hard-rod gas of rod length ``d``; ``theta`` is the velocity.

    The kernel is the constant ``phi = -d``.  With ``2 pi rho_s = (p')^dr``
    this gives the free-volume fraction ``2 pi rho_s = 1 - d rho`` and the
    standard hard-rod effective velocity.
    """
    if not d >= 0:
        raise ModelError(f"rod length must be non-negative, got {d}")

    def phi(theta, alpha, ta=0, tb=0):
        return np.full(np.broadcast_shapes(np.shape(theta), np.shape(alpha)), -float(d))

    def dphi(theta, alpha, ta=0, tb=0):
        return np.zeros(np.broadcast_shapes(np.shape(theta), np.shape(alpha)))

    kin = _galilean(1.0)
    charges = {"particle": _power_family(1), "momentum": _power_family(2), "energy": kin["E"]}
    return ModelSpec("hard_rods", (Species("rod", Statistics.CLASSICAL),), phi=phi, dphi=dphi,
                     charges=charges, charge_family=_power_family, params={"d": d},
                     interacting=d != 0, default_cutoff=8.0, **kin)


def free_fermion_ising(m: float = 1.0) -> ModelSpec:
    """Quantum Ising chain scaling limit: a free relativistic Majorana fermion."""
    if not m > 0:
        raise ModelError("mass must be positive")
    kin = _rel_kinematics(m)
    charges = {"energy": kin["E"], "momentum": kin["p"]}
    return ModelSpec("ising", (Species("fermion", Statistics.FERMION),), phi=_zero, dphi=_zero,
                     charges=charges, charge_family=_exp_family, params={"m": m},
                     interacting=False, default_cutoff=12.0, **kin)


def free_nonrel_fermion(mass: float = 1.0) -> ModelSpec:
    """Free non-relativistic fermion (Tonks-Girardeau gas for ``mass = 1/2``)."""
    if not mass > 0:
        raise ModelError("mass must be positive")
    kin = _galilean(mass)
    charges = {"particle": _power_family(1), "momentum": _power_family(2), "energy": kin["E"]}
    return ModelSpec("free_fermion", (Species("fermion", Statistics.FERMION),), phi=_zero, dphi=_zero,
                     charges=charges, charge_family=_power_family, params={"mass": mass},
                     interacting=False, default_cutoff=8.0, **kin)


def constant_kernel_model(value: float, statistics="fermion", name: str = "constant_kernel") -> ModelSpec:
    """Toy model with ``p = theta``, ``E = theta^2/2`` and constant kernel ``phi = value``."""
    kin = _galilean(1.0)

    def phi(theta, alpha, ta=0, tb=0):
        return np.full(np.broadcast_shapes(np.shape(theta), np.shape(alpha)), float(value))

    def dphi(theta, alpha, ta=0, tb=0):
        return np.zeros(np.broadcast_shapes(np.shape(theta), np.shape(alpha)))

    return ModelSpec(name, (Species("particle", Statistics.parse(statistics)),), phi=phi, dphi=dphi,
                     charges={"particle": _power_family(1)}, charge_family=_power_family,
                     params={"value": value}, interacting=value != 0, **kin)


def tabulated_model(theta, p, E, phi, statistics="fermion", name: str = "tabulated") -> ModelSpec:
    """Single-type model from tabulated ``p(theta)``, ``E(theta)`` and ``phi(theta, alpha)``.

    The tables are interpolated by cubic splines, which also supply the
    derivatives.  ``phi`` is a square table on the same rapidity nodes.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size < 4 or np.any(np.diff(theta) <= 0):
        raise ModelError("tabulated rapidities must be strictly increasing with at least 4 entries")
    p_s = CubicSpline(theta, np.asarray(p, dtype=float))
    e_s = CubicSpline(theta, np.asarray(E, dtype=float))
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (theta.size, theta.size) or not np.all(np.isfinite(phi)):
        raise ModelError("tabulated kernel must be a finite square table on the rapidity nodes")
    k_s = RectBivariateSpline(theta, theta, phi, kx=3, ky=3)

    def kern(th, al, ta=0, tb=0):
        th, al = np.broadcast_arrays(np.asarray(th, dtype=float), np.asarray(al, dtype=float))
        return k_s.ev(th.ravel(), al.ravel()).reshape(th.shape)

    def dkern(th, al, ta=0, tb=0):
        th, al = np.broadcast_arrays(np.asarray(th, dtype=float), np.asarray(al, dtype=float))
        return k_s.ev(th.ravel(), al.ravel(), dx=1).reshape(th.shape)

    spec = ModelSpec(
        name, (Species("particle", Statistics.parse(statistics)),),
        p=lambda th, a=0: p_s(th), E=lambda th, a=0: e_s(th),
        dp=lambda th, a=0: p_s(th, 1), dE=lambda th, a=0: e_s(th, 1),
        d2p=lambda th, a=0: p_s(th, 2), d2E=lambda th, a=0: e_s(th, 2),
        phi=kern, dphi=dkern, charges={"particle": _power_family(1), "energy": lambda th, a=0: e_s(th)},
        charge_family=_power_family, interacting=bool(np.any(phi)),
        default_cutoff=float(max(abs(theta[0]), abs(theta[-1]))),
    )
    if np.any(spec.dp(theta) <= 0):
        raise ModelError("tabulated momentum must be strictly increasing")
    return spec


BUILTIN = {
    "sinh_gordon": sinh_gordon,
    "lieb_liniger": lieb_liniger,
    "hard_rods": hard_rods,
    "ising": free_fermion_ising,
    "free_fermion": free_nonrel_fermion,
}

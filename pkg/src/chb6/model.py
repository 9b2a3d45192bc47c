"""Model constants and nonlinearities of the sixth-order Cahn-Hilliard-Brinkman system.

The interface parameter is fixed to one, the mobility is one, and

    w  = -lap(phi) + f(phi)
    mu = -lap(w) + f'(phi) w + nu w
    S(phi) = -sigma phi + h(phi)
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.polynomial import Polynomial

from chb6.spectral import GridSpec, dealias, gradient, laplacian

log = logging.getLogger(__name__)

PHI_WARN = 1.5


@dataclass(frozen=True)
class Potential:
    """Polynomial double-well ``F``; ``coeffs`` are in increasing degree."""

    coeffs: tuple[float, ...] = (0.25, 0.0, -0.5, 0.0, 0.25)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))

    @classmethod
    def quartic(cls) -> Potential:
        return cls()

    @classmethod
    def zero(cls) -> Potential:
        return cls((0.0,))

    @property
    def is_zero(self) -> bool:
        return all(c == 0.0 for c in self.coeffs)

    def _poly(self, order: int) -> Polynomial:
        p = Polynomial(self.coeffs)
        return p.deriv(order) if order else p

    def __call__(self, s, order: int = 0):
        """Evaluate ``F`` (order 0), ``f`` (1), ``f'`` (2) or ``f''`` (3)."""
        if not 0 <= order <= 4:
            raise ValueError(f"order must be in 0..4, got {order}")
        return self._derivs[order](s)

    @property
    def _derivs(self):
        # cached on first use; frozen dataclass, so go through __dict__
        try:
            return self.__dict__["_d"]
        except KeyError:
            d = [self._poly(i) for i in range(5)]
            self.__dict__["_d"] = d
            return d


def potential_derivatives(s, order: int, potential: Potential | None = None):
    """``F``, ``f``, ``f'``, ``f''`` for order 0..3 (quartic by default)."""
    if not 0 <= order <= 3:
        raise ValueError(f"order must be in 0..3, got {order}")
    return (potential or Potential())(s, order)


@dataclass(frozen=True)
class ConstantLambda:
    value: float = 1.0

    def __post_init__(self):
        if self.value <= 0:
            raise ValueError("lambda must be positive")

    @property
    def bounds(self) -> tuple[float, float]:
        return self.value, self.value

    @property
    def is_constant(self) -> bool:
        return True

    def __call__(self, s):
        return np.full_like(np.asarray(s, dtype=float), self.value)

    def deriv(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))


@dataclass(frozen=True)
class SmoothLambda:
    """``lambda(s) = lo + (hi - lo) (1 + tanh s) / 2``, bounded in ``[lo, hi]``."""

    lo: float = 1.0
    hi: float = 2.0

    def __post_init__(self):
        if not 0 < self.lo <= self.hi:
            raise ValueError(f"need 0 < lambda_min <= lambda_max, got {self.lo}, {self.hi}")

    @property
    def bounds(self) -> tuple[float, float]:
        return self.lo, self.hi

    @property
    def is_constant(self) -> bool:
        return self.lo == self.hi

    def __call__(self, s):
        return self.lo + 0.5 * (self.hi - self.lo) * (1.0 + np.tanh(s))

    def deriv(self, s):
        return 0.5 * (self.hi - self.lo) / np.cosh(s) ** 2


@dataclass(frozen=True)
class TanhSource:
    """Bounded source nonlinearity ``h(s) = amplitude * tanh(s)``."""

    amplitude: float = 0.0

    @property
    def is_zero(self) -> bool:
        return self.amplitude == 0.0

    def __call__(self, s):
        return self.amplitude * np.tanh(s)

    def deriv(self, s):
        return self.amplitude / np.cosh(s) ** 2


@dataclass(frozen=True)
class PhysParams:
    eta: float = 1.0
    lam: ConstantLambda | SmoothLambda = field(default_factory=ConstantLambda)
    nu: float = 1.0
    sigma: float = 0.0
    h: TanhSource = field(default_factory=TanhSource)
    potential: Potential = field(default_factory=Potential)
    kappa_s: float | None = None

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")

    @property
    def stabilization(self) -> float:
        if self.kappa_s is not None:
            return float(self.kappa_s)
        return max(self.nu, 0.0) + 2.0

    @property
    def lambda_bar(self) -> float:
        lo, hi = self.lam.bounds
        return 0.5 * (lo + hi)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PhysParams:
        d = dict(d)
        kw: dict[str, Any] = {}
        for key in ("eta", "nu", "sigma", "kappa_s"):
            if key in d:
                kw[key] = d.pop(key)
        if "lambda" in d:
            lam = d.pop("lambda")
            if isinstance(lam, dict):
                kw["lam"] = SmoothLambda(float(lam["min"]), float(lam["max"]))
            else:
                kw["lam"] = ConstantLambda(float(lam))
        if "h" in d:
            h = d.pop("h")
            if isinstance(h, dict):
                kw["h"] = TanhSource(float(h["tanh"]))
            elif h in (0, "zero", None):
                kw["h"] = TanhSource(0.0)
            else:
                raise ValueError(f"unknown h specification {h!r}")
        if "potential" in d:
            p = d.pop("potential")
            if p == "quartic":
                kw["potential"] = Potential.quartic()
            elif p == "zero":
                kw["potential"] = Potential.zero()
            elif isinstance(p, dict) and "polynomial" in p:
                kw["potential"] = Potential(tuple(p["polynomial"]))
            else:
                raise ValueError(f"unknown potential {p!r}")
        if d:
            raise ValueError(f"unknown physics keys: {sorted(d)}")
        return cls(**kw)

    def to_dict(self) -> dict[str, Any]:
        if isinstance(self.lam, SmoothLambda):
            lam: Any = {"min": self.lam.lo, "max": self.lam.hi}
        else:
            lam = self.lam.value
        if self.potential == Potential.quartic():
            pot: Any = "quartic"
        elif self.potential.is_zero:
            pot = "zero"
        else:
            pot = {"polynomial": list(self.potential.coeffs)}
        out = {
            "eta": self.eta,
            "lambda": lam,
            "nu": self.nu,
            "sigma": self.sigma,
            "h": {"tanh": self.h.amplitude} if not self.h.is_zero else "zero",
            "potential": pot,
        }
        if self.kappa_s is not None:
            out["kappa_s"] = self.kappa_s
        return out


def source_eval(grid: GridSpec, params: PhysParams, phi: np.ndarray) -> np.ndarray:
    out = -params.sigma * phi
    if not params.h.is_zero:
        out = out + dealias(grid, params.h(phi))
    return out


def chemical_potential(grid: GridSpec, params: PhysParams, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(w, mu)`` with every nonlinear product dealiased."""
    pot = params.potential
    w = -laplacian(grid, phi) + dealias(grid, pot(phi, 1))
    mu = -laplacian(grid, w) + dealias(grid, pot(phi, 2) * w) + params.nu * w
    return w, mu


def energy(grid: GridSpec, params: PhysParams, phi: np.ndarray) -> float:
    """Free energy ``1/2 int (-lap phi + f)^2 + nu int (|grad phi|^2/2 + F)`` by nodal quadrature."""
    pot = params.potential
    w = -laplacian(grid, phi) + pot(phi, 1)
    g = gradient(grid, phi)
    dens = 0.5 * w**2 + params.nu * (0.5 * np.sum(g**2, axis=0) + pot(phi, 0))
    return float(np.sum(dens)) * grid.cell_volume


def check_working_range(phi: np.ndarray, step: int | None = None) -> float:
    m = float(np.max(np.abs(phi)))
    if m > PHI_WARN:
        log.warning("max|phi| = %.3g exceeds %.2f%s", m, PHI_WARN, "" if step is None else f" at step {step}")
    return m


@dataclass(frozen=True)
class ControlParams:
    """Admissible radius ``M``, cost weights ``beta = (b1, b2, b3, b4)`` and sparsity weight ``kappa``."""

    M: float = 1.0
    beta: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 1.0)
    kappa: float = 0.0

    def __post_init__(self):
        beta = tuple(float(b) for b in self.beta)
        if len(beta) != 4:
            raise ValueError("beta needs four entries")
        object.__setattr__(self, "beta", beta)
        if self.M <= 0:
            raise ValueError("M must be positive")
        if any(b < 0 for b in beta):
            raise ValueError("beta weights must be nonnegative")
        if beta[3] <= 0:
            raise ValueError("beta4 must be positive")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")

    def with_kappa(self, kappa: float) -> ControlParams:
        return ControlParams(self.M, self.beta, kappa)


@dataclass
class Targets:
    """Tracking data.  ``v_Q``: ``(N_t, dim) + shape``; ``phi_Q``: ``(N_t,) + shape``; ``phi_T``: ``shape``.

    Running targets are sampled at the step inputs ``t_0 .. t_{N_t - 1}``.
    """

    v_Q: np.ndarray
    phi_Q: np.ndarray
    phi_T: np.ndarray

    @classmethod
    def zeros(cls, grid: GridSpec, n_steps: int) -> Targets:
        return cls(
            np.zeros((n_steps,) + grid.vshape),
            np.zeros((n_steps,) + grid.shape),
            np.zeros(grid.shape),
        )

    @classmethod
    def steady(cls, n_steps: int, v_Q: np.ndarray, phi_Q: np.ndarray, phi_T: np.ndarray) -> Targets:
        """Time-independent running targets repeated over every interval."""
        return cls(
            np.repeat(np.asarray(v_Q, float)[None], n_steps, axis=0),
            np.repeat(np.asarray(phi_Q, float)[None], n_steps, axis=0),
            np.asarray(phi_T, float),
        )

    def check(self, grid: GridSpec, n_steps: int) -> None:
        if self.v_Q.shape != (n_steps,) + grid.vshape:
            raise ValueError(f"v_Q shape {self.v_Q.shape} inconsistent with grid")
        if self.phi_Q.shape != (n_steps,) + grid.shape:
            raise ValueError(f"phi_Q shape {self.phi_Q.shape} inconsistent with grid")
        if self.phi_T.shape != grid.shape:
            raise ValueError(f"phi_T shape {self.phi_T.shape} inconsistent with grid")

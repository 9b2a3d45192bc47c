"""Forward solver: Brinkman velocity per time node plus a first-order IMEX phase step.

One step of the discrete forward map, with ``D`` the 2/3 dealiasing filter and
``P`` the Leray projector::

    w_n   = -lap phi_n + D f(phi_n)
    mu_n  = -lap w_n + D(f'(phi_n) w_n) + nu w_n
    v_n   : eta (-lap) v_n + P[lambda(phi_n) v_n] = P[D(mu_n grad phi_n) + g_n],  v_n = P v_n
    phi_{n+1} = (1 + dt(|k|^6 + ks|k|^4))^{-1}
                [phi_n + dt(lap mu_n + (|k|^6 + ks|k|^4) phi_n - D(v_n . grad phi_n) + S(phi_n))]
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from chb6 import spectral as sp
from chb6.model import PhysParams, chemical_potential, check_working_range, energy, source_eval
from chb6.spectral import GridSpec

log = logging.getLogger(__name__)

PICARD_TOL = 1e-12
PICARD_MAXITER = 200


class SolverError(RuntimeError):
    pass


class BrinkmanError(SolverError):
    def __init__(self, msg: str, residual: float):
        super().__init__(msg)
        self.residual = residual


class StepFailure(SolverError):
    def __init__(self, step: int, msg: str):
        super().__init__(f"step {step}: {msg}")
        self.step = step


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("final time T must be positive")
        if int(self.n_steps) < 1:
            raise ValueError("n_steps must be >= 1")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def refine(self, factor: int = 2) -> TimeGrid:
        return TimeGrid(self.T, self.n_steps * factor)


@dataclass
class Control:
    """Space-time control, piecewise constant on each time interval.

    ``values`` has shape ``(n_steps, dim) + grid.shape``.
    """

    grid: GridSpec
    time: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (self.time.n_steps,) + self.grid.vshape
        if self.values.shape != expected:
            raise ValueError(f"control shape {self.values.shape}, expected {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("control has non-finite values")

    @classmethod
    def zeros(cls, grid: GridSpec, time: TimeGrid) -> Control:
        return cls(grid, time, np.zeros((time.n_steps,) + grid.vshape))

    def like(self, values: np.ndarray) -> Control:
        return Control(self.grid, self.time, values)

    @property
    def weight(self) -> float:
        return self.time.dt * self.grid.cell_volume

    def inner(self, other: Control | np.ndarray) -> float:
        b = other.values if isinstance(other, Control) else other
        return float(np.sum(self.values * b)) * self.weight

    def norm(self) -> float:
        return float(np.sqrt(self.inner(self)))

    def pointwise_magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values**2, axis=1))


@dataclass
class StateTrajectory:
    grid: GridSpec
    time: TimeGrid
    params: PhysParams
    phi: np.ndarray  # (N_t + 1,) + shape
    v: np.ndarray  # (N_t, dim) + shape
    mu: np.ndarray  # (N_t,) + shape
    w: np.ndarray  # (N_t,) + shape
    brinkman_iterations: list[int] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return self.time.n_steps


# -- Brinkman --------------------------------------------------------------


def brinkman_solve(
    grid: GridSpec,
    params: PhysParams,
    phi: np.ndarray,
    rhs: np.ndarray,
    *,
    tol: float = PICARD_TOL,
    maxiter: int = PICARD_MAXITER,
) -> tuple[np.ndarray, int]:
    """Solve ``eta(-lap)v + P[lambda(phi) v] = P rhs`` for divergence-free ``v``.

    Returns ``(v, iterations)``; constant lambda is a single diagonal solve.
    The operator is symmetric, so the same routine applies its transpose.
    """
    if grid.dim < 2:
        raise ValueError("Brinkman solve needs dim >= 2")
    fh = sp.leray_hat(grid, grid.fft(rhs))
    lam = params.lam
    if lam.is_constant:
        return grid.ifft(fh / (params.eta * grid.k2 + lam.bounds[0])), 0

    lam_bar = params.lambda_bar
    denom = params.eta * grid.k2 + lam_bar
    dlam = lam(phi) - lam_bar
    vh = fh / denom
    scale = np.linalg.norm(vh)
    if scale == 0.0:
        return np.zeros(grid.vshape), 0
    update = np.inf
    for it in range(1, maxiter + 1):
        v = grid.ifft(vh)
        new = (fh - sp.leray_hat(grid, grid.fft(dlam * v))) / denom
        update = np.linalg.norm(new - vh) / max(np.linalg.norm(new), 1e-300)
        vh = new
        if update <= tol:
            return grid.ifft(vh), it
    raise BrinkmanError(f"Picard iteration did not converge in {maxiter} iterations (update {update:.3e})", update)


def solve_brinkman(grid, params, phi, mu, g_n, **kw) -> np.ndarray:
    """Velocity for given phase, chemical potential and control slice."""
    return brinkman_solve(grid, params, phi, korteweg(grid, mu, phi) + g_n, **kw)[0]


def korteweg(grid: GridSpec, mu: np.ndarray, phi: np.ndarray) -> np.ndarray:
    return sp.dealias(grid, mu * sp.gradient(grid, phi))


def brinkman_residual(grid, params, phi, mu, g_n, v) -> float:
    """Relative residual of the projected Brinkman equation."""
    f = sp.leray_project(grid, korteweg(grid, mu, phi) + g_n)
    lhs = -params.eta * sp.laplacian(grid, v) + sp.leray_project(grid, params.lam(phi) * v)
    den = np.linalg.norm(f)
    return float(np.linalg.norm(lhs - f) / den) if den > 0 else float(np.linalg.norm(lhs))


# -- phase step ------------------------------------------------------------


def implicit_symbol(grid: GridSpec, params: PhysParams) -> np.ndarray:
    """``|k|^6 + ks |k|^4``, the part of ``-lap mu`` treated implicitly."""
    return grid.k2**3 + params.stabilization * grid.k2**2


def step_phase(
    grid: GridSpec,
    params: PhysParams,
    phi: np.ndarray,
    v: np.ndarray,
    dt: float,
    mu: np.ndarray | None = None,
) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if mu is None:
        mu = chemical_potential(grid, params, phi)[1]
    lin = implicit_symbol(grid, params)
    adv = sp.dealias(grid, np.sum(v * sp.gradient(grid, phi), axis=0))
    explicit = grid.fft(source_eval(grid, params, phi) - adv)
    rhs = grid.fft(phi) * (1.0 + dt * lin) - dt * grid.k2 * grid.fft(mu) + dt * explicit
    return grid.ifft(rhs / (1.0 + dt * lin))


def solve_state(
    grid: GridSpec,
    time: TimeGrid,
    params: PhysParams,
    g: Control | np.ndarray,
    phi0: np.ndarray,
    *,
    picard_tol: float = PICARD_TOL,
) -> StateTrajectory:
    gv = g.values if isinstance(g, Control) else np.asarray(g)
    if gv.shape != (time.n_steps,) + grid.vshape:
        raise ValueError(f"control shape {gv.shape} inconsistent with grids")
    phi0 = np.asarray(phi0, dtype=float)
    if phi0.shape != grid.shape or not np.all(np.isfinite(phi0)):
        raise ValueError("phi0 must be a finite field on the grid")
    nt, dt = time.n_steps, time.dt
    phi = np.empty((nt + 1,) + grid.shape)
    v = np.empty((nt,) + grid.vshape)
    mu = np.empty((nt,) + grid.shape)
    w = np.empty((nt,) + grid.shape)
    its = []
    phi[0] = phi0
    warned = False
    for n in range(nt):
        w[n], mu[n] = chemical_potential(grid, params, phi[n])
        try:
            v[n], it = brinkman_solve(grid, params, phi[n], korteweg(grid, mu[n], phi[n]) + gv[n], tol=picard_tol)
        except BrinkmanError as exc:
            raise StepFailure(n, str(exc)) from exc
        its.append(it)
        phi[n + 1] = step_phase(grid, params, phi[n], v[n], dt, mu=mu[n])
        if not np.all(np.isfinite(phi[n + 1])):
            raise StepFailure(n, f"non-finite phase field (max|phi_n| = {np.max(np.abs(phi[n])):.3g})")
        if not warned and check_working_range(phi[n + 1], n + 1) > 1.5:
            warned = True
    return StateTrajectory(grid, time, params, phi, v, mu, w, its)


# -- diagnostics -----------------------------------------------------------


def dissipation(grid: GridSpec, params: PhysParams, phi, mu, v) -> float:
    """``|grad mu|^2 + eta |grad v|^2 + int lambda(phi)|v|^2`` at one time node."""
    dv = grid.cell_volume
    gmu = sp.gradient(grid, mu)
    gv = np.concatenate([sp.gradient(grid, c) for c in v])
    return float(np.sum(gmu**2) + params.eta * np.sum(gv**2) + np.sum(params.lam(phi) * v**2)) * dv


def diagnostics(traj: StateTrajectory) -> dict[str, np.ndarray]:
    """Per-node series; velocity columns are NaN at the final node."""
    grid, params, dt = traj.grid, traj.params, traj.time.dt
    nt = traj.n_steps
    en = np.array([energy(grid, params, p) for p in traj.phi])
    mean = traj.phi.reshape(nt + 1, -1).mean(axis=1)
    maxabs = np.abs(traj.phi).reshape(nt + 1, -1).max(axis=1)
    vnorm = np.full(nt + 1, np.nan)
    resid = np.full(nt + 1, np.nan)
    diss = np.full(nt + 1, np.nan)
    for n in range(nt):
        vnorm[n] = sp.norm(grid, traj.v[n])
        src_mean = source_eval(grid, params, traj.phi[n]).mean()
        resid[n] = abs((mean[n + 1] - mean[n]) / dt - src_mean)
        diss[n] = dissipation(grid, params, traj.phi[n], traj.mu[n], traj.v[n])
    return {
        "step": np.arange(nt + 1),
        "t": traj.time.times(),
        "energy": en,
        "mean": mean,
        "max_abs_phi": maxabs,
        "v_norm": vnorm,
        "mean_ode_residual": resid,
        "dissipation": diss,
    }


def energy_defects(traj: StateTrajectory) -> np.ndarray:
    """Per-step ``E(phi_{n+1}) - E(phi_n) + dt * dissipation_n``."""
    d = diagnostics(traj)
    return np.diff(d["energy"]) + traj.time.dt * d["dissipation"][:-1]


def pressure(grid: GridSpec, mu, phi, g_n) -> np.ndarray:
    """Postprocessed pressure ``p^ = -i k . F^ / |k|^2`` of the Brinkman forcing ``F``."""
    fh = grid.fft(korteweg(grid, mu, phi) + g_n)
    div_h = sum(1j * kk * fh[i] for i, kk in enumerate(grid.k))
    return grid.ifft(-div_h * grid.inv_k2)

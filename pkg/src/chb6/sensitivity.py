"""Tangent (linearized) sweep and its exact discrete transpose.

The tangent differentiates every step of :mod:`chb6.state` term by term.  The
transpose is the literal Euclidean adjoint of the tangent, applied backward in
time: every spectral multiplier used in the forward step is either
self-adjoint (even, real) or skew-adjoint (first derivatives), the dealiasing
filter and the Leray projector are symmetric projections, and the Brinkman
solution operator is symmetric.

Sign and scaling of the adjoint state follow the optimality system of the
control problem: with ``a`` the cost derivative with respect to the state,

    v_adj = -(L^T a)_g / (dt dV),    phi_adj = -(L^T a)_phi / dV

so that the reduced gradient of the smooth cost is ``beta4 g - v_adj`` and the
terminal condition reads ``phi_adj(T) = -beta3 (phi(T) - phi_T)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from chb6 import spectral as sp
from chb6.model import ControlParams, Targets
from chb6.state import Control, StateTrajectory, brinkman_solve, implicit_symbol


@dataclass
class LinearizedTrajectory:
    psi: np.ndarray  # (N_t + 1,) + shape
    w_vel: np.ndarray  # (N_t, dim) + shape
    theta: np.ndarray  # (N_t,) + shape
    xi: np.ndarray  # (N_t,) + shape


@dataclass
class AdjointTrajectory:
    v_adj: np.ndarray  # (N_t, dim) + shape
    phi_adj: np.ndarray  # (N_t + 1,) + shape
    mu_adj: np.ndarray  # (N_t,) + shape
    w_adj: np.ndarray  # (N_t,) + shape


class _Step:
    """Frozen coefficients of the linearization at time node ``n``."""

    def __init__(self, traj: StateTrajectory, n: int):
        grid, p = traj.grid, traj.params
        self.grid, self.params = grid, p
        self.phi = traj.phi[n]
        self.v = traj.v[n]
        self.mu = traj.mu[n]
        self.w = traj.w[n]
        self.grad_phi = sp.gradient(grid, self.phi)
        self.f1 = p.potential(self.phi, 2)
        self.f2 = p.potential(self.phi, 3)
        self.lam_p = p.lam.deriv(self.phi)
        self.h_p = p.h.deriv(self.phi)


def _dealias(grid, a):
    return sp.dealias(grid, a)


def tangent_step(st: _Step, psi: np.ndarray, u: np.ndarray, dt: float, picard_tol: float = 1e-13):
    grid, p = st.grid, st.params
    lap = lambda a: sp.laplacian(grid, a)  # noqa: E731
    xi = -lap(psi) + _dealias(grid, st.f1 * psi)
    theta = -lap(xi) + _dealias(grid, st.f2 * st.w * psi + st.f1 * xi) + p.nu * xi
    force = _dealias(grid, theta * st.grad_phi + st.mu * sp.gradient(grid, psi)) + u
    dv, _ = brinkman_solve(grid, p, st.phi, force - st.lam_p * psi * st.v, tol=picard_tol)
    adv = _dealias(grid, np.sum(dv * st.grad_phi + st.v * sp.gradient(grid, psi), axis=0))
    src = -p.sigma * psi + _dealias(grid, st.h_p * psi)
    lin = implicit_symbol(grid, p)
    rhs = grid.fft(psi) * (1.0 + dt * lin) - dt * grid.k2 * grid.fft(theta) + dt * grid.fft(src - adv)
    return grid.ifft(rhs / (1.0 + dt * lin)), dv, theta, xi


def transpose_step(st: _Step, p_next: np.ndarray, a_v: np.ndarray, dt: float, picard_tol: float = 1e-13, corrupt=False):
    """Adjoint of :func:`tangent_step`: returns ``(psi_bar, u_bar, theta_bar, xi_bar)``."""
    grid, p = st.grid, st.params
    lap = lambda a: sp.laplacian(grid, a)  # noqa: E731
    lin = implicit_symbol(grid, p)
    r_h = grid.fft(p_next) / (1.0 + dt * lin)
    r = grid.ifft(r_h)
    psi_bar = grid.ifft(r_h * (1.0 + dt * lin))
    theta_bar = grid.ifft((dt if corrupt else -dt) * grid.k2 * r_h)
    # source
    s_bar = dt * r
    psi_bar += -p.sigma * s_bar + st.h_p * _dealias(grid, s_bar)
    # advection
    e_bar = _dealias(grid, -dt * r)
    dv_bar = a_v + e_bar * st.grad_phi
    psi_bar -= sp.divergence(grid, st.v * e_bar)
    # Brinkman (symmetric solution operator)
    y, _ = brinkman_solve(grid, p, st.phi, dv_bar, tol=picard_tol)
    psi_bar -= st.lam_p * np.sum(st.v * y, axis=0)
    # Korteweg force
    yd = _dealias(grid, y)
    kort = np.sum(yd * st.grad_phi, axis=0)
    theta_bar += kort
    psi_bar -= sp.divergence(grid, st.mu * yd)
    # theta = -lap xi + D(f'' w psi + f' xi) + nu xi
    a2 = _dealias(grid, theta_bar)
    xi_bar = -lap(theta_bar) + p.nu * theta_bar + st.f1 * a2
    psi_bar += st.f2 * st.w * a2
    # xi = -lap psi + D(f' psi)
    psi_bar += -lap(xi_bar) + st.f1 * _dealias(grid, xi_bar)
    return psi_bar, y, theta_bar, xi_bar


def solve_linearized(traj: StateTrajectory, u: Control | np.ndarray, *, picard_tol: float = 1e-13) -> LinearizedTrajectory:
    """Directional derivative of the discrete control-to-state map along ``u``."""
    uv = u.values if isinstance(u, Control) else np.asarray(u)
    grid, nt, dt = traj.grid, traj.n_steps, traj.time.dt
    if uv.shape != (nt,) + grid.vshape:
        raise ValueError(f"direction shape {uv.shape} inconsistent with trajectory")
    psi = np.zeros((nt + 1,) + grid.shape)
    w_vel = np.empty((nt,) + grid.vshape)
    theta = np.empty((nt,) + grid.shape)
    xi = np.empty((nt,) + grid.shape)
    for n in range(nt):
        psi[n + 1], w_vel[n], theta[n], xi[n] = tangent_step(_Step(traj, n), psi[n], uv[n], dt, picard_tol)
    return LinearizedTrajectory(psi, w_vel, theta, xi)


def transpose_sweep(
    traj: StateTrajectory,
    seed_v: np.ndarray,
    seed_phi: np.ndarray,
    *,
    picard_tol: float = 1e-13,
    corrupt: bool = False,
):
    """Apply ``L^T`` to output seeds; Euclidean (nodal sum) inner products throughout.

    ``seed_v`` pairs with the tangent velocities, ``seed_phi`` with ``psi_0..psi_{N_t}``.
    Returns ``(u_bar, psi_bar, theta_bar, xi_bar)``.  ``corrupt`` flips the sign
    of one transpose term and exists only to check that duality tests can fail.
    """
    grid, nt, dt = traj.grid, traj.n_steps, traj.time.dt
    u_bar = np.empty((nt,) + grid.vshape)
    psi_bar = np.zeros((nt + 1,) + grid.shape)
    theta_bar = np.empty((nt,) + grid.shape)
    xi_bar = np.empty((nt,) + grid.shape)
    psi_bar[nt] = seed_phi[nt]
    for n in range(nt - 1, -1, -1):
        pb, u_bar[n], theta_bar[n], xi_bar[n] = transpose_step(
            _Step(traj, n), psi_bar[n + 1], seed_v[n], dt, picard_tol, corrupt
        )
        psi_bar[n] = pb + seed_phi[n]
    return u_bar, psi_bar, theta_bar, xi_bar


def cost_seeds(traj: StateTrajectory, targets: Targets, cp: ControlParams) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean gradient of the tracking terms with respect to ``(v_n, phi_n)``."""
    b1, b2, b3, _ = cp.beta
    grid, dt, nt = traj.grid, traj.time.dt, traj.n_steps
    dV = grid.cell_volume
    seed_v = b1 * dt * dV * (traj.v - targets.v_Q)
    seed_phi = np.zeros((nt + 1,) + grid.shape)
    seed_phi[:nt] = b2 * dt * dV * (traj.phi[:nt] - targets.phi_Q)
    seed_phi[nt] = b3 * dV * (traj.phi[nt] - targets.phi_T)
    return seed_v, seed_phi


def solve_adjoint(
    traj: StateTrajectory, targets: Targets, cp: ControlParams, *, picard_tol: float = 1e-13, corrupt: bool = False
) -> AdjointTrajectory:
    targets.check(traj.grid, traj.n_steps)
    seed_v, seed_phi = cost_seeds(traj, targets, cp)
    u_bar, psi_bar, theta_bar, xi_bar = transpose_sweep(traj, seed_v, seed_phi, picard_tol=picard_tol, corrupt=corrupt)
    dV, dt = traj.grid.cell_volume, traj.time.dt
    return AdjointTrajectory(
        v_adj=-u_bar / (dt * dV),
        phi_adj=-psi_bar / dV,
        mu_adj=-theta_bar / (dt * dV),
        w_adj=-xi_bar / (dt * dV),
    )


def reduced_gradient_smooth(g: Control, adj: AdjointTrajectory, cp: ControlParams) -> Control:
    """L2(Q) Riesz representative ``beta4 g - v_adj`` of the smooth reduced cost derivative."""
    return g.like(cp.beta[3] * g.values - adj.v_adj)

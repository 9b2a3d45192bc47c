"""Cost, proximal/projection operators and the proximal-projected gradient loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from chb6.model import ControlParams, PhysParams, Targets
from chb6.sensitivity import AdjointTrajectory, reduced_gradient_smooth, solve_adjoint
from chb6.spectral import GridSpec, smooth_random_field
from chb6.state import Control, StateTrajectory, TimeGrid, solve_state

log = logging.getLogger(__name__)

ZERO_TOL = 1e-14
MAX_HALVINGS = 40


class LineSearchError(RuntimeError):
    pass


@dataclass
class CostBreakdown:
    tracking_v: float
    tracking_phi: float
    terminal: float
    tikhonov: float
    sparsity: float

    @property
    def smooth(self) -> float:
        return self.tracking_v + self.tracking_phi + self.terminal + self.tikhonov

    @property
    def total(self) -> float:
        return self.smooth + self.sparsity

    def as_list(self) -> list[float]:
        return [self.tracking_v, self.tracking_phi, self.terminal, self.tikhonov, self.sparsity]


@dataclass
class Problem:
    """Everything needed to evaluate the reduced cost of a control."""

    grid: GridSpec
    time: TimeGrid
    phys: PhysParams
    ctrl: ControlParams
    targets: Targets
    phi0: np.ndarray

    def __post_init__(self):
        self.targets.check(self.grid, self.time.n_steps)

    def with_kappa(self, kappa: float) -> Problem:
        return Problem(self.grid, self.time, self.phys, self.ctrl.with_kappa(kappa), self.targets, self.phi0)

    def zero_control(self) -> Control:
        return Control.zeros(self.grid, self.time)

    def state(self, g: Control) -> StateTrajectory:
        return solve_state(self.grid, self.time, self.phys, g, self.phi0)

    def cost(self, g: Control, traj: StateTrajectory | None = None) -> CostBreakdown:
        return evaluate_cost(traj or self.state(g), g, self.targets, self.ctrl)

    def adjoint(self, traj: StateTrajectory) -> AdjointTrajectory:
        return solve_adjoint(traj, self.targets, self.ctrl)

    def gradient(self, g: Control, traj: StateTrajectory | None = None) -> tuple[Control, StateTrajectory, AdjointTrajectory]:
        traj = traj or self.state(g)
        adj = self.adjoint(traj)
        return reduced_gradient_smooth(g, adj, self.ctrl), traj, adj


def evaluate_cost(traj: StateTrajectory, g: Control, targets: Targets, cp: ControlParams) -> CostBreakdown:
    """Tracking, terminal, Tikhonov and L1 parts; running terms use the step-input nodes."""
    if g.values.shape[0] != traj.n_steps or g.grid != traj.grid:
        raise ValueError("control and trajectory live on different grids")
    targets.check(traj.grid, traj.n_steps)
    b1, b2, b3, b4 = cp.beta
    dV, dt, nt = traj.grid.cell_volume, traj.time.dt, traj.n_steps
    return CostBreakdown(
        tracking_v=0.5 * b1 * dt * dV * float(np.sum((traj.v - targets.v_Q) ** 2)),
        tracking_phi=0.5 * b2 * dt * dV * float(np.sum((traj.phi[:nt] - targets.phi_Q) ** 2)),
        terminal=0.5 * b3 * dV * float(np.sum((traj.phi[nt] - targets.phi_T) ** 2)),
        tikhonov=0.5 * b4 * g.inner(g),
        sparsity=cp.kappa * l1_norm(g),
    )


def l1_norm(g: Control) -> float:
    return float(np.sum(g.pointwise_magnitude())) * g.weight


def prox_sparsity(z: Control, tau: float) -> Control:
    """Pointwise vector soft-thresholding, the prox of ``tau * int |g|``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if tau == 0:
        return z.like(z.values.copy())
    mag = z.pointwise_magnitude()
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = np.where(mag > tau, 1.0 - tau / np.where(mag > 0, mag, 1.0), 0.0)
    return z.like(z.values * shrink[:, None])


def project_ball(z: Control, M: float) -> Control:
    """Radial projection onto ``{g : ||g||_{L2(Q)} <= M}``."""
    if M <= 0:
        raise ValueError("M must be positive")
    nrm = z.norm()
    if nrm <= M:
        return z.like(z.values.copy())
    return z.like(z.values * (M / nrm))


def prox_admissible(z: Control, tau: float, M: float) -> Control:
    """Prox of ``tau * j + indicator(ball)``.

    Soft-thresholding followed by radial projection is the exact prox here:
    the constrained minimizer is parallel to the shrunk point pointwise.
    """
    return project_ball(prox_sparsity(z, tau), M)


def subgradient_select(g: Control, v_adj: np.ndarray, kappa: float, beta4: float | None = None) -> Control:
    """Element of the subdifferential of ``int |g|`` minimizing the pointwise residual.

    ``g / |g|`` where ``g != 0``; elsewhere ``v_adj / kappa`` clamped to the unit ball.
    """
    if kappa <= 0:
        raise ValueError("subgradient selection needs kappa > 0")
    mag = g.pointwise_magnitude()
    a = v_adj / kappa
    amag = np.sqrt(np.sum(a**2, axis=1))
    clamp = np.where(amag > 1.0, 1.0 / np.where(amag > 0, amag, 1.0), 1.0)
    zeta = a * clamp[:, None]
    nz = mag > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = g.values / np.where(nz, mag, 1.0)[:, None]
    zeta = np.where(nz[:, None], unit, zeta)
    return g.like(zeta)


def stationarity_field(g: Control, adj: AdjointTrajectory, cp: ControlParams) -> Control:
    """``beta4 g + kappa sigma - v_adj`` with the selected subgradient (``kappa > 0``)."""
    r = cp.beta[3] * g.values - adj.v_adj
    if cp.kappa > 0:
        r = r + cp.kappa * subgradient_select(g, adj.v_adj, cp.kappa).values
    return g.like(r)


def projection_residual(g: Control, adj: AdjointTrajectory, cp: ControlParams) -> float:
    """``||g - P((v_adj - kappa sigma)/beta4)|| / ||g||`` (absolute if ``g == 0``)."""
    b4 = cp.beta[3]
    arg = adj.v_adj.copy()
    if cp.kappa > 0:
        arg -= cp.kappa * subgradient_select(g, adj.v_adj, cp.kappa).values
    p = project_ball(g.like(arg / b4), cp.M)
    d = g.like(g.values - p.values).norm()
    n = g.norm()
    return d / n if n > 0 else d


def vi_violation(g: Control, adj: AdjointTrajectory, cp: ControlParams) -> float:
    """Worst-case violation of the variational inequality over the whole ball, relative.

    ``min_{||h|| <= M} <r, h - g> = -M ||r|| - <r, g>``.
    """
    r = stationarity_field(g, adj, cp)
    worst = cp.M * r.norm() + r.inner(g)
    scale = (cp.beta[3] * g.norm() + _l2(g, adj.v_adj)) * (cp.M + g.norm()) or 1.0
    return max(0.0, worst) / scale


def vi_monte_carlo(
    g: Control, adj: AdjointTrajectory, cp: ControlParams, rng: np.random.Generator, n_samples: int = 100
) -> float:
    """Largest relative violation of ``<r, h - g> >= 0`` over random admissible ``h``."""
    r = stationarity_field(g, adj, cp)
    scale_r = cp.beta[3] * g.norm() + _l2(g, adj.v_adj) + (cp.kappa * np.sqrt(g.time.T * g.grid.volume) if cp.kappa else 0.0)
    worst = 0.0
    for _ in range(n_samples):
        h = random_control(g.grid, g.time, rng)
        h = h.like(h.values * (cp.M * rng.uniform() ** (1 / 3) / h.norm()))
        d = h.like(h.values - g.values)
        viol = max(0.0, -r.inner(d))
        scale = scale_r * d.norm()
        if scale > 0:
            worst = max(worst, viol / scale)
    return worst


def _l2(g: Control, values: np.ndarray) -> float:
    return float(np.sqrt(np.sum(values**2) * g.weight))


def random_control(grid: GridSpec, time: TimeGrid, rng: np.random.Generator) -> Control:
    vals = np.stack([smooth_random_field(grid, rng, components=grid.dim) for _ in range(time.n_steps)])
    return Control(grid, time, vals)


@dataclass
class OptimizeReport:
    cost_total: list[float] = field(default_factory=list)
    cost_parts: list[CostBreakdown] = field(default_factory=list)
    residual: list[float] = field(default_factory=list)
    alpha: list[float] = field(default_factory=list)
    sparsity_fraction: list[float] = field(default_factory=list)
    control: Control | None = None
    state: StateTrajectory | None = None
    adjoint: AdjointTrajectory | None = None
    reason: str = ""

    @property
    def iterations(self) -> int:
        return len(self.residual)

    def rows(self):
        for i, (c, parts, r, a, s) in enumerate(
            zip(self.cost_total, self.cost_parts, self.residual, self.alpha, self.sparsity_fraction)
        ):
            yield i, c, parts, r, a, s


def sparsity_fraction(g: Control, zero_tol: float = ZERO_TOL) -> float:
    return float(np.mean(g.pointwise_magnitude() <= zero_tol))


def optimize(
    g0: Control,
    problem: Problem,
    *,
    tol_rel: float = 1e-4,
    max_iter: int = 500,
    alpha0: float | None = None,
) -> OptimizeReport:
    """Proximal-projected gradient descent with backtracking.

    Each accepted step satisfies the sufficient-decrease condition of the smooth
    part, so the total cost never increases.
    """
    cp = problem.ctrl
    alpha = alpha0 if alpha0 is not None else 1.0 / cp.beta[3]
    g = project_ball(g0, cp.M)
    grad, traj, adj = problem.gradient(g)
    parts = problem.cost(g, traj)
    scale = max(grad.norm(), _l2(g, adj.v_adj), cp.beta[3] * g.norm())
    rep = OptimizeReport()
    rep.reason = "max_iter"
    for it in range(max_iter):
        smooth = parts.smooth
        for _ in range(MAX_HALVINGS + 1):
            z = g.like(g.values - alpha * grad.values)
            g_new = prox_admissible(z, alpha * cp.kappa, cp.M)
            d = g_new.like(g_new.values - g.values)
            traj_new = problem.state(g_new)
            parts_new = problem.cost(g_new, traj_new)
            bound = smooth + grad.inner(d) + d.inner(d) / (2 * alpha)
            if parts_new.smooth <= bound + 1e-13 * max(1.0, abs(smooth)):
                break
            alpha *= 0.5
        else:
            rep.reason = "line_search_failed"
            raise LineSearchError(f"no sufficient decrease after {MAX_HALVINGS} halvings at iteration {it}")
        residual = d.norm() / alpha
        g, traj, parts = g_new, traj_new, parts_new
        grad, _, adj = problem.gradient(g, traj)
        rep.cost_total.append(parts.total)
        rep.cost_parts.append(parts)
        rep.residual.append(residual)
        rep.alpha.append(alpha)
        rep.sparsity_fraction.append(sparsity_fraction(g))
        log.debug("iter %d cost %.10g residual %.3e alpha %.3g", it, parts.total, residual, alpha)
        if residual <= tol_rel * scale:
            rep.reason = "converged"
            break
    rep.control, rep.state, rep.adjoint = g, traj, adj
    return rep


@dataclass
class SparsityReport:
    kappa: float
    sparsity_fraction: float
    control_is_zero: bool
    v_adj_norm: float
    criterion_checked: bool
    criterion_pass: bool | None
    stationarity: float
    pointwise_max_v_adj: float


def sparsity_report(g: Control, adj: AdjointTrajectory, cp: ControlParams) -> SparsityReport:
    frac = sparsity_fraction(g)
    is_zero = bool(np.all(g.pointwise_magnitude() <= ZERO_TOL))
    va_norm = _l2(g, adj.v_adj)
    checked = cp.kappa > 0 and is_zero
    ok = bool(va_norm <= cp.kappa * (1 + 1e-8)) if checked else None
    return SparsityReport(
        kappa=cp.kappa,
        sparsity_fraction=frac,
        control_is_zero=is_zero,
        v_adj_norm=va_norm,
        criterion_checked=checked,
        criterion_pass=ok,
        stationarity=vi_violation(g, adj, cp),
        pointwise_max_v_adj=float(np.max(np.sqrt(np.sum(adj.v_adj**2, axis=1)))),
    )

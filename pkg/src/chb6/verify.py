"""Verification battery: one measured value, threshold and verdict per claim.

Thresholds live in :data:`THRESHOLDS` and are the only copy used anywhere.
"""
from __future__ import annotations

import logging
import time as _time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from chb6 import control as ctl
from chb6.model import ControlParams, PhysParams, SmoothLambda, TanhSource, Targets
from chb6.sensitivity import cost_seeds, solve_adjoint, solve_linearized, transpose_sweep
from chb6.spectral import GridSpec, smooth_random_field
from chb6.state import Control, StateTrajectory, TimeGrid, energy_defects, solve_state

log = logging.getLogger(__name__)

THRESHOLDS = {
    "taylor_slope_min": 1.9,
    "taylor_slope_max": 2.1,
    "duality_gap": 1e-9,
    "mutation_gap_min": 1e-3,
    "dense_oracle": 1e-9,
    "gradient_fd": 1e-5,
    "gradient_fd_eps": 1e-4,
    "mass_conserved": 1e-11,
    "mass_recursion": 1e-10,
    "energy_ratio_min": 3.0,
    "projection_residual": 1e-4,
    "vi_violation": 1e-6,
    "optimize_max_iter": 500,
    "ball_norm_rel": 1e-8,
    "sparsity_kappa_rel": 1e-8,
    "lipschitz_variation": 2.0,
}

TAYLOR_EPS = (1e-2, 1e-3, 1e-4)
EPS_FLOOR = 1e-6


@dataclass
class Check:
    name: str
    value: float
    threshold: str
    passed: bool
    seconds: float = 0.0
    detail: dict = field(default_factory=dict)


@dataclass
class VerifyReport:
    seed: int
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {"seed": self.seed, "passed": self.passed, "checks": [asdict(c) for c in self.checks]}


@dataclass
class VerifySettings:
    n: int = 32
    nt: int = 50
    nt_opt: int = 20
    seed: int = 0
    mutate: bool = False


# -- helpers ------------------------------------------------------------------


def rich_physics() -> PhysParams:
    """Quartic potential, variable lambda and a nonzero source: every tangent term active."""
    return PhysParams(eta=1.0, lam=SmoothLambda(1.0, 2.0), nu=1.0, sigma=0.2, h=TanhSource(0.5))


def random_control(grid: GridSpec, time: TimeGrid, rng: np.random.Generator, amplitude: float = 1.0) -> Control:
    vals = np.stack([smooth_random_field(grid, rng, components=grid.dim, amplitude=amplitude) for _ in range(time.n_steps)])
    return Control(grid, time, vals)


def unit(c: Control) -> Control:
    return c.like(c.values / c.norm())


def state_distance(a: StateTrajectory, b: StateTrajectory, lin=None, eps: float = 0.0) -> float:
    """L2(Q) distance of ``(v, phi)``; optionally subtract ``eps`` times a tangent."""
    dv = a.v - b.v
    dp = a.phi[1:] - b.phi[1:]
    if lin is not None:
        dv = dv - eps * lin.w_vel
        dp = dp - eps * lin.psi[1:]
    w = a.time.dt * a.grid.cell_volume
    return float(np.sqrt((np.sum(dv**2) + np.sum(dp**2)) * w))


def fit_slope(eps, rem) -> float:
    return float(np.polyfit(np.log(eps), np.log(rem), 1)[0])


def taylor_test(grid, time, phys, g: Control, phi0, u: Control, eps_ladder=TAYLOR_EPS):
    """Remainders ``||S(g + e u) - S(g) - e S'(g)u||`` and their log-log slope."""
    eps_ladder = tuple(sorted(eps_ladder, reverse=True))
    if len(eps_ladder) < 3:
        raise ValueError("need at least three epsilons")
    if min(eps_ladder) < EPS_FLOOR:
        raise ValueError(f"epsilon below the round-off floor {EPS_FLOOR}")
    base = solve_state(grid, time, phys, g, phi0)
    lin = solve_linearized(base, u)
    rem = []
    for e in eps_ladder:
        pert = solve_state(grid, time, phys, g.values + e * u.values, phi0)
        rem.append(state_distance(pert, base, lin, e))
    rem = np.array(rem)
    slope = fit_slope(np.array(eps_ladder), rem) if np.all(rem > 0) else float("nan")
    return rem, slope


def _smooth_seeds(traj: StateTrajectory, rng):
    grid = traj.grid
    sv = np.stack([smooth_random_field(grid, rng, components=grid.dim) for _ in range(traj.n_steps)])
    sp_ = np.stack([smooth_random_field(grid, rng) for _ in range(traj.n_steps + 1)])
    return sv, sp_


def duality_test(traj: StateTrajectory, targets: Targets, cp: ControlParams, g: Control, rng, n_samples: int = 10, corrupt: bool = False):
    """Largest transpose gap ``|<Lu,p> - <u,L^T p>| / (|u||p|)`` and largest reduced-derivative gap.

    The reduced-derivative gap compares the tangent route
    ``<dJ/dstate, Lu> + beta4 <g,u>`` with ``<beta4 g - v_adj, u>`` relative to
    their magnitude.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    pair_gap, red_gap = 0.0, 0.0
    seeds = cost_seeds(traj, targets, cp)
    adj = solve_adjoint(traj, targets, cp, corrupt=corrupt)
    for _ in range(n_samples):
        u = random_control(traj.grid, traj.time, rng)
        lin = solve_linearized(traj, u)
        sv, sphi = _smooth_seeds(traj, rng)
        ub = transpose_sweep(traj, sv, sphi, corrupt=corrupt)[0]
        lhs = float(np.sum(lin.w_vel * sv) + np.sum(lin.psi * sphi))
        rhs = float(np.sum(u.values * ub))
        den = np.linalg.norm(u.values) * np.sqrt(np.sum(sv**2) + np.sum(sphi**2))
        pair_gap = max(pair_gap, abs(lhs - rhs) / den if den > 0 else abs(lhs - rhs))
        b4 = cp.beta[3]
        tangent = float(np.sum(seeds[0] * lin.w_vel) + np.sum(seeds[1] * lin.psi)) + b4 * g.inner(u)
        adjoint = u.inner(b4 * g.values - adj.v_adj)
        scale = max(abs(tangent), abs(adjoint))
        red_gap = max(red_gap, abs(tangent - adjoint) / scale if scale > 0 else abs(tangent - adjoint))
    return pair_gap, red_gap


def tangent_matrix(traj: StateTrajectory, max_entries: int = 5_000_000) -> np.ndarray:
    """Dense Jacobian of ``u -> (v_0.., psi_0..)`` assembled column by column."""
    nt, grid = traj.n_steps, traj.grid
    ncol = nt * grid.dim * grid.npoints
    nrow = nt * grid.dim * grid.npoints + (nt + 1) * grid.npoints
    if ncol * nrow > max_entries:
        raise MemoryError(f"dense tangent would have {ncol * nrow} entries (limit {max_entries})")
    cols = np.empty((nrow, ncol))
    e = np.zeros(ncol)
    for j in range(ncol):
        e[j] = 1.0
        lin = solve_linearized(traj, e.reshape((nt,) + grid.vshape))
        cols[:, j] = np.concatenate([lin.w_vel.ravel(), lin.psi.ravel()])
        e[j] = 0.0
    return cols


def dense_oracle_compare(traj: StateTrajectory, targets: Targets, cp: ControlParams) -> float:
    """Relative error between the sweep gradient and ``L^T a`` from the explicit matrix."""
    if max(traj.grid.sizes) > 8 or traj.n_steps > 3:
        raise MemoryError("dense oracle is limited to 8 points per axis and 3 steps")
    L = tangent_matrix(traj)
    sv, sphi = cost_seeds(traj, targets, cp)
    dense = L.T @ np.concatenate([sv.ravel(), sphi.ravel()])
    sweep = transpose_sweep(traj, sv, sphi)[0].ravel()
    return float(np.linalg.norm(dense - sweep) / np.linalg.norm(dense))


def sampled_control(grid: GridSpec, time: TimeGrid, a: np.ndarray, b: np.ndarray) -> Control:
    """``g(x, t) = a(x) + t b(x)`` sampled at interval midpoints."""
    tm = (np.arange(time.n_steps) + 0.5) * time.dt
    return Control(grid, time, a[None] + tm.reshape((-1,) + (1,) * (a.ndim)) * b[None])


def lipschitz_probe(grid, time: TimeGrid, phys, phi0, pair1, pair2, refinements: int = 2) -> list[dict]:
    """``||S(g1) - S(g2)|| / ||g1 - g2||`` for the base step and successive halvings."""
    rows = []
    tg = time
    for r in range(refinements + 1):
        g1, g2 = sampled_control(grid, tg, *pair1), sampled_control(grid, tg, *pair2)
        dg = g1.like(g1.values - g2.values).norm()
        t1 = solve_state(grid, tg, phys, g1, phi0)
        t2 = solve_state(grid, tg, phys, g2, phi0)
        ds = state_distance(t1, t2)
        rows.append({"n_steps": tg.n_steps, "control_diff": dg, "state_diff": ds, "ratio": ds / dg if dg > 0 else 0.0})
        tg = tg.refine(2)
    return rows


def prepared_phase(grid: GridSpec, phys: PhysParams, T_relax: float = 0.05, n_relax: int = 2000) -> np.ndarray:
    """Low-mode datum pre-evolved past the initial layer of the stiff sixth-order flow."""
    x, y = grid.coordinates()[:2]
    k = 2 * np.pi / grid.lengths[0]
    phi = 0.4 * np.cos(k * x) + 0.3 * np.sin(2 * k * y) + 0.2 * np.cos(k * (x + y))
    phi = np.broadcast_to(phi, grid.shape).copy()
    tg = TimeGrid(T_relax, n_relax)
    return solve_state(grid, tg, phys, Control.zeros(grid, tg), phi).phi[-1]


def tracking_problem(n: int, nt: int, M: float = 100.0, kappa: float = 0.0, T: float = 0.1) -> ctl.Problem:
    """Single-mode velocity tracking on the 2-D torus."""
    grid = GridSpec.square(n)
    tg = TimeGrid(T, nt)
    x, y = grid.coordinates()
    phi0 = 0.5 * np.cos(x) * np.cos(y)
    vq = np.stack(np.broadcast_arrays(np.sin(y), 0.0 * x))
    targets = Targets.steady(nt, vq, np.zeros(grid.shape), np.zeros(grid.shape))
    return ctl.Problem(grid, tg, PhysParams(), ControlParams(M=M, beta=(1.0, 0.0, 0.0, 0.1), kappa=kappa), targets, phi0)


# -- checks ---------------------------------------------------------------------


def check_taylor(s: VerifySettings, rng) -> Check:
    grid, tg, phys = GridSpec.square(s.n), TimeGrid(0.05, s.nt), rich_physics()
    phi0 = smooth_random_field(grid, rng, amplitude=0.5)
    g = random_control(grid, tg, rng)
    slopes, rems = [], []
    for _ in range(3):
        u = unit(random_control(grid, tg, rng))
        rem, slope = taylor_test(grid, tg, phys, g, phi0, u)
        slopes.append(slope)
        rems.append(rem.tolist())
    lo, hi = THRESHOLDS["taylor_slope_min"], THRESHOLDS["taylor_slope_max"]
    worst = max(slopes, key=lambda v: abs(v - 2.0))
    ok = all(lo <= v <= hi for v in slopes)
    return Check("taylor", worst, f"[{lo}, {hi}]", ok, detail={"slopes": slopes, "remainders": rems, "eps": list(TAYLOR_EPS)})


def _duality_setup(s: VerifySettings, rng):
    grid, tg, phys = GridSpec.square(s.n), TimeGrid(0.05, s.nt), rich_physics()
    phi0 = smooth_random_field(grid, rng, amplitude=0.5)
    g = random_control(grid, tg, rng)
    traj = solve_state(grid, tg, phys, g, phi0)
    targets = Targets(
        np.stack([smooth_random_field(grid, rng, components=2) for _ in range(s.nt)]),
        np.stack([smooth_random_field(grid, rng) for _ in range(s.nt)]),
        smooth_random_field(grid, rng),
    )
    cp = ControlParams(M=10.0, beta=(1.0, 1.0, 1.0, 0.1))
    return traj, targets, cp, g


def check_duality(s: VerifySettings, rng) -> Check:
    traj, targets, cp, g = _duality_setup(s, rng)
    state = rng.bit_generator.state
    pair, red = duality_test(traj, targets, cp, g, rng, 10, corrupt=s.mutate)
    rng.bit_generator.state = state
    mpair, mred = duality_test(traj, targets, cp, g, rng, 10, corrupt=True)
    gap = max(pair, red)
    mgap = max(mpair, mred)
    ok = gap <= THRESHOLDS["duality_gap"] and mgap > THRESHOLDS["mutation_gap_min"]
    return Check(
        "duality",
        gap,
        f"<= {THRESHOLDS['duality_gap']:g}; mutation > {THRESHOLDS['mutation_gap_min']:g}",
        ok,
        detail={"pair_gap": pair, "reduced_gap": red, "mutation_pair_gap": mpair, "mutation_reduced_gap": mred, "mutated": s.mutate},
    )


def check_dense_oracle(s: VerifySettings, rng) -> Check:
    grid, tg, phys = GridSpec.square(8), TimeGrid(0.05, 3), rich_physics()
    phi0 = smooth_random_field(grid, rng, amplitude=0.5)
    g = random_control(grid, tg, rng)
    traj = solve_state(grid, tg, phys, g, phi0)
    targets = Targets(
        np.stack([smooth_random_field(grid, rng, components=2) for _ in range(3)]),
        np.stack([smooth_random_field(grid, rng) for _ in range(3)]),
        smooth_random_field(grid, rng),
    )
    err = dense_oracle_compare(traj, targets, ControlParams(beta=(1.0, 1.0, 1.0, 0.1)))
    return Check("dense_oracle", err, f"<= {THRESHOLDS['dense_oracle']:g}", err <= THRESHOLDS["dense_oracle"])


def check_gradient_fd(s: VerifySettings, rng) -> Check:
    traj, targets, cp, g = _duality_setup(s, rng)
    grid, tg = traj.grid, traj.time
    prob = ctl.Problem(grid, tg, traj.params, cp, targets, traj.phi[0])
    grad, _, _ = prob.gradient(g, traj)
    eps = THRESHOLDS["gradient_fd_eps"]
    errs = []
    for _ in range(5):
        u = unit(random_control(grid, tg, rng))
        jp = prob.cost(g.like(g.values + eps * u.values)).smooth
        jm = prob.cost(g.like(g.values - eps * u.values)).smooth
        fd = (jp - jm) / (2 * eps)
        an = grad.inner(u)
        errs.append(abs(fd - an) / max(abs(fd), abs(an)))
    worst = max(errs)
    return Check("gradient_fd", worst, f"<= {THRESHOLDS['gradient_fd']:g}", worst <= THRESHOLDS["gradient_fd"], detail={"errors": errs})


def check_mass(s: VerifySettings, rng) -> Check:
    grid = GridSpec.square(s.n)
    tg = TimeGrid(0.05, 200)
    phi0 = smooth_random_field(grid, rng, amplitude=0.5) + 0.2
    g = random_control(grid, tg, rng)
    tr = solve_state(grid, tg, PhysParams(lam=SmoothLambda(1.0, 2.0)), g, phi0)
    means = tr.phi.reshape(tg.n_steps + 1, -1).mean(axis=1)
    drift = float(np.max(np.abs(means - means[0])))
    sigma = 0.5
    tr2 = solve_state(grid, tg, PhysParams(lam=SmoothLambda(1.0, 2.0), sigma=sigma), g, phi0)
    means2 = tr2.phi.reshape(tg.n_steps + 1, -1).mean(axis=1)
    rec = means2[0] * (1 - sigma * tg.dt) ** np.arange(tg.n_steps + 1)
    rec_err = float(np.max(np.abs(means2 - rec)))
    ok = drift <= THRESHOLDS["mass_conserved"] and rec_err <= THRESHOLDS["mass_recursion"]
    return Check(
        "mass",
        max(drift / THRESHOLDS["mass_conserved"], rec_err / THRESHOLDS["mass_recursion"]),
        "drift <= 1e-11 and recursion <= 1e-10 (value: worst fraction of threshold)",
        ok,
        detail={"drift": drift, "recursion_error": rec_err},
    )


def check_energy(s: VerifySettings, rng) -> Check:
    grid = GridSpec.square(s.n)
    phys = PhysParams()
    phi0 = prepared_phase(grid, phys)
    slacks = []
    for nt in (s.nt, 2 * s.nt, 4 * s.nt):
        tg = TimeGrid(0.05, nt)
        tr = solve_state(grid, tg, phys, Control.zeros(grid, tg), phi0)
        slacks.append(float(np.max(np.abs(energy_defects(tr)))))
    ratios = [slacks[i] / slacks[i + 1] for i in range(2)]
    ok = all(r >= THRESHOLDS["energy_ratio_min"] for r in ratios)
    return Check("energy", min(ratios), f">= {THRESHOLDS['energy_ratio_min']:g}", ok, detail={"slack": slacks, "ratios": ratios})


def check_kappa0(s: VerifySettings, rng) -> Check:
    prob = tracking_problem(s.n, s.nt_opt)
    rep = ctl.optimize(prob.zero_control(), prob, tol_rel=1e-7, max_iter=THRESHOLDS["optimize_max_iter"])
    pres = ctl.projection_residual(rep.control, rep.adjoint, prob.ctrl)
    vi = ctl.vi_monte_carlo(rep.control, rep.adjoint, prob.ctrl, rng, 100)
    ok = rep.reason == "converged" and pres <= THRESHOLDS["projection_residual"] and vi <= THRESHOLDS["vi_violation"]
    return Check(
        "kappa0_optimality",
        pres,
        f"projection <= {THRESHOLDS['projection_residual']:g}, VI <= {THRESHOLDS['vi_violation']:g}",
        ok,
        detail={"iterations": rep.iterations, "vi_monte_carlo": vi, "reason": rep.reason, "control_norm": rep.control.norm()},
    )


def kappa_sweep(prob: ctl.Problem, kappas, **opt) -> list[dict]:
    rows = []
    for kappa in kappas:
        p = prob.with_kappa(float(kappa))
        rep = ctl.optimize(p.zero_control(), p, **opt)
        sr = ctl.sparsity_report(rep.control, rep.adjoint, p.ctrl)
        rows.append({"report": rep, "sparsity": sr, "kappa": float(kappa), "control_norm": rep.control.norm()})
    return rows


def reference_kappa(prob: ctl.Problem) -> float:
    """``max(sup |v_adj|, ||v_adj||_{L2(Q)})`` at the zero control."""
    g = prob.zero_control()
    _, _, adj = prob.gradient(g)
    sup = float(np.max(np.sqrt(np.sum(adj.v_adj**2, axis=1))))
    l2 = float(np.sqrt(np.sum(adj.v_adj**2) * g.weight))
    return max(sup, l2)


def check_sparsity(s: VerifySettings, rng) -> Check:
    prob = tracking_problem(s.n, s.nt_opt)
    kref = reference_kappa(prob)
    kappas = [0.0, 0.1 * kref, 0.3 * kref, 0.6 * kref, 1.05 * kref]
    rows = kappa_sweep(prob, kappas, tol_rel=1e-6, max_iter=THRESHOLDS["optimize_max_iter"])
    first, last = rows[0], rows[-1]
    a = first["control_norm"] > 0
    sr = last["sparsity"]
    b = sr.control_is_zero and sr.v_adj_norm <= last["kappa"] * (1 + THRESHOLDS["sparsity_kappa_rel"])
    table = [
        {"kappa": r["kappa"], "sparsity_fraction": r["sparsity"].sparsity_fraction, "control_norm": r["control_norm"],
         "v_adj_norm": r["sparsity"].v_adj_norm, "iterations": r["report"].iterations}
        for r in rows
    ]
    return Check(
        "sparsity",
        sr.v_adj_norm / last["kappa"],
        "kappa=0 control nonzero; largest kappa: g == 0 and ||v_adj|| <= kappa",
        bool(a and b),
        detail={"table": table},
    )


def check_ball(s: VerifySettings, rng) -> Check:
    free = tracking_problem(s.n, s.nt_opt)
    rep0 = ctl.optimize(free.zero_control(), free, tol_rel=1e-7)
    M = 0.5 * rep0.control.norm()
    prob = tracking_problem(s.n, s.nt_opt, M=M)
    rep = ctl.optimize(prob.zero_control(), prob, tol_rel=1e-7)
    nrm = rep.control.norm()
    rel = abs(nrm - M) / M
    vi = ctl.vi_monte_carlo(rep.control, rep.adjoint, prob.ctrl, rng, 100)
    ok = rel <= THRESHOLDS["ball_norm_rel"] and vi <= THRESHOLDS["vi_violation"]
    return Check(
        "ball_constraint",
        rel,
        f"| ||g|| / M - 1 | <= {THRESHOLDS['ball_norm_rel']:g}, VI <= {THRESHOLDS['vi_violation']:g}",
        ok,
        detail={"M": M, "norm": nrm, "vi_monte_carlo": vi, "iterations": rep.iterations},
    )


def check_lipschitz(s: VerifySettings, rng) -> Check:
    grid, phys = GridSpec.square(s.n), rich_physics()
    phi0 = smooth_random_field(grid, rng, amplitude=0.5)
    pair1 = tuple(smooth_random_field(grid, rng, components=2) for _ in range(2))
    pair2 = tuple(smooth_random_field(grid, rng, components=2) for _ in range(2))
    rows = lipschitz_probe(grid, TimeGrid(0.05, s.nt), phys, phi0, pair1, pair2)
    ratios = np.array([r["ratio"] for r in rows])
    variation = float(ratios.max() / ratios.min()) if np.all(ratios > 0) else float("inf")
    ok = bool(np.all(np.isfinite(ratios)) and variation <= THRESHOLDS["lipschitz_variation"])
    return Check("lipschitz", variation, f"<= {THRESHOLDS['lipschitz_variation']:g}", ok, detail={"table": rows})


def check_determinism(s: VerifySettings, rng) -> Check:
    from chb6.cli import series_csv_text

    grid, tg, phys = GridSpec.square(s.n), TimeGrid(0.05, s.nt), rich_physics()
    texts = []
    for _ in range(2):
        r = np.random.default_rng(s.seed)
        phi0 = smooth_random_field(grid, r, amplitude=0.5)
        g = random_control(grid, tg, r)
        texts.append(series_csv_text(solve_state(grid, tg, phys, g, phi0)))
    prob = tracking_problem(s.n, 10)
    opt_texts = []
    for _ in range(2):
        rep = ctl.optimize(prob.zero_control(), prob, tol_rel=1e-6, max_iter=20)
        from chb6.cli import optimize_csv_text

        opt_texts.append(optimize_csv_text(rep))
    same = texts[0] == texts[1] and opt_texts[0] == opt_texts[1]
    return Check("determinism", 0.0 if same else 1.0, "byte-identical CSVs", same)


CHECKS: dict[str, Callable[[VerifySettings, np.random.Generator], Check]] = {
    "taylor": check_taylor,
    "duality": check_duality,
    "dense_oracle": check_dense_oracle,
    "gradient_fd": check_gradient_fd,
    "mass": check_mass,
    "energy": check_energy,
    "kappa0_optimality": check_kappa0,
    "sparsity": check_sparsity,
    "ball_constraint": check_ball,
    "lipschitz": check_lipschitz,
    "determinism": check_determinism,
}


def run_battery(settings: VerifySettings, only: list[str] | None = None, echo: Callable[[str], None] | None = None) -> VerifyReport:
    names = list(CHECKS) if not only else only
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown checks: {unknown}; available: {list(CHECKS)}")
    report = VerifyReport(settings.seed)
    order = list(CHECKS)
    for name in names:
        # stream keyed by the check, so --only reproduces the full-battery numbers
        rng = np.random.default_rng([settings.seed, order.index(name)])
        t0 = _time.perf_counter()
        chk = CHECKS[name](settings, rng)
        chk.seconds = _time.perf_counter() - t0
        report.checks.append(chk)
        if echo:
            echo(f"{'PASS' if chk.passed else 'FAIL'} {chk.name:<18} value={chk.value:.3e} threshold {chk.threshold} ({chk.seconds:.1f}s)")
    return report

import numpy as np
import pytest

from chb6.model import ControlParams, PhysParams, SmoothLambda, TanhSource, Targets
from chb6.sensitivity import cost_seeds, solve_adjoint, solve_linearized, transpose_sweep
from chb6.spectral import GridSpec, smooth_random_field
from chb6.state import Control, TimeGrid, solve_state
from chb6.verify import dense_oracle_compare, duality_test, random_control, taylor_test, unit

PHYS = PhysParams(lam=SmoothLambda(1.0, 2.0), nu=1.0, sigma=0.2, h=TanhSource(0.5))


@pytest.fixture(scope="module")
def setup():
    grid, tg = GridSpec.square(16), TimeGrid(0.05, 8)
    rng = np.random.default_rng(7)
    phi0 = smooth_random_field(grid, rng, amplitude=0.5)
    g = random_control(grid, tg, rng)
    traj = solve_state(grid, tg, PHYS, g, phi0)
    targets = Targets(
        np.stack([smooth_random_field(grid, rng, components=2) for _ in range(8)]),
        np.stack([smooth_random_field(grid, rng) for _ in range(8)]),
        smooth_random_field(grid, rng),
    )
    return grid, tg, phi0, g, traj, targets


def test_linearized_is_linear(setup):
    grid, tg, _, _, traj, _ = setup
    rng = np.random.default_rng(0)
    u1, u2 = random_control(grid, tg, rng), random_control(grid, tg, rng)
    l1, l2 = solve_linearized(traj, u1), solve_linearized(traj, u2)
    l12 = solve_linearized(traj, u1.values + 2 * u2.values)
    np.testing.assert_allclose(l12.psi, l1.psi + 2 * l2.psi, atol=1e-11)
    np.testing.assert_allclose(l12.w_vel, l1.w_vel + 2 * l2.w_vel, atol=1e-10)
    with pytest.raises(ValueError):
        solve_linearized(traj, np.zeros((3,) + grid.vshape))


def test_taylor_slope_two(setup):
    grid, tg, phi0, g, _, _ = setup
    u = unit(random_control(grid, tg, np.random.default_rng(1)))
    rem, slope = taylor_test(grid, tg, PHYS, g, phi0, u)
    assert 1.9 <= slope <= 2.1
    assert np.all(np.diff(rem) < 0)


def test_taylor_rejects_bad_ladder(setup):
    grid, tg, phi0, g, _, _ = setup
    u = Control.zeros(grid, tg)
    with pytest.raises(ValueError):
        taylor_test(grid, tg, PHYS, g, phi0, u, (1e-2, 1e-3))
    with pytest.raises(ValueError):
        taylor_test(grid, tg, PHYS, g, phi0, u, (1e-2, 1e-3, 1e-8))


def test_duality_and_mutation(setup):
    grid, tg, _, g, traj, targets = setup
    cp = ControlParams(beta=(1.0, 1.0, 1.0, 0.1))
    pair, red = duality_test(traj, targets, cp, g, np.random.default_rng(3), 3)
    assert pair <= 1e-9 and red <= 1e-9
    mpair, mred = duality_test(traj, targets, cp, g, np.random.default_rng(3), 3, corrupt=True)
    assert max(mpair, mred) > 1e-3
    with pytest.raises(ValueError):
        duality_test(traj, targets, cp, g, np.random.default_rng(3), 0)


def test_terminal_adjoint_condition(setup):
    _, _, _, _, traj, targets = setup
    cp = ControlParams(beta=(0.0, 0.0, 2.5, 1.0))
    adj = solve_adjoint(traj, targets, cp)
    np.testing.assert_allclose(adj.phi_adj[-1], -2.5 * (traj.phi[-1] - targets.phi_T), atol=1e-13)


def test_zero_cost_gives_zero_adjoint(setup):
    _, _, _, _, traj, _ = setup
    grid = traj.grid
    targets = Targets(traj.v.copy(), traj.phi[:-1].copy(), traj.phi[-1].copy())
    adj = solve_adjoint(traj, targets, ControlParams(beta=(1.0, 1.0, 1.0, 1.0)))
    assert np.max(np.abs(adj.v_adj)) == 0.0
    sv, sp_ = cost_seeds(traj, targets, ControlParams(beta=(1.0, 1.0, 1.0, 1.0)))
    assert sv.shape == (traj.n_steps,) + grid.vshape and sp_.shape == traj.phi.shape


def test_dense_oracle_small():
    grid, tg = GridSpec.square(4), TimeGrid(0.05, 2)
    rng = np.random.default_rng(11)
    phi0 = smooth_random_field(grid, rng, amplitude=0.5)
    traj = solve_state(grid, tg, PHYS, random_control(grid, tg, rng), phi0)
    targets = Targets(
        np.stack([smooth_random_field(grid, rng, components=2) for _ in range(2)]),
        np.stack([smooth_random_field(grid, rng) for _ in range(2)]),
        smooth_random_field(grid, rng),
    )
    assert dense_oracle_compare(traj, targets, ControlParams(beta=(1.0, 1.0, 1.0, 0.1))) <= 1e-11


def test_dense_oracle_memory_guard(setup):
    _, _, _, _, traj, targets = setup
    with pytest.raises(MemoryError):
        dense_oracle_compare(traj, targets, ControlParams())


def test_transpose_of_zero_is_zero(setup):
    _, _, _, _, traj, _ = setup
    grid = traj.grid
    ub, pb, tb, xb = transpose_sweep(traj, np.zeros((traj.n_steps,) + grid.vshape), np.zeros(traj.phi.shape))
    assert not np.any(ub) and not np.any(pb)

"""隐式 Euler 求解器测试：Newton、线性化不动点、时间推进与热平衡"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.core.assembly import assemble_residual, edge_fluxes, initial_state
from src.core.model import InitialData
from src.core.solver import (
    REASON_FAILURE,
    REASON_MAX_STEPS,
    SolverConfig,
    SolveStats,
    newton_step_solve,
    picard_mu,
    picard_solve,
    solve_equilibrium,
    time_march,
)
from src.utils.exceptions import ConfigError, ConvergenceError, ModelError
from tests.conftest import make_problem


def _floating_cell(n, gamma=0.0, tau=0.5, dt=0.1):
    """单个全 Neumann 单元：没有通量，只剩局部弛豫与进动"""
    return make_problem(1, 1, boundary_spec=None, doping=1.0, n=n, gamma=gamma, tau=tau, dt=dt)


def test_solver_config_validation():
    """测试非法求解器配置"""
    with pytest.raises(ConfigError):
        SolverConfig(kind="jacobi")
    with pytest.raises(ConfigError):
        SolverConfig(linear_solver="cg")
    with pytest.raises(ConfigError):
        SolverConfig(newton_tol=0.0)
    with pytest.raises(ConfigError):
        SolverConfig(max_steps=0)
    with pytest.raises(ConfigError):
        SolverConfig(damping_floor=0.0)
    assert SolverConfig(kind="picard", picard_tol=1e-9).tolerance == 1e-9


def test_picard_mu():
    """测试稳定化参数 μ"""
    setup = make_problem(2, 2, doping=2.0, D=1.5, p=0.6, lambda_d=0.5, dt=0.1)
    expected = 1.5 * 2.0 / 0.25 * max(1.0 / 0.64, 0.8) * 0.1
    assert picard_mu(setup.params) == pytest.approx(expected)


def test_single_cell_spin_relaxation():
    """测试 n⃗ ∥ m⃗ 时 n⃗^k = n⃗^0 (1 + Δt/τ)^{−k}"""
    setup = _floating_cell(n=(0.0, 0.0, 0.3))
    cfg = SolverConfig(max_steps=5, steady_threshold=1e-14)
    trajectory = time_march(initial_state(setup), setup, cfg)

    assert trajectory.reason == REASON_MAX_STEPS
    assert len(trajectory.states) == 6
    for state in trajectory.states:
        assert state.n.cells[0, 2] == pytest.approx(0.3 * 1.2 ** (-state.k), rel=1e-10)
        assert state.n0.cells[0] == pytest.approx(1.0)
        assert state.V.cells[0] == pytest.approx(0.0, abs=1e-12)
    assert trajectory.times[-1] == pytest.approx(0.5)


@pytest.mark.parametrize("kind", ["newton", "picard"])
def test_precession_step_matches_hand_solution(kind):
    """测试一步进动：a n_x − 2γ n_y = p_x/Δt，a n_y + 2γ n_x = p_y/Δt"""
    gamma, tau, dt = 0.5, 0.5, 0.1
    setup = _floating_cell(n=(0.2, 0.1, 0.0), gamma=gamma, tau=tau, dt=dt)
    a = 1.0 / dt + 1.0 / tau
    system = np.array([[a, -2.0 * gamma], [2.0 * gamma, a]])
    expected = np.linalg.solve(system, np.array([0.2, 0.1]) / dt)

    prev = initial_state(setup)
    cfg = SolverConfig(kind=kind, newton_tol=1e-13, picard_tol=1e-13)
    solver = newton_step_solve if kind == "newton" else picard_solve
    state = solver(prev, setup, cfg)

    assert_allclose(state.n.cells[0, :2], expected, rtol=1e-10)
    assert state.n.cells[0, 2] == pytest.approx(0.0, abs=1e-14)
    assert state.k == 1
    assert state.t == pytest.approx(dt)


def test_newton_and_picard_agree(small_problem):
    """测试两种非线性求解器从非稳态初值出发得到同一个时间步解"""
    x = small_problem.mesh.centers[:, 0]
    n = np.tile([0.05, 0.0, 0.1], (small_problem.mesh.n_cells, 1))
    setup = small_problem.with_initial(InitialData(n0=1.0 + 0.1 * x, n=n))
    prev = initial_state(setup)
    assert np.max(np.abs(assemble_residual(prev, prev, setup))) > 1e-6

    newton_stats, picard_stats = SolveStats(), SolveStats()
    newton = newton_step_solve(prev, setup, SolverConfig(newton_tol=1e-12), newton_stats)
    picard = picard_solve(prev, setup, SolverConfig(kind="picard", picard_tol=1e-12), picard_stats)

    assert_allclose(picard.cell_matrix(), newton.cell_matrix(), atol=1e-10)
    assert newton_stats.residual_norm <= 1e-12
    assert newton_stats.iterations >= 1
    assert picard_stats.iterations >= 1
    assert np.max(np.abs(assemble_residual(picard, prev, setup))) < 1e-8


def test_gmres_matches_direct_solve(small_problem):
    """测试 GMRES 与稀疏直接分解给出相同 Newton 解"""
    prev = initial_state(small_problem)
    direct = newton_step_solve(prev, small_problem, SolverConfig(newton_tol=1e-11))
    iterative = newton_step_solve(prev, small_problem, SolverConfig(newton_tol=1e-11, linear_solver="gmres"))
    assert_allclose(iterative.cell_matrix(), direct.cell_matrix(), atol=1e-8)


def test_isolated_device_conserves_charge_and_relaxes_spin():
    """测试全 Neumann 边界：总电荷守恒，总自旋按 (1 + Δt/τ)^{−k} 衰减"""
    setup = make_problem(4, 4, boundary_spec=None, doping=1.0, p=0.5, tau=0.5, dt=0.1)
    x = setup.mesh.centers[:, 0]
    n0 = 1.0 + 0.2 * np.cos(np.pi * x)
    n = np.zeros((setup.mesh.n_cells, 3))
    n[:, 2] = 0.1 + 0.05 * np.cos(np.pi * x)
    setup = setup.with_initial(InitialData(n0=n0, n=n))

    areas = setup.mesh.areas
    charge = float(areas @ n0)
    spin = float(areas @ n[:, 2])
    tol = 1e-12
    cfg = SolverConfig(newton_tol=tol, max_steps=100, steady_threshold=1e-14)
    trajectory = time_march(initial_state(setup), setup, cfg)
    assert trajectory.steps == 100

    charges = np.array([float(areas @ state.n0.cells) for state in trajectory.states])
    assert np.max(np.abs(np.diff(charges))) <= 10 * tol
    assert np.max(np.abs(charges - charge)) <= 100 * 10 * tol
    for state in trajectory.states:
        assert float(areas @ state.n.cells[:, 2]) == pytest.approx(spin * 1.2 ** (-state.k), abs=1e-11)
        assert float(areas @ state.V.cells) == pytest.approx(0.0, abs=1e-12)


def test_time_march_reaches_steady_state(small_problem):
    """测试偏置下收敛到稳态，源漏电流相互抵消"""
    setup = small_problem.with_params(small_problem.params.with_dt(1.0))
    cfg = SolverConfig(newton_tol=1e-13, steady_threshold=1e-13, max_steps=500, store_every=0)
    trajectory = time_march(initial_state(setup), setup, cfg)

    assert trajectory.converged
    assert len(trajectory.states) == 2
    assert len(trajectory.iterations) == trajectory.steps

    fluxes = edge_fluxes(trajectory.final, setup)
    source, _ = fluxes.contact_sum(setup.mesh.contact_edges("source"))
    drain, _ = fluxes.contact_sum(setup.mesh.contact_edges("drain"))
    assert abs(drain) > 1e-3
    assert abs(source + drain) <= 1e-8 * max(abs(source), abs(drain))


def test_newton_failure_carries_partial_trajectory(small_problem):
    """测试不收敛时异常携带已完成的轨迹"""
    cfg = SolverConfig(max_newton_iter=1, newton_tol=1e-30, max_steps=3)
    with pytest.raises(ConvergenceError) as excinfo:
        time_march(initial_state(small_problem), small_problem, cfg)
    trajectory = excinfo.value.trajectory
    assert trajectory is not None
    assert trajectory.reason == REASON_FAILURE
    assert trajectory.final.k == 0


def test_equilibrium_reference_is_stationary():
    """测试热平衡态满足格式且两种求解器都保持不变"""
    setup = make_problem(8, 8, doping=0.0)
    reference = solve_equilibrium(setup, SolverConfig(newton_tol=1e-13))
    assert np.all(reference.n0.cells > 0)
    assert_allclose(reference.n.cells, 0.0)

    setup = setup.with_initial(InitialData(n0=reference.n0.cells, n=np.zeros((setup.mesh.n_cells, 3))))
    assert np.max(np.abs(assemble_residual(reference, reference, setup))) < 1e-11
    for kind in ("newton", "picard"):
        solver = newton_step_solve if kind == "newton" else picard_solve
        result = solver(reference, setup, SolverConfig(kind=kind))
        assert_allclose(result.cell_matrix(), reference.cell_matrix(), atol=1e-9)


def test_equilibrium_requires_consistent_contacts(small_problem):
    """测试源漏有偏置时拒绝求热平衡"""
    with pytest.raises(ModelError):
        solve_equilibrium(small_problem)
    with pytest.raises(ModelError):
        solve_equilibrium(make_problem(2, 2, boundary_spec=None))

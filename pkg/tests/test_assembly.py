"""Poisson 求解、格式残差与 Jacobian 组装测试"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.core.assembly import (
    assemble_jacobian,
    assemble_residual,
    cross_matrix,
    harmonic_extension,
    initial_state,
    poisson_matrix,
    solve_poisson,
    transport_system,
)
from src.core.flux import accumulate_edges
from src.core.mesh import build_rect_mesh, cell_average
from src.utils.exceptions import MeshError, SingularSystemError
from tests.conftest import CONTACTS, make_problem


def _perturbed(setup, seed=0, scale=0.1):
    """在初始态附近随机扰动所有单元未知量（保持 n± > 0）"""
    prev = initial_state(setup)
    rng = np.random.default_rng(seed)
    cells = prev.cell_matrix().copy()
    cells[:, 0] += scale * rng.uniform(0.0, 1.0, len(cells))
    cells[:, 1:4] += 0.5 * scale * rng.uniform(-1.0, 1.0, (len(cells), 3))
    cells[:, 4] += scale * rng.normal(size=len(cells))
    return prev, prev.with_unknowns(cells.ravel())


def _fd_jacobian(state, prev, setup, h=1e-6):
    u = state.pack()
    columns = []
    for i in range(u.size):
        step = np.zeros_like(u)
        step[i] = h
        plus = assemble_residual(state.with_unknowns(u + step), prev, setup)
        minus = assemble_residual(state.with_unknowns(u - step), prev, setup)
        columns.append((plus - minus) / (2.0 * h))
    return np.column_stack(columns)


@pytest.mark.parametrize("boundary_spec", [CONTACTS, None])
def test_jacobian_matches_finite_differences(boundary_spec):
    """测试解析 Jacobian 与中心差分一致（含 floating 规范）"""
    contacts = {"source": (1.0, 0.0), "drain": (0.8, -0.3)} if boundary_spec else None
    setup = make_problem(
        3,
        3,
        boundary_spec=boundary_spec,
        contacts=contacts,
        doping=[1.0, 0.5, 1.0, 0.2, 0.2, 0.2, 1.0, 0.5, 1.0],
        p=0.4,
        gamma=0.7,
        tau=0.5,
        lambda_d=0.3,
        m=(0.0, 0.6, 0.8),
        n=(0.05, -0.02, 0.1),
    )
    prev, state = _perturbed(setup, seed=1)

    analytic = assemble_jacobian(state, prev, setup).toarray()
    numeric = _fd_jacobian(state, prev, setup)
    assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-6 * np.abs(analytic).max())


def test_residual_vanishes_for_neutral_uniform_state():
    """测试 n0 = C、V = 0、n⃗ = 0 且接触 (1, 0) 时残差为零"""
    setup = make_problem(4, 3, doping=1.0)
    state = initial_state(setup)
    assert_allclose(state.V.cells, 0.0, atol=1e-14)
    assert_allclose(assemble_residual(state, state, setup), 0.0, atol=1e-14)


def test_residual_rejects_foreign_mesh(small_problem):
    other = make_problem(4, 4)
    with pytest.raises(MeshError):
        assemble_residual(initial_state(other), initial_state(other), small_problem)


def test_transport_system_reproduces_residual_rows():
    """测试固定 V 时线性系统与格式残差的输运行一致"""
    setup = make_problem(
        3, 4, contacts={"source": (1.0, 0.1), "drain": (1.2, -0.4)}, doping=1.0, p=0.6, gamma=0.3, tau=0.7
    )
    prev, state = _perturbed(setup, seed=4)
    matrix, rhs = transport_system(state, prev, setup, mu=0.0)
    N = np.column_stack([state.n0.cells, state.n.cells]).ravel()
    transport_rows = assemble_residual(state, prev, setup).reshape(-1, 5)[:, :4].ravel()
    assert_allclose(matrix @ N - rhs, transport_rows, atol=1e-12)


def test_transport_system_stabilization():
    """测试 μ 项只改变对角与右端"""
    setup = make_problem(3, 3, doping=1.0, p=0.2)
    prev, state = _perturbed(setup, seed=9)
    rho = np.full((setup.mesh.n_cells, 4), 0.3)
    base, rhs0 = transport_system(state, prev, setup, mu=0.0)
    stabilized, rhs1 = transport_system(state, prev, setup, mu=0.5, rho=rho)

    extra = (stabilized - base).toarray()
    expected = np.repeat(0.5 * setup.mesh.areas / setup.params.dt, 4)
    assert_allclose(extra, np.diag(expected), atol=1e-12)
    assert_allclose(rhs1 - rhs0, expected * 0.3, atol=1e-12)


def test_cross_matrix():
    """测试 X(m⃗) n⃗ = n⃗ × m⃗"""
    rng = np.random.default_rng(0)
    n = rng.normal(size=(5, 3))
    m = rng.normal(size=(5, 3))
    assert_allclose(np.einsum("kij,kj->ki", cross_matrix(m), n), np.cross(n, m))


def test_poisson_reproduces_linear_potential():
    """测试电中性时线性迹的离散调和延拓精确"""
    mesh = build_rect_mesh(5, 4, boundary_spec=CONTACTS)
    trace = cell_average(lambda x, y: 2.0 * x - 1.0, mesh).dirichlet
    zeros = np.zeros(mesh.n_cells)
    V = solve_poisson(mesh, zeros, zeros, 0.7, trace)
    assert_allclose(V.cells, 2.0 * mesh.centers[:, 0] - 1.0, atol=1e-12)
    assert_allclose(harmonic_extension(mesh, trace), V.cells, atol=1e-12)


def test_poisson_matrix_symmetric(square_mesh):
    matrix = poisson_matrix(square_mesh, 0.5)
    assert abs(matrix - matrix.T).max() == 0.0


def test_poisson_without_contacts_is_singular():
    """测试无 Dirichlet 边且未固定规范时报错"""
    mesh = build_rect_mesh(3, 3)
    zeros = np.zeros(mesh.n_cells)
    with pytest.raises(SingularSystemError):
        solve_poisson(mesh, zeros, zeros, 1.0, np.zeros(0))
    assert_allclose(harmonic_extension(mesh, np.zeros(0)), 0.0)


def test_floating_poisson_fixes_mean():
    """测试 floating 规范：Σ m(K)V_K = 0，其余行满足原始方程"""
    mesh = build_rect_mesh(4, 4)
    x = mesh.centers[:, 0]
    n0 = 1.0 + 0.3 * np.cos(np.pi * x)
    doping = np.ones(mesh.n_cells)
    V = solve_poisson(mesh, n0, doping, 0.5, np.zeros(0), floating=True)

    assert float(mesh.areas @ V.cells) == pytest.approx(0.0, abs=1e-13)
    laplacian = accumulate_edges(mesh, mesh.transmissibility * V.differences())
    rows = -0.25 * laplacian - mesh.areas * (n0 - doping)
    assert_allclose(rows, 0.0, atol=1e-12)

"""离散 Poisson 方程、格式残差与 Jacobian 组装

未知量按单元主序排列：u[5K + f]，f 依次为 n0, n1, n2, n3, V。
Dirichlet 迹是数据而非未知量，残差只对单元建立。
"""

from typing import Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from ..utils.exceptions import MeshError, SingularSystemError
from ..utils.logger import get_logger
from .flux import (
    EdgeFluxSet,
    accumulate_edges,
    bernoulli,
    bernoulli_prime,
    compute_edge_fluxes,
    spin_coupling_matrix,
)
from .mesh import EdgeKind, Mesh, MeshField
from .model import ProblemSetup
from .state import N_FIELDS, State

logger = get_logger(__name__)

_I4 = np.arange(4)


def cross_matrix(m: np.ndarray) -> np.ndarray:
    """X(m⃗) 满足 X n⃗ = n⃗ × m⃗，按单元堆叠为 (nc, 3, 3)"""
    m = np.asarray(m, dtype=float).reshape(-1, 3)
    X = np.zeros((m.shape[0], 3, 3))
    X[:, 0, 1], X[:, 0, 2] = m[:, 2], -m[:, 1]
    X[:, 1, 0], X[:, 1, 2] = -m[:, 2], m[:, 0]
    X[:, 2, 0], X[:, 2, 1] = m[:, 1], -m[:, 0]
    return X


# ---------------------------------------------------------------------- Poisson


def poisson_matrix(mesh: Mesh, lambda_sq: float, floating: bool = False) -> sp.csr_matrix:
    """−λ_D² Σ τ_σ D V_{K,σ} 的矩阵（Dirichlet 迹移到右端）

    floating=True 时第一行替换为规范条件 Σ_K m(K) V_K = 0。
    """
    nc = mesh.n_cells
    tau = mesh.transmissibility
    active = mesh.edge_kind != EdgeKind.NEUMANN
    owners = mesh.owners[active]
    weights = lambda_sq * tau[active]

    interior = mesh.interior_edges
    k = mesh.edge_cells[interior, 0]
    l = mesh.edge_cells[interior, 1]
    w = lambda_sq * tau[interior]

    rows = np.concatenate([owners, l, k, l])
    cols = np.concatenate([owners, l, l, k])
    vals = np.concatenate([weights, w, -w, -w])
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(nc, nc)).tolil()
    if floating:
        matrix[0, :] = mesh.areas[None, :]
    return matrix.tocsr()


def _dirichlet_load(mesh: Mesh, lambda_sq: float, V_trace: np.ndarray) -> np.ndarray:
    edges = mesh.dirichlet_edges
    return np.bincount(
        mesh.owners[edges],
        weights=lambda_sq * mesh.transmissibility[edges] * V_trace,
        minlength=mesh.n_cells,
    )


def solve_poisson(
    mesh: Mesh,
    n0: Union[MeshField, np.ndarray],
    doping: np.ndarray,
    lambda_d: float,
    V_trace: np.ndarray,
    floating: bool = False,
) -> MeshField:
    """求解 −λ_D² Σ_σ τ_σ D V_{K,σ} = m(K)(n0_K − C_K)

    Raises:
        SingularSystemError: 无 Dirichlet 边且未要求 floating 规范
    """
    if mesh.n_dirichlet == 0 and not floating:
        raise SingularSystemError("Poisson problem without Dirichlet edges is singular")
    n0_cells = n0.cells if isinstance(n0, MeshField) else np.asarray(n0, dtype=float)
    V_trace = np.asarray(V_trace, dtype=float)
    lambda_sq = lambda_d**2

    charge = mesh.areas * (n0_cells - np.asarray(doping, dtype=float))
    rhs = charge + _dirichlet_load(mesh, lambda_sq, V_trace)
    if floating:
        total = float(charge.sum())
        if abs(total) > 1e-12 * max(1.0, float(np.abs(charge).sum())):
            logger.warning(f"Floating Poisson solve with nonzero total charge {total:.3e}")
        rhs[0] = 0.0

    matrix = poisson_matrix(mesh, lambda_sq, floating)
    V = np.atleast_1d(spsolve(matrix.tocsc(), rhs))
    if not np.all(np.isfinite(V)):
        raise SingularSystemError("Poisson solve returned non-finite values")
    return MeshField(mesh, V, V_trace.copy())


def harmonic_extension(mesh: Mesh, trace: np.ndarray) -> np.ndarray:
    """迹的离散调和延拓（无 Dirichlet 边时返回 0）"""
    if mesh.n_dirichlet == 0:
        return np.zeros(mesh.n_cells)
    zeros = np.zeros(mesh.n_cells)
    return solve_poisson(mesh, zeros, zeros, 1.0, trace).cells


def initial_state(setup: ProblemSetup) -> State:
    """由初始数据构造 State⁰，V⁰ 由初始 Poisson 求解得到"""
    mesh, params, boundary = setup.mesh, setup.params, setup.boundary
    n0 = MeshField(mesh, setup.initial.n0.copy(), boundary.n_trace.copy())
    n = MeshField(mesh, setup.initial.n.copy(), boundary.spin_trace)
    V = solve_poisson(
        mesh, n0, params.doping, params.lambda_d, boundary.V_trace, floating=setup.floating
    )
    return State(n0=n0, n=n, V=V, k=0, t=0.0)


# ---------------------------------------------------------------------- 残差


def _check_meshes(setup: ProblemSetup, *states: State) -> None:
    for state in states:
        if state.mesh is not setup.mesh:
            raise MeshError("State and problem setup are defined on different meshes")


def edge_fluxes(state: State, setup: ProblemSetup) -> EdgeFluxSet:
    """当前状态的全部边通量"""
    mesh = state.mesh
    owners = mesh.owners
    return compute_edge_fluxes(
        mesh,
        setup.coefficients,
        state.n0.cells[owners],
        state.n0.edge_values(),
        state.n.cells[owners],
        state.n.edge_values(),
        state.V.differences(),
    )


def assemble_residual(state: State, prev: State, setup: ProblemSetup) -> np.ndarray:
    """格式残差 F(u)，形状 (5 nc,)；F = 0 当且仅当 state 满足离散格式"""
    _check_meshes(setup, state, prev)
    mesh, params = setup.mesh, setup.params
    areas = mesh.areas
    dt = params.dt

    fluxes = edge_fluxes(state, setup)
    div0, divn = fluxes.cell_divergence(mesh)

    n0, n, V = state.n0.cells, state.n.cells, state.V.cells
    F = np.empty((mesh.n_cells, N_FIELDS))
    F[:, 0] = areas * (n0 - prev.n0.cells) / dt + div0
    F[:, 1:4] = (
        areas[:, None]
        * ((n - prev.n.cells) / dt + n / params.tau - 2.0 * params.gamma * np.cross(n, params.m))
        + divn
    )
    laplacian = accumulate_edges(mesh, mesh.transmissibility * state.V.differences())
    F[:, 4] = -params.lambda_sq * laplacian - areas * (n0 - params.doping)
    if setup.floating:
        F[0, 4] = float(areas @ V)
    return F.ravel()


# ---------------------------------------------------------------------- Jacobian


def _blocks(row_cells, col_cells, blocks, stride):
    rows = stride * row_cells[:, None, None] + _I4[None, :, None]
    cols = stride * col_cells[:, None, None] + _I4[None, None, :]
    shape = blocks.shape
    return (
        np.broadcast_to(rows, shape).ravel(),
        np.broadcast_to(cols, shape).ravel(),
        blocks.ravel(),
    )


def _columns(row_cells, col_cells, vectors, stride):
    rows = stride * row_cells[:, None] + _I4[None, :]
    cols = np.broadcast_to((stride * col_cells + 4)[:, None], vectors.shape)
    return rows.ravel(), cols.ravel(), vectors.ravel()


class _FluxLinearization:
    """SG 通量对 (N_K, N_O, DV) 的偏导，只含非 Neumann 边"""

    def __init__(self, state: State, setup: ProblemSetup):
        mesh = setup.mesh
        coefficients = setup.coefficients
        active = mesh.edge_kind != EdgeKind.NEUMANN
        self.edges = np.flatnonzero(active)
        self.kind = mesh.edge_kind[self.edges]
        self.owners = mesh.owners[self.edges]
        self.others = mesh.edge_cells[self.edges, 1]

        tau = mesh.transmissibility[self.edges]
        x = state.V.differences(self.edges)
        A = spin_coupling_matrix(
            coefficients.D[self.edges], coefficients.p[self.edges], coefficients.m[self.edges]
        )
        N_owner = np.column_stack([state.n0.cells, state.n.cells])[self.owners]
        N_other = np.column_stack(
            [state.n0.edge_values(self.edges), state.n.edge_values(self.edges)]
        )

        self.tau = tau
        self.d_owner = (tau * bernoulli(x))[:, None, None] * A
        self.d_other = -(tau * bernoulli(-x))[:, None, None] * A
        drift = tau[:, None] * (
            bernoulli_prime(x)[:, None] * N_owner + bernoulli_prime(-x)[:, None] * N_other
        )
        self.d_potential = np.einsum("eij,ej->ei", A, drift)
        self.N_other = N_other

    @property
    def interior(self) -> np.ndarray:
        return self.kind == EdgeKind.INTERIOR

    @property
    def dirichlet(self) -> np.ndarray:
        return self.kind == EdgeKind.DIRICHLET


def assemble_jacobian(state: State, prev: State, setup: ProblemSetup) -> sp.csr_matrix:
    """残差对全部单元未知量的精确 Jacobian（5×5 块稀疏）"""
    _check_meshes(setup, state, prev)
    mesh, params = setup.mesh, setup.params
    nc = mesh.n_cells
    size = N_FIELDS * nc
    lin = _FluxLinearization(state, setup)

    parts = []
    K, O = lin.owners, lin.others
    inner = lin.interior
    Ki, Li = K[inner], O[inner]

    # 通量对 n 的导数：K 行 +j，L 行 −j
    parts.append(_blocks(K, K, lin.d_owner, N_FIELDS))
    parts.append(_blocks(Ki, Li, lin.d_other[inner], N_FIELDS))
    parts.append(_blocks(Li, Ki, -lin.d_owner[inner], N_FIELDS))
    parts.append(_blocks(Li, Li, -lin.d_other[inner], N_FIELDS))

    # 通量对 V 的导数：DV = V_O − V_K
    dpot = lin.d_potential
    parts.append(_columns(K, K, -dpot, N_FIELDS))
    parts.append(_columns(Ki, Li, dpot[inner], N_FIELDS))
    parts.append(_columns(Li, Ki, dpot[inner], N_FIELDS))
    parts.append(_columns(Li, Li, -dpot[inner], N_FIELDS))

    # Poisson 行
    w = params.lambda_sq * lin.tau
    wi = w[inner]
    vK, vL = N_FIELDS * K + 4, N_FIELDS * Li + 4
    vKi = N_FIELDS * Ki + 4
    parts.append(
        (
            np.concatenate([vK, vL, vKi, vL]),
            np.concatenate([vK, vL, vL, vKi]),
            np.concatenate([w, wi, -wi, -wi]),
        )
    )

    # 单元局部项
    cells = np.arange(nc)
    areas = mesh.areas
    base = N_FIELDS * cells
    parts.append((base, base, areas / params.dt))
    parts.append((base + 4, base, -areas))
    spin = (areas / params.dt + areas / params.tau)[:, None, None] * np.eye(3)[None]
    spin = spin - (2.0 * params.gamma * areas)[:, None, None] * cross_matrix(params.m)
    rows = base[:, None, None] + 1 + np.arange(3)[None, :, None]
    cols = base[:, None, None] + 1 + np.arange(3)[None, None, :]
    parts.append(
        (np.broadcast_to(rows, spin.shape).ravel(), np.broadcast_to(cols, spin.shape).ravel(), spin.ravel())
    )

    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])

    if setup.floating:
        keep = rows != 4
        rows = np.concatenate([rows[keep], np.full(nc, 4)])
        cols = np.concatenate([cols[keep], base + 4])
        vals = np.concatenate([vals[keep], areas])

    return sp.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()


# ---------------------------------------------------------------------- 线性输运系统


def transport_system(
    state: State,
    prev: State,
    setup: ProblemSetup,
    mu: float,
    rho: Optional[np.ndarray] = None,
) -> Tuple[sp.csr_matrix, np.ndarray]:
    """固定 V 时关于 (n0, n⃗) 的线性系统（未知量 u[4K + f]）

    (1 + μ) m(K)/Δt n_K + Σ j_{K,σ}(n; V) + 自旋局部项 = m(K)/Δt (n_K^{k−1} + μ ρ_K)
    Dirichlet 迹对通量的贡献移到右端。
    """
    _check_meshes(setup, state, prev)
    mesh, params = setup.mesh, setup.params
    nc = mesh.n_cells
    lin = _FluxLinearization(state, setup)
    K, O = lin.owners, lin.others
    inner = lin.interior
    Ki, Li = K[inner], O[inner]

    parts = [
        _blocks(K, K, lin.d_owner, 4),
        _blocks(Ki, Li, lin.d_other[inner], 4),
        _blocks(Li, Ki, -lin.d_owner[inner], 4),
        _blocks(Li, Li, -lin.d_other[inner], 4),
    ]

    areas = mesh.areas
    local = ((1.0 + mu) * areas / params.dt)[:, None, None] * np.eye(4)[None]
    local[:, 1:, 1:] += (areas / params.tau)[:, None, None] * np.eye(3)[None]
    local[:, 1:, 1:] -= (2.0 * params.gamma * areas)[:, None, None] * cross_matrix(params.m)
    cells = np.arange(nc)
    parts.append(_blocks(cells, cells, local, 4))

    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(4 * nc, 4 * nc)).tocsr()

    N_prev = np.column_stack([prev.n0.cells, prev.n.cells])
    rho = N_prev if rho is None else np.asarray(rho, dtype=float).reshape(nc, 4)
    rhs = (areas / params.dt)[:, None] * (N_prev + mu * rho)

    dirichlet = lin.dirichlet
    if np.any(dirichlet):
        trace_flux = np.einsum("eij,ej->ei", lin.d_other[dirichlet], lin.N_other[dirichlet])
        for f in range(4):
            rhs[:, f] -= np.bincount(K[dirichlet], weights=trace_flux[:, f], minlength=nc)
    return matrix, rhs.ravel()

"""MESFET 问题构造 - 无量纲化、网格、接触与初边值数据"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..core.mesh import Mesh, MeshField, build_rect_mesh, check_admissibility
from ..core.model import BoundaryData, InitialData, ModelParams, ProblemSetup
from ..core.state import State
from ..data.device_spec import BiasPoint, DeviceSpec, Scales
from ..utils.exceptions import ContactError
from ..utils.logger import get_logger

logger = get_logger(__name__)

SOURCE = "source"
DRAIN = "drain"
GATE_TOP = "gate_top"
GATE_BOTTOM = "gate_bottom"
GATES = (GATE_TOP, GATE_BOTTOM)

# 栅极端点与网格线对齐的容差（相对单元宽度）
ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class ScaledDevice:
    """无量纲器件参数（长度以 L 为单位，密度以 C₊ 为单位）"""

    scales: Scales
    height: float
    contact_region: float
    gate_span: Tuple[float, float]
    doping_high: float
    doping_channel: float
    diffusion: float
    tau: float
    gamma: float
    polarization: float
    ferromagnetic: bool
    lambda_sq: float
    lambda_sq_computed: float
    lambda_sq_quoted: Optional[float]

    @property
    def lambda_d(self) -> float:
        return math.sqrt(self.lambda_sq)

    def potential(self, volts: float) -> float:
        return volts / self.scales.potential

    def density(self, value: float) -> float:
        return value / self.scales.density


def nondimensionalize(spec: DeviceSpec) -> ScaledDevice:
    """
    物理参数无量纲化

    长度除以 L，密度除以 C₊，电势除以 k_BT/q，时间除以 L²/D。
    λ_D² 同时记录公式值与配置值（配置值优先）。

    Args:
        spec: 器件描述

    Returns:
        无量纲参数及尺度
    """
    scales = spec.scales()
    computed = spec.computed_lambda_sq()
    lambda_sq = spec.lambda_d_sq if spec.lambda_d_sq is not None else computed
    tau = spec.tau / scales.time
    # 进动频率 1/τ 的无量纲形式
    gamma = spec.gamma if spec.gamma is not None else scales.time / spec.tau
    g0, g1 = spec.gate_span

    scaled = ScaledDevice(
        scales=scales,
        height=spec.height / spec.length,
        contact_region=spec.contact_region / spec.length,
        gate_span=(g0 / spec.length, g1 / spec.length),
        doping_high=1.0,
        doping_channel=spec.doping_channel / spec.doping_high,
        diffusion=1.0,
        tau=tau,
        gamma=gamma if spec.ferromagnetic else 0.0,
        polarization=spec.polarization if spec.ferromagnetic else 0.0,
        ferromagnetic=spec.ferromagnetic,
        lambda_sq=lambda_sq,
        lambda_sq_computed=computed,
        lambda_sq_quoted=spec.lambda_d_sq,
    )
    logger.debug(
        f"Scaled device: lambda^2={lambda_sq:.4g} (formula {computed:.4g}), "
        f"tau={tau:.4g}, gamma={scaled.gamma:.4g}, time scale={scales.time:.4g}s"
    )
    return scaled


def _check_gate_alignment(scaled: ScaledDevice, nx: int) -> None:
    for endpoint in scaled.gate_span:
        position = endpoint * nx
        if abs(position - round(position)) > ALIGN_TOL * max(1.0, nx):
            raise ContactError(
                f"Gate endpoint x={endpoint:.6g} does not fall on a cell boundary for nx={nx}"
            )


def mesfet_mesh(scaled: ScaledDevice, nx: int, ny: int) -> Mesh:
    """矩形网格：左侧源极、右侧漏极、上下两侧中部栅极，其余为 Neumann 边界"""
    _check_gate_alignment(scaled, nx)
    g0, g1 = scaled.gate_span

    def classify(x: float, y: float, side: str) -> str:
        if side == "left":
            return SOURCE
        if side == "right":
            return DRAIN
        if g0 < x < g1:
            return GATE_TOP if side == "top" else GATE_BOTTOM
        return "neumann"

    mesh = build_rect_mesh(nx, ny, (0.0, 1.0, 0.0, scaled.height), classify, name=f"mesfet_{nx}x{ny}")
    for name in (SOURCE, DRAIN) + GATES:
        if name not in mesh.contacts:
            raise ContactError(f"Contact '{name}' is not resolved on a {nx}x{ny} mesh")
    return mesh


def _region_fields(mesh: Mesh, scaled: ScaledDevice):
    x = mesh.centers[:, 0]
    ell = scaled.contact_region
    doped = (x < ell) | (x > 1.0 - ell)
    doping = np.where(doped, scaled.doping_high, scaled.doping_channel)

    magnetic = (x < 1.0 / 3.0) | (x >= 2.0 / 3.0)
    m = np.zeros((mesh.n_cells, 3))
    p = np.zeros(mesh.n_cells)
    if scaled.ferromagnetic:
        m[magnetic, 2] = 1.0
        p[doped] = scaled.polarization
    return doping, m, p


def contact_traces(mesh: Mesh, scaled: ScaledDevice, bias: BiasPoint) -> Tuple[np.ndarray, np.ndarray]:
    """按接触给出 Dirichlet 迹 (n^D, V^D)"""
    values = {
        SOURCE: (scaled.doping_high, 0.0),
        DRAIN: (scaled.doping_high, scaled.potential(bias.drain)),
    }
    gate = (scaled.density(bias.gate_density), scaled.potential(bias.gate_potential))
    for name in GATES:
        values[name] = gate

    n_trace = np.empty(mesh.n_dirichlet)
    V_trace = np.empty(mesh.n_dirichlet)
    for name, edges in mesh.contacts.items():
        if name not in values:
            raise ContactError(f"Unknown MESFET contact '{name}'")
        index = mesh.dirichlet_index[edges]
        n_trace[index], V_trace[index] = values[name]
    return n_trace, V_trace


def equilibrium_traces(mesh: Mesh, n_trace: np.ndarray, V_trace: np.ndarray) -> np.ndarray:
    """将栅极密度改为与源极一致的平衡值 n = 2 exp(c − V)"""
    source = mesh.dirichlet_index[mesh.contacts[SOURCE]]
    c = float(np.log(n_trace[source[0]] / 2.0) + V_trace[source[0]])
    return 2.0 * np.exp(c - V_trace)


def build_mesfet(
    spec: DeviceSpec,
    bias: BiasPoint,
    mesh_density: Tuple[int, int] = (48, 16),
    dt: float = 0.05,
    equilibrium_gate: bool = False,
    perturbation: float = 0.0,
    seed: Optional[int] = None,
    mesh: Optional[Mesh] = None,
) -> ProblemSetup:
    """
    构造 MESFET 离散问题

    Args:
        spec: 器件描述
        bias: 偏置点
        mesh_density: (nx, ny)
        dt: 无量纲时间步
        equilibrium_gate: 栅极密度取平衡一致值（零偏置自由能实验用）
        perturbation: 初始电荷密度的相对随机扰动幅度
        seed: 随机种子
        mesh: 外部导入网格（需带 source/drain/gate_* 接触标签）

    Returns:
        ProblemSetup，初始数据 n0⁰ = C，n⃗⁰ = 0
    """
    scaled = nondimensionalize(spec)
    if mesh is None:
        mesh = mesfet_mesh(scaled, *mesh_density)
    report = check_admissibility(mesh)
    if not report.passed:
        logger.warning(f"MESFET mesh '{mesh.name}' failed the admissibility check")

    doping, m, p = _region_fields(mesh, scaled)
    n_trace, V_trace = contact_traces(mesh, scaled, bias)
    if equilibrium_gate:
        n_trace = equilibrium_traces(mesh, n_trace, V_trace)

    n0 = doping.copy()
    if perturbation > 0:
        rng = np.random.default_rng(seed)
        n0 = n0 * (1.0 + perturbation * rng.uniform(-1.0, 1.0, size=n0.shape))

    params = ModelParams(
        m=m,
        doping=doping,
        D=scaled.diffusion,
        p=p,
        gamma=scaled.gamma,
        tau=scaled.tau,
        lambda_d=scaled.lambda_d,
        dt=dt,
    )
    name = f"{'fm' if spec.ferromagnetic else 'nm'}_VD{bias.drain:+.3g}_VG{bias.gate:+.3g}"
    setup = ProblemSetup(
        mesh=mesh,
        params=params,
        boundary=BoundaryData(n_trace=n_trace, V_trace=V_trace),
        initial=InitialData(n0=n0, n=np.zeros((mesh.n_cells, 3))),
        name=name,
        scales=scaled.scales,
    )
    logger.info(
        f"Built MESFET '{name}' on {mesh.n_cells} cells "
        f"(gate {bias.resolved_state.value}, lambda^2={scaled.lambda_sq:.3g})"
    )
    return setup


def with_reference(setup: ProblemSetup, reference: State) -> ProblemSetup:
    """以给定状态（通常为热平衡态）作为自由能参考"""
    boundary = BoundaryData(
        n_trace=setup.boundary.n_trace,
        V_trace=setup.boundary.V_trace,
        n_ref=reference.n0.cells.copy(),
        V_ref=reference.V.cells.copy(),
    )
    return setup.with_boundary(boundary)


def rebias_state(state: State, setup: ProblemSetup) -> State:
    """保留单元值，把 Dirichlet 迹换成 setup 的边界数据；步号与时间归零"""
    boundary = setup.boundary
    return State(
        n0=MeshField(setup.mesh, state.n0.cells.copy(), boundary.n_trace.copy()),
        n=MeshField(setup.mesh, state.n.cells.copy(), boundary.spin_trace),
        V=MeshField(setup.mesh, state.V.cells.copy(), boundary.V_trace.copy()),
    )


def rebias_setup(
    setup: ProblemSetup,
    spec: DeviceSpec,
    bias: BiasPoint,
    equilibrium_gate: bool = False,
) -> ProblemSetup:
    """
    同一网格与参数下换偏置点

    Args:
        setup: 已构造的问题
        spec: 器件描述
        bias: 新偏置点
        equilibrium_gate: 栅极密度取平衡一致值

    Returns:
        Dirichlet 数据更新后的 ProblemSetup
    """
    scaled = nondimensionalize(spec)
    n_trace, V_trace = contact_traces(setup.mesh, scaled, bias)
    if equilibrium_gate:
        n_trace = equilibrium_traces(setup.mesh, n_trace, V_trace)
    rebiased = setup.with_boundary(BoundaryData(n_trace=n_trace, V_trace=V_trace))
    logger.debug(f"Rebiased '{setup.name}' to V_D={bias.drain:+.3g} V, V_G={bias.gate:+.3g} V")
    return rebiased


def continue_from(setup: ProblemSetup, state: State) -> Tuple[ProblemSetup, State]:
    """以 state 的单元值作为 setup 的初始数据，返回 (setup, 初始状态)"""
    start = rebias_state(state, setup)
    initial = InitialData(n0=np.maximum(start.n0.cells, 0.0), n=start.n.cells.copy())
    return setup.with_initial(initial), start

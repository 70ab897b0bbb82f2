"""模型参数、边界/初始数据与稳定性常数

所有量均为无量纲（scaled）形式，物理单位换算只在 device 层完成。
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Union

import numpy as np

from ..utils.exceptions import ModelError
from ..utils.logger import get_logger
from .mesh import Mesh

logger = get_logger(__name__)

ArrayLike = Union[float, np.ndarray]

# 初值符号条件与 |m| ∈ {0, 1} 判定的数值容差
SIGN_TOL = 1e-12
UNIT_TOL = 1e-12


def _per_cell(value: ArrayLike, n_cells: int, name: str) -> np.ndarray:
    array = np.asarray(value, dtype=float)
    if array.ndim == 0:
        return np.full(n_cells, float(array))
    if array.shape != (n_cells,):
        raise ModelError(f"Parameter '{name}' has shape {array.shape}, expected ({n_cells},)")
    return array.copy()


@dataclass
class ModelParams:
    """无量纲模型参数

    D、p 可以是标量或逐单元数组（分区极化）；m 为逐单元三维向量，
    C（doping）为逐单元掺杂。
    """

    m: np.ndarray
    doping: np.ndarray
    D: ArrayLike = 1.0
    p: ArrayLike = 0.0
    gamma: float = 0.0
    tau: float = 1.0
    lambda_d: float = 1.0
    dt: float = 0.05

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float).reshape(-1, 3)
        n_cells = self.m.shape[0]
        self.doping = _per_cell(self.doping, n_cells, "doping")
        self.D = _per_cell(self.D, n_cells, "D")
        self.p = _per_cell(self.p, n_cells, "p")

        if np.any(self.D <= 0):
            raise ModelError("Diffusion coefficient D must be positive")
        if np.any(self.p < 0) or np.any(self.p >= 1):
            raise ModelError(f"Polarization must lie in [0, 1), got max {self.p.max()}")
        if self.gamma < 0:
            raise ModelError(f"Precession strength gamma must be >= 0, got {self.gamma}")
        if self.tau <= 0:
            raise ModelError(f"Spin-flip time tau must be positive, got {self.tau}")
        if self.lambda_d <= 0:
            raise ModelError(f"Debye length must be positive, got {self.lambda_d}")
        if self.dt <= 0:
            raise ModelError(f"Time step must be positive, got {self.dt}")

        norms = np.linalg.norm(self.m, axis=1)
        if np.any((np.abs(norms) > UNIT_TOL) & (np.abs(norms - 1.0) > UNIT_TOL)):
            raise ModelError("Magnetization vectors must have |m| in {0, 1}")
        if not np.all(np.isfinite(self.doping)):
            raise ModelError("Doping contains non-finite values")

    @property
    def n_cells(self) -> int:
        return self.m.shape[0]

    @property
    def eta(self) -> np.ndarray:
        """η = √(1 − p²)"""
        return np.sqrt(1.0 - self.p**2)

    @property
    def lambda_sq(self) -> float:
        return self.lambda_d**2

    @property
    def doping_sup(self) -> float:
        """‖C‖_∞ over cell values"""
        return float(np.max(np.abs(self.doping)))

    @property
    def is_uniform(self) -> bool:
        """D、p、m 是否为常数且 |m| = 1（稳定性定理的前提）"""
        norms = np.linalg.norm(self.m, axis=1)
        return bool(
            np.ptp(self.D) == 0
            and np.ptp(self.p) == 0
            and np.all(np.ptp(self.m, axis=0) == 0)
            and np.all(np.abs(norms - 1.0) <= UNIT_TOL)
        )

    def with_dt(self, dt: float) -> "ModelParams":
        return ModelParams(
            m=self.m, doping=self.doping, D=self.D, p=self.p,
            gamma=self.gamma, tau=self.tau, lambda_d=self.lambda_d, dt=dt,
        )


@dataclass
class BoundaryData:
    """Dirichlet 边界数据（自旋迹恒为 0）

    n_ref / V_ref 为逐单元的参考函数（自由能用），缺省时由迹的
    离散调和延拓得到。
    """

    n_trace: np.ndarray
    V_trace: np.ndarray
    n_ref: Optional[np.ndarray] = None
    V_ref: Optional[np.ndarray] = None

    def __post_init__(self):
        self.n_trace = np.asarray(self.n_trace, dtype=float).reshape(-1)
        self.V_trace = np.asarray(self.V_trace, dtype=float).reshape(-1)
        if self.n_trace.shape != self.V_trace.shape:
            raise ModelError("Density and potential traces must have the same length")
        if np.any(self.n_trace < 0):
            raise ModelError("Dirichlet density n^D must be nonnegative")
        if not (np.all(np.isfinite(self.n_trace)) and np.all(np.isfinite(self.V_trace))):
            raise ModelError("Dirichlet data contain non-finite values")
        if self.n_ref is not None:
            self.n_ref = np.asarray(self.n_ref, dtype=float)
        if self.V_ref is not None:
            self.V_ref = np.asarray(self.V_ref, dtype=float)

    @property
    def n_dirichlet(self) -> int:
        return len(self.n_trace)

    @property
    def spin_trace(self) -> np.ndarray:
        return np.zeros((self.n_dirichlet, 3))

    @property
    def quasi_fermi(self) -> np.ndarray:
        """log(n^D/2) + V^D（n^D = 0 处为 -inf）"""
        with np.errstate(divide="ignore"):
            return np.log(self.n_trace / 2.0) + self.V_trace

    def is_equilibrium_consistent(self, tol: float = 1e-10) -> bool:
        """log(n^D/2) + V^D 是否为常数且 n^D > 0"""
        if self.n_dirichlet == 0:
            return True
        if np.any(self.n_trace <= 0):
            return False
        return bool(np.ptp(self.quasi_fermi) <= tol)


@dataclass
class InitialData:
    """初始数据 (n0⁰, n⃗⁰)"""

    n0: np.ndarray
    n: np.ndarray

    def __post_init__(self):
        self.n0 = np.asarray(self.n0, dtype=float).reshape(-1)
        self.n = np.asarray(self.n, dtype=float).reshape(-1, 3)
        if self.n.shape[0] != self.n0.shape[0]:
            raise ModelError("Initial charge and spin densities have different lengths")

    def updown(self, m: np.ndarray) -> np.ndarray:
        """(n₊, n₋) 按列返回"""
        parallel = np.einsum("ij,ij->i", self.n, m)
        return np.column_stack([0.5 * self.n0 + parallel, 0.5 * self.n0 - parallel])

    def check_sign_condition(self, m: np.ndarray) -> None:
        """½n0 ± n⃗·m⃗ ≥ 0"""
        minimum = float(self.updown(m).min()) if len(self.n0) else 0.0
        if minimum < -SIGN_TOL:
            raise ModelError(f"Initial data violate n± >= 0 (min {minimum:.3e})")


@dataclass(frozen=True)
class BoundConstants:
    """L^∞ 界常数 α、M^0 以及 M^k = M^0 (1 − αΔt)^{−k}"""

    alpha: float
    M0: float
    dt: float

    @classmethod
    def from_params(cls, params: ModelParams, M0: float) -> "BoundConstants":
        # 非常数 D、p 时取上确界
        alpha = float(np.max(params.D * (1.0 + params.p))) * params.doping_sup / params.lambda_sq
        return cls(alpha=alpha, M0=M0, dt=params.dt)

    @property
    def stable(self) -> bool:
        return self.alpha * self.dt < 1.0

    def M(self, k: int) -> float:
        return m_bound_sequence(self.M0, self.alpha, self.dt, k)


@dataclass
class ConstraintReport:
    """时间步与弛豫时间约束检查结果"""

    dt: float
    tau: float
    dt_bound: float
    tau_bound: float
    undoped: bool
    outside_hypotheses: bool
    notes: List[str] = field(default_factory=list)

    @property
    def dt_ok(self) -> bool:
        return self.undoped or self.dt <= self.dt_bound

    @property
    def tau_ok(self) -> bool:
        return self.undoped or self.tau <= self.tau_bound

    @property
    def passed(self) -> bool:
        return self.dt_ok and self.tau_ok


def compute_m0(
    initial: InitialData,
    boundary: BoundaryData,
    doping: np.ndarray,
    m: np.ndarray,
) -> float:
    """计算 M^0

    M^0 = max(½ sup n^D, sup(½n0⁰ + |n⃗⁰·m⃗|), sup|n⃗⁰_⊥|, sup C)

    Raises:
        ModelError: 初始数据违反 ½n0⁰ ± n⃗⁰·m⃗ ≥ 0
    """
    m = np.asarray(m, dtype=float).reshape(-1, 3)
    initial.check_sign_condition(m)

    parallel = np.einsum("ij,ij->i", initial.n, m)
    perp = initial.n - parallel[:, None] * m
    candidates = [
        0.5 * float(boundary.n_trace.max()) if boundary.n_dirichlet else 0.0,
        float(np.max(0.5 * initial.n0 + np.abs(parallel))),
        float(np.max(np.linalg.norm(perp, axis=1))),
        float(np.max(doping)),
    ]
    return max(candidates)


def check_constraints(params: ModelParams, constants: Optional[BoundConstants] = None) -> ConstraintReport:
    """检查 Δt ≤ λ_D²/(D(1+p)‖C‖_∞) 与 τ ≤ ηλ_D²/(D‖C‖_∞)

    无掺杂时两个约束均视为满足（无条件稳定）。
    """
    c_sup = params.doping_sup
    undoped = c_sup == 0.0
    if undoped:
        dt_bound = tau_bound = float("inf")
    else:
        alpha = (
            constants.alpha
            if constants is not None
            else float(np.max(params.D * (1.0 + params.p))) * c_sup / params.lambda_sq
        )
        dt_bound = 1.0 / alpha
        tau_bound = float(np.min(params.eta)) * params.lambda_sq / (float(np.max(params.D)) * c_sup)

    report = ConstraintReport(
        dt=params.dt,
        tau=params.tau,
        dt_bound=dt_bound,
        tau_bound=tau_bound,
        undoped=undoped,
        outside_hypotheses=not params.is_uniform,
    )
    if undoped:
        report.notes.append("undoped: unconditionally stable")
    if not report.dt_ok:
        report.notes.append(f"dt={params.dt:.4g} exceeds bound {dt_bound:.4g}")
    if not report.tau_ok:
        report.notes.append(f"tau={params.tau:.4g} exceeds bound {tau_bound:.4g}")
    if report.outside_hypotheses:
        report.notes.append("non-constant D, p or m: bound monitors outside hypotheses")

    for note in report.notes:
        logger.debug(f"Constraint check: {note}")
    return report


def m_bound_sequence(M0: float, alpha: float, dt: float, k: int) -> float:
    """M^k = M^0 (1 − αΔt)^{−k}"""
    if alpha < 0:
        raise ModelError(f"alpha must be nonnegative, got {alpha}")
    if alpha * dt >= 1.0:
        raise ModelError(f"Bound sequence requires alpha*dt < 1, got {alpha * dt:.4g}")
    if k < 0:
        raise ModelError(f"Step index must be nonnegative, got {k}")
    return float(M0 * (1.0 - alpha * dt) ** (-k))


# ---------------------------------------------------------------------- 边系数


def weighted_harmonic_mean(a_k: np.ndarray, a_l: np.ndarray, d_k: np.ndarray, d_l: np.ndarray) -> np.ndarray:
    """d_σ a_K a_L / (d_{K,σ} a_L + d_{L,σ} a_K)，任一侧为 0（或异号）时取 0"""
    a_k, a_l = np.broadcast_arrays(np.asarray(a_k, float), np.asarray(a_l, float))
    d_k = np.asarray(d_k, float).reshape((-1,) + (1,) * (a_k.ndim - 1))
    d_l = np.asarray(d_l, float).reshape((-1,) + (1,) * (a_k.ndim - 1))
    product = a_k * a_l
    positive = product > 0
    denominator = np.where(positive, d_k * a_l + d_l * a_k, 1.0)
    return np.where(positive, (d_k + d_l) * product / denominator, 0.0)


@dataclass(frozen=True)
class EdgeCoefficients:
    """逐边系数 D_σ、p_σ、η_σ、m⃗_σ"""

    D: np.ndarray
    p: np.ndarray
    eta: np.ndarray
    m: np.ndarray


def edge_coefficients(mesh: Mesh, params: ModelParams) -> EdgeCoefficients:
    """内部边用加权调和平均，边界边取所属单元的迹"""
    owners = mesh.owners
    D = params.D[owners].copy()
    p = params.p[owners].copy()
    m = params.m[owners].copy()

    interior = mesh.interior_edges
    if len(interior):
        k = mesh.edge_cells[interior, 0]
        l = mesh.edge_cells[interior, 1]
        dk = mesh.edge_dist[interior, 0]
        dl = mesh.edge_dist[interior, 1]
        D[interior] = weighted_harmonic_mean(params.D[k], params.D[l], dk, dl)
        p[interior] = weighted_harmonic_mean(params.p[k], params.p[l], dk, dl)
        m[interior] = weighted_harmonic_mean(params.m[k], params.m[l], dk, dl)

    if np.any(D <= 0):
        raise ModelError("Edge diffusion coefficient vanished")
    # η_σ 由 p_σ 重新计算
    eta = np.sqrt(1.0 - p**2)
    return EdgeCoefficients(D=D, p=p, eta=eta, m=m)


@dataclass
class ProblemSetup:
    """一个完整的离散问题：网格、参数、边界数据与初始数据"""

    mesh: Mesh
    params: ModelParams
    boundary: BoundaryData
    initial: InitialData
    name: str = "problem"
    scales: Optional[object] = None

    def __post_init__(self):
        nc, nd = self.mesh.n_cells, self.mesh.n_dirichlet
        if self.params.n_cells != nc:
            raise ModelError(f"Parameters cover {self.params.n_cells} cells, mesh has {nc}")
        if self.boundary.n_dirichlet != nd:
            raise ModelError(f"Boundary data cover {self.boundary.n_dirichlet} edges, mesh has {nd}")
        if self.initial.n0.shape[0] != nc:
            raise ModelError(f"Initial data cover {self.initial.n0.shape[0]} cells, mesh has {nc}")
        for name in ("n_ref", "V_ref"):
            ref = getattr(self.boundary, name)
            if ref is not None and ref.shape != (nc,):
                raise ModelError(f"Reference '{name}' has shape {ref.shape}, expected ({nc},)")
        self.initial.check_sign_condition(self.params.m)

    @property
    def floating(self) -> bool:
        """无 Dirichlet 边时电势规范由均值固定"""
        return self.mesh.n_dirichlet == 0

    @cached_property
    def coefficients(self) -> EdgeCoefficients:
        return edge_coefficients(self.mesh, self.params)

    @cached_property
    def M0(self) -> float:
        return compute_m0(self.initial, self.boundary, self.params.doping, self.params.m)

    @cached_property
    def bounds(self) -> BoundConstants:
        return BoundConstants.from_params(self.params, self.M0)

    def with_params(self, params: ModelParams) -> "ProblemSetup":
        return ProblemSetup(self.mesh, params, self.boundary, self.initial, self.name, self.scales)

    def with_boundary(self, boundary: BoundaryData) -> "ProblemSetup":
        return ProblemSetup(self.mesh, self.params, boundary, self.initial, self.name, self.scales)

    def with_initial(self, initial: InitialData) -> "ProblemSetup":
        """换初始数据（续算时以上一稳态为初值，M^0 随之重算）"""
        return ProblemSetup(self.mesh, self.params, self.boundary, initial, self.name, self.scales)

"""诊断量：自旋投影、离散自由能与耗散、L^∞ 界监测、接触电流"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import xlogy

from ..utils.exceptions import ContactError, ConvergenceError, ModelError, NegativeDensityError
from ..utils.logger import get_logger
from .assembly import edge_fluxes, harmonic_extension
from .flux import EdgeFluxSet
from .mesh import EdgeKind, MeshField, h1_seminorm
from .model import BoundConstants, EdgeCoefficients, ModelParams, ProblemSetup, edge_coefficients
from .state import State

logger = get_logger(__name__)

# 监测比较的绝对容差
MONITOR_TOL = 1e-10
# 小于该值的负密度视为舍入误差
NEGATIVE_TOL = 1e-12

FieldLike = Union[MeshField, np.ndarray]


def _cells(values: FieldLike) -> np.ndarray:
    return values.cells if isinstance(values, MeshField) else np.asarray(values, dtype=float)


def project_updown(n0: FieldLike, n: FieldLike, m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """n± = ½n0 ± n⃗·m⃗"""
    n0, n = _cells(n0), _cells(n).reshape(-1, 3)
    parallel = np.einsum("ij,ij->i", n, np.asarray(m, dtype=float).reshape(-1, 3))
    return 0.5 * n0 + parallel, 0.5 * n0 - parallel


def project_perp(n: FieldLike, m: np.ndarray) -> np.ndarray:
    """n⃗_⊥ = n⃗ − (n⃗·m⃗)m⃗"""
    n = _cells(n).reshape(-1, 3)
    m = np.asarray(m, dtype=float).reshape(-1, 3)
    parallel = np.einsum("ij,ij->i", n, m)
    return n - parallel[:, None] * m


def _nonnegative(values: np.ndarray, name: str) -> np.ndarray:
    minimum = float(values.min()) if values.size else 0.0
    if minimum < -NEGATIVE_TOL:
        raise NegativeDensityError(f"{name} has negative value {minimum:.3e}")
    return np.maximum(values, 0.0)


def energy_reference(setup: ProblemSetup) -> Tuple[MeshField, MeshField]:
    """自由能参考 (n^D, V^D)：优先使用逐单元参考，否则为迹的离散调和延拓"""
    mesh, boundary = setup.mesh, setup.boundary
    n_ref = boundary.n_ref if boundary.n_ref is not None else harmonic_extension(mesh, boundary.n_trace)
    V_ref = boundary.V_ref if boundary.V_ref is not None else harmonic_extension(mesh, boundary.V_trace)
    return (
        MeshField(mesh, np.array(n_ref, dtype=float), boundary.n_trace.copy()),
        MeshField(mesh, np.array(V_ref, dtype=float), boundary.V_trace.copy()),
    )


def free_energy(state: State, n_ref: MeshField, V_ref: MeshField, lambda_d: float, m: np.ndarray) -> float:
    """离散自由能 E = Σ_± Σ_K m(K) H(n±_K | n^D_K/2) + (λ_D²/2)|V − V^D|²_{1,2}

    约定 0·log 0 = 0。
    """
    mesh = state.mesh
    n_plus, n_minus = project_updown(state.n0, state.n, m)
    n_plus = _nonnegative(n_plus, "n+")
    n_minus = _nonnegative(n_minus, "n-")
    half_ref = 0.5 * n_ref.cells
    if np.any(half_ref <= 0):
        raise ModelError("Free energy reference density must be positive")

    entropy = 0.0
    for density in (n_plus, n_minus):
        local = xlogy(density, density) - density - xlogy(density, half_ref) + half_ref
        entropy += float(np.sum(mesh.areas * local))

    difference = MeshField(mesh, state.V.cells - V_ref.cells, np.zeros(mesh.n_dirichlet))
    electric = 0.5 * lambda_d**2 * h1_seminorm(difference) ** 2
    return entropy + electric


def _edge_updown(state: State, m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """n±_{K,σ}：边对侧单元用自身 m⃗ 投影，Dirichlet 边为 n^D/2"""
    mesh = state.mesh
    other = mesh.owners.copy()
    interior = mesh.interior_edges
    other[interior] = mesh.edge_cells[interior, 1]
    parallel = np.einsum("ij,ij->i", state.n.edge_values(), m[other])
    n0_edge = state.n0.edge_values()
    return 0.5 * n0_edge + parallel, 0.5 * n0_edge - parallel


def dissipation_rate(
    state: State,
    params: ModelParams,
    coefficients: Optional[EdgeCoefficients] = None,
) -> float:
    """(Δt/2) Σ_± Σ_σ D_σ(1 ± p_σ) τ_σ min(n±_K, n±_{K,σ}) (D(log n± + V)_{K,σ})²

    min(...) = 0 的边贡献为 0。
    """
    mesh = state.mesh
    coefficients = coefficients or edge_coefficients(mesh, params)
    owners = mesh.owners
    cell_plus, cell_minus = project_updown(state.n0, state.n, params.m)
    edge_plus, edge_minus = _edge_updown(state, params.m)
    dV = state.V.differences()
    active = mesh.edge_kind != EdgeKind.NEUMANN

    total = 0.0
    for sign, cell, edge in ((1.0, cell_plus, edge_plus), (-1.0, cell_minus, edge_minus)):
        cell = _nonnegative(cell, "n+" if sign > 0 else "n-")
        edge = _nonnegative(edge, "n+" if sign > 0 else "n-")
        lower = np.minimum(cell[owners], edge)
        usable = active & (lower > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            gradient = np.where(usable, np.log(edge) - np.log(cell[owners]) + dV, 0.0)
        weight = coefficients.D * (1.0 + sign * coefficients.p) * mesh.transmissibility
        total += float(np.sum(np.where(usable, weight * lower * gradient**2, 0.0)))
    return 0.5 * params.dt * total


@dataclass
class BoundFlags:
    """L^∞ 界检查结果"""

    min_np: float
    max_np: float
    min_nm: float
    max_nm: float
    max_n0: float
    max_nperp: float
    max_n: float
    M0: float
    Mk: float
    positivity: bool
    upper: bool
    n0_bound: bool
    perp: bool
    n_bound: bool

    @property
    def passed(self) -> bool:
        return self.positivity and self.upper and self.n0_bound and self.perp and self.n_bound

    def failed(self) -> List[str]:
        names = ("positivity", "upper", "n0_bound", "perp", "n_bound")
        return [name for name in names if not getattr(self, name)]


def bound_monitor(state: State, constants: BoundConstants, k: int, m: np.ndarray) -> BoundFlags:
    """检查 0 ≤ n± ≤ M^0、n0 ≤ 2M^0、|n⃗_⊥| ≤ M^k、|n⃗| ≤ 2M^k（容差 1e-10）"""
    n_plus, n_minus = project_updown(state.n0, state.n, m)
    perp = np.linalg.norm(project_perp(state.n, m), axis=1)
    magnitude = np.linalg.norm(state.n.cells, axis=1)
    M0 = constants.M0
    Mk = constants.M(k) if constants.stable else float("inf")
    tol = MONITOR_TOL

    min_np, max_np = float(n_plus.min()), float(n_plus.max())
    min_nm, max_nm = float(n_minus.min()), float(n_minus.max())
    max_n0 = float(state.n0.cells.max())
    return BoundFlags(
        min_np=min_np,
        max_np=max_np,
        min_nm=min_nm,
        max_nm=max_nm,
        max_n0=max_n0,
        max_nperp=float(perp.max()),
        max_n=float(magnitude.max()),
        M0=M0,
        Mk=Mk,
        positivity=min(min_np, min_nm) >= -tol,
        upper=max(max_np, max_nm) <= M0 + tol,
        n0_bound=max_n0 <= 2.0 * M0 + tol,
        perp=float(perp.max()) <= Mk + tol,
        n_bound=float(magnitude.max()) <= 2.0 * Mk + tol,
    )


def _contact_edges(state: State, contact: Union[str, Sequence[int], np.ndarray]) -> np.ndarray:
    mesh = state.mesh
    if isinstance(contact, str):
        if contact not in mesh.contacts:
            raise ContactError(f"Unknown contact '{contact}'")
        return mesh.contacts[contact]
    edges = np.asarray(contact, dtype=np.int64)
    if np.any(mesh.edge_kind[edges] != EdgeKind.DIRICHLET):
        raise ContactError("Contact contains non-Dirichlet edges")
    return edges


def contact_current(
    state: State,
    fluxset: EdgeFluxSet,
    contact: Union[str, Sequence[int], np.ndarray],
    scale: float = 1.0,
) -> float:
    """流出接触的电荷电流 Σ_{σ∈contact} j_{0,K_σ,σ} × scale"""
    edges = _contact_edges(state, contact)
    return scale * float(fluxset.j0[edges].sum())


def contact_spin_current(
    state: State,
    fluxset: EdgeFluxSet,
    contact: Union[str, Sequence[int], np.ndarray],
    scale: float = 1.0,
) -> np.ndarray:
    """流出接触的自旋电流向量 Σ j⃗ × scale"""
    edges = _contact_edges(state, contact)
    return scale * fluxset.j[edges].sum(axis=0)


@dataclass
class DiagnosticsRecord:
    """单步诊断记录"""

    k: int
    t: float
    energy: float
    dissipation: float
    bounds: BoundFlags
    energy_monotone: bool = True
    dissipation_ok: bool = True
    currents: Dict[str, float] = field(default_factory=dict)
    spin_currents: Dict[str, Tuple[float, float, float]] = field(default_factory=dict)
    outside_hypotheses: bool = False

    @property
    def flags(self) -> str:
        failed = self.bounds.failed()
        if not self.energy_monotone:
            failed.append("energy_monotone")
        if not self.dissipation_ok:
            failed.append("dissipation")
        text = "|".join(failed) if failed else "ok"
        return f"{text}*" if self.outside_hypotheses else text

    def to_row(self) -> Dict[str, object]:
        row: Dict[str, object] = {
            "k": self.k,
            "t": self.t,
            "E": self.energy,
            "dissipation": self.dissipation,
            "min_np": self.bounds.min_np,
            "max_np": self.bounds.max_np,
            "min_nm": self.bounds.min_nm,
            "max_nm": self.bounds.max_nm,
            "max_nperp": self.bounds.max_nperp,
            "Mk": self.bounds.Mk,
            "flags": self.flags,
        }
        for name, value in self.currents.items():
            row[f"current_{name}"] = value
        return row


class DiagnosticsMonitor:
    """time_march 的诊断钩子：每个接受的时间步生成一条 DiagnosticsRecord

    违反监测条件时记录并警告，只有出现 NaN 时中止。
    能量单调与耗散判据的容差缺省为 10·tolerance（非线性求解器的收敛容差）。
    """

    def __init__(
        self,
        setup: ProblemSetup,
        current_scale: float = 1.0,
        contacts: Optional[Sequence[str]] = None,
        energy_slack: Optional[float] = None,
        track_energy: bool = True,
        tolerance: float = 1e-10,
    ):
        self.setup = setup
        self.current_scale = current_scale
        self.contacts = list(contacts) if contacts is not None else sorted(setup.mesh.contacts)
        self.energy_slack = 10.0 * tolerance if energy_slack is None else energy_slack
        self.track_energy = track_energy
        self.records: List[DiagnosticsRecord] = []
        self.constants = setup.bounds
        self.bounds_outside = not setup.params.is_uniform
        self.energy_outside = self.bounds_outside or not setup.boundary.is_equilibrium_consistent()
        self._reference: Optional[Tuple[MeshField, MeshField]] = None
        if track_energy:
            self._reference = energy_reference(setup)
        self._warned = set()

        logger.debug(
            f"DiagnosticsMonitor initialized (contacts={self.contacts}, "
            f"outside_hypotheses={self.bounds_outside or self.energy_outside})"
        )

    def _warn_once(self, key: str, message: str) -> None:
        if key not in self._warned:
            self._warned.add(key)
            logger.warning(message)

    def evaluate(self, state: State, previous: Optional[DiagnosticsRecord] = None) -> DiagnosticsRecord:
        setup = self.setup
        params = setup.params

        energy = dissipation = float("nan")
        if self._reference is not None:
            n_ref, V_ref = self._reference
            try:
                energy = free_energy(state, n_ref, V_ref, params.lambda_d, params.m)
                if previous is not None:
                    dissipation = dissipation_rate(state, params, setup.coefficients)
            except NegativeDensityError as e:
                logger.warning(f"Energy skipped at k={state.k}: {e}")

        bounds = bound_monitor(state, self.constants, state.k, params.m)
        record = DiagnosticsRecord(
            k=state.k,
            t=state.t,
            energy=energy,
            dissipation=dissipation,
            bounds=bounds,
            outside_hypotheses=self.bounds_outside or self.energy_outside,
        )
        if previous is not None and np.isfinite(energy) and np.isfinite(previous.energy):
            record.energy_monotone = energy <= previous.energy + self.energy_slack
            record.dissipation_ok = energy + dissipation <= previous.energy + self.energy_slack

        if self.contacts:
            fluxes = edge_fluxes(state, setup)
            for name in self.contacts:
                record.currents[name] = contact_current(state, fluxes, name, self.current_scale)
                spin = contact_spin_current(state, fluxes, name, self.current_scale)
                record.spin_currents[name] = (float(spin[0]), float(spin[1]), float(spin[2]))
        return record

    def __call__(self, trajectory, state: State, prev: Optional[State]) -> None:
        previous = self.records[-1] if (self.records and prev is not None) else None
        record = self.evaluate(state, previous)

        checks = [record.bounds.max_np, record.bounds.max_nm, record.bounds.max_nperp]
        if self.track_energy and record.bounds.positivity:
            checks.append(record.energy)
            if previous is not None:
                checks.append(record.dissipation)
        if not np.all(np.isfinite(checks)):
            logger.error(f"Non-finite diagnostics at k={state.k}")
            raise ConvergenceError(f"Non-finite diagnostics at step k={state.k}", trajectory=trajectory)

        if not record.bounds.passed:
            self._warn_once(
                "bounds",
                f"Bound monitor violated at k={state.k}: {record.bounds.failed()}"
                + (" (outside hypotheses)" if self.bounds_outside else ""),
            )
        if not (record.energy_monotone and record.dissipation_ok):
            self._warn_once(
                "energy",
                f"Free energy not dissipated at k={state.k}"
                + (" (outside hypotheses)" if self.energy_outside else ""),
            )

        self.records.append(record)
        trajectory.records.append(record)

    @property
    def energies(self) -> np.ndarray:
        return np.array([r.energy for r in self.records])


@dataclass
class DecayFit:
    """log E^k ≈ intercept − rate·t 的最小二乘拟合"""

    rate: float
    intercept: float
    residual: float
    points: int


def fit_exponential_decay(
    times: np.ndarray,
    energies: np.ndarray,
    floor_ratio: float = 1e-10,
) -> DecayFit:
    """在达到平台（E ≤ floor_ratio·E^0）之前的窗口上拟合指数衰减率"""
    times = np.asarray(times, dtype=float)
    energies = np.asarray(energies, dtype=float)
    if energies.size == 0 or energies[0] <= 0:
        return DecayFit(rate=float("nan"), intercept=float("nan"), residual=float("nan"), points=0)

    floor = floor_ratio * energies[0]
    below = np.flatnonzero(~(energies > floor))
    end = int(below[0]) if below.size else energies.size
    if end < 2:
        return DecayFit(rate=float("nan"), intercept=float(np.log(energies[0])), residual=0.0, points=end)

    log_e = np.log(energies[:end])
    slope, intercept = np.polyfit(times[:end], log_e, 1)
    residual = float(np.sqrt(np.mean((log_e - (slope * times[:end] + intercept)) ** 2)))
    return DecayFit(rate=float(-slope), intercept=float(intercept), residual=residual, points=end)

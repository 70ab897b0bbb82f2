"""隐式 Euler 时间推进：Newton 全耦合求解、线性化不动点迭代与稳态判定"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres, splu, spsolve

from ..utils.exceptions import ConfigError, ConvergenceError, ModelError, SingularSystemError
from ..utils.logger import get_logger
from .assembly import (
    assemble_jacobian,
    assemble_residual,
    harmonic_extension,
    poisson_matrix,
    solve_poisson,
    transport_system,
)
from .mesh import MeshField
from .model import ModelParams, ProblemSetup
from .state import N_FIELDS, State

logger = get_logger(__name__)

SOLVER_KINDS = ("newton", "picard")
LINEAR_SOLVERS = ("splu", "gmres")

REASON_STEADY = "steady"
REASON_MAX_STEPS = "max-steps"
REASON_FAILURE = "solver-failure"


@dataclass
class SolverConfig:
    """求解器配置"""

    kind: str = "newton"
    newton_tol: float = 1e-10
    max_newton_iter: int = 50
    damping_floor: float = 2.0**-10
    linear_solver: str = "splu"
    gmres_tol: float = 1e-13
    gmres_restart: int = 50
    steady_threshold: float = 1e-5
    max_steps: int = 2000
    picard_tol: float = 1e-10
    picard_max_iter: int = 500
    store_every: int = 1

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise ConfigError(f"Unknown solver kind '{self.kind}', expected one of {SOLVER_KINDS}")
        if self.linear_solver not in LINEAR_SOLVERS:
            raise ConfigError(
                f"Unknown linear solver '{self.linear_solver}', expected one of {LINEAR_SOLVERS}"
            )
        for name in ("newton_tol", "steady_threshold", "picard_tol", "gmres_tol"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"Solver setting '{name}' must be positive")
        for name in ("max_newton_iter", "max_steps", "picard_max_iter"):
            if getattr(self, name) < 1:
                raise ConfigError(f"Solver setting '{name}' must be >= 1")
        if not 0 < self.damping_floor <= 1:
            raise ConfigError("Damping floor must lie in (0, 1]")
        if self.store_every < 0:
            raise ConfigError("store_every must be >= 0")

    @property
    def tolerance(self) -> float:
        return self.newton_tol if self.kind == "newton" else self.picard_tol


@dataclass
class SolveStats:
    """单个时间步的求解统计"""

    iterations: int = 0
    residual_norm: float = float("nan")
    min_damping: float = 1.0


@dataclass
class Trajectory:
    """时间推进结果

    states 按 store_every 抽样保存（总是包含首末状态），records 为每步诊断记录。
    """

    states: List[State] = field(default_factory=list)
    records: List[object] = field(default_factory=list)
    iterations: List[int] = field(default_factory=list)
    reason: str = ""
    final: Optional[State] = None

    @property
    def steps(self) -> int:
        return 0 if self.final is None else self.final.k

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def converged(self) -> bool:
        return self.reason == REASON_STEADY


Hook = Callable[[Trajectory, State, Optional[State]], None]


# ---------------------------------------------------------------------- 线性求解


def _block_preconditioner(matrix: sp.csr_matrix) -> sp.csr_matrix:
    coo = matrix.tocoo()
    nc = matrix.shape[0] // N_FIELDS
    same = coo.row // N_FIELDS == coo.col // N_FIELDS
    blocks = np.zeros((nc, N_FIELDS, N_FIELDS))
    np.add.at(
        blocks,
        (coo.row[same] // N_FIELDS, coo.row[same] % N_FIELDS, coo.col[same] % N_FIELDS),
        coo.data[same],
    )
    try:
        inverses = np.linalg.inv(blocks)
    except np.linalg.LinAlgError as e:
        raise SingularSystemError(f"Singular diagonal block in preconditioner: {e}") from e
    return sp.block_diag(list(inverses), format="csr")


def linear_solve(matrix: sp.csr_matrix, rhs: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    """稀疏直接分解（默认）或带块对角预条件的重启 GMRES"""
    if cfg.linear_solver == "gmres" and matrix.shape[0] % N_FIELDS == 0:
        M = _block_preconditioner(matrix)
        preconditioner = LinearOperator(matrix.shape, matvec=M.dot)
        solution, info = gmres(
            matrix,
            rhs,
            rtol=cfg.gmres_tol,
            atol=0.0,
            restart=cfg.gmres_restart,
            maxiter=max(10, matrix.shape[0]),
            M=preconditioner,
        )
        if info != 0:
            raise ConvergenceError(f"GMRES did not converge (info={info})")
        return solution
    try:
        return splu(matrix.tocsc()).solve(rhs)
    except RuntimeError as e:
        raise SingularSystemError(f"Sparse factorization failed: {e}") from e


# ---------------------------------------------------------------------- Newton


def newton_step_solve(
    prev: State,
    setup: ProblemSetup,
    cfg: SolverConfig,
    stats: Optional[SolveStats] = None,
) -> State:
    """一个隐式 Euler 步的 Newton 求解

    初值取上一时间层；残差范数不下降时步长减半，低于 damping_floor 判为失败。

    Raises:
        ConvergenceError: 达到最大迭代数或阻尼下限
        SingularSystemError: 线性系统奇异
    """
    stats = stats if stats is not None else SolveStats()
    state = prev.advanced(setup.params.dt)
    u = state.pack()
    F = assemble_residual(state, prev, setup)
    norm = float(np.max(np.abs(F)))

    for iteration in range(cfg.max_newton_iter + 1):
        stats.iterations, stats.residual_norm = iteration, norm
        logger.debug(f"Newton step k={state.k} iter={iteration} |F|={norm:.3e}")
        if norm <= cfg.newton_tol:
            return state
        if iteration == cfg.max_newton_iter:
            break

        J = assemble_jacobian(state, prev, setup)
        delta = linear_solve(J, -F, cfg)
        damping = 1.0
        while True:
            trial = state.with_unknowns(u + damping * delta)
            F_trial = assemble_residual(trial, prev, setup)
            norm_trial = float(np.max(np.abs(F_trial)))
            if np.isfinite(norm_trial) and norm_trial < norm:
                break
            damping /= 2.0
            if damping < cfg.damping_floor:
                raise ConvergenceError(
                    f"Newton damping fell below {cfg.damping_floor:.3g} at step k={state.k}",
                    residual_norm=norm,
                    iterations=iteration,
                )
        if damping < 1.0:
            logger.debug(f"Newton damping {damping:.4g}")
        stats.min_damping = min(stats.min_damping, damping)
        state, u, F, norm = trial, u + damping * delta, F_trial, norm_trial

    raise ConvergenceError(
        f"Newton did not converge in {cfg.max_newton_iter} iterations at step k={state.k}",
        residual_norm=norm,
        iterations=cfg.max_newton_iter,
    )


# ---------------------------------------------------------------------- 线性化不动点


def picard_mu(params: ModelParams) -> float:
    """稳定化参数 μ = (D‖C‖_∞/λ_D²) max(1/η², (1+p)/2) Δt"""
    D = float(np.max(params.D))
    eta_min = float(np.min(params.eta))
    p_max = float(np.max(params.p))
    return D * params.doping_sup / params.lambda_sq * max(1.0 / eta_min**2, (1.0 + p_max) / 2.0) * params.dt


def picard_solve(
    prev: State,
    setup: ProblemSetup,
    cfg: SolverConfig,
    stats: Optional[SolveStats] = None,
) -> State:
    """线性化映射 ρ ↦ n 的不动点迭代

    每次迭代先以 ρ0 求解 Poisson，再求解固定 V 的线性自旋-电荷系统；
    ‖n − ρ‖_∞ ≤ picard_tol 时停止。不动点处稳定化项消失，即为格式解。
    """
    stats = stats if stats is not None else SolveStats()
    mesh, params, boundary = setup.mesh, setup.params, setup.boundary
    mu = picard_mu(params)
    base = prev.advanced(params.dt)
    rho = np.column_stack([prev.n0.cells, prev.n.cells])

    def _with_density(N: np.ndarray) -> State:
        V = solve_poisson(mesh, N[:, 0], params.doping, params.lambda_d, boundary.V_trace, setup.floating)
        return State(
            n0=base.n0.with_cells(N[:, 0]),
            n=base.n.with_cells(N[:, 1:]),
            V=V,
            k=base.k,
            t=base.t,
        )

    change = float("inf")
    for iteration in range(1, cfg.picard_max_iter + 1):
        linearized = _with_density(rho)
        matrix, rhs = transport_system(linearized, prev, setup, mu, rho)
        try:
            N = spsolve(matrix.tocsc(), rhs).reshape(-1, 4)
        except RuntimeError as e:
            raise SingularSystemError(f"Transport system is singular: {e}") from e
        change = float(np.max(np.abs(N - rho)))
        rho = N
        stats.iterations, stats.residual_norm = iteration, change
        logger.debug(f"Picard step k={base.k} iter={iteration} |n-rho|={change:.3e}")
        if not np.isfinite(change):
            break
        if change <= cfg.picard_tol:
            return _with_density(rho)

    raise ConvergenceError(
        f"Picard iteration stagnated at step k={base.k} (|n-rho|={change:.3e})",
        residual_norm=change,
        iterations=stats.iterations,
    )


def step_solve(prev: State, setup: ProblemSetup, cfg: SolverConfig, stats: Optional[SolveStats] = None) -> State:
    if cfg.kind == "picard":
        return picard_solve(prev, setup, cfg, stats)
    return newton_step_solve(prev, setup, cfg, stats)


# ---------------------------------------------------------------------- 时间推进


def time_march(
    initial: State,
    setup: ProblemSetup,
    cfg: SolverConfig,
    hooks: Sequence[Hook] = (),
) -> Trajectory:
    """反复求解时间步直至稳态或达到最大步数

    稳态判据：网格加权 ℓ² 步差 ‖u^k − u^{k−1}‖ < steady_threshold。
    失败时抛出 ConvergenceError，异常的 trajectory 属性携带已完成部分。
    """
    setup.initial.check_sign_condition(setup.params.m)
    trajectory = Trajectory(states=[initial], final=initial)
    for hook in hooks:
        hook(trajectory, initial, None)

    prev = initial
    for _ in range(cfg.max_steps):
        stats = SolveStats()
        try:
            state = step_solve(prev, setup, cfg, stats)
        except (ConvergenceError, SingularSystemError) as e:
            trajectory.reason = REASON_FAILURE
            logger.error(f"Step k={prev.k + 1} failed: {e}")
            if isinstance(e, ConvergenceError):
                e.trajectory = trajectory
                raise
            raise ConvergenceError(
                str(e), iterations=stats.iterations, trajectory=trajectory
            ) from e

        if not state.is_finite():
            trajectory.reason = REASON_FAILURE
            raise ConvergenceError(
                f"Non-finite state at step k={state.k}", trajectory=trajectory
            )

        trajectory.iterations.append(stats.iterations)
        trajectory.final = state
        if cfg.store_every and state.k % cfg.store_every == 0:
            trajectory.states.append(state)
        for hook in hooks:
            hook(trajectory, state, prev)

        change = state.difference_norm(prev)
        logger.debug(f"Accepted step k={state.k} t={state.t:.4g} change={change:.3e}")
        if change < cfg.steady_threshold:
            trajectory.reason = REASON_STEADY
            logger.info(f"Steady state reached at k={state.k} (change={change:.3e})")
            break
        prev = state
    else:
        trajectory.reason = REASON_MAX_STEPS
        logger.warning(f"Reached max steps {cfg.max_steps} without steady state")

    if trajectory.states[-1] is not trajectory.final:
        trajectory.states.append(trajectory.final)
    return trajectory


# ---------------------------------------------------------------------- 热平衡


def solve_equilibrium(setup: ProblemSetup, cfg: Optional[SolverConfig] = None) -> State:
    """热平衡参考态：n± = exp(c − V)，V 满足非线性 Poisson 方程

    −λ_D² Σ τ_σ D V_{K,σ} = m(K)(2 e^{c − V_K} − C_K)，c = log(n^D/2) + V^D。

    Raises:
        ModelError: 边界数据不满足 log(n^D/2) + V^D 为常数
    """
    cfg = cfg or SolverConfig()
    mesh, params, boundary = setup.mesh, setup.params, setup.boundary
    if mesh.n_dirichlet == 0:
        raise ModelError("Equilibrium reference requires Dirichlet contacts")
    if not boundary.is_equilibrium_consistent():
        raise ModelError("Boundary data are not equilibrium consistent (log(n/2)+V not constant)")
    c = float(boundary.quasi_fermi[0])

    matrix = poisson_matrix(mesh, params.lambda_sq)
    load = np.bincount(
        mesh.owners[mesh.dirichlet_edges],
        weights=params.lambda_sq * mesh.transmissibility[mesh.dirichlet_edges] * boundary.V_trace,
        minlength=mesh.n_cells,
    )
    areas = mesh.areas

    def residual(V: np.ndarray) -> np.ndarray:
        return matrix @ V - load - areas * (2.0 * np.exp(c - V) - params.doping)

    positive = params.doping > 0
    V = harmonic_extension(mesh, boundary.V_trace)
    V[positive] = c - np.log(params.doping[positive] / 2.0)
    G = residual(V)
    norm = float(np.max(np.abs(G)))
    for iteration in range(cfg.max_newton_iter):
        logger.debug(f"Equilibrium iter={iteration} |G|={norm:.3e}")
        if norm <= cfg.newton_tol:
            break
        J = matrix + sp.diags(2.0 * areas * np.exp(c - V))
        delta = spsolve(J.tocsc(), -G)
        damping = 1.0
        while True:
            trial = V + damping * delta
            G_trial = residual(trial)
            norm_trial = float(np.max(np.abs(G_trial)))
            if np.isfinite(norm_trial) and norm_trial < norm:
                break
            damping /= 2.0
            if damping < cfg.damping_floor:
                raise ConvergenceError(
                    "Equilibrium Newton damping floor reached", residual_norm=norm, iterations=iteration
                )
        V, G, norm = trial, G_trial, norm_trial
    else:
        if norm > cfg.newton_tol:
            raise ConvergenceError(
                "Equilibrium Newton did not converge", residual_norm=norm, iterations=cfg.max_newton_iter
            )

    n0 = 2.0 * np.exp(c - V)
    logger.info(f"Equilibrium reference solved (|G|={norm:.3e})")
    return State(
        n0=MeshField(mesh, n0, boundary.n_trace.copy()),
        n=MeshField(mesh, np.zeros((mesh.n_cells, 3)), boundary.spin_trace),
        V=MeshField(mesh, V, boundary.V_trace.copy()),
    )

"""MESFET 实验驱动 - 稳态、偏置续算、IV 扫描、开关瞬态与自由能衰减"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config.run_config import RunConfig, dump_run_config
from ..core.assembly import edge_fluxes, initial_state
from ..core.diagnostics import (
    DecayFit,
    DiagnosticsMonitor,
    DiagnosticsRecord,
    contact_current,
    energy_reference,
    fit_exponential_decay,
    free_energy,
)
from ..core.mesh import Mesh
from ..core.model import ProblemSetup
from ..core.solver import SolverConfig, Trajectory, solve_equilibrium, time_march
from ..core.state import State
from ..data.device_spec import BiasPoint, DeviceSpec, GateState
from ..data.parsers.mesh_parser import read_mesh
from ..utils.exceptions import ConvergenceError, NegativeDensityError, SpinDriftError
from ..utils.file_utils import FieldWriter
from ..utils.logger import get_logger
from .mesfet_builder import DRAIN, build_mesfet, continue_from, rebias_setup, with_reference

logger = get_logger(__name__)

IV_HEADER = ["V_G", "V_D", "I_A_per_m", "iterations", "E_final", "status"]
TRANSIENT_HEADER = ["k", "t_ps", "I_A_per_m"]
ENERGY_HEADER = ["k", "t", "E", "dissipation"]


# ---------------------------------------------------------------------- 结果类型


@dataclass
class SteadyResult:
    """一次稳态推进的结果（电流单位 A/m）"""

    setup: ProblemSetup
    trajectory: Trajectory
    records: List[DiagnosticsRecord]
    currents: Dict[str, float]

    @property
    def final(self) -> State:
        return self.trajectory.final

    @property
    def drain_current(self) -> float:
        return self.currents.get(DRAIN, float("nan"))

    @property
    def reason(self) -> str:
        return self.trajectory.reason

    @property
    def iterations(self) -> int:
        return int(sum(self.trajectory.iterations))

    @property
    def final_energy(self) -> float:
        return self.records[-1].energy if self.records else float("nan")


@dataclass
class IVRow:
    """IV 表的一行，失败点的电流为 NaN"""

    gate: float
    drain: float
    current: float
    iterations: int = 0
    energy: float = float("nan")
    status: str = ""

    @property
    def failed(self) -> bool:
        return not math.isfinite(self.current)

    def to_row(self) -> List[Any]:
        return [self.gate, self.drain, self.current, self.iterations, self.energy, self.status]


@dataclass
class IVTable:
    """按 (栅压序号, 漏压序号) 排序的 IV 数据"""

    ferromagnetic: bool
    rows: List[IVRow] = field(default_factory=list)

    @property
    def gates(self) -> List[float]:
        seen: List[float] = []
        for row in self.rows:
            if row.gate not in seen:
                seen.append(row.gate)
        return seen

    def curve(self, gate: float) -> Tuple[np.ndarray, np.ndarray]:
        """某一栅压下的 (V_D, I)"""
        rows = [row for row in self.rows if row.gate == gate]
        return np.array([r.drain for r in rows]), np.array([r.current for r in rows])

    @property
    def failures(self) -> int:
        return sum(1 for row in self.rows if row.failed)


@dataclass
class TransientSeries:
    """开态到关态切换后的漏极电流时间序列"""

    steps: np.ndarray
    times_ps: np.ndarray
    currents: np.ndarray
    open_current: float
    reason: str
    records: List[DiagnosticsRecord] = field(default_factory=list)


@dataclass
class EnergySeries:
    """零偏置自由能序列及指数拟合"""

    steps: np.ndarray
    times: np.ndarray
    energies: np.ndarray
    dissipation: np.ndarray
    fit: DecayFit
    reason: str
    floor_ratio: float = 1e-10

    @property
    def floor_reached(self) -> bool:
        return bool(self.energies.size and np.nanmin(self.energies) <= self.floor_ratio * self.energies[0])

    def monotone(self, slack: float = 0.0) -> bool:
        """平台之前 E^k 单调不增"""
        floor = self.floor_ratio * self.energies[0]
        below = np.flatnonzero(self.energies <= floor)
        end = int(below[0]) + 1 if below.size else self.energies.size
        return bool(np.all(np.diff(self.energies[:end]) <= slack))


# ---------------------------------------------------------------------- 基本操作


def drain_current(state: State, setup: ProblemSetup) -> float:
    """漏极流出电流 (A/m)"""
    scale = setup.scales.current if setup.scales is not None else 1.0
    return contact_current(state, edge_fluxes(state, setup), DRAIN, scale)


def run_steady(
    setup: ProblemSetup,
    cfg: SolverConfig,
    start: Optional[State] = None,
    track_energy: bool = True,
) -> SteadyResult:
    """
    时间推进至稳态并记录诊断

    Args:
        setup: 离散问题
        cfg: 求解器配置
        start: 初始状态（缺省由初始数据与初始 Poisson 求解构造）
        track_energy: 是否计算自由能与耗散

    Returns:
        SteadyResult

    Raises:
        ConvergenceError: 时间步求解失败（携带已完成的 trajectory）
    """
    start = start if start is not None else initial_state(setup)
    scale = setup.scales.current if setup.scales is not None else 1.0
    monitor = DiagnosticsMonitor(setup, current_scale=scale, track_energy=track_energy, tolerance=cfg.tolerance)
    trajectory = time_march(start, setup, cfg, hooks=[monitor])
    currents = dict(monitor.records[-1].currents) if monitor.records else {}
    logger.info(
        f"Run '{setup.name}' finished after {trajectory.steps} steps ({trajectory.reason}), "
        f"drain current {currents.get(DRAIN, float('nan')):.4e} A/m"
    )
    return SteadyResult(setup=setup, trajectory=trajectory, records=monitor.records, currents=currents)


def ramp_to_bias(
    spec: DeviceSpec,
    bias: BiasPoint,
    setup: ProblemSetup,
    cfg: SolverConfig,
    ramp_steps: int = 0,
    track_energy: bool = True,
) -> SteadyResult:
    """
    经由中间漏压逐级续算到目标偏置

    漏压从 0 等分到 V_D，每级推进到稳态后作为下一级的初值。

    Args:
        spec: 器件描述
        bias: 目标偏置
        setup: 同一网格上的任一偏置问题
        cfg: 求解器配置
        ramp_steps: 中间级数（0 表示直接求解）
        track_energy: 是否计算自由能

    Returns:
        最后一级的 SteadyResult
    """
    drains = np.linspace(0.0, bias.drain, ramp_steps + 1) if ramp_steps > 0 else np.array([bias.drain])
    result: Optional[SteadyResult] = None
    for level, drain in enumerate(drains):
        stage = rebias_setup(setup, spec, bias.with_drain(float(drain)))
        if result is None:
            result = run_steady(stage, cfg, track_energy=track_energy)
        else:
            stage, start = continue_from(stage, result.final)
            result = run_steady(stage, cfg, start=start, track_energy=track_energy)
        if result.reason != "steady":
            logger.warning(f"Ramp level {level} (V_D={drain:+.3g} V) stopped with '{result.reason}'")
    return result


def state_energy(state: State, setup: ProblemSetup) -> float:
    """状态相对 setup 能量参考的自由能；n± 出现负值时为 NaN"""
    n_ref, V_ref = energy_reference(setup)
    try:
        return free_energy(state, n_ref, V_ref, setup.params.lambda_d, setup.params.m)
    except NegativeDensityError as e:
        logger.warning(f"Final energy skipped for '{setup.name}': {e}")
        return float("nan")


def _sweep_curve(
    spec: DeviceSpec,
    base: BiasPoint,
    setup: ProblemSetup,
    gate: float,
    drains: Sequence[float],
    cfg: SolverConfig,
    continuation: bool,
) -> List[IVRow]:
    rows: List[IVRow] = []
    previous: Optional[State] = None
    gate_bias = base.with_gate(gate, base.gate_state)
    for drain in drains:
        stage = rebias_setup(setup, spec, gate_bias.with_drain(drain))
        try:
            if continuation and previous is not None:
                stage, start = continue_from(stage, previous)
                result = run_steady(stage, cfg, start=start, track_energy=False)
            else:
                result = run_steady(stage, cfg, track_energy=False)
        except SpinDriftError as e:
            logger.error(f"Sweep point V_G={gate:+.3g} V, V_D={drain:+.3g} V failed: {e}")
            rows.append(IVRow(gate=gate, drain=drain, current=float("nan"), status="failed"))
            previous = None
            continue

        previous = result.final
        rows.append(
            IVRow(
                gate=gate,
                drain=drain,
                current=result.drain_current,
                iterations=result.iterations,
                energy=state_energy(result.final, stage),
                status=result.reason,
            )
        )
        logger.info(f"Sweep point V_G={gate:+.3g} V, V_D={drain:+.3g} V: I={result.drain_current:.4e} A/m")
    return rows


def iv_sweep(
    spec: DeviceSpec,
    drain_voltages: Sequence[float],
    gate_voltages: Sequence[float],
    cfg: SolverConfig,
    base: Optional[BiasPoint] = None,
    mesh_density: Tuple[int, int] = (48, 16),
    dt: float = 0.05,
    mesh: Optional[Mesh] = None,
    workers: int = 1,
    continuation: bool = True,
) -> IVTable:
    """
    漏极电流-电压特性扫描

    每条栅压曲线沿漏压顺序续算；各曲线互相独立，可并行。
    单点失败记为 NaN，扫描继续。

    Args:
        spec: 器件描述
        drain_voltages: 漏压列表 (V)
        gate_voltages: 栅压列表 (V)
        cfg: 求解器配置
        base: 偏置模板（栅极状态、边界密度等）
        mesh_density: (nx, ny)
        dt: 无量纲时间步
        mesh: 外部网格
        workers: 并行曲线数
        continuation: 是否沿曲线续算

    Returns:
        按输入顺序排列的 IVTable
    """
    if not drain_voltages or not gate_voltages:
        raise ValueError("IV sweep needs nonempty drain and gate voltage lists")
    base = base or BiasPoint()
    setup = build_mesfet(spec, base, mesh_density=mesh_density, dt=dt, mesh=mesh)
    drains = [float(v) for v in drain_voltages]
    gates = [float(v) for v in gate_voltages]
    logger.info(f"IV sweep over {len(gates)} gate and {len(drains)} drain voltages ({workers} workers)")

    def task(gate: float) -> List[IVRow]:
        return _sweep_curve(spec, base, setup, gate, drains, cfg, continuation)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            curves = list(pool.map(task, gates))
    else:
        curves = [task(gate) for gate in gates]

    table = IVTable(ferromagnetic=spec.ferromagnetic, rows=[row for curve in curves for row in curve])
    if table.failures:
        logger.warning(f"IV sweep finished with {table.failures} failed points")
    return table


def transient_switch(
    spec: DeviceSpec,
    cfg: SolverConfig,
    bias: Optional[BiasPoint] = None,
    mesh_density: Tuple[int, int] = (48, 16),
    dt: float = 0.05,
    steps: int = 200,
    ramp_steps: int = 0,
    mesh: Optional[Mesh] = None,
    switch_dt: Optional[float] = None,
) -> TransientSeries:
    """
    开态稳态后在 t=0 将栅极切换到关态，记录漏极电流随物理时间 (ps) 的变化

    Args:
        spec: 器件描述
        cfg: 求解器配置
        bias: 开态偏置（V_D 取自此处）
        mesh_density: (nx, ny)
        dt: 开态稳态求解的无量纲时间步
        steps: 切换后的最大步数
        ramp_steps: 开态稳态的漏压续算级数
        mesh: 外部网格
        switch_dt: 切换后的时间步（缺省同 dt）

    Returns:
        TransientSeries，首个样本即开态稳态电流
    """
    bias = bias or BiasPoint()
    open_bias = bias.with_gate(bias.gate, GateState.OPEN)
    setup = build_mesfet(spec, open_bias, mesh_density=mesh_density, dt=dt, mesh=mesh)
    opened = ramp_to_bias(spec, open_bias, setup, cfg, ramp_steps=ramp_steps, track_energy=False)
    logger.info(f"Open-state drain current {opened.drain_current:.4e} A/m; switching gate to closed")

    closed_bias = bias.with_gate(bias.closed_extra, GateState.CLOSED)
    closed = rebias_setup(opened.setup, spec, closed_bias)
    closed = closed.with_params(closed.params.with_dt(switch_dt or dt))
    closed, start = continue_from(closed, opened.final)

    march_cfg = replace(cfg, max_steps=steps)
    try:
        switched = run_steady(closed, march_cfg, start=start, track_energy=False)
    except ConvergenceError as e:
        logger.error(f"Transient aborted: {e}")
        raise

    time_scale = closed.scales.time if closed.scales is not None else 1.0
    records = switched.records
    return TransientSeries(
        steps=np.array([r.k for r in records]),
        times_ps=np.array([r.t for r in records]) * time_scale * 1e12,
        currents=np.array([r.currents.get(DRAIN, float("nan")) for r in records]),
        open_current=opened.drain_current,
        reason=switched.reason,
        records=records,
    )


def energy_decay_run(
    spec: DeviceSpec,
    cfg: SolverConfig,
    bias: Optional[BiasPoint] = None,
    mesh_density: Tuple[int, int] = (48, 16),
    dt: float = 0.05,
    steps: int = 400,
    floor_ratio: float = 1e-10,
    mesh: Optional[Mesh] = None,
) -> EnergySeries:
    """
    零偏置下自由能衰减实验

    栅极密度取与源极一致的平衡值，使 log(n^D/2) + V^D 为常数；
    参考函数为热平衡解，因此 E^k 衰减到 0。

    Args:
        spec: 器件描述
        cfg: 求解器配置
        bias: 偏置模板（V_D、V_G 被置 0）
        mesh_density: (nx, ny)
        dt: 无量纲时间步
        steps: 最大步数
        floor_ratio: 平台判定比例 E ≤ floor_ratio·E^0
        mesh: 外部网格

    Returns:
        EnergySeries
    """
    bias = (bias or BiasPoint()).with_gate(0.0, GateState.OPEN).with_drain(0.0)
    setup = build_mesfet(spec, bias, mesh_density=mesh_density, dt=dt, equilibrium_gate=True, mesh=mesh)
    equilibrium = solve_equilibrium(setup, cfg)
    setup = with_reference(setup, equilibrium)

    march_cfg = replace(
        cfg,
        newton_tol=min(cfg.newton_tol, 1e-12),
        picard_tol=min(cfg.picard_tol, 1e-12),
        steady_threshold=1e-14,
        max_steps=steps,
    )
    monitor = DiagnosticsMonitor(setup, contacts=(), track_energy=True, tolerance=march_cfg.tolerance)
    trajectory = time_march(initial_state(setup), setup, march_cfg, hooks=[monitor])

    records = monitor.records
    times = np.array([r.t for r in records])
    energies = np.array([r.energy for r in records])
    fit = fit_exponential_decay(times, energies, floor_ratio=floor_ratio)
    logger.info(
        f"Energy run: E0={energies[0]:.4e}, E_final={energies[-1]:.4e}, "
        f"fitted rate {fit.rate:.4g} over {fit.points} points"
    )
    return EnergySeries(
        steps=np.array([r.k for r in records]),
        times=times,
        energies=energies,
        dissipation=np.array([r.dissipation for r in records]),
        fit=fit,
        reason=trajectory.reason,
        floor_ratio=floor_ratio,
    )


# ---------------------------------------------------------------------- 配置驱动


class ExperimentService:
    """按运行配置执行实验并写出结果目录"""

    def __init__(self, config: RunConfig, output_dir: Optional[Path] = None):
        self.config = config
        self.spec = config.device.to_spec()
        self.bias = config.bias.to_bias()
        self.solver_cfg = config.solver.to_solver_config(store_every=config.output.dump_every)
        self.dt = config.solver.dt
        self.mesh_density = (config.mesh.nx, config.mesh.ny)
        self.mesh = read_mesh(config.mesh.file) if config.mesh.file else None
        self.writer = FieldWriter(output_dir) if output_dir is not None else None
        logger.debug(f"ExperimentService initialized for '{config.experiment.name}'")

    def _dump_config(self) -> None:
        if self.writer is not None:
            path = dump_run_config(self.config, self.writer.output_dir / "run_config.yaml")
            self.writer.written.append(path)

    def build(self, bias: Optional[BiasPoint] = None) -> ProblemSetup:
        return build_mesfet(
            self.spec,
            bias or self.bias,
            mesh_density=self.mesh_density,
            dt=self.dt,
            perturbation=self.config.initial.perturbation,
            seed=self.config.initial.seed,
            mesh=self.mesh,
        )

    def run(self) -> Any:
        """按 experiment.kind 分派"""
        kind = self.config.experiment.kind
        logger.info(f"Starting '{kind}' experiment '{self.config.experiment.name}'")
        runners = {
            "steady": self.steady,
            "transient": self.transient,
            "sweep": self.sweep,
            "energy": self.energy,
        }
        return runners[kind]()

    def steady(self) -> SteadyResult:
        setup = self.build()
        result = ramp_to_bias(
            self.spec, self.bias, setup, self.solver_cfg, ramp_steps=self.config.bias.ramp_steps
        )
        if self.writer is not None:
            self._dump_config()
            for state in result.trajectory.states:
                self.writer.write_fields(state)
            self.writer.write_diagnostics(result.records)
            self.writer.write_summary(self.steady_summary(result))
        return result

    def steady_summary(self, result: SteadyResult) -> Dict[str, Any]:
        final = result.final
        return {
            "experiment": "steady",
            "setup": result.setup.name,
            "cells": result.setup.mesh.n_cells,
            "steps": result.trajectory.steps,
            "reason": result.reason,
            "newton_iterations": result.iterations,
            "currents_A_per_m": result.currents,
            "max_abs_n1": float(np.max(np.abs(final.n.cells[:, 0]))),
            "max_abs_n2": float(np.max(np.abs(final.n.cells[:, 1]))),
            "flags": result.records[-1].flags if result.records else "",
        }

    def sweep(self) -> IVTable:
        sweep = self.config.sweep
        table = iv_sweep(
            self.spec,
            sweep.drain_voltages,
            sweep.gate_voltages,
            self.solver_cfg,
            base=self.bias,
            mesh_density=self.mesh_density,
            dt=self.dt,
            mesh=self.mesh,
            workers=sweep.workers,
            continuation=sweep.continuation,
        )
        if self.writer is not None:
            self._dump_config()
            self.writer.write_rows("iv.csv", IV_HEADER, (row.to_row() for row in table.rows))
            self.writer.write_summary(
                {
                    "experiment": "sweep",
                    "ferromagnetic": table.ferromagnetic,
                    "points": len(table.rows),
                    "failures": table.failures,
                }
            )
        return table

    def transient(self) -> TransientSeries:
        transient = self.config.transient
        series = transient_switch(
            self.spec,
            self.solver_cfg,
            bias=self.bias,
            mesh_density=self.mesh_density,
            dt=self.dt,
            switch_dt=transient.dt,
            steps=transient.steps,
            ramp_steps=self.config.bias.ramp_steps,
            mesh=self.mesh,
        )
        if self.writer is not None:
            self._dump_config()
            rows = zip(series.steps, series.times_ps, series.currents)
            self.writer.write_rows("transient.csv", TRANSIENT_HEADER, rows)
            self.writer.write_diagnostics(series.records)
            self.writer.write_summary(
                {
                    "experiment": "transient",
                    "open_current_A_per_m": series.open_current,
                    "final_current_A_per_m": float(series.currents[-1]),
                    "duration_ps": float(series.times_ps[-1]),
                    "reason": series.reason,
                }
            )
        return series

    def energy(self) -> EnergySeries:
        energy = self.config.energy
        series = energy_decay_run(
            self.spec,
            self.solver_cfg,
            bias=self.bias,
            mesh_density=self.mesh_density,
            dt=self.dt,
            steps=energy.steps,
            floor_ratio=energy.floor_ratio,
            mesh=self.mesh,
        )
        if self.writer is not None:
            self._dump_config()
            rows = zip(series.steps, series.times, series.energies, series.dissipation)
            self.writer.write_rows("energy.csv", ENERGY_HEADER, rows)
            self.writer.write_summary(
                {
                    "experiment": "energy",
                    "E0": float(series.energies[0]),
                    "E_final": float(series.energies[-1]),
                    "monotone": series.monotone(),
                    "floor_reached": series.floor_reached,
                    "decay_rate": series.fit.rate,
                    "fit_residual": series.fit.residual,
                    "fit_points": series.fit.points,
                    "reason": series.reason,
                }
            )
        return series

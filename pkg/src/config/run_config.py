"""运行配置 - YAML 运行文件的 pydantic 模式

缺省值即 MESFET 实验的参数；未知键会被拒绝。
"""

from pathlib import Path
from typing import List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..core.solver import SolverConfig
from ..data.device_spec import BiasPoint, DeviceSpec, GateState
from ..utils.exceptions import ConfigError
from ..utils.logger import get_logger

logger = get_logger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class ExperimentSection(_Section):
    """实验类型"""

    kind: Literal["steady", "transient", "sweep", "energy"] = "steady"
    name: str = "mesfet"


class DeviceSection(_Section):
    """器件几何与物理参数（SI）"""

    length: float = Field(0.6e-6, gt=0)
    height: float = Field(0.2e-6, gt=0)
    contact_region: float = Field(0.1e-6, gt=0)
    gate_length: float = Field(0.2e-6, gt=0)
    gate_center: Optional[float] = None
    doping_high: float = Field(3e23, gt=0)
    doping_channel: float = Field(1e23, ge=0)
    diffusion: float = Field(1e-3, gt=0)
    tau: float = Field(1e-12, gt=0)
    temperature: float = Field(300.0, gt=0)
    eps_r: float = Field(11.7, gt=0)
    polarization: float = Field(0.9, ge=0, lt=1)
    ferromagnetic: bool = True
    lambda_d_sq: Optional[float] = Field(1.6e-4, gt=0)
    gamma: Optional[float] = Field(None, ge=0)

    def to_spec(self) -> DeviceSpec:
        return DeviceSpec(**self.model_dump())


class BiasSection(_Section):
    """偏置（V）与栅极边界值"""

    drain: float = -2.0
    gate: float = 0.0
    gate_state: Literal["auto", "open", "closed"] = "auto"
    schottky_barrier: float = 0.8
    closed_extra: float = 1.2
    n_open: float = Field(3.9e11, ge=0)
    n_closed: float = Field(3.2e9, ge=0)
    ramp_steps: int = Field(4, ge=0)

    def to_bias(self) -> BiasPoint:
        data = self.model_dump(exclude={"ramp_steps"})
        data["gate_state"] = GateState(data["gate_state"])
        return BiasPoint(**data)


class MeshSection(_Section):
    """网格分辨率（nx 需为 3 的倍数以解析栅极端点）"""

    nx: int = Field(48, ge=1)
    ny: int = Field(16, ge=1)
    file: Optional[str] = None


class InitialSection(_Section):
    """初始数据扰动"""

    perturbation: float = Field(0.0, ge=0)
    seed: Optional[int] = None


class SolverSection(_Section):
    """非线性与线性求解器设置"""

    kind: Literal["newton", "picard"] = "newton"
    newton_tol: float = Field(1e-10, gt=0)
    max_newton_iter: int = Field(50, ge=1)
    damping_floor: float = Field(2.0**-10, gt=0, le=1)
    linear_solver: Literal["splu", "gmres"] = "splu"
    steady_threshold: float = Field(1e-5, gt=0)
    max_steps: int = Field(2000, ge=1)
    dt: float = Field(0.05, gt=0)
    picard_tol: float = Field(1e-10, gt=0)
    picard_max_iter: int = Field(500, ge=1)

    def to_solver_config(self, store_every: int = 0) -> SolverConfig:
        data = self.model_dump(exclude={"dt"})
        return SolverConfig(store_every=store_every, **data)


class SweepSection(_Section):
    """IV 扫描"""

    drain_voltages: List[float] = Field(
        default_factory=lambda: [0.0, -0.25, -0.5, -0.75, -1.0, -1.25, -1.5, -1.75, -2.0]
    )
    gate_voltages: List[float] = Field(default_factory=lambda: [-0.6, -0.3, 0.0, 1.2])
    workers: int = Field(1, ge=1)
    continuation: bool = True

    @field_validator("drain_voltages", "gate_voltages")
    @classmethod
    def _nonempty(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("voltage list must not be empty")
        return value


class TransientSection(_Section):
    """开态到关态切换"""

    steps: int = Field(200, ge=1)
    dt: Optional[float] = Field(None, gt=0)


class EnergySection(_Section):
    """零偏置自由能衰减"""

    steps: int = Field(400, ge=1)
    floor_ratio: float = Field(1e-10, gt=0)


class OutputSection(_Section):
    """输出目录与场文件频率（0 表示只写最终场）"""

    dir: Optional[str] = None
    dump_every: int = Field(0, ge=0)


class RunConfig(_Section):
    """完整运行配置"""

    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    device: DeviceSection = Field(default_factory=DeviceSection)
    bias: BiasSection = Field(default_factory=BiasSection)
    mesh: MeshSection = Field(default_factory=MeshSection)
    initial: InitialSection = Field(default_factory=InitialSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    transient: TransientSection = Field(default_factory=TransientSection)
    energy: EnergySection = Field(default_factory=EnergySection)
    output: OutputSection = Field(default_factory=OutputSection)

    @model_validator(mode="after")
    def _check_gate_resolution(self) -> "RunConfig":
        if self.mesh.file is None and self.mesh.nx % 3 != 0:
            raise ValueError(f"mesh.nx={self.mesh.nx} cannot resolve the gate contacts (need a multiple of 3)")
        return self


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """
    读取 YAML 运行配置

    Args:
        path: YAML 文件路径

    Returns:
        校验后的 RunConfig

    Raises:
        ConfigError: 文件不存在、YAML 语法错误或字段校验失败
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Run configuration not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Run configuration {path} must be a mapping of sections")

    config = parse_run_config(data)
    logger.info(f"Loaded run configuration from {path} (experiment={config.experiment.kind})")
    return config


def parse_run_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration: {e}") from e


def dump_run_config(config: RunConfig, path: Union[str, Path]) -> Path:
    """将配置写回 YAML（用于结果目录中的复现记录）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(config.model_dump(), f, default_flow_style=False, allow_unicode=True, sort_keys=False)
    return path

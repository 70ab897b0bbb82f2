"""运行配置、应用配置、命令行与结果写出测试"""

import argparse
import json
from pathlib import Path

import numpy as np
import pytest

import cli
from src.config import app_config as app_config_module
from src.config.app_config import AppConfig
from src.config.run_config import RunConfig, dump_run_config, load_run_config, parse_run_config
from src.core.mesh import build_rect_mesh
from src.data.device_spec import GateState
from src.data.parsers.mesh_parser import write_mesh
from src.utils.error_handler import ErrorHandler, with_error_handling
from src.utils.exceptions import ConfigError, ConvergenceError, MeshError
from src.utils.file_utils import FieldWriter, read_csv_columns

CONFIGS_DIR = Path(__file__).parent.parent / "configs"


@pytest.fixture
def isolated_app_config(tmp_path, monkeypatch):
    """不读取 .env 与真实 spindd.json 的应用配置"""
    for key in ("SPINDD_LOG_LEVEL", "SPINDD_RESULTS_DIR", "SPINDD_CONFIGS_DIR", "SPINDD_SOLVER", "SPINDD_LINEAR_SOLVER"):
        monkeypatch.delenv(key, raising=False)
    config = AppConfig(config_file=tmp_path / "spindd.json", load_env_file=False)
    monkeypatch.setattr(app_config_module, "_app_config", config)
    return config


def _args(**overrides):
    values = dict(solver=None, dt=None, threshold=None, seed=None, out=None)
    values.update(overrides)
    return argparse.Namespace(**values)


@pytest.mark.parametrize("path", sorted(CONFIGS_DIR.glob("*.yaml")), ids=lambda p: p.stem)
def test_bundled_configs_load(path):
    """测试仓库自带的运行配置都能通过校验"""
    config = load_run_config(path)
    assert config.experiment.kind in {"steady", "transient", "sweep", "energy"}
    assert config.mesh.nx % 3 == 0


def test_config_defaults_match_device():
    """测试缺省配置转换为器件描述、偏置与求解器配置"""
    config = RunConfig()
    spec = config.device.to_spec()
    assert spec.length == pytest.approx(0.6e-6)
    assert spec.lambda_d_sq == pytest.approx(1.6e-4)
    bias = config.bias.to_bias()
    assert bias.gate_state == GateState.AUTO
    assert bias.drain == -2.0
    solver = config.solver.to_solver_config(store_every=5)
    assert solver.kind == "newton"
    assert solver.store_every == 5


def test_sweep_config_lists():
    config = load_run_config(CONFIGS_DIR / "sweep.yaml")
    assert config.sweep.drain_voltages[-1] == -2.0
    assert config.sweep.gate_voltages == [-0.6, -0.3, 0.0, 1.2]
    assert config.sweep.workers == 2


def test_nonmagnetic_sweep_config():
    config = load_run_config(CONFIGS_DIR / "sweep_nm.yaml")
    assert not config.device.to_spec().ferromagnetic


@pytest.mark.parametrize(
    "data",
    [
        {"solver": {"tolerance": 1e-8}},
        {"mystery": {}},
        {"mesh": {"nx": 10}},
        {"solver": {"kind": "jacobi"}},
        {"device": {"polarization": 1.0}},
        {"sweep": {"drain_voltages": []}},
        {"bias": {"gate_state": "half"}},
    ],
)
def test_invalid_run_config_rejected(data):
    """测试未知键、非法值与无法解析栅极的网格"""
    with pytest.raises(ConfigError):
        parse_run_config(data)


def test_mesh_file_lifts_resolution_check():
    config = parse_run_config({"mesh": {"nx": 10, "file": "device.mesh"}})
    assert config.mesh.nx == 10


def test_load_run_config_errors(tmp_path):
    """测试文件缺失、YAML 语法错误与非映射内容"""
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.yaml")

    broken = tmp_path / "broken.yaml"
    broken.write_text("solver: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(broken)

    listing = tmp_path / "list.yaml"
    listing.write_text("- steady\n- sweep\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(listing)


def test_empty_yaml_uses_defaults(tmp_path):
    empty = tmp_path / "empty.yaml"
    empty.write_text("", encoding="utf-8")
    assert load_run_config(empty).experiment.kind == "steady"


def test_dump_run_config_reloads(tmp_path):
    """测试写出的配置可以重新读入"""
    config = load_run_config(CONFIGS_DIR / "transient.yaml")
    path = dump_run_config(config, tmp_path / "out" / "run_config.yaml")
    assert load_run_config(path) == config


def test_app_config_defaults(isolated_app_config):
    assert isolated_app_config.log_level == "INFO"
    assert isolated_app_config.results_dir == Path("results")
    assert isolated_app_config.default_solver == "newton"
    assert isolated_app_config.linear_solver == "splu"


def test_app_config_file_and_env_override(tmp_path, monkeypatch):
    """测试优先级：环境变量 > 配置文件 > 默认值"""
    config_file = tmp_path / "spindd.json"
    config_file.write_text(
        json.dumps({"solver": {"default_kind": "picard", "linear_solver": "gmres"}}), encoding="utf-8"
    )
    monkeypatch.delenv("SPINDD_SOLVER", raising=False)
    monkeypatch.setenv("SPINDD_LINEAR_SOLVER", "splu")
    config = AppConfig(config_file=config_file, load_env_file=False)
    assert config.default_solver == "picard"
    assert config.linear_solver == "splu"


def test_app_config_broken_file_falls_back(tmp_path, monkeypatch):
    monkeypatch.delenv("SPINDD_SOLVER", raising=False)
    config_file = tmp_path / "spindd.json"
    config_file.write_text("{not json", encoding="utf-8")
    assert AppConfig(config_file=config_file, load_env_file=False).default_solver == "newton"


def test_app_config_save(tmp_path, isolated_app_config):
    isolated_app_config.set("paths", "results_dir", "out")
    target = tmp_path / "saved.json"
    isolated_app_config.save_config(target)
    assert json.loads(target.read_text(encoding="utf-8"))["paths"]["results_dir"] == "out"


def test_apply_overrides(isolated_app_config):
    """测试命令行覆盖与应用配置的默认求解器"""
    isolated_app_config.set("solver", "default_kind", "picard")
    config = cli.apply_overrides(RunConfig(), _args(dt=0.1, seed=7), kind="energy")
    assert config.solver.kind == "picard"
    assert config.solver.dt == 0.1
    assert config.initial.seed == 7
    assert config.experiment.kind == "energy"

    explicit = parse_run_config({"solver": {"kind": "newton"}})
    assert cli.apply_overrides(explicit, _args()).solver.kind == "newton"
    assert cli.apply_overrides(explicit, _args(solver="picard")).solver.kind == "picard"


def test_output_dir_for(isolated_app_config):
    config = load_run_config(CONFIGS_DIR / "sweep.yaml")
    assert cli.output_dir_for(config, None) == Path("results") / "fm_iv_sweep"
    assert cli.output_dir_for(config, "elsewhere") == Path("elsewhere")


def test_parser_commands():
    parser = cli.build_parser()
    args = parser.parse_args(["--log-level", "DEBUG", "sweep", "configs/sweep.yaml", "--solver", "picard"])
    assert args.command == "sweep"
    assert args.solver == "picard"
    args = parser.parse_args(["check-mesh", "device.mesh", "--xi-min", "0.2"])
    assert args.xi_min == 0.2


def test_main_without_command_prints_help(isolated_app_config, capsys):
    assert cli.main([]) == 0
    assert "check-mesh" in capsys.readouterr().out


def test_main_check_mesh(tmp_path, isolated_app_config):
    """测试命令行网格检查的退出码"""
    path = write_mesh(build_rect_mesh(3, 3), tmp_path / "square.mesh")
    assert cli.main(["check-mesh", str(path)]) == 0
    assert cli.main(["check-mesh", str(tmp_path / "missing.mesh")]) == 1


def test_main_reports_bad_config(tmp_path, isolated_app_config, capsys):
    assert cli.main(["run", str(tmp_path / "missing.yaml")]) == 1
    assert "配置无效" in capsys.readouterr().out


def test_error_messages():
    """测试异常格式化"""
    message = ErrorHandler.handle_generic_error(ConvergenceError("stalled", residual_norm=0.5, iterations=12))
    assert "12" in message
    assert "5.000e-01" in message
    assert "网格错误" in ErrorHandler.handle_generic_error(MeshError("bad"))
    many = ErrorHandler.handle_validation_error([f"edge {i}" for i in range(5)])
    assert "还有 2 项" in many


def test_error_decorator_returns_fallback(capsys):
    @with_error_handling("测试", return_on_error=-1)
    def failing():
        raise ConfigError("broken")

    assert failing() == -1
    assert "broken" in capsys.readouterr().out


def test_field_writer(tmp_path):
    """测试 CSV 与摘要写出"""
    writer = FieldWriter(tmp_path / "run")
    path = writer.write_rows("iv.csv", ["V_D", "I"], [[0.0, np.float64(1.5)], [-1.0, 2.25]])
    columns = read_csv_columns(path)
    assert columns["V_D"] == ["0", "-1"]
    assert columns["I"] == ["1.5", "2.25"]

    summary = writer.write_summary({"currents": np.array([1.0, 2.0]), "steps": np.int64(3)})
    assert json.loads(summary.read_text(encoding="utf-8")) == {"currents": [1.0, 2.0], "steps": 3}
    assert writer.written == [path, summary]


def test_console_view_iv_table():
    """测试 IV 表按栅压分列展示，失败点显示 nan"""
    from rich.console import Console

    from src.services.experiment_service import IVRow, IVTable
    from src.ui import ConsoleView

    console = Console(record=True, width=120)
    table = IVTable(
        ferromagnetic=False,
        rows=[
            IVRow(gate=0.0, drain=0.0, current=0.0),
            IVRow(gate=0.0, drain=-1.0, current=1.25e3),
            IVRow(gate=1.2, drain=0.0, current=float("nan"), status="failed"),
        ],
    )
    ConsoleView(console).show_iv_table(table)
    text = console.export_text()
    assert "NM MESFET" in text
    assert "1.2500e+03" in text
    assert "nan" in text


def test_reload_config_replaces_global(tmp_path, monkeypatch):
    monkeypatch.delenv("SPINDD_LOG_LEVEL", raising=False)
    monkeypatch.setattr(app_config_module, "_app_config", None)
    config_file = tmp_path / "spindd.json"
    config_file.write_text(json.dumps({"logging": {"default_level": "DEBUG"}}), encoding="utf-8")
    reloaded = app_config_module.reload_config(config_file)
    assert app_config_module.get_app_config() is reloaded
    assert reloaded.log_level == "DEBUG"

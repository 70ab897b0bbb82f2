#!/usr/bin/env python3
"""自旋漂移扩散 MESFET 模拟命令行工具"""

import argparse
import sys
from pathlib import Path
from typing import Optional

# 添加项目根目录到路径
sys.path.insert(0, str(Path(__file__).parent))

from src.config import RunConfig, get_app_config, load_run_config
from src.core import check_admissibility
from src.data.parsers import read_mesh
from src.services import ExperimentService, EnergySeries, IVTable, SteadyResult, TransientSeries
from src.ui import ConsoleView
from src.utils.error_handler import ErrorHandler, UserFeedback, with_error_handling
from src.utils.logger import get_logger, setup_logging

logger = get_logger(__name__)


@with_error_handling("网格检查", return_on_error=False)
def check_mesh(mesh_path: str, xi_min: float = 0.0, tol: float = 1e-10) -> bool:
    """读取网格文件并报告可容许性"""
    view = ConsoleView()
    mesh = read_mesh(mesh_path)
    report = check_admissibility(mesh, xi_min=xi_min, orthogonality_tol=tol)
    view.show_mesh_report(mesh, report)
    if not report.passed:
        problems = [f"edge {e}: angle defect {d:.3e}" for e, d in report.orthogonality_violations]
        problems += [f"edge {e}: center of cell {k} outside" for e, k in report.centers_outside]
        problems += [f"edge {e}: distance mismatch {d:.3e}" for e, d in report.distance_mismatches]
        if not report.xi_ok:
            problems.insert(0, f"xi={report.xi:.4g} below {report.xi_min:.4g}")
        print(ErrorHandler.handle_validation_error(problems))
    return report.passed


def apply_overrides(config: RunConfig, args: argparse.Namespace, kind: Optional[str] = None) -> RunConfig:
    """命令行参数覆盖运行配置；未在文件中给出的求解器设置取应用配置"""
    app_config = get_app_config()
    if "kind" not in config.solver.model_fields_set:
        config.solver.kind = app_config.default_solver
    if "linear_solver" not in config.solver.model_fields_set:
        config.solver.linear_solver = app_config.linear_solver

    if kind is not None:
        config.experiment.kind = kind
    if args.solver:
        config.solver.kind = args.solver
    if args.dt is not None:
        config.solver.dt = args.dt
    if args.threshold is not None:
        config.solver.steady_threshold = args.threshold
    if args.seed is not None:
        config.initial.seed = args.seed
    return config


def output_dir_for(config: RunConfig, out: Optional[str]) -> Path:
    if out:
        return Path(out)
    if config.output.dir:
        return Path(config.output.dir)
    return get_app_config().results_dir / f"{config.experiment.name}_{config.experiment.kind}"


@with_error_handling("实验", return_on_error=False)
def run_experiment(config_path: str, args: argparse.Namespace, kind: Optional[str] = None) -> bool:
    """按配置运行实验并展示结果"""
    view = ConsoleView()
    config = apply_overrides(load_run_config(config_path), args, kind)
    output_dir = output_dir_for(config, args.out)

    view.show_banner(
        f"{config.experiment.name}: {config.experiment.kind}",
        f"solver={config.solver.kind}, dt={config.solver.dt}, mesh={config.mesh.nx}x{config.mesh.ny}",
    )
    UserFeedback.print_operation_start(f"{config.experiment.kind} 实验", str(config_path))

    service = ExperimentService(config, output_dir=output_dir)
    result = service.run()

    if isinstance(result, SteadyResult):
        view.show_steady(result)
    elif isinstance(result, IVTable):
        view.show_iv_table(result)
    elif isinstance(result, TransientSeries):
        view.show_transient(result)
    elif isinstance(result, EnergySeries):
        view.show_energy(result)

    view.show_outputs(service.writer.written if service.writer else [])
    UserFeedback.print_operation_complete(f"{config.experiment.kind} 实验")
    return True


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", help="YAML 运行配置文件")
    parser.add_argument("--out", help="结果目录（默认 results/<name>_<kind>）")
    parser.add_argument("--solver", choices=["newton", "picard"], help="非线性求解器")
    parser.add_argument("--dt", type=float, help="无量纲时间步")
    parser.add_argument("--threshold", type=float, help="稳态判据阈值")
    parser.add_argument("--seed", type=int, help="初始扰动随机种子")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="自旋漂移扩散有限体积模拟")
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="日志级别（默认从配置读取）",
    )
    subparsers = parser.add_subparsers(dest="command", help="可用命令")

    # check-mesh 命令
    mesh_parser = subparsers.add_parser("check-mesh", help="检查网格可容许性")
    mesh_parser.add_argument("mesh", help="网格文本文件")
    mesh_parser.add_argument("--xi-min", type=float, default=0.0, help="正则性下限")
    mesh_parser.add_argument("--tol", type=float, default=1e-10, help="正交性容差")

    # run / sweep / energy 命令
    _add_run_flags(subparsers.add_parser("run", help="稳态或瞬态实验（按配置）"))
    _add_run_flags(subparsers.add_parser("sweep", help="IV 特性扫描"))
    _add_run_flags(subparsers.add_parser("energy", help="零偏置自由能衰减"))
    return parser


def main(argv=None) -> int:
    """主函数"""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level or get_app_config().log_level)

    if args.command == "check-mesh":
        ok = check_mesh(args.mesh, args.xi_min, args.tol)
    elif args.command == "run":
        ok = run_experiment(args.config, args)
    elif args.command == "sweep":
        ok = run_experiment(args.config, args, kind="sweep")
    elif args.command == "energy":
        ok = run_experiment(args.config, args, kind="energy")
    else:
        parser.print_help()
        return 0
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())

"""终端输出 - 以 rich 面板和表格展示网格检查与实验结果"""

from pathlib import Path
from typing import Iterable, List, Optional, Sequence

from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

from ..core.mesh import AdmissibilityReport, Mesh


def _fmt(value: float, spec: str = ".4e") -> str:
    return "nan" if value != value else format(value, spec)


class ConsoleView:
    """结果展示器"""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console()

    def show_banner(self, title: str, subtitle: str = ""):
        """显示运行标题"""
        text = Text(title, style="bold cyan")
        if subtitle:
            text.append(f"\n{subtitle}", style="dim")
        self.console.print(Panel(text, title="spin-dd", border_style="cyan", padding=(0, 2)))

    def show_error(self, message: str):
        self.console.print(f"[red]❌ {message}[/red]")

    def show_success(self, message: str):
        self.console.print(f"[green]✅ {message}[/green]")

    def show_warning(self, message: str):
        self.console.print(f"[yellow]⚠️ {message}[/yellow]")

    def show_info(self, message: str):
        self.console.print(f"[blue]ℹ️ {message}[/blue]")

    def show_table(
        self,
        title: str,
        headers: Sequence[str],
        rows: Iterable[Sequence[str]],
        show_lines: bool = False,
    ):
        """
        显示表格

        Args:
            title: 表格标题
            headers: 表头
            rows: 行数据（字符串）
            show_lines: 是否显示行分割线
        """
        table = Table(title=title, show_header=True, header_style="bold cyan", show_lines=show_lines)
        for header in headers:
            table.add_column(header, justify="right")
        for row in rows:
            table.add_row(*row)
        self.console.print(table)

    def show_mesh_report(self, mesh: Mesh, report: AdmissibilityReport):
        """网格可容许性检查结果"""
        rows = [
            ["cells", str(mesh.n_cells)],
            ["edges", str(mesh.n_edges)],
            ["dirichlet measure", _fmt(report.dirichlet_measure, ".6g")],
            ["xi", _fmt(report.xi, ".6g")],
            ["max angle defect", _fmt(report.max_angle_defect, ".3e")],
            ["orthogonality violations", str(len(report.orthogonality_violations))],
            ["centers outside cell", str(len(report.centers_outside))],
            ["distance mismatches", str(len(report.distance_mismatches))],
            ["contacts", ", ".join(sorted(mesh.contacts)) or "-"],
        ]
        self.show_table(f"Mesh '{mesh.name}'", ["check", "value"], rows)
        if report.passed:
            self.show_success("网格满足可容许性条件")
        else:
            self.show_error("网格不满足可容许性条件")

    def show_steady(self, result):
        """稳态结果：各接触电流与终止原因"""
        rows = [[name, _fmt(value)] for name, value in sorted(result.currents.items())]
        self.show_table(
            f"{result.setup.name}: {result.trajectory.steps} steps ({result.reason})",
            ["contact", "I [A/m]"],
            rows,
        )
        if result.records and result.records[-1].flags not in ("ok", "ok*"):
            self.show_warning(f"监测标记: {result.records[-1].flags}")

    def show_iv_table(self, table):
        """IV 表，每条栅压曲线一列"""
        gates = table.gates
        drains: List[float] = []
        for row in table.rows:
            if row.drain not in drains:
                drains.append(row.drain)
        lookup = {(row.gate, row.drain): row.current for row in table.rows}
        headers = ["V_D [V]"] + [f"V_G={g:+.2f} V" for g in gates]
        rows = [
            [f"{d:+.3f}"] + [_fmt(lookup.get((g, d), float("nan"))) for g in gates]
            for d in drains
        ]
        kind = "FM" if table.ferromagnetic else "NM"
        self.show_table(f"Drain current [A/m] ({kind} MESFET)", headers, rows)
        if table.failures:
            self.show_warning(f"{table.failures} 个扫描点求解失败（记为 nan）")

    def show_transient(self, series, every: int = 10):
        """开关瞬态的抽样电流"""
        rows = [
            [str(int(k)), f"{t:.4f}", _fmt(i)]
            for index, (k, t, i) in enumerate(zip(series.steps, series.times_ps, series.currents))
            if index % every == 0 or index == len(series.steps) - 1
        ]
        self.show_table("Open → closed switching", ["k", "t [ps]", "I [A/m]"], rows)
        self.show_info(f"开态电流 {_fmt(series.open_current)} A/m，终止原因 {series.reason}")

    def show_energy(self, series):
        """自由能衰减摘要"""
        rows = [
            ["E^0", _fmt(float(series.energies[0]))],
            ["E^final", _fmt(float(series.energies[-1]))],
            ["monotone", str(series.monotone())],
            ["floor reached", str(series.floor_reached)],
            ["decay rate", _fmt(series.fit.rate, ".4g")],
            ["fit residual", _fmt(series.fit.residual, ".3e")],
            ["fit points", str(series.fit.points)],
        ]
        self.show_table("Free energy decay", ["quantity", "value"], rows)

    def show_outputs(self, paths: Sequence[Path]):
        if paths:
            self.show_info(f"结果已写入 {Path(paths[0]).parent} ({len(paths)} 个文件)")

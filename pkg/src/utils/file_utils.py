"""结果文件写出工具 - 场文件、诊断序列、IV 表与摘要（gnuplot 可读的 CSV）"""

import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from .logger import get_logger

logger = get_logger(__name__)

FIELD_HEADER = ["cell_id", "x", "y", "n0", "n1", "n2", "n3", "V"]
DIAGNOSTICS_HEADER = [
    "k", "t", "E", "dissipation", "min_np", "max_np", "min_nm", "max_nm", "max_nperp", "Mk", "flags",
]


def _format(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    if isinstance(value, np.integer):
        return int(value)
    return value


class FieldWriter:
    """结果目录写出器"""

    def __init__(self, output_dir: Union[str, Path]):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.written: List[Path] = []
        logger.debug(f"FieldWriter initialized at {self.output_dir}")

    def _path(self, name: str) -> Path:
        path = self.output_dir / name
        self.written.append(path)
        return path

    def write_rows(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        """
        写出一个 CSV 表

        Args:
            name: 文件名
            header: 列名
            rows: 行数据

        Returns:
            写出的文件路径
        """
        path = self._path(name)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_format(v) for v in row])
        logger.debug(f"Wrote {path}")
        return path

    def write_fields(self, state, name: Optional[str] = None) -> Path:
        """场文件 fields_k####.csv：cell_id,x,y,n0,n1,n2,n3,V"""
        name = name or f"fields_k{state.k:04d}.csv"
        centers = state.mesh.centers
        values = state.cell_matrix()
        rows = (
            [i, centers[i, 0], centers[i, 1], *values[i]]
            for i in range(state.mesh.n_cells)
        )
        return self.write_rows(name, FIELD_HEADER, rows)

    def write_diagnostics(self, records: Sequence[Any], name: str = "diagnostics.csv") -> Path:
        """诊断序列，列为固定诊断量加 current_<contact>"""
        rows = [record.to_row() for record in records]
        extra: List[str] = []
        for row in rows:
            for key in row:
                if key not in DIAGNOSTICS_HEADER and key not in extra:
                    extra.append(key)
        header = DIAGNOSTICS_HEADER + extra
        return self.write_rows(name, header, ([row.get(k, "") for k in header] for row in rows))

    def write_summary(self, summary: Dict[str, Any], name: str = "summary.json") -> Path:
        path = self._path(name)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, ensure_ascii=False, default=_json_default)
        logger.debug(f"Wrote {path}")
        return path


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return str(value)


def read_csv_columns(path: Union[str, Path]) -> Dict[str, List[str]]:
    """按列读取 CSV（测试与后处理用）"""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        columns: Dict[str, List[str]] = {name: [] for name in reader.fieldnames or []}
        for row in reader:
            for key, value in row.items():
                columns[key].append(value)
    return columns

"""网格文本格式解析器

格式:
    cells N edges M
    id cx cy area diam                              （N 行）
    id kind cellK [cellL] mx my nx ny length dK [dL] [label]   （M 行）

kind 为 I / D / N；内部边 (I) 需要 cellL 与 dL，Dirichlet 边可带接触名称。
(mx, my) 为边中点，(nx, ny) 为从 cellK 指向外侧的单位法向量。
边记录沿用 id kind cellK [cellL] 中点 length dK [dL] 的列序，中点写成两列，
其后插入法向量两列，末尾可选接触名称。字段数：I 为 11，N 为 9，D 为 9 或 10。
以 # 开头的行和空行被忽略。
"""

from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from ...core.mesh import EdgeKind, Mesh
from ...utils.exceptions import MeshError
from ...utils.logger import get_logger

logger = get_logger(__name__)


class MeshFileParser:
    """网格文件解析器 - 文本行到 Mesh 数组"""

    def parse(self, text: str, name: str = "imported") -> Mesh:
        """
        解析网格文本

        Args:
            text: 文件内容
            name: 网格名称

        Returns:
            构造好的 Mesh（可容许性需另行检查）
        """
        lines = self._content_lines(text)
        if not lines:
            raise MeshError("Mesh file is empty")
        n_cells, n_edges = self._parse_header(lines[0])
        body = lines[1:]
        if len(body) != n_cells + n_edges:
            raise MeshError(
                f"Mesh file declares {n_cells} cells and {n_edges} edges "
                f"but contains {len(body)} records"
            )

        cells = np.array([self._parse_cell(line, i) for i, line in enumerate(body[:n_cells])])
        edges = [self._parse_edge(line, i, n_cells) for i, line in enumerate(body[n_cells:])]

        mesh = Mesh(
            centers=cells[:, 0:2],
            areas=cells[:, 2],
            diameters=cells[:, 3],
            edge_kind=np.array([e[0] for e in edges]),
            edge_cells=np.array([e[1] for e in edges]),
            edge_length=np.array([e[4] for e in edges]),
            edge_dist=np.array([e[5] for e in edges]),
            edge_midpoint=np.array([e[2] for e in edges]),
            edge_normal=np.array([e[3] for e in edges]),
            edge_contact=[e[6] for e in edges],
            name=name,
        )
        logger.info(f"Parsed mesh '{name}' with {n_cells} cells and {n_edges} edges")
        return mesh

    @staticmethod
    def _content_lines(text: str) -> List[str]:
        lines = []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if line:
                lines.append(line)
        return lines

    @staticmethod
    def _parse_header(line: str) -> Tuple[int, int]:
        tokens = line.split()
        if len(tokens) != 4 or tokens[0] != "cells" or tokens[2] != "edges":
            raise MeshError(f"Invalid mesh header '{line}', expected 'cells N edges M'")
        try:
            return int(tokens[1]), int(tokens[3])
        except ValueError:
            raise MeshError(f"Invalid counts in mesh header '{line}'") from None

    @staticmethod
    def _parse_cell(line: str, expected_id: int) -> List[float]:
        tokens = line.split()
        if len(tokens) != 5:
            raise MeshError(f"Cell record '{line}' must have 5 fields")
        try:
            cell_id = int(tokens[0])
            values = [float(t) for t in tokens[1:]]
        except ValueError:
            raise MeshError(f"Malformed cell record '{line}'") from None
        if cell_id != expected_id:
            raise MeshError(f"Cell ids must be consecutive, expected {expected_id}, got {cell_id}")
        return values

    @staticmethod
    def _parse_edge(line: str, expected_id: int, n_cells: int):
        tokens = line.split()
        if len(tokens) < 2:
            raise MeshError(f"Edge record '{line}' is too short")
        kind = EdgeKind.from_code(tokens[1])
        try:
            edge_id = int(tokens[0])
            if edge_id != expected_id:
                raise MeshError(f"Edge ids must be consecutive, expected {expected_id}, got {edge_id}")
            if kind == EdgeKind.INTERIOR:
                if len(tokens) != 11:
                    raise MeshError(f"Interior edge record '{line}' must have 11 fields")
                k, l = int(tokens[2]), int(tokens[3])
                mx, my, nx, ny, length, dk, dl = (float(t) for t in tokens[4:11])
                label = ""
            else:
                if len(tokens) not in (9, 10):
                    raise MeshError(f"Boundary edge record '{line}' must have 9 or 10 fields")
                k, l = int(tokens[2]), -1
                mx, my, nx, ny, length, dk = (float(t) for t in tokens[3:9])
                dl = 0.0
                label = tokens[9] if len(tokens) == 10 else ""
                if label and kind == EdgeKind.NEUMANN:
                    raise MeshError(f"Neumann edge {edge_id} cannot carry a contact label")
        except ValueError:
            raise MeshError(f"Malformed edge record '{line}'") from None

        if not 0 <= k < n_cells or (kind == EdgeKind.INTERIOR and not 0 <= l < n_cells):
            raise MeshError(f"Edge {edge_id} references an unknown cell")
        return kind, (k, l), (mx, my), (nx, ny), length, (dk, dl), label


def read_mesh(path: Union[str, Path]) -> Mesh:
    """从文本文件读取网格"""
    path = Path(path)
    if not path.exists():
        raise MeshError(f"Mesh file not found: {path}")
    return MeshFileParser().parse(path.read_text(encoding="utf-8"), name=path.stem)


def format_mesh(mesh: Mesh) -> str:
    """将网格序列化为文本格式"""
    if mesh.edge_midpoint is None or mesh.edge_normal is None:
        raise MeshError("Mesh export requires edge midpoints and normals")
    lines = [f"cells {mesh.n_cells} edges {mesh.n_edges}"]
    for i in range(mesh.n_cells):
        cx, cy = mesh.centers[i]
        lines.append(f"{i} {cx:.17g} {cy:.17g} {mesh.areas[i]:.17g} {mesh.diameters[i]:.17g}")
    for e in range(mesh.n_edges):
        edge = mesh.edge(e)
        mx, my = mesh.edge_midpoint[e]
        nx, ny = mesh.edge_normal[e]
        geometry = f"{mx:.17g} {my:.17g} {nx:.17g} {ny:.17g} {edge.measure:.17g}"
        if edge.kind == EdgeKind.INTERIOR:
            lines.append(
                f"{e} I {edge.owner} {edge.neighbor} {geometry} "
                f"{edge.dist_owner:.17g} {edge.dist_neighbor:.17g}"
            )
        else:
            record = f"{e} {edge.kind.code} {edge.owner} {geometry} {edge.dist_owner:.17g}"
            if edge.contact:
                record += f" {edge.contact}"
            lines.append(record)
    return "\n".join(lines) + "\n"


def write_mesh(mesh: Mesh, path: Union[str, Path]) -> Path:
    """将网格写入文本文件"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_mesh(mesh), encoding="utf-8")
    logger.info(f"Mesh written to {path}")
    return path

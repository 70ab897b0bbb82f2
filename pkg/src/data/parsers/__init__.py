"""网格文件解析器"""

from .mesh_parser import MeshFileParser, format_mesh, read_mesh, write_mesh

__all__ = ["MeshFileParser", "format_mesh", "read_mesh", "write_mesh"]

"""可容许有限体积网格 - 单元、边、网格函数与离散范数

网格以数组形式保存（单元中心、测度、边的两侧单元、距离、传导系数），
构造后只读，可在多个求解器实例之间共享。
"""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils.exceptions import MeshError, ModelError
from ..utils.logger import get_logger

logger = get_logger(__name__)

# 边界分类器: (x, y, side) -> "neumann" / "dirichlet" / 接触名称; None 表示未分类
BoundaryClassifier = Callable[[float, float, str], Optional[str]]
BoundarySpec = Union[Mapping[str, str], BoundaryClassifier, None]

NEUMANN_TAGS = {"neumann", "n"}
DIRICHLET_TAGS = {"dirichlet", "d"}

# 生成网格的正交性容差（弧度）
DEFAULT_ORTHOGONALITY_TOL = 1e-10


class EdgeKind(IntEnum):
    """边的类型"""

    INTERIOR = 0
    DIRICHLET = 1
    NEUMANN = 2

    @property
    def code(self) -> str:
        return "IDN"[int(self)]

    @classmethod
    def from_code(cls, code: str) -> "EdgeKind":
        try:
            return cls("IDN".index(code.strip().upper()))
        except ValueError:
            raise MeshError(f"Unknown edge kind '{code}'") from None


@dataclass(frozen=True)
class Cell:
    """控制体 K"""

    id: int
    center: Tuple[float, float]
    measure: float
    diameter: float


@dataclass(frozen=True)
class Edge:
    """边 σ，owner 为 K_σ"""

    id: int
    kind: EdgeKind
    owner: int
    neighbor: Optional[int]
    measure: float
    dist_owner: float
    dist_neighbor: Optional[float]
    contact: str = ""

    @property
    def dist(self) -> float:
        return self.dist_owner + (self.dist_neighbor or 0.0)

    @property
    def transmissibility(self) -> float:
        return self.measure / self.dist


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


class Mesh:
    """两点通量有限体积网格 M = (T, E, P)

    边的方向约定: owner K_σ 总是 edge_cells[:, 0]，法向量从 K_σ 指向外侧
    （内部边指向 L）。
    """

    def __init__(
        self,
        centers: np.ndarray,
        areas: np.ndarray,
        diameters: np.ndarray,
        edge_kind: np.ndarray,
        edge_cells: np.ndarray,
        edge_length: np.ndarray,
        edge_dist: np.ndarray,
        edge_midpoint: Optional[np.ndarray] = None,
        edge_normal: Optional[np.ndarray] = None,
        edge_contact: Optional[Sequence[str]] = None,
        cell_vertices: Optional[np.ndarray] = None,
        edge_vertices: Optional[np.ndarray] = None,
        name: str = "mesh",
    ):
        self.name = name
        self.centers = _readonly(np.asarray(centers, dtype=float).reshape(-1, 2))
        self.areas = _readonly(np.asarray(areas, dtype=float))
        self.diameters = _readonly(np.asarray(diameters, dtype=float))
        self.edge_kind = _readonly(np.asarray(edge_kind, dtype=np.int8))
        self.edge_cells = _readonly(np.asarray(edge_cells, dtype=np.int64).reshape(-1, 2))
        self.edge_length = _readonly(np.asarray(edge_length, dtype=float))
        self.edge_dist = _readonly(np.asarray(edge_dist, dtype=float).reshape(-1, 2))
        self.edge_midpoint = (
            None if edge_midpoint is None else _readonly(np.asarray(edge_midpoint, float))
        )
        self.edge_normal = (
            None if edge_normal is None else _readonly(np.asarray(edge_normal, float))
        )
        self.cell_vertices = (
            None if cell_vertices is None else _readonly(np.asarray(cell_vertices, float))
        )
        self.edge_vertices = (
            None if edge_vertices is None else _readonly(np.asarray(edge_vertices, float))
        )
        contacts = list(edge_contact) if edge_contact is not None else [""] * len(edge_kind)
        self.edge_contact = tuple(str(c) for c in contacts)

        self._validate()

        self.edge_d = _readonly(self.edge_dist.sum(axis=1))
        self.transmissibility = _readonly(self.edge_length / self.edge_d)

        self.interior_edges = _readonly(np.flatnonzero(self.edge_kind == EdgeKind.INTERIOR))
        self.dirichlet_edges = _readonly(np.flatnonzero(self.edge_kind == EdgeKind.DIRICHLET))
        self.neumann_edges = _readonly(np.flatnonzero(self.edge_kind == EdgeKind.NEUMANN))

        dirichlet_index = np.full(self.n_edges, -1, dtype=np.int64)
        dirichlet_index[self.dirichlet_edges] = np.arange(len(self.dirichlet_edges))
        self.dirichlet_index = _readonly(dirichlet_index)

        # E_K: 每个单元的边列表
        cell_edges: List[List[int]] = [[] for _ in range(self.n_cells)]
        for e, (k, l) in enumerate(self.edge_cells):
            cell_edges[k].append(e)
            if l >= 0:
                cell_edges[l].append(e)
        self.cell_edges = tuple(np.array(edges, dtype=np.int64) for edges in cell_edges)

        contacts_map: Dict[str, List[int]] = {}
        for e in self.dirichlet_edges:
            contacts_map.setdefault(self.edge_contact[e] or "dirichlet", []).append(int(e))
        self.contacts = {k: np.array(v, dtype=np.int64) for k, v in contacts_map.items()}

        logger.debug(
            f"Mesh '{name}': {self.n_cells} cells, {self.n_edges} edges "
            f"({len(self.interior_edges)} interior, {len(self.dirichlet_edges)} Dirichlet, "
            f"{len(self.neumann_edges)} Neumann)"
        )

    # ------------------------------------------------------------------ 校验

    def _validate(self) -> None:
        nc = len(self.areas)
        ne = len(self.edge_kind)
        if self.centers.shape[0] != nc or self.diameters.shape[0] != nc:
            raise MeshError("Cell arrays have inconsistent lengths")
        for name, arr in (
            ("edge_cells", self.edge_cells),
            ("edge_length", self.edge_length),
            ("edge_dist", self.edge_dist),
        ):
            if arr.shape[0] != ne:
                raise MeshError(f"Edge array '{name}' has {arr.shape[0]} rows, expected {ne}")
        if len(self.edge_contact) != ne:
            raise MeshError("Edge contact labels do not match the number of edges")
        if nc == 0:
            raise MeshError("Mesh has no cells")
        if np.any(self.areas <= 0) or np.any(self.diameters <= 0):
            raise MeshError("Cell measures and diameters must be positive")
        if np.any(self.edge_length <= 0):
            raise MeshError("Edge measures must be positive")

        kinds = set(np.unique(self.edge_kind).tolist())
        if not kinds <= {0, 1, 2}:
            raise MeshError(f"Unknown edge kinds: {sorted(kinds - {0, 1, 2})}")

        owners = self.edge_cells[:, 0]
        others = self.edge_cells[:, 1]
        if np.any(owners < 0) or np.any(owners >= nc):
            raise MeshError("Edge owner index out of range")
        interior = self.edge_kind == EdgeKind.INTERIOR
        if np.any(others[interior] < 0) or np.any(others[interior] >= nc):
            raise MeshError("Interior edge must reference two cells")
        if np.any(others[interior] == owners[interior]):
            raise MeshError("Interior edge references the same cell twice")
        if np.any(others[~interior] >= 0):
            raise MeshError("Boundary edge must reference exactly one cell")

        if np.any(self.edge_dist[:, 0] <= 0) or np.any(self.edge_dist[interior, 1] <= 0):
            raise MeshError("Cell-to-edge distances must be positive")

    # ------------------------------------------------------------------ 访问

    @property
    def n_cells(self) -> int:
        return len(self.areas)

    @property
    def n_edges(self) -> int:
        return len(self.edge_kind)

    @property
    def n_dirichlet(self) -> int:
        return len(self.dirichlet_edges)

    @property
    def owners(self) -> np.ndarray:
        """K_σ"""
        return self.edge_cells[:, 0]

    @property
    def xi(self) -> float:
        """正则性常数 ξ = min d(x_K,σ)/diam(K)（基于存储的距离）"""
        ratios = [self.edge_dist[:, 0] / self.diameters[self.owners]]
        interior = self.interior_edges
        if len(interior):
            neighbors = self.edge_cells[interior, 1]
            ratios.append(self.edge_dist[interior, 1] / self.diameters[neighbors])
        return float(np.min(np.concatenate(ratios)))

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    def boundary_measure(self, kind: EdgeKind) -> float:
        return float(self.edge_length[self.edge_kind == kind].sum())

    def cell(self, index: int) -> Cell:
        return Cell(
            id=index,
            center=(float(self.centers[index, 0]), float(self.centers[index, 1])),
            measure=float(self.areas[index]),
            diameter=float(self.diameters[index]),
        )

    def edge(self, index: int) -> Edge:
        kind = EdgeKind(int(self.edge_kind[index]))
        k, l = (int(v) for v in self.edge_cells[index])
        interior = kind == EdgeKind.INTERIOR
        return Edge(
            id=index,
            kind=kind,
            owner=k,
            neighbor=l if interior else None,
            measure=float(self.edge_length[index]),
            dist_owner=float(self.edge_dist[index, 0]),
            dist_neighbor=float(self.edge_dist[index, 1]) if interior else None,
            contact=self.edge_contact[index],
        )

    def contact_edges(self, name: str) -> np.ndarray:
        if name not in self.contacts:
            raise MeshError(f"Unknown contact '{name}', available: {sorted(self.contacts)}")
        return self.contacts[name]

    def cell_centroids(self) -> np.ndarray:
        """多边形质心（无顶点信息时退化为 x_K）"""
        if self.cell_vertices is None:
            return np.array(self.centers)
        return self.cell_vertices.mean(axis=1)

    def __repr__(self) -> str:
        return f"Mesh(name={self.name!r}, cells={self.n_cells}, edges={self.n_edges})"


@dataclass
class MeshField:
    """网格函数 u_M = (u_T, u_{E^D})"""

    mesh: Mesh
    cells: np.ndarray
    dirichlet: np.ndarray = field(default=None)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=float)
        if self.dirichlet is None:
            self.dirichlet = np.zeros((self.mesh.n_dirichlet,) + self.cells.shape[1:])
        self.dirichlet = np.asarray(self.dirichlet, dtype=float)
        if self.cells.shape[0] != self.mesh.n_cells:
            raise MeshError(
                f"Field has {self.cells.shape[0]} cell values, mesh has {self.mesh.n_cells} cells"
            )
        if self.dirichlet.shape != (self.mesh.n_dirichlet,) + self.cells.shape[1:]:
            raise MeshError(
                f"Field has Dirichlet shape {self.dirichlet.shape}, expected "
                f"{(self.mesh.n_dirichlet,) + self.cells.shape[1:]}"
            )

    @classmethod
    def constant(cls, mesh: Mesh, value: Union[float, Sequence[float]]) -> "MeshField":
        value = np.asarray(value, dtype=float)
        cells = np.broadcast_to(value, (mesh.n_cells,) + value.shape).copy()
        dirichlet = np.broadcast_to(value, (mesh.n_dirichlet,) + value.shape).copy()
        return cls(mesh, cells, dirichlet)

    @classmethod
    def zeros(cls, mesh: Mesh, arity: int = 1) -> "MeshField":
        return cls.constant(mesh, 0.0 if arity == 1 else np.zeros(arity))

    @property
    def arity(self) -> int:
        return 1 if self.cells.ndim == 1 else self.cells.shape[1]

    def copy(self) -> "MeshField":
        return MeshField(self.mesh, self.cells.copy(), self.dirichlet.copy())

    def with_cells(self, cells: np.ndarray) -> "MeshField":
        return MeshField(self.mesh, np.array(cells, dtype=float), self.dirichlet.copy())

    def edge_values(self, edges: Optional[np.ndarray] = None) -> np.ndarray:
        """u_{K,σ}（K = K_σ）: 内部边取 u_L, Dirichlet 边取 u_σ, Neumann 边取 u_K"""
        mesh = self.mesh
        edges = np.arange(mesh.n_edges) if edges is None else np.asarray(edges)
        kind = mesh.edge_kind[edges]
        owners = mesh.edge_cells[edges, 0]
        values = self.cells[owners].copy()

        interior = kind == EdgeKind.INTERIOR
        values[interior] = self.cells[mesh.edge_cells[edges[interior], 1]]
        dirichlet = kind == EdgeKind.DIRICHLET
        values[dirichlet] = self.dirichlet[mesh.dirichlet_index[edges[dirichlet]]]
        return values

    def differences(self, edges: Optional[np.ndarray] = None) -> np.ndarray:
        """D u_{K,σ} = u_{K,σ} - u_K"""
        mesh = self.mesh
        edges = np.arange(mesh.n_edges) if edges is None else np.asarray(edges)
        return self.edge_values(edges) - self.cells[mesh.edge_cells[edges, 0]]

    def __sub__(self, other: "MeshField") -> "MeshField":
        return MeshField(self.mesh, self.cells - other.cells, self.dirichlet - other.dirichlet)

    def __add__(self, other: "MeshField") -> "MeshField":
        return MeshField(self.mesh, self.cells + other.cells, self.dirichlet + other.dirichlet)


# ---------------------------------------------------------------------- 构造


def _classify(spec: BoundarySpec, x: float, y: float, side: str) -> Tuple[EdgeKind, str]:
    if spec is None:
        tag: Optional[str] = "neumann"
    elif isinstance(spec, Mapping):
        tag = spec.get(side)
    else:
        tag = spec(x, y, side)

    if tag is None or not str(tag).strip():
        raise MeshError(f"Boundary edge at ({x:.6g}, {y:.6g}) on side '{side}' is unassigned")
    tag = str(tag).strip()
    if tag.lower() in NEUMANN_TAGS:
        return EdgeKind.NEUMANN, ""
    if tag.lower() in DIRICHLET_TAGS:
        return EdgeKind.DIRICHLET, side
    return EdgeKind.DIRICHLET, tag


def build_rect_mesh(
    nx: int,
    ny: int,
    domain: Tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0),
    boundary_spec: BoundarySpec = None,
    name: str = "rect",
) -> Mesh:
    """构造矩形张量网格

    Args:
        nx, ny: 两个方向的单元数
        domain: (xmin, xmax, ymin, ymax)
        boundary_spec: 边界分类，字典 {side: tag} 或函数 (x, y, side) -> tag；
            side 取 "bottom"/"right"/"top"/"left"，tag 为 "neumann"、"dirichlet"
            或接触名称（视为 Dirichlet），None 表示全部 Neumann

    Returns:
        可容许网格，单元编号 c = j*nx + i
    """
    if nx < 1 or ny < 1:
        raise MeshError(f"Mesh counts must be >= 1, got nx={nx}, ny={ny}")
    x0, x1, y0, y1 = (float(v) for v in domain)
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"Degenerate domain {domain}")

    hx = (x1 - x0) / nx
    hy = (y1 - y0) / ny
    xs = x0 + hx * np.arange(nx + 1)
    ys = y0 + hy * np.arange(ny + 1)
    xs[-1], ys[-1] = x1, y1

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    ii, jj = ii.ravel(), jj.ravel()
    centers = np.column_stack([(xs[ii] + xs[ii + 1]) / 2, (ys[jj] + ys[jj + 1]) / 2])
    n_cells = nx * ny
    areas = np.full(n_cells, hx * hy)
    diameters = np.full(n_cells, np.hypot(hx, hy))
    cell_vertices = np.stack(
        [
            np.column_stack([xs[ii], ys[jj]]),
            np.column_stack([xs[ii + 1], ys[jj]]),
            np.column_stack([xs[ii + 1], ys[jj + 1]]),
            np.column_stack([xs[ii], ys[jj + 1]]),
        ],
        axis=1,
    )

    def cid(i, j):
        return j * nx + i

    kinds, cells, lengths, dists, mids, normals, labels, verts = [], [], [], [], [], [], [], []

    def add(kind, k, l, length, dk, dl, a, b, normal, label=""):
        kinds.append(kind)
        cells.append((k, l))
        lengths.append(length)
        dists.append((dk, dl))
        mids.append(((a[0] + b[0]) / 2, (a[1] + b[1]) / 2))
        normals.append(normal)
        labels.append(label)
        verts.append((a, b))

    # 内部竖边 (i,j)|(i+1,j)
    for j in range(ny):
        for i in range(nx - 1):
            add(
                EdgeKind.INTERIOR, cid(i, j), cid(i + 1, j), hy, hx / 2, hx / 2,
                (xs[i + 1], ys[j]), (xs[i + 1], ys[j + 1]), (1.0, 0.0),
            )
    # 内部横边 (i,j)|(i,j+1)
    for j in range(ny - 1):
        for i in range(nx):
            add(
                EdgeKind.INTERIOR, cid(i, j), cid(i, j + 1), hx, hy / 2, hy / 2,
                (xs[i], ys[j + 1]), (xs[i + 1], ys[j + 1]), (0.0, 1.0),
            )

    boundary = []
    for i in range(nx):
        boundary.append(("bottom", cid(i, 0), hx, hy / 2, (xs[i], y0), (xs[i + 1], y0), (0.0, -1.0)))
    for j in range(ny):
        boundary.append(("right", cid(nx - 1, j), hy, hx / 2, (x1, ys[j]), (x1, ys[j + 1]), (1.0, 0.0)))
    for i in range(nx):
        boundary.append(("top", cid(i, ny - 1), hx, hy / 2, (xs[i], y1), (xs[i + 1], y1), (0.0, 1.0)))
    for j in range(ny):
        boundary.append(("left", cid(0, j), hy, hx / 2, (x0, ys[j]), (x0, ys[j + 1]), (-1.0, 0.0)))

    for side, k, length, dk, a, b, normal in boundary:
        kind, label = _classify(boundary_spec, (a[0] + b[0]) / 2, (a[1] + b[1]) / 2, side)
        add(kind, k, -1, length, dk, 0.0, a, b, normal, label)

    mesh = Mesh(
        centers=centers,
        areas=areas,
        diameters=diameters,
        edge_kind=np.array(kinds),
        edge_cells=np.array(cells),
        edge_length=np.array(lengths),
        edge_dist=np.array(dists),
        edge_midpoint=np.array(mids),
        edge_normal=np.array(normals),
        edge_contact=labels,
        cell_vertices=cell_vertices,
        edge_vertices=np.array(verts),
        name=name,
    )
    logger.info(f"Built {nx}x{ny} rectangular mesh on {domain}")
    return mesh


def _circumcenter(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]))
    if abs(d) < 1e-300:
        raise MeshError("Degenerate triangle with collinear vertices")
    a2, b2, c2 = a @ a, b @ b, c @ c
    ux = (a2 * (b[1] - c[1]) + b2 * (c[1] - a[1]) + c2 * (a[1] - b[1])) / d
    uy = (a2 * (c[0] - b[0]) + b2 * (a[0] - c[0]) + c2 * (b[0] - a[0])) / d
    return np.array([ux, uy])


def build_tri_mesh(
    points: np.ndarray,
    triangles: np.ndarray,
    boundary_spec: BoundarySpec = None,
    name: str = "tri",
) -> Mesh:
    """由给定三角剖分构造网格，x_K 取外心

    外心可能落在单元外（钝角三角形），此时仍构造网格（距离取绝对值），
    由 check_admissibility 报告问题。
    """
    points = np.asarray(points, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError("Triangles must be an (n, 3) index array")

    centers, areas, diameters, centroids = [], [], [], []
    for tri in triangles:
        a, b, c = points[tri]
        area = 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
        if area <= 0:
            raise MeshError(f"Degenerate triangle {tri.tolist()}")
        centers.append(_circumcenter(a, b, c))
        areas.append(area)
        diameters.append(max(np.linalg.norm(b - a), np.linalg.norm(c - b), np.linalg.norm(a - c)))
        centroids.append((a + b + c) / 3.0)

    owners: Dict[Tuple[int, int], List[int]] = {}
    for t, tri in enumerate(triangles):
        for u, v in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            owners.setdefault((min(u, v), max(u, v)), []).append(t)

    kinds, cells, lengths, dists, mids, normals, labels, verts = [], [], [], [], [], [], [], []
    for (u, v), adjacent in sorted(owners.items()):
        if len(adjacent) > 2:
            raise MeshError(f"Edge ({u}, {v}) is shared by more than two triangles")
        a, b = points[u], points[v]
        mid = (a + b) / 2
        tangent = b - a
        length = float(np.linalg.norm(tangent))
        normal = np.array([tangent[1], -tangent[0]]) / length
        k = adjacent[0]
        if (mid - centroids[k]) @ normal < 0:
            normal = -normal
        dk = abs(float((mid - centers[k]) @ normal))
        if len(adjacent) == 2:
            l = adjacent[1]
            dl = abs(float((centers[l] - mid) @ normal))
            kind, label = EdgeKind.INTERIOR, ""
        else:
            l, dl = -1, 0.0
            kind, label = _classify(boundary_spec, float(mid[0]), float(mid[1]), "boundary")
        if dk <= 0 or (kind == EdgeKind.INTERIOR and dl <= 0):
            raise MeshError(f"Circumcenter lies on edge ({u}, {v}); transmissibility undefined")
        kinds.append(kind)
        cells.append((k, l))
        lengths.append(length)
        dists.append((dk, dl))
        mids.append(mid)
        normals.append(normal)
        labels.append(label)
        verts.append((a, b))

    return Mesh(
        centers=np.array(centers),
        areas=np.array(areas),
        diameters=np.array(diameters),
        edge_kind=np.array(kinds),
        edge_cells=np.array(cells),
        edge_length=np.array(lengths),
        edge_dist=np.array(dists),
        edge_midpoint=np.array(mids),
        edge_normal=np.array(normals),
        edge_contact=labels,
        cell_vertices=points[triangles],
        edge_vertices=np.array(verts),
        name=name,
    )


# ---------------------------------------------------------------------- 可容许性


@dataclass
class AdmissibilityReport:
    """可容许性检查结果"""

    xi: float
    xi_min: float
    max_angle_defect: float
    orthogonality_tol: float
    orthogonality_violations: List[Tuple[int, float]] = field(default_factory=list)
    centers_outside: List[Tuple[int, int]] = field(default_factory=list)
    distance_mismatches: List[Tuple[int, float]] = field(default_factory=list)
    dirichlet_measure: float = 0.0
    geometry_available: bool = True

    @property
    def xi_ok(self) -> bool:
        return self.xi >= self.xi_min

    @property
    def passed(self) -> bool:
        return (
            self.xi_ok
            and not self.orthogonality_violations
            and not self.centers_outside
            and not self.distance_mismatches
        )


def check_admissibility(
    mesh: Mesh,
    xi_min: float = 0.0,
    orthogonality_tol: float = DEFAULT_ORTHOGONALITY_TOL,
    distance_tol: float = 1e-9,
) -> AdmissibilityReport:
    """检查正交性与正则性约束 d(x_K,σ) >= ξ diam(K)

    有边中点与法向量时，距离按几何重新计算（带符号，负值表示 x_K 在单元外）；
    否则退化为存储的距离。
    """
    geometry = mesh.edge_midpoint is not None and mesh.edge_normal is not None
    owners = mesh.owners
    interior = mesh.interior_edges
    neighbors = mesh.edge_cells[interior, 1]

    violations: List[Tuple[int, float]] = []
    outside: List[Tuple[int, int]] = []
    mismatches: List[Tuple[int, float]] = []
    max_defect = 0.0

    if geometry:
        mid, normal = mesh.edge_midpoint, mesh.edge_normal
        d_owner = np.einsum("ij,ij->i", mid - mesh.centers[owners], normal)
        d_neighbor = np.einsum(
            "ij,ij->i", mesh.centers[neighbors] - mid[interior], normal[interior]
        )

        if len(interior):
            link = mesh.centers[neighbors] - mesh.centers[owners[interior]]
            cosine = np.einsum("ij,ij->i", link, normal[interior]) / np.linalg.norm(link, axis=1)
            defects = np.arccos(np.clip(cosine, -1.0, 1.0))
            max_defect = float(defects.max())
            for e, defect in zip(interior, defects):
                if defect > orthogonality_tol:
                    violations.append((int(e), float(defect)))

        for e in np.flatnonzero(d_owner <= 0):
            outside.append((int(e), int(owners[e])))
        for pos in np.flatnonzero(d_neighbor <= 0):
            outside.append((int(interior[pos]), int(neighbors[pos])))

        stored = mesh.edge_dist[:, 0]
        scale = np.maximum(1.0, mesh.diameters[owners])
        for e in np.flatnonzero(np.abs(np.abs(d_owner) - stored) > distance_tol * scale):
            mismatches.append((int(e), float(abs(d_owner[e]) - stored[e])))
        stored_l = mesh.edge_dist[interior, 1]
        for pos in np.flatnonzero(np.abs(np.abs(d_neighbor) - stored_l) > distance_tol):
            mismatches.append((int(interior[pos]), float(abs(d_neighbor[pos]) - stored_l[pos])))
    else:
        d_owner = mesh.edge_dist[:, 0]
        d_neighbor = mesh.edge_dist[interior, 1]

    ratios = np.concatenate(
        [d_owner / mesh.diameters[owners], d_neighbor / mesh.diameters[neighbors]]
    )
    xi = float(ratios.min())

    report = AdmissibilityReport(
        xi=xi,
        xi_min=xi_min,
        max_angle_defect=max_defect,
        orthogonality_tol=orthogonality_tol,
        orthogonality_violations=violations,
        centers_outside=outside,
        distance_mismatches=mismatches,
        dirichlet_measure=mesh.boundary_measure(EdgeKind.DIRICHLET),
        geometry_available=geometry,
    )
    if report.passed:
        logger.info(f"Mesh '{mesh.name}' admissible: xi={xi:.6g}")
    else:
        logger.warning(
            f"Mesh '{mesh.name}' not admissible: xi={xi:.6g} (min {xi_min}), "
            f"{len(violations)} orthogonality violations, {len(outside)} centers outside"
        )
    return report


# ---------------------------------------------------------------------- 积分与范数

_GAUSS_2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)


def _evaluate(f: Callable, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    values = np.asarray(f(x, y), dtype=float)
    if values.ndim == 0:
        values = np.full(x.shape, float(values))
    elif values.ndim == 1 and values.shape[0] != x.size:
        values = np.broadcast_to(values, (x.size, values.shape[0])).copy()
    if not np.all(np.isfinite(values)):
        raise ModelError("Quadrature failed: function returned non-finite values")
    return values


def _reshape_values(values: np.ndarray, n: int, q: int) -> np.ndarray:
    # 标量: (n*q,) -> (n, q); 向量: (n*q, 3) 或 (3, n*q) -> (n, q, 3)
    if values.ndim == 1:
        return values.reshape(n, q)
    if values.shape[0] != n * q:
        values = values.T
    return values.reshape(n, q, -1)


def cell_average(
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    mesh: Mesh,
    quadrature: str = "midpoint",
) -> MeshField:
    """单元平均与 Dirichlet 边平均

    Args:
        f: 向量化函数 f(x, y)，返回标量数组或 (n, 3) 向量数组
        mesh: 网格
        quadrature: "midpoint"（质心）或 "gauss"（矩形单元 2x2 张量 Gauss，
            三角形单元 3 点边中点公式，边上 2 点 Gauss）
    """
    if quadrature not in ("midpoint", "gauss"):
        raise ValueError(f"Unknown quadrature '{quadrature}'")

    nc = mesh.n_cells
    if quadrature == "midpoint" or mesh.cell_vertices is None:
        pts = mesh.cell_centroids()
        weights = np.ones((nc, 1))
    elif mesh.cell_vertices.shape[1] == 4:
        lo = mesh.cell_vertices.min(axis=1)
        hi = mesh.cell_vertices.max(axis=1)
        mid, half = (lo + hi) / 2, (hi - lo) / 2
        gx, gy = np.meshgrid(_GAUSS_2, _GAUSS_2)
        offsets = np.column_stack([gx.ravel(), gy.ravel()])
        pts = (mid[:, None, :] + half[:, None, :] * offsets[None, :, :]).reshape(-1, 2)
        weights = np.full((nc, 4), 0.25)
    else:
        v = mesh.cell_vertices
        pts = np.stack([(v[:, 0] + v[:, 1]) / 2, (v[:, 1] + v[:, 2]) / 2, (v[:, 2] + v[:, 0]) / 2], axis=1)
        pts = pts.reshape(-1, 2)
        weights = np.full((nc, 3), 1.0 / 3.0)

    q = weights.shape[1]
    values = _reshape_values(_evaluate(f, pts[:, 0], pts[:, 1]), nc, q)
    cells = np.einsum("nq,nq...->n...", weights, values)

    edges = mesh.dirichlet_edges
    nd = len(edges)
    if nd == 0:
        return MeshField(mesh, cells, np.zeros((0,) + cells.shape[1:]))
    if quadrature == "gauss" and mesh.edge_vertices is not None:
        a = mesh.edge_vertices[edges, 0]
        b = mesh.edge_vertices[edges, 1]
        mid, half = (a + b) / 2, (b - a) / 2
        epts = (mid[:, None, :] + half[:, None, :] * _GAUSS_2[None, :, None]).reshape(-1, 2)
        eweights = np.full((nd, 2), 0.5)
    elif mesh.edge_midpoint is not None:
        epts = mesh.edge_midpoint[edges]
        eweights = np.ones((nd, 1))
    else:
        # 无几何信息时用单元值作为迹
        return MeshField(mesh, cells, cells[mesh.owners[edges]].copy())
    evalues = _reshape_values(_evaluate(f, epts[:, 0], epts[:, 1]), nd, eweights.shape[1])
    dirichlet = np.einsum("nq,nq...->n...", eweights, evalues)
    return MeshField(mesh, cells, dirichlet)


def h1_seminorm(u: MeshField) -> float:
    """离散 H^1 半范数 (Σ_σ τ_σ |D u_{K,σ}|^2)^{1/2}"""
    du = u.differences()
    squares = du**2 if du.ndim == 1 else np.sum(du**2, axis=1)
    return float(np.sqrt(np.sum(u.mesh.transmissibility * squares)))


def lp_norm(u: Union[MeshField, np.ndarray], p: float = 2.0, mesh: Optional[Mesh] = None) -> float:
    """L^p 范数 (Σ_K m(K)|u_K|^p)^{1/p}，p = inf 时取最大值"""
    if p < 1:
        raise ValueError(f"L^p norm requires p >= 1, got {p}")
    if isinstance(u, MeshField):
        mesh, values = u.mesh, u.cells
    else:
        if mesh is None:
            raise ValueError("A mesh is required for raw cell arrays")
        values = np.asarray(u, dtype=float)
    magnitude = np.abs(values) if values.ndim == 1 else np.linalg.norm(values, axis=1)
    if np.isinf(p):
        return float(magnitude.max()) if magnitude.size else 0.0
    return float(np.sum(mesh.areas * magnitude**p) ** (1.0 / p))

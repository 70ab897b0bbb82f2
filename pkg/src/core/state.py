"""离散状态 (n0, n⃗, V) 与未知量打包"""

from dataclasses import dataclass

import numpy as np

from ..utils.exceptions import MeshError
from .mesh import Mesh, MeshField

# 每个单元的未知量顺序: n0, n1, n2, n3, V
N_FIELDS = 5
FIELD_NAMES = ("n0", "n1", "n2", "n3", "V")


@dataclass
class State:
    """一个时间层上的状态

    Dirichlet 迹属于数据，打包/解包只涉及单元值，迹原样保留。
    """

    n0: MeshField
    n: MeshField
    V: MeshField
    k: int = 0
    t: float = 0.0

    def __post_init__(self):
        mesh = self.n0.mesh
        if self.n.mesh is not mesh or self.V.mesh is not mesh:
            raise MeshError("State fields live on different meshes")
        if self.n0.arity != 1 or self.V.arity != 1 or self.n.arity != 3:
            raise MeshError("State expects scalar n0, V and a 3-vector n")

    @property
    def mesh(self) -> Mesh:
        return self.n0.mesh

    def cell_matrix(self) -> np.ndarray:
        """(nc, 5) 单元值矩阵"""
        return np.column_stack([self.n0.cells, self.n.cells, self.V.cells])

    def pack(self) -> np.ndarray:
        """按单元主序展开: u[5K + f]"""
        return self.cell_matrix().ravel()

    def with_unknowns(self, u: np.ndarray) -> "State":
        cells = np.asarray(u, dtype=float).reshape(self.mesh.n_cells, N_FIELDS)
        return State(
            n0=self.n0.with_cells(cells[:, 0]),
            n=self.n.with_cells(cells[:, 1:4]),
            V=self.V.with_cells(cells[:, 4]),
            k=self.k,
            t=self.t,
        )

    def advanced(self, dt: float) -> "State":
        """步号加一后的副本"""
        return State(self.n0.copy(), self.n.copy(), self.V.copy(), k=self.k + 1, t=self.t + dt)

    def copy(self) -> "State":
        return State(self.n0.copy(), self.n.copy(), self.V.copy(), k=self.k, t=self.t)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.cell_matrix())))

    def difference_norm(self, other: "State") -> float:
        """网格加权 ℓ² 差 (Σ_K m(K) Σ_f |Δu_f|²)^{1/2}"""
        diff = self.cell_matrix() - other.cell_matrix()
        return float(np.sqrt(np.sum(self.mesh.areas * np.sum(diff**2, axis=1))))

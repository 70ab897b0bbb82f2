"""核心模块 - 网格、模型、通量、组装、求解器与诊断"""

from .mesh import Mesh, MeshField, build_rect_mesh, build_tri_mesh, check_admissibility
from .model import BoundaryData, InitialData, ModelParams, ProblemSetup
from .state import State
from .solver import SolverConfig, Trajectory, newton_step_solve, picard_solve, time_march

__all__ = [
    "Mesh",
    "MeshField",
    "build_rect_mesh",
    "build_tri_mesh",
    "check_admissibility",
    "BoundaryData",
    "InitialData",
    "ModelParams",
    "ProblemSetup",
    "State",
    "SolverConfig",
    "Trajectory",
    "newton_step_solve",
    "picard_solve",
    "time_march",
]

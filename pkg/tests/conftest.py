"""共享的小网格与离散问题"""

import sys
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.mesh import Mesh, build_rect_mesh
from src.core.model import BoundaryData, InitialData, ModelParams, ProblemSetup

CONTACTS = {"left": "source", "right": "drain", "top": "neumann", "bottom": "neumann"}


def contact_traces(mesh: Mesh, values: Dict[str, Tuple[float, float]]) -> Tuple[np.ndarray, np.ndarray]:
    """按接触名称填写 (n^D, V^D)"""
    n_trace = np.zeros(mesh.n_dirichlet)
    V_trace = np.zeros(mesh.n_dirichlet)
    for name, (n_value, V_value) in values.items():
        index = mesh.dirichlet_index[mesh.contacts[name]]
        n_trace[index] = n_value
        V_trace[index] = V_value
    return n_trace, V_trace


def make_problem(
    nx: int = 4,
    ny: int = 4,
    boundary_spec=CONTACTS,
    contacts: Optional[Dict[str, Tuple[float, float]]] = None,
    doping=0.0,
    D=1.0,
    p=0.0,
    gamma: float = 0.0,
    tau: float = 1.0,
    lambda_d: float = 1.0,
    dt: float = 0.05,
    m=(0.0, 0.0, 1.0),
    n0=None,
    n=None,
    n_ref=None,
    V_ref=None,
) -> ProblemSetup:
    """矩形网格上的离散问题，缺省左右两侧为接触 (n^D, V^D) = (1, 0)"""
    mesh = build_rect_mesh(nx, ny, boundary_spec=boundary_spec, name=f"test_{nx}x{ny}")
    nc = mesh.n_cells
    m_cells = np.broadcast_to(np.asarray(m, dtype=float), (nc, 3)).copy()
    doping_cells = np.broadcast_to(np.asarray(doping, dtype=float), (nc,)).copy()

    values = contacts if contacts is not None else {name: (1.0, 0.0) for name in mesh.contacts}
    n_trace, V_trace = contact_traces(mesh, values)

    n0_cells = np.ones(nc) if n0 is None else np.broadcast_to(np.asarray(n0, float), (nc,)).copy()
    n_cells = np.zeros((nc, 3)) if n is None else np.broadcast_to(np.asarray(n, float), (nc, 3)).copy()
    return ProblemSetup(
        mesh=mesh,
        params=ModelParams(
            m=m_cells, doping=doping_cells, D=D, p=p, gamma=gamma, tau=tau, lambda_d=lambda_d, dt=dt
        ),
        boundary=BoundaryData(n_trace=n_trace, V_trace=V_trace, n_ref=n_ref, V_ref=V_ref),
        initial=InitialData(n0=n0_cells, n=n_cells),
        name=f"test_{nx}x{ny}",
    )


@pytest.fixture
def square_mesh() -> Mesh:
    return build_rect_mesh(4, 4, boundary_spec=CONTACTS)


@pytest.fixture
def small_problem() -> ProblemSetup:
    """4×4 掺杂问题，左右接触电势不同"""
    return make_problem(
        4,
        4,
        contacts={"source": (1.0, 0.0), "drain": (1.0, -0.5)},
        doping=1.0,
        p=0.5,
        gamma=0.5,
        tau=0.5,
    )

"""网格、网格函数与离散范数测试"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.core.mesh import (
    EdgeKind,
    MeshField,
    build_rect_mesh,
    build_tri_mesh,
    cell_average,
    check_admissibility,
    h1_seminorm,
    lp_norm,
)
from src.data.parsers import MeshFileParser, read_mesh, write_mesh
from src.utils.exceptions import MeshError
from tests.conftest import CONTACTS


def test_rect_mesh_counts():
    """测试矩形网格的单元与边数"""
    mesh = build_rect_mesh(4, 3, boundary_spec=CONTACTS)
    assert mesh.n_cells == 12
    assert len(mesh.interior_edges) == 3 * 3 + 4 * 2
    assert mesh.n_edges == 17 + 2 * (4 + 3)
    assert mesh.n_dirichlet == 6
    assert len(mesh.neumann_edges) == 8
    assert mesh.total_area == pytest.approx(1.0)


def test_rect_mesh_is_admissible():
    """测试矩形网格满足正交性，ξ = (h/2)/diam"""
    mesh = build_rect_mesh(4, 4, boundary_spec=CONTACTS)
    report = check_admissibility(mesh)
    assert report.passed
    assert report.xi == pytest.approx(1.0 / (2.0 * np.sqrt(2.0)))
    assert report.max_angle_defect == pytest.approx(0.0, abs=1e-12)
    assert report.dirichlet_measure == pytest.approx(2.0)


def test_rect_mesh_contacts_and_transmissibility(square_mesh):
    """测试接触标签与边界传导系数 τ = m(σ)/d(x_K, σ)"""
    assert set(square_mesh.contacts) == {"source", "drain"}
    left = square_mesh.contact_edges("source")
    assert len(left) == 4
    assert_allclose(square_mesh.transmissibility[left], 0.25 / 0.125)
    for e in left:
        edge = square_mesh.edge(int(e))
        assert edge.kind == EdgeKind.DIRICHLET
        assert edge.neighbor is None
        assert square_mesh.centers[edge.owner, 0] == pytest.approx(0.125)


def test_unassigned_boundary_edge_raises():
    """测试未分类的边界边"""
    with pytest.raises(MeshError):
        build_rect_mesh(2, 2, boundary_spec={"left": "dirichlet"})


def test_degenerate_domain_raises():
    """测试退化区域"""
    with pytest.raises(MeshError):
        build_rect_mesh(2, 2, domain=(0.0, 0.0, 0.0, 1.0))


def test_unknown_contact_raises(square_mesh):
    with pytest.raises(MeshError):
        square_mesh.contact_edges("gate")


def test_mesh_field_edge_values(square_mesh):
    """测试边值：内部边取邻居，Dirichlet 取迹，Neumann 取自身"""
    cells = np.arange(square_mesh.n_cells, dtype=float)
    trace = np.full(square_mesh.n_dirichlet, -1.0)
    u = MeshField(square_mesh, cells, trace)
    values = u.edge_values()

    interior = square_mesh.interior_edges
    assert_allclose(values[interior], cells[square_mesh.edge_cells[interior, 1]])
    assert_allclose(values[square_mesh.dirichlet_edges], -1.0)
    neumann = square_mesh.neumann_edges
    assert_allclose(values[neumann], cells[square_mesh.owners[neumann]])
    assert_allclose(u.differences()[neumann], 0.0)


def test_mesh_field_shape_mismatch(square_mesh):
    with pytest.raises(MeshError):
        MeshField(square_mesh, np.zeros(3))


def test_tri_mesh_acute_pair_is_admissible():
    """测试锐角三角形对：外心在单元内，共享边正交"""
    points = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.8], [0.5, -0.8]])
    mesh = build_tri_mesh(points, [[0, 1, 2], [1, 0, 3]])
    assert mesh.n_cells == 2
    assert mesh.n_edges == 5
    assert len(mesh.interior_edges) == 1
    assert_allclose(mesh.centers[0], [0.5, 0.24375])
    assert_allclose(mesh.centers[1], [0.5, -0.24375])

    shared = mesh.interior_edges[0]
    assert_allclose(mesh.edge_dist[shared], [0.24375, 0.24375])
    assert check_admissibility(mesh).passed


def test_tri_mesh_obtuse_center_outside():
    """测试钝角三角形：外心落在单元外被报告"""
    points = np.array([[0.0, 0.0], [4.0, 0.0], [2.0, 0.5]])
    mesh = build_tri_mesh(points, [[0, 1, 2]])
    report = check_admissibility(mesh)
    assert not report.passed
    assert report.centers_outside


def test_tri_mesh_circumcenter_on_edge_raises():
    """测试直角三角形：外心落在斜边上"""
    points = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    with pytest.raises(MeshError):
        build_tri_mesh(points, [[0, 1, 2], [0, 2, 3]])


def test_cell_average_linear_function_is_exact(square_mesh):
    """测试线性函数的单元平均与边平均"""
    for quadrature in ("midpoint", "gauss"):
        field = cell_average(lambda x, y: 2.0 * x + y, square_mesh, quadrature)
        expected = 2.0 * square_mesh.centers[:, 0] + square_mesh.centers[:, 1]
        assert_allclose(field.cells, expected, atol=1e-14)
        mids = square_mesh.edge_midpoint[square_mesh.dirichlet_edges]
        assert_allclose(field.dirichlet, 2.0 * mids[:, 0] + mids[:, 1], atol=1e-14)


def test_cell_average_rejects_non_finite(square_mesh):
    from src.utils.exceptions import ModelError

    with pytest.raises(ModelError):
        cell_average(lambda x, y: np.log(x - 2.0), square_mesh)


def test_h1_seminorm_of_linear_function():
    """测试 u = x 的离散 H¹ 半范数等于区域面积"""
    mesh = build_rect_mesh(5, 3, boundary_spec=CONTACTS)
    u = cell_average(lambda x, y: x, mesh)
    assert h1_seminorm(u) ** 2 == pytest.approx(1.0)


def test_lp_norms(square_mesh):
    u = MeshField.constant(square_mesh, 2.0)
    assert lp_norm(u, 2) == pytest.approx(2.0)
    assert lp_norm(u, 1) == pytest.approx(2.0)
    assert lp_norm(u, np.inf) == pytest.approx(2.0)
    vector = MeshField.constant(square_mesh, [3.0, 0.0, 4.0])
    assert lp_norm(vector, np.inf) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        lp_norm(u, 0.5)


def test_mesh_file_export_and_import(tmp_path, square_mesh):
    """测试网格文本格式写出后可读回"""
    path = write_mesh(square_mesh, tmp_path / "square.mesh")
    loaded = read_mesh(path)
    assert loaded.n_cells == square_mesh.n_cells
    assert loaded.n_edges == square_mesh.n_edges
    assert_allclose(loaded.transmissibility, square_mesh.transmissibility)
    assert set(loaded.contacts) == {"source", "drain"}
    assert check_admissibility(loaded).passed


def test_mesh_parser_rejects_bad_input():
    parser = MeshFileParser()
    with pytest.raises(MeshError):
        parser.parse("cells two edges 1\n")
    with pytest.raises(MeshError):
        parser.parse("")
    with pytest.raises(MeshError):
        parser.parse("cells 1 edges 1\n0 0.5 0.5 1.0 1.4\n")


TWO_CELL_MESH = """\
# 两个单位正方形，左为 source，右为 drain
cells 2 edges 7
0 0.5 0.5 1.0 1.4142135623730951
1 1.5 0.5 1.0 1.4142135623730951
0 I 0 1 1.0 0.5 1.0 0.0 1.0 0.5 0.5
1 D 0 0.0 0.5 -1.0 0.0 1.0 0.5 source
2 D 1 2.0 0.5 1.0 0.0 1.0 0.5 drain
3 N 0 0.5 0.0 0.0 -1.0 1.0 0.5
4 N 0 0.5 1.0 0.0 1.0 1.0 0.5
5 N 1 1.5 0.0 0.0 -1.0 1.0 0.5
6 N 1 1.5 1.0 0.0 1.0 1.0 0.5
"""


def test_mesh_parser_reads_hand_written_records():
    """测试按文档列序手写的网格文件"""
    mesh = MeshFileParser().parse(TWO_CELL_MESH, name="two_cells")
    assert mesh.n_cells == 2
    assert mesh.n_edges == 7
    assert mesh.transmissibility[0] == pytest.approx(1.0)
    assert mesh.transmissibility[1] == pytest.approx(2.0)
    assert list(mesh.contact_edges("source")) == [1]
    assert list(mesh.contact_edges("drain")) == [2]
    assert check_admissibility(mesh).passed

    with pytest.raises(MeshError):
        MeshFileParser().parse(TWO_CELL_MESH.replace("0 I 0 1 1.0 0.5 1.0", "0 I 0 1 1.0 0.5"))
    with pytest.raises(MeshError):
        MeshFileParser().parse(TWO_CELL_MESH.replace("0.5 source", "0.5 source extra"))

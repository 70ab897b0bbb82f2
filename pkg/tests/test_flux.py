"""Bernoulli 函数与 Scharfetter-Gummel 通量测试"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.core.flux import (
    FLUX_FORMS,
    PRIME_SERIES_CUTOFF,
    SERIES_CUTOFF,
    accumulate_edges,
    bernoulli,
    bernoulli_prime,
    bernoulli_sym,
    compute_edge_fluxes,
    sg_edge_flux,
    spin_combine,
    spin_coupling_matrix,
)
from src.core.model import edge_coefficients
from src.utils.exceptions import ModelError
from tests.conftest import make_problem


@pytest.fixture
def samples():
    rng = np.random.default_rng(7)
    wide = rng.uniform(-50.0, 50.0, 10_000)
    tiny = rng.uniform(-1e-3, 1e-3, 1_000)
    return np.concatenate([wide, tiny, [0.0, SERIES_CUTOFF, -SERIES_CUTOFF, 700.0, -700.0]])


def test_bernoulli_at_zero():
    """测试 B(0) = 1，标量输入返回 float"""
    assert bernoulli(0.0) == 1.0
    assert isinstance(bernoulli(0.0), float)
    assert bernoulli_sym(0.0) == 1.0
    assert bernoulli_prime(0.0) == pytest.approx(-0.5)


def test_bernoulli_difference_identity(samples):
    """测试 B(x) − B(−x) = −x"""
    assert_allclose(bernoulli(samples) - bernoulli(-samples), -samples, rtol=1e-12, atol=1e-14)


def test_bernoulli_exponential_identity():
    """测试 B(−x) e^{−x} = B(x)"""
    x = np.linspace(-30.0, 30.0, 601)
    assert_allclose(bernoulli(-x) * np.exp(-x), bernoulli(x), rtol=1e-12)


def test_bernoulli_no_overflow():
    values = bernoulli(np.array([-800.0, 800.0]))
    assert np.all(np.isfinite(values))
    assert values[0] == pytest.approx(800.0)
    assert values[1] == 0.0


def test_bernoulli_sym_bounds(samples):
    """测试 B^s ≥ 1 且为 B(x) 与 B(−x) 的平均"""
    sym = bernoulli_sym(samples)
    assert np.all(sym >= 1.0)
    moderate = np.abs(samples) < 30.0
    expected = 0.5 * (bernoulli(samples[moderate]) + bernoulli(-samples[moderate]))
    assert_allclose(sym[moderate], expected, rtol=1e-12)


def test_bernoulli_prime_matches_difference_quotient():
    """测试 B' 与中心差商一致"""
    x = np.array([-20.0, -3.0, -0.5, -0.02, 0.003, 0.05, 1.0, 4.0, 25.0])
    h = 1e-5
    quotient = (bernoulli(x + h) - bernoulli(x - h)) / (2.0 * h)
    assert_allclose(bernoulli_prime(x), quotient, rtol=1e-6, atol=1e-10)


def test_bernoulli_prime_continuous_at_cutoff():
    """测试级数与闭式表达在切换点两侧连续"""
    for edge in (PRIME_SERIES_CUTOFF, -PRIME_SERIES_CUTOFF):
        inside = bernoulli_prime(edge * (1.0 - 1e-9))
        outside = bernoulli_prime(edge * (1.0 + 1e-9))
        assert inside == pytest.approx(outside, abs=1e-10)


def test_flux_forms_agree():
    """测试四种等价写法给出相同通量"""
    rng = np.random.default_rng(11)
    n_k = rng.uniform(0.0, 3.0, 500)
    n_edge = rng.uniform(0.0, 3.0, 500)
    dV = rng.uniform(-20.0, 20.0, 500)
    tau = rng.uniform(0.5, 2.0, 500)
    reference = sg_edge_flux(n_k, n_edge, dV, tau)
    for form in FLUX_FORMS:
        assert_allclose(sg_edge_flux(n_k, n_edge, dV, tau, form=form), reference, rtol=1e-9, atol=1e-9)


def test_flux_vanishes_at_thermal_equilibrium():
    """测试 n_{K,σ} = n_K e^{−DV} 时通量为零"""
    dV = np.linspace(-15.0, 15.0, 61)
    n_k = np.full_like(dV, 0.7)
    n_edge = n_k * np.exp(-dV)
    flux = sg_edge_flux(n_k, n_edge, dV, 1.0)
    assert_allclose(flux, 0.0, atol=1e-12 * np.max(n_edge))


def test_flux_pure_diffusion():
    """测试 DV = 0 时退化为 −τ Dn"""
    assert sg_edge_flux(2.0, 0.5, 0.0, 4.0) == pytest.approx(6.0)


def test_flux_vector_densities_share_potential():
    """测试自旋分量逐列使用同一个 DV"""
    n_k = np.array([[0.1, -0.2, 0.3], [0.0, 0.5, -0.5]])
    n_edge = np.array([[0.2, 0.0, -0.1], [0.4, 0.1, 0.0]])
    dV = np.array([0.3, -1.5])
    flux = sg_edge_flux(n_k, n_edge, dV, np.array([1.0, 2.0]))
    for c in range(3):
        assert_allclose(flux[:, c], sg_edge_flux(n_k[:, c], n_edge[:, c], dV, np.array([1.0, 2.0])))


def test_unknown_flux_form():
    with pytest.raises(ValueError):
        sg_edge_flux(1.0, 1.0, 0.0, 1.0, form="upwind")


def test_spin_combine_without_polarization():
    """测试 p = 0 时 j0 = D J0、j⃗ = D J⃗"""
    J = np.array([0.3, -0.1, 0.7])
    j0, j = spin_combine(1.5, J, 2.0, 0.0, 1.0, np.array([0.0, 0.0, 1.0]))
    assert j0 == pytest.approx(3.0)
    assert_allclose(j, 2.0 * J)


def test_spin_coupling_matrix_matches_combine():
    """测试 4×4 耦合矩阵与逐分量组合一致"""
    rng = np.random.default_rng(3)
    m = rng.normal(size=(20, 3))
    m /= np.linalg.norm(m, axis=1)[:, None]
    p = np.full(20, 0.7)
    D = np.full(20, 1.3)
    eta = np.sqrt(1.0 - p**2)
    J0 = rng.normal(size=20)
    J = rng.normal(size=(20, 3))

    A = spin_coupling_matrix(D, p, m)
    stacked = np.einsum("nij,nj->ni", A, np.column_stack([J0, J]))
    j0, j = spin_combine(J0, J, D, p, eta, m)
    assert_allclose(stacked[:, 0], j0, rtol=1e-12, atol=1e-12)
    assert_allclose(stacked[:, 1:], j, rtol=1e-12, atol=1e-12)


def test_full_polarization_rejected():
    with pytest.raises(ModelError):
        spin_coupling_matrix(1.0, 1.0, np.array([0.0, 0.0, 1.0]))
    with pytest.raises(ModelError):
        spin_combine(1.0, np.zeros(3), 1.0, 1.0, 0.0, np.array([0.0, 0.0, 1.0]))


def test_accumulate_edges_telescopes(square_mesh):
    """测试内部边贡献在单元求和中相互抵消"""
    rng = np.random.default_rng(5)
    values = rng.normal(size=square_mesh.n_edges)
    totals = accumulate_edges(square_mesh, values)
    boundary = np.concatenate([square_mesh.dirichlet_edges, square_mesh.neumann_edges])
    assert totals.sum() == pytest.approx(values[boundary].sum())

    vectors = rng.normal(size=(square_mesh.n_edges, 3))
    assert_allclose(accumulate_edges(square_mesh, vectors).sum(axis=0), vectors[boundary].sum(axis=0))


def test_neumann_edges_carry_no_flux():
    """测试 Neumann 边通量置零"""
    setup = make_problem(3, 3, doping=0.0)
    mesh = setup.mesh
    rng = np.random.default_rng(2)
    ne = mesh.n_edges
    fluxes = compute_edge_fluxes(
        mesh,
        edge_coefficients(mesh, setup.params),
        rng.uniform(0.5, 1.5, ne),
        rng.uniform(0.5, 1.5, ne),
        rng.normal(scale=0.1, size=(ne, 3)),
        rng.normal(scale=0.1, size=(ne, 3)),
        rng.normal(size=ne),
    )
    assert_allclose(fluxes.j0[mesh.neumann_edges], 0.0)
    assert_allclose(fluxes.j[mesh.neumann_edges], 0.0)
    assert np.any(fluxes.j0[mesh.interior_edges] != 0.0)

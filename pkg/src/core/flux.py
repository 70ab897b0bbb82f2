"""Scharfetter-Gummel 通量与 Bernoulli 核函数"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from ..utils.exceptions import ModelError
from .mesh import Mesh
from .model import EdgeCoefficients

ArrayLike = Union[float, np.ndarray]

# 小 |x| 使用 Taylor 级数的阈值
SERIES_CUTOFF = 1e-4
PRIME_SERIES_CUTOFF = 1e-2

FLUX_FORMS = ("bernoulli", "drift_left", "drift_right", "symmetric")


def _scalar_or_array(x: np.ndarray, original: ArrayLike) -> ArrayLike:
    return float(x) if np.ndim(original) == 0 else x


def bernoulli(x: ArrayLike) -> ArrayLike:
    """B(x) = x/(e^x − 1)，B(0) = 1

    |x| < 1e-4 使用级数，x > 0 用 x e^{−x}/(1 − e^{−x}) 形式避免溢出。
    """
    x_arr = np.asarray(x, dtype=float)
    out = np.empty_like(x_arr)
    small = np.abs(x_arr) < SERIES_CUTOFF
    positive = (~small) & (x_arr > 0)
    negative = (~small) & (x_arr < 0)

    xs = x_arr[small]
    x2 = xs * xs
    out[small] = 1.0 - xs / 2.0 + x2 / 12.0 - x2 * x2 / 720.0 + x2 * x2 * x2 / 30240.0

    xp = x_arr[positive]
    out[positive] = xp * np.exp(-xp) / (-np.expm1(-xp))

    xn = x_arr[negative]
    out[negative] = xn / np.expm1(xn)
    return _scalar_or_array(out, x)


def bernoulli_sym(x: ArrayLike) -> ArrayLike:
    """B^s(x) = (x/2) coth(x/2) = (B(x) + B(−x))/2 ≥ 1"""
    x_arr = np.asarray(x, dtype=float)
    out = np.empty_like(x_arr)
    small = np.abs(x_arr) < SERIES_CUTOFF
    xs = x_arr[small]
    x2 = xs * xs
    out[small] = 1.0 + x2 / 12.0 - x2 * x2 / 720.0 + x2 * x2 * x2 / 30240.0
    xl = np.abs(x_arr[~small]) / 2.0
    out[~small] = xl / np.tanh(xl)
    return _scalar_or_array(out, x)


def bernoulli_prime(x: ArrayLike) -> ArrayLike:
    """B'(x) = (e^x − x e^x − 1)/(e^x − 1)²"""
    x_arr = np.asarray(x, dtype=float)
    out = np.empty_like(x_arr)
    small = np.abs(x_arr) < PRIME_SERIES_CUTOFF
    positive = (~small) & (x_arr > 0)
    negative = (~small) & (x_arr < 0)

    xs = x_arr[small]
    x2 = xs * xs
    out[small] = -0.5 + xs / 6.0 - xs * x2 / 180.0 + xs * x2 * x2 / 5040.0 - xs * x2**3 / 151200.0

    xn = x_arr[negative]
    out[negative] = (np.exp(xn) * (1.0 - xn) - 1.0) / np.expm1(xn) ** 2

    xp = x_arr[positive]
    out[positive] = (np.exp(-xp) * (1.0 - xp) - np.exp(-2.0 * xp)) / np.expm1(-xp) ** 2
    return _scalar_or_array(out, x)


def sg_edge_flux(
    n_k: ArrayLike,
    n_edge: ArrayLike,
    dV: ArrayLike,
    tau: ArrayLike,
    form: str = "bernoulli",
) -> ArrayLike:
    """Scharfetter-Gummel 边通量 J = τ_σ(B(DV) n_K − B(−DV) n_{K,σ})

    Args:
        n_k: 单元值 n_K
        n_edge: 边值 n_{K,σ}
        dV: D V_{K,σ}
        tau: 传导系数 τ_σ
        form: 等价改写之一："bernoulli"、"drift_left"（−DV n_K − B(−DV) Dn）、
            "drift_right"（−DV n_{K,σ} − B(DV) Dn）、"symmetric"
            （−½(n_K + n_{K,σ}) DV − B^s(DV) Dn）
    """
    n_k = np.asarray(n_k, dtype=float)
    n_edge = np.asarray(n_edge, dtype=float)
    dV = np.asarray(dV, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if dV.ndim < n_k.ndim:
        dV = dV.reshape(dV.shape + (1,) * (n_k.ndim - dV.ndim))
    if tau.ndim < n_k.ndim:
        tau = tau.reshape(tau.shape + (1,) * (n_k.ndim - tau.ndim))
    dn = n_edge - n_k

    if form == "bernoulli":
        flux = tau * (bernoulli(dV) * n_k - bernoulli(-dV) * n_edge)
    elif form == "drift_left":
        flux = tau * (-dV * n_k - bernoulli(-dV) * dn)
    elif form == "drift_right":
        flux = tau * (-dV * n_edge - bernoulli(dV) * dn)
    elif form == "symmetric":
        flux = tau * (-0.5 * (n_k + n_edge) * dV - bernoulli_sym(dV) * dn)
    else:
        raise ValueError(f"Unknown flux form '{form}', expected one of {FLUX_FORMS}")

    if np.ndim(flux) == 0:
        return float(flux)
    return flux


def spin_coupling_matrix(D: ArrayLike, p: ArrayLike, m: np.ndarray) -> np.ndarray:
    """(j0, j⃗) = A (J0, J⃗) 中的 4×4 矩阵 A，按边堆叠为 (n, 4, 4)"""
    m = np.asarray(m, dtype=float).reshape(-1, 3)
    D = np.broadcast_to(np.asarray(D, dtype=float), (m.shape[0],))
    p = np.broadcast_to(np.asarray(p, dtype=float), (m.shape[0],))
    if np.any(p >= 1) or np.any(p < 0):
        raise ModelError("Edge polarization must lie in [0, 1)")
    eta = np.sqrt(1.0 - p**2)
    c = D / eta**2

    A = np.zeros((m.shape[0], 4, 4))
    A[:, 0, 0] = c
    A[:, 0, 1:] = (-2.0 * p * c)[:, None] * m
    A[:, 1:, 0] = (-0.5 * p * c)[:, None] * m
    A[:, 1:, 1:] = c[:, None, None] * (
        eta[:, None, None] * np.eye(3)[None]
        + (1.0 - eta)[:, None, None] * np.einsum("ni,nj->nij", m, m)
    )
    return A


def spin_combine(
    J0: ArrayLike,
    J: np.ndarray,
    D: ArrayLike,
    p: ArrayLike,
    eta: ArrayLike,
    m: np.ndarray,
) -> Tuple[ArrayLike, np.ndarray]:
    """由 SG 通量组合出电荷/自旋通量

    j0 = (D/η²)(J0 − 2p J⃗·m⃗)
    j⃗  = (D/η²)(η J⃗ + (1 − η)(J⃗·m⃗)m⃗ − (p/2) J0 m⃗)
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr >= 1):
        raise ModelError(f"Polarization must be < 1, got {np.max(p_arr)}")
    scalar = np.ndim(J0) == 0
    J0 = np.atleast_1d(np.asarray(J0, dtype=float))
    J = np.asarray(J, dtype=float).reshape(-1, 3)
    m = np.asarray(m, dtype=float).reshape(-1, 3)
    D = np.atleast_1d(np.asarray(D, dtype=float))
    p_arr = np.atleast_1d(p_arr)
    eta = np.atleast_1d(np.asarray(eta, dtype=float))

    c = D / eta**2
    Jm = np.einsum("ij,ij->i", J, m)
    j0 = c * (J0 - 2.0 * p_arr * Jm)
    j = c[:, None] * (eta[:, None] * J + ((1.0 - eta) * Jm)[:, None] * m - (0.5 * p_arr * J0)[:, None] * m)
    if scalar:
        return float(j0[0]), j[0]
    return j0, j


@dataclass
class EdgeFluxSet:
    """逐边通量（方向为 K_σ → 外侧）

    J0, J: 原始 SG 通量；j0, j: 自旋耦合后的通量；Neumann 边上全为 0。
    """

    J0: np.ndarray
    J: np.ndarray
    j0: np.ndarray
    j: np.ndarray

    def cell_divergence(self, mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
        """Σ_{σ∈E_K} j_{K,σ}（内部边对 L 取负号），结果为 (nc,), (nc, 3)"""
        return accumulate_edges(mesh, self.j0), accumulate_edges(mesh, self.j)

    def contact_sum(self, edges: np.ndarray) -> Tuple[float, np.ndarray]:
        edges = np.asarray(edges, dtype=np.int64)
        return float(self.j0[edges].sum()), self.j[edges].sum(axis=0)


def accumulate_edges(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """将逐边量累加到单元：owner 加 +v，内部边的 L 加 −v

    使用 np.bincount，求和顺序确定，结果可复现。
    """
    values = np.asarray(values, dtype=float)
    owners = mesh.owners
    interior = mesh.interior_edges
    neighbors = mesh.edge_cells[interior, 1]
    nc = mesh.n_cells

    def _accumulate(column: np.ndarray) -> np.ndarray:
        total = np.bincount(owners, weights=column, minlength=nc)
        total -= np.bincount(neighbors, weights=column[interior], minlength=nc)
        return total

    if values.ndim == 1:
        return _accumulate(values)
    return np.column_stack([_accumulate(values[:, c]) for c in range(values.shape[1])])


def compute_edge_fluxes(
    mesh: Mesh,
    coefficients: EdgeCoefficients,
    n0_cells: np.ndarray,
    n0_edges: np.ndarray,
    n_cells: np.ndarray,
    n_edges: np.ndarray,
    dV: np.ndarray,
) -> EdgeFluxSet:
    """计算全部边通量

    输入为每条边的 (owner 值, 边值)：n0_cells、n0_edges 形状 (ne,)，
    n_cells、n_edges 形状 (ne, 3)，dV 为 D V_{K,σ}。Neumann 边置零。
    """
    tau = mesh.transmissibility
    J0 = sg_edge_flux(n0_cells, n0_edges, dV, tau)
    J = sg_edge_flux(n_cells, n_edges, dV, tau)

    neumann = mesh.neumann_edges
    J0 = np.array(J0, dtype=float)
    J = np.array(J, dtype=float)
    J0[neumann] = 0.0
    J[neumann] = 0.0

    j0, j = spin_combine(J0, J, coefficients.D, coefficients.p, coefficients.eta, coefficients.m)
    return EdgeFluxSet(J0=J0, J=J, j0=np.asarray(j0), j=np.asarray(j))

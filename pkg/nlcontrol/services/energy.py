"""エネルギー汎関数.

非局所・局所エネルギー W_g(u) = Σ W(x, u, Du) h^n - ⟨g, u⟩ と、
その第一変分・方向微分・ヘッセ行列を評価するモジュール。

主な機能:
    - EnergyParams: 指数 p、楕円係数 𝔸、密度の種類
    - eval_energy / eval_first_variation / eval_Y: エネルギーと導関数
    - eval_hessian_matrix: 自由度上の疎ヘッセ行列 (p-Laplacian 密度)
    - certify_growth / double_well: ユーザー定義密度の検証と二重井戸密度
"""

import logging
import weakref
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import sparse

from nlcontrol.constants.numerics import P_REGULARIZATION
from nlcontrol.core.exceptions import DensityError
from nlcontrol.discretization.grid import Field, Grid
from nlcontrol.discretization.operators import AnyGradientOp

logger = logging.getLogger(__name__)

DensityFn = Callable[[NDArray, NDArray, NDArray], NDArray]

_MATRIX_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


@dataclass(frozen=True)
class CustomDensity:
    """ユーザー定義のエネルギー密度 W(x, u, A).

    各関数は評価節点ごとの配列 x (M, n), u (M, n), A (M, n, n) を受け取る。

    Attributes:
        name (str): 密度の名前
        value (DensityFn): W の値 (M,)
        grad_A (DensityFn): D_A W (M, n, n)
        grad_u (Optional[DensityFn]): D_u W (M, n)、u に依存しない場合 None
        c (float): 下界 c|A|^p - c0 ≤ W の c
        c0 (float): 同じく c0
        c2 (float): 上界 W ≤ C2 (1 + |u|^p + |A|^p) の C2
    """

    name: str
    value: DensityFn
    grad_A: DensityFn
    grad_u: Optional[DensityFn] = None
    c: float = 0.0
    c0: float = 0.0
    c2: float = 1.0


@dataclass(frozen=True, eq=False)
class EnergyParams:
    """エネルギーのパラメータ.

    Attributes:
        p (float): 指数 (1 < p < ∞)
        coefficient (NDArray): 全節点上の対称係数 𝔸 (N, n, n)
        mu (float): 楕円性定数 (min 𝔸ξ:ξ ≥ μ)
        density (Optional[CustomDensity]): None のとき p-Laplacian 密度
        epsilon (float): |A|_ε の正則化パラメータ (p ≠ 2 のみ使用)
    """

    p: float
    coefficient: NDArray[np.float64] = field(repr=False)
    mu: float = 1.0
    density: Optional[CustomDensity] = None
    epsilon: float = P_REGULARIZATION

    def __post_init__(self) -> None:
        """指数と係数の対称性・楕円性を検証する."""
        if not 1.0 < self.p < np.inf:
            raise DensityError(f"p must lie in (1, inf), got {self.p}")
        coeff = np.asarray(self.coefficient, dtype=float)
        object.__setattr__(self, "coefficient", coeff)
        asym = np.abs(coeff - np.transpose(coeff, (0, 2, 1))).max(axis=(1, 2))
        if np.any(asym > 1e-12 * (1.0 + np.abs(coeff).max())):
            raise DensityError(
                "coefficient is not symmetric", int(np.argmax(asym))
            )
        smallest = np.linalg.eigvalsh(coeff)[:, 0]
        if np.any(smallest < self.mu * (1.0 - 1e-12)):
            node = int(np.argmin(smallest))
            raise DensityError(
                f"coefficient ellipticity {smallest[node]:.6g} < mu={self.mu}",
                node,
            )

    @property
    def is_plaplacian(self) -> bool:
        """p-Laplacian 密度かどうか."""
        return self.density is None

    @property
    def dual_exponent(self) -> float:
        """p' = p / (p - 1)."""
        return self.p / (self.p - 1.0)

    def growth_constants(self) -> Tuple[float, float]:
        """下界 c|A|^p - c0 ≤ W の (c, c0) を返す."""
        if self.density is not None:
            return self.density.c, self.density.c0
        if self.p >= 2.0:
            return self.mu / self.p, 0.0
        c0 = self.mu * self.epsilon**self.p / self.p
        return self.mu / (2.0 * self.p), c0


@dataclass(frozen=True)
class EnergyValue:
    """エネルギーの値.

    Attributes:
        total (float): density - load
        density (float): 密度の積分
        load (float): ⟨g, u⟩
    """

    total: float
    density: float
    load: float


def constant_coefficient(
    grid: Grid, value: Union[float, ArrayLike]
) -> NDArray[np.float64]:
    """全節点で一定の係数 (スカラーなら value·I) を返す."""
    matrix = np.asarray(value, dtype=float)
    if matrix.ndim == 0:
        matrix = float(matrix) * np.eye(grid.n)
    return np.broadcast_to(matrix, (grid.num_nodes, grid.n, grid.n)).copy()


def diagonal_coefficient(
    grid: Grid, diagonal: Sequence[float]
) -> NDArray[np.float64]:
    """全節点で一定の対角係数を返す."""
    return constant_coefficient(grid, np.diag(np.asarray(diagonal, float)))


def coefficient_from_file(
    grid: Grid, path: Union[str, Path]
) -> NDArray[np.float64]:
    """節点ごとの係数を .npy ファイルから読み込む.

    Raises:
        DensityError: 形状が (N, n, n) でない場合
    """
    values = np.load(Path(path))
    expected = (grid.num_nodes, grid.n, grid.n)
    if values.shape != expected:
        raise DensityError(
            f"coefficient file {path} has shape {values.shape}, "
            f"expected {expected}"
        )
    return values.astype(float)


def _plaplacian_terms(
    A: NDArray, C: NDArray, p: float, eps: float
) -> Tuple[NDArray, NDArray]:
    """p-Laplacian 密度の値 W と流束 Φ = D_A W を返す."""
    CA = np.matmul(C, A)
    q = np.sum(CA * A, axis=(1, 2))
    if p == 2.0:
        return 0.5 * q, CA
    r = np.sqrt(np.sum(A * A, axis=(1, 2)) + eps**2)
    W = r ** (p - 2.0) * q / p
    phi = (2.0 / p) * (r ** (p - 2.0))[:, None, None] * CA + (
        (p - 2.0) / p
    ) * (r ** (p - 4.0) * q)[:, None, None] * A
    return W, phi


def _plaplacian_hessian(
    A: NDArray, C: NDArray, p: float, eps: float
) -> NDArray:
    """節点ごとの D_A²W を (M, n², n²) の行列として返す (行優先の vec)."""
    m_count, n, _ = A.shape
    kron = np.einsum("mik,jl->mijkl", C, np.eye(n)).reshape(
        m_count, n * n, n * n
    )
    if p == 2.0:
        return kron
    CA = np.matmul(C, A)
    q = np.sum(CA * A, axis=(1, 2))
    r = np.sqrt(np.sum(A * A, axis=(1, 2)) + eps**2)
    a = A.reshape(m_count, n * n)
    ca = CA.reshape(m_count, n * n)
    c1 = 2.0 * (p - 2.0) / p * r ** (p - 4.0)
    c2 = 2.0 / p * r ** (p - 2.0)
    c3 = (p - 2.0) * (p - 4.0) / p * r ** (p - 6.0) * q
    c4 = (p - 2.0) / p * r ** (p - 4.0) * q
    outer_mixed = (
        ca[:, :, None] * a[:, None, :] + a[:, :, None] * ca[:, None, :]
    )
    outer_a = a[:, :, None] * a[:, None, :]
    eye = np.eye(n * n)[None]
    return (
        c1[:, None, None] * outer_mixed
        + c2[:, None, None] * kron
        + c3[:, None, None] * outer_a
        + c4[:, None, None] * eye
    )


def _check_finite(values: NDArray, op: AnyGradientOp, what: str) -> None:
    """非有限値があれば節点番号付きで DensityError を送出する."""
    bad = ~np.isfinite(values.reshape(values.shape[0], -1)).all(axis=1)
    if np.any(bad):
        node = int(op.eval_nodes[np.argmax(bad)])
        raise DensityError(f"non-finite {what}", node)


def _density_terms(
    u_values: NDArray, op: AnyGradientOp, params: EnergyParams
) -> Tuple[NDArray, NDArray, Optional[NDArray], NDArray]:
    """評価節点上の (W, D_A W, D_u W, Du) を返す."""
    A = op.apply(u_values)
    if params.density is None:
        C = params.coefficient[op.eval_nodes]
        W, phi = _plaplacian_terms(A, C, params.p, params.epsilon)
        du = None
    else:
        x = op.grid.coords[op.eval_nodes]
        u_eval = u_values[op.eval_nodes]
        W = np.asarray(params.density.value(x, u_eval, A), dtype=float)
        phi = np.asarray(params.density.grad_A(x, u_eval, A), dtype=float)
        du = (
            None
            if params.density.grad_u is None
            else np.asarray(params.density.grad_u(x, u_eval, A), dtype=float)
        )
    _check_finite(W, op, "energy density")
    return W, phi, du, A


def energy_and_gradient(
    u_values: NDArray,
    g_values: NDArray,
    op: AnyGradientOp,
    params: EnergyParams,
) -> Tuple[float, NDArray]:
    """エネルギーと自由度上のユークリッド勾配 (N, n) を返す.

    勾配は自由度以外でゼロであり、L² 表現 (第一変分) の h^n 倍となる。
    """
    W, phi, du, _ = _density_terms(u_values, op, params)
    w = op.quad_weights
    h_n = op.grid.cell_volume
    energy = float(np.sum(w * W)) - float(np.sum(g_values * u_values)) * h_n
    grad = op.adjoint(w[:, None, None] * phi)
    if du is not None:
        grad[op.eval_nodes] += w[:, None] * du
    grad -= h_n * g_values
    grad[~op.free_mask] = 0.0
    if not np.isfinite(energy):
        raise DensityError("non-finite energy")
    return energy, grad


def eval_energy(
    u: Field, g: Field, op: AnyGradientOp, params: EnergyParams
) -> EnergyValue:
    """エネルギー W_g(u) を評価する.

    Args:
        u (Field): 状態 (カラー / 境界でゼロ)
        g (Field): 荷重
        op (AnyGradientOp): 非局所または局所の勾配作用素
        params (EnergyParams): エネルギーのパラメータ

    Returns:
        EnergyValue: total = density - load

    Raises:
        DensityError: 密度値が有限でない場合 (節点番号付き)
    """
    W, _, _, _ = _density_terms(u.values, op, params)
    density = float(np.sum(op.quad_weights * W))
    load = float(np.sum(g.values * u.values)) * op.grid.cell_volume
    return EnergyValue(total=density - load, density=density, load=load)


def eval_first_variation(
    u: Field, g: Field, op: AnyGradientOp, params: EnergyParams
) -> Field:
    """第一変分の L² 表現を返す.

    ⟨variation, v⟩ = Σ variation·v h^n が W_g の v 方向微分に等しい。
    自由度以外の成分はゼロ。

    Args:
        u (Field): 状態
        g (Field): 荷重
        op (AnyGradientOp): 勾配作用素
        params (EnergyParams): エネルギーのパラメータ

    Returns:
        Field: 第一変分
    """
    _, grad = energy_and_gradient(u.values, g.values, op, params)
    return Field(u.grid, grad / op.grid.cell_volume)


def eval_Y(
    u: Field, v: Field, op: AnyGradientOp, params: EnergyParams
) -> float:
    """方向微分 𝒴(u, v) = Σ Φ(Du) : Dv h^n を返す."""
    _, phi, du, _ = _density_terms(u.values, op, params)
    w = op.quad_weights
    Dv = op.apply(v.values)
    value = float(np.sum(w[:, None, None] * phi * Dv))
    if du is not None:
        value += float(np.sum(w[:, None] * du * v.values[op.eval_nodes]))
    return value


def operator_matrix(op: AnyGradientOp) -> sparse.csr_matrix:
    """作用素の疎行列 (作用素ごとにキャッシュ)."""
    matrix = _MATRIX_CACHE.get(op)
    if matrix is None:
        matrix = op.to_matrix()
        _MATRIX_CACHE[op] = matrix
    return matrix


def free_dofs(op: AnyGradientOp) -> NDArray[np.int64]:
    """(節点, 成分) を平坦化した自由度番号."""
    return np.flatnonzero(np.repeat(op.free_mask, op.grid.n))


def eval_hessian_matrix(
    u: Field, op: AnyGradientOp, params: EnergyParams
) -> sparse.csr_matrix:
    """自由度上のヘッセ行列 Gᵀ diag(w D_A²W) G を返す.

    Args:
        u (Field): 線形化点
        op (AnyGradientOp): 勾配作用素
        params (EnergyParams): p-Laplacian 密度のパラメータ

    Returns:
        sparse.csr_matrix: (F·n, F·n) の対称行列

    Raises:
        DensityError: ユーザー定義密度の場合
    """
    if not params.is_plaplacian:
        raise DensityError("hessian is only available for p-Laplacian density")
    A = op.apply(u.values)
    C = params.coefficient[op.eval_nodes]
    blocks = _plaplacian_hessian(A, C, params.p, params.epsilon)
    blocks = blocks * op.quad_weights[:, None, None]
    _check_finite(blocks, op, "energy hessian")
    m_count = blocks.shape[0]
    block_diag = sparse.bsr_matrix(
        (blocks, np.arange(m_count), np.arange(m_count + 1)),
        shape=(m_count * blocks.shape[1], m_count * blocks.shape[1]),
    )
    G = operator_matrix(op)[:, free_dofs(op)]
    return (G.T @ block_diag.tocsr() @ G).tocsr()


def certify_growth(
    density: CustomDensity,
    n: int,
    p: float,
    samples: int = 200,
    seed: int = 0,
) -> int:
    """ランダム標本上で p 増大条件を検証する.

    c|A|^p - c0 ≤ W(x, u, A) ≤ C2 (1 + |u|^p + |A|^p) を確認する。

    Args:
        density (CustomDensity): 検証する密度
        n (int): 空間次元
        p (float): 指数
        samples (int): 標本数
        seed (int): 乱数シード

    Returns:
        int: 検証した標本数

    Raises:
        DensityError: 条件に違反した標本がある場合 (標本番号付き)
    """
    rng = np.random.default_rng(seed)
    scale = np.logspace(-2, 2, samples)
    A = rng.standard_normal((samples, n, n)) * scale[:, None, None]
    u = rng.standard_normal((samples, n)) * scale[::-1, None]
    x = rng.uniform(size=(samples, n))
    W = np.asarray(density.value(x, u, A), dtype=float)
    norm_A = np.linalg.norm(A.reshape(samples, -1), axis=1)
    norm_u = np.linalg.norm(u, axis=1)
    lower = density.c * norm_A**p - density.c0
    upper = density.c2 * (1.0 + norm_u**p + norm_A**p)
    slack = 1e-12 * (1.0 + np.abs(W))
    bad = (W < lower - slack) | (W > upper + slack) | ~np.isfinite(W)
    if np.any(bad):
        index = int(np.argmax(bad))
        raise DensityError(
            f"density {density.name!r} violates p-growth bounds "
            f"(W={W[index]:.6g}, bounds=[{lower[index]:.6g}, "
            f"{upper[index]:.6g}]) at sample",
            index,
        )
    logger.debug(f"増大条件を確認: {density.name}, samples={samples}")
    return samples


def double_well(
    p: float, height: float = 1.0, epsilon: float = P_REGULARIZATION
) -> CustomDensity:
    """非凸な二重井戸密度を返す.

    W(u, A) = (1/p)|A|_ε^p + height·(1 - |u|²)² / (1 + |u|²)²
    ポテンシャル項は [0, height] に収まり、|u| = 1 で最小となる。

    Args:
        p (float): 勾配項の指数
        height (float): ポテンシャルの高さ (> 0)
        epsilon (float): |A|_ε の正則化

    Returns:
        CustomDensity: p 増大条件を満たす密度
    """
    if height <= 0.0:
        raise DensityError(f"double-well height must be positive: {height}")

    def _r(A: NDArray) -> NDArray:
        return np.sqrt(np.sum(A * A, axis=(1, 2)) + epsilon**2)

    def value(x: NDArray, u: NDArray, A: NDArray) -> NDArray:
        s = np.sum(u * u, axis=1)
        return _r(A) ** p / p + height * (1.0 - s) ** 2 / (1.0 + s) ** 2

    def grad_A(x: NDArray, u: NDArray, A: NDArray) -> NDArray:
        return (_r(A) ** (p - 2.0))[:, None, None] * A

    def grad_u(x: NDArray, u: NDArray, A: NDArray) -> NDArray:
        s = np.sum(u * u, axis=1)
        return (-8.0 * height * (1.0 - s) / (1.0 + s) ** 3)[:, None] * u

    return CustomDensity(
        name="double-well",
        value=value,
        grad_A=grad_A,
        grad_u=grad_u,
        c=1.0 / p,
        c0=0.0,
        c2=max(height, 1.0) + 1.0,
    )

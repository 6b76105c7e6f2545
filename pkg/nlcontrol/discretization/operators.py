"""勾配作用素.

離散非局所勾配 D^s_δ とその随伴 (離散非局所発散)、および局所参照
問題で用いる中心差分勾配を組み立てるモジュール。

主な機能:
    - assemble_nl_gradient: 平行移動不変なステンシルとしての D^s_δ の組み立て
    - apply_nl_gradient / apply_nl_divergence: 勾配と発散の作用
    - assemble_local_gradient: 閉直方体上の中心差分勾配
    - to_matrix / dump_operator: 疎行列化とトリプレット出力
"""

import logging
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np
from numpy.typing import NDArray
from scipy import integrate, sparse

from nlcontrol.constants.numerics import (
    NEAR_CELL_QUAD_RTOL,
    NEAR_FIELD_RADIUS_CELLS,
    QUAD_LIMIT,
)
from nlcontrol.core.exceptions import GridError, QuadratureError
from nlcontrol.discretization.grid import Field, Grid, MatrixField
from nlcontrol.discretization.kernel import KernelSpec, kernel_mass

logger = logging.getLogger(__name__)


def _node_multi_index(grid: Grid, nodes: NDArray[np.int64]) -> NDArray:
    """平坦化された節点番号を軸ごとの格子番号 (M, n) に戻す."""
    return np.stack(np.unravel_index(nodes, grid.shape), axis=1)


def _gradient_matrix(
    grid: Grid,
    eval_nodes: NDArray[np.int64],
    nbr: NDArray[np.int64],
    coeff: NDArray[np.float64],
    self_coeff: NDArray[np.float64],
) -> sparse.csr_matrix:
    """ステンシル (M, K) から (M·n², N·n) の CSR 行列を作る.

    Du(m)_{ab} = self_coeff[m, b] u_a(i_m) + Σ_k coeff[m, k, b] u_a(nbr[m, k])
    """
    n = grid.n
    m_count, k_count = nbr.shape
    a = np.arange(n)
    b = np.arange(n)
    m_idx = np.arange(m_count)

    # 近傍項: (m, k, a, b)
    rows_nb = (
        m_idx[:, None, None, None] * n * n
        + a[None, None, :, None] * n
        + b[None, None, None, :]
    )
    rows_nb = np.broadcast_to(rows_nb, (m_count, k_count, n, n))
    cols_nb = np.broadcast_to(
        nbr[:, :, None, None] * n + a[None, None, :, None],
        (m_count, k_count, n, n),
    )
    vals_nb = np.broadcast_to(
        coeff[:, :, None, :], (m_count, k_count, n, n)
    )

    # 自己項: (m, a, b)
    rows_self = (
        m_idx[:, None, None] * n * n + a[None, :, None] * n + b[None, None, :]
    )
    cols_self = np.broadcast_to(
        eval_nodes[:, None, None] * n + a[None, :, None], (m_count, n, n)
    )
    vals_self = np.broadcast_to(self_coeff[:, None, :], (m_count, n, n))

    rows = np.concatenate([rows_nb.ravel(), rows_self.ravel()])
    cols = np.concatenate([cols_nb.ravel(), cols_self.ravel()])
    vals = np.concatenate([vals_nb.ravel(), vals_self.ravel()])
    keep = vals != 0.0
    matrix = sparse.coo_matrix(
        (vals[keep], (rows[keep], cols[keep])),
        shape=(m_count * n * n, grid.num_nodes * n),
    )
    return matrix.tocsr()


@dataclass(eq=False)
class NonlocalGradientOp:
    """離散非局所勾配.

    格子が一様なので重みはオフセット k のみに依存する。Ω の各節点 i に
    ついて (Du)(i) = Σ_k w_k (u(i) - u(i-k)) ⊗ e_k を計算する。

    Attributes:
        grid (Grid): 格子
        kernel (KernelSpec): カーネル仕様
        offsets (NDArray): 格子オフセット (K, n)
        weights (NDArray): 相互作用重み w_k ≥ 0 (K,)
        directions (NDArray): 単位方向 e_k (K, n)
        neighbors (NDArray): 近傍節点番号 (M, K)
        moment_factor (float): モーメント補正の倍率
    """

    grid: Grid
    kernel: KernelSpec
    offsets: NDArray[np.int64] = field(repr=False)
    weights: NDArray[np.float64] = field(repr=False)
    directions: NDArray[np.float64] = field(repr=False)
    neighbors: NDArray[np.int64] = field(repr=False)
    moment_factor: float = 1.0

    @property
    def eval_nodes(self) -> NDArray[np.int64]:
        """Ω の節点."""
        return self.grid.omega_indices

    @property
    def quad_weights(self) -> NDArray[np.float64]:
        """評価節点の求積重み h^n."""
        return np.full(self.eval_nodes.shape[0], self.grid.cell_volume)

    @property
    def free_mask(self) -> NDArray[np.bool_]:
        """Ω_{-δ} の節点."""
        return self.grid.free_mask

    def apply(self, values: NDArray[np.float64]) -> NDArray[np.float64]:
        """(N, n) の節点値に勾配を作用させ (M, n, n) を返す."""
        values = np.asarray(values, dtype=float)
        own = values[self.eval_nodes]
        diff = own[:, None, :] - values[self.neighbors]  # (M, K, n)
        return np.einsum(
            "mka,k,kb->mab", diff, self.weights, self.directions
        )

    def adjoint(self, phi: NDArray[np.float64]) -> NDArray[np.float64]:
        """(M, n, n) の行列場に転置を作用させ (N, n) を返す."""
        contrib = np.einsum(
            "mab,k,kb->mka", phi, self.weights, self.directions
        )
        out = np.zeros((self.grid.num_nodes, self.grid.n))
        out[self.eval_nodes] += contrib.sum(axis=1)
        np.add.at(
            out,
            self.neighbors.ravel(),
            -contrib.reshape(-1, self.grid.n),
        )
        return out

    def to_matrix(self) -> sparse.csr_matrix:
        """(M·n², N·n) の CSR 行列を返す."""
        coeff = -(self.weights[:, None] * self.directions)  # (K, n)
        m_count = self.eval_nodes.shape[0]
        coeff = np.broadcast_to(coeff, (m_count,) + coeff.shape)
        self_coeff = np.broadcast_to(
            (self.weights[:, None] * self.directions).sum(axis=0),
            (m_count, self.grid.n),
        )
        return _gradient_matrix(
            self.grid, self.eval_nodes, self.neighbors, coeff, self_coeff
        )


@dataclass(eq=False)
class LocalGradientOp:
    """局所領域 (閉直方体) 上の差分勾配.

    局所領域は Ω を inset_layers 層だけ縮めた閉直方体で、その境界節点
    では u = 0 とする。内部節点では中心差分、境界節点では領域内側への
    片側差分を用い、求積は台形則 (境界の軸ごとに 1/2) で行う。

    Attributes:
        grid (Grid): 格子
        inset_layers (int): Ω からの縮小層数
        nodes (NDArray): 閉直方体の節点番号 (M,)
        stencil (NDArray): 軸ごとの (後方, 前方) 近傍番号 (M, n, 2)
        coefficients (NDArray): (後方, 自身, 前方) の差分係数 (M, n, 3)
        trapezoid (NDArray): 台形則の重み (M,)
    """

    grid: Grid
    inset_layers: int
    nodes: NDArray[np.int64] = field(repr=False)
    stencil: NDArray[np.int64] = field(repr=False)
    coefficients: NDArray[np.float64] = field(repr=False)
    trapezoid: NDArray[np.float64] = field(repr=False)

    @property
    def eval_nodes(self) -> NDArray[np.int64]:
        """閉直方体の節点."""
        return self.nodes

    @property
    def quad_weights(self) -> NDArray[np.float64]:
        """台形則の重み."""
        return self.trapezoid

    @property
    def free_mask(self) -> NDArray[np.bool_]:
        """開直方体 (局所問題の自由度)."""
        return self.grid.open_box_mask(self.inset_layers)

    @property
    def domain_mask(self) -> NDArray[np.bool_]:
        """閉直方体."""
        return self.grid.closed_box_mask(self.inset_layers)

    def apply(self, values: NDArray[np.float64]) -> NDArray[np.float64]:
        """(N, n) の節点値に勾配を作用させ (M, n, n) を返す."""
        values = np.asarray(values, dtype=float)
        back = values[self.stencil[:, :, 0]]  # (M, n_axis, n_comp)
        fwd = values[self.stencil[:, :, 1]]
        own = values[self.nodes][:, None, :]
        c = self.coefficients
        grad = c[:, :, 0:1] * back + c[:, :, 1:2] * own + c[:, :, 2:3] * fwd
        # grad[m, axis, comp] -> (∇u)_{comp, axis}
        return np.transpose(grad, (0, 2, 1))

    def adjoint(self, phi: NDArray[np.float64]) -> NDArray[np.float64]:
        """(M, n, n) の行列場に転置を作用させ (N, n) を返す."""
        psi = np.transpose(phi, (0, 2, 1))  # (M, axis, comp)
        c = self.coefficients
        out = np.zeros((self.grid.num_nodes, self.grid.n))
        np.add.at(out, self.stencil[:, :, 0], c[:, :, 0:1] * psi)
        np.add.at(out, self.stencil[:, :, 1], c[:, :, 2:3] * psi)
        out[self.nodes] += (c[:, :, 1:2] * psi).sum(axis=1)
        return out

    def to_matrix(self) -> sparse.csr_matrix:
        """(M·n², N·n) の CSR 行列を返す."""
        n = self.grid.n
        m_count = self.nodes.shape[0]
        nbr = self.stencil.reshape(m_count, 2 * n)
        coeff = np.zeros((m_count, 2 * n, n))
        for axis in range(n):
            coeff[:, 2 * axis, axis] = self.coefficients[:, axis, 0]
            coeff[:, 2 * axis + 1, axis] = self.coefficients[:, axis, 2]
        return _gradient_matrix(
            self.grid, self.nodes, nbr, coeff, self.coefficients[:, :, 1]
        )


AnyGradientOp = Union[NonlocalGradientOp, LocalGradientOp]


def _stencil_offsets(n: int, layers: int) -> NDArray[np.int64]:
    """0 < |k| < layers を満たす格子オフセットを列挙する."""
    axis = range(-layers, layers + 1)
    offsets = np.array(list(product(axis, repeat=n)), dtype=np.int64)
    sq = np.sum(offsets**2, axis=1)
    return offsets[(sq > 0) & (sq < layers**2)]


def _near_cell_weight(
    kernel: KernelSpec, key: Tuple[int, ...], h: float
) -> float:
    """近接セル上の ∫ ρ(z)/|z| dz を適応求積で求める."""
    lo = [(k - 0.5) * h for k in key]
    hi = [(k + 0.5) * h for k in key]
    breaks = [
        r
        for r in (kernel.cutoff.b0 * kernel.delta, kernel.delta)
        if lo[0] < r < hi[0]
    ]

    if kernel.n == 1:
        value, abserr = integrate.quad(
            lambda z: float(kernel.radial(abs(z))) / abs(z),
            lo[0],
            hi[0],
            points=breaks or None,
            epsabs=0.0,
            epsrel=NEAR_CELL_QUAD_RTOL * 1e-2,
            limit=QUAD_LIMIT,
        )
    else:

        def integrand(y: float, x: float) -> float:
            r = float(np.hypot(x, y))
            return float(kernel.radial(r)) / r

        value, abserr = integrate.dblquad(
            integrand,
            lo[0],
            hi[0],
            lo[1],
            hi[1],
            epsabs=0.0,
            epsrel=NEAR_CELL_QUAD_RTOL * 1e-2,
        )
    if abserr > NEAR_CELL_QUAD_RTOL * abs(value):
        raise QuadratureError("near-cell quadrature failed", abserr, key)
    return value


def _stencil_weights(
    kernel: KernelSpec, offsets: NDArray[np.int64], h: float
) -> NDArray[np.float64]:
    """各オフセットのセル積分重みを返す.

    重みは |k_j| の並べ替えに対して不変 (格子の対称性) なので、
    対称軌道ごとに一度だけ求める。
    """
    cache: Dict[Tuple[int, ...], float] = {}
    weights = np.empty(offsets.shape[0])
    for idx, k in enumerate(offsets):
        key = tuple(sorted((abs(int(v)) for v in k), reverse=True))
        if key not in cache:
            dist = float(np.linalg.norm(key))
            if dist > NEAR_FIELD_RADIUS_CELLS:
                r = dist * h
                cache[key] = float(kernel.radial(r)) / r * h**kernel.n
            else:
                cache[key] = _near_cell_weight(kernel, key, h)
        weights[idx] = cache[key]
    return weights


def assemble_nl_gradient(
    grid: Grid, kernel: KernelSpec, moment_correction: bool = True
) -> NonlocalGradientOp:
    """非局所勾配作用素を組み立てる.

    遠方セル (|k|h > 2h) は中点則、近接セルはセル上の適応求積で
    重みを求め、自己セルの重みは 0 とする。moment_correction が真の
    とき、Σ_k w_k |k|h がカーネル質量に一致するよう全体を一様に
    スケーリングする (アフィン場の勾配を厳密に再現する)。

    Args:
        grid (Grid): 格子
        kernel (KernelSpec): カーネル仕様 (grid と同じ δ)
        moment_correction (bool): モーメント補正を行うか

    Returns:
        NonlocalGradientOp: 組み立てた作用素

    Raises:
        GridError: δ が一致しない、またはステンシルが空の場合
        QuadratureError: 近接セルの求積が収束しない場合
    """
    if abs(kernel.delta - grid.delta) > 1e-12 * grid.delta:
        raise GridError(
            f"kernel delta {kernel.delta} differs from grid delta {grid.delta}"
        )
    if kernel.n != grid.n:
        raise GridError(f"kernel dimension {kernel.n} != grid dimension")

    offsets = _stencil_offsets(grid.n, grid.layers)
    if offsets.shape[0] == 0:
        raise GridError(
            f"delta={grid.delta} leaves no lattice neighbour strictly "
            "inside the horizon; use delta >= 2h"
        )
    lengths = np.linalg.norm(offsets, axis=1)
    directions = offsets / lengths[:, None]
    weights = _stencil_weights(kernel, offsets, grid.h)

    factor = 1.0
    if moment_correction:
        discrete = float(np.sum(weights * lengths * grid.h))
        factor = kernel_mass(kernel) / discrete
        weights = weights * factor

    eval_index = _node_multi_index(grid, grid.omega_indices)
    nbr_index = eval_index[:, None, :] - offsets[None, :, :]
    neighbors = np.ravel_multi_index(
        tuple(np.moveaxis(nbr_index, 2, 0)), grid.shape
    )
    logger.debug(
        f"非局所勾配を組み立て: K={offsets.shape[0]}, "
        f"M={eval_index.shape[0]}, moment_factor={factor:.12g}"
    )
    return NonlocalGradientOp(
        grid=grid,
        kernel=kernel,
        offsets=offsets,
        weights=weights,
        directions=directions,
        neighbors=neighbors,
        moment_factor=factor,
    )


def apply_nl_gradient(op: AnyGradientOp, u: Field) -> MatrixField:
    """勾配を作用させる.

    Args:
        op (AnyGradientOp): 勾配作用素
        u (Field): op の格子上の場

    Returns:
        MatrixField: 評価節点上の勾配
    """
    return MatrixField(op.grid, op.eval_nodes, op.apply(u.values))


def apply_nl_divergence(op: AnyGradientOp, phi: MatrixField) -> Field:
    """発散を作用させる.

    離散 L² 内積 (重み h^n) に関して勾配の負の随伴となるよう
    -Dᵀ W φ / h^n として計算する。

    Args:
        op (AnyGradientOp): 勾配作用素
        phi (MatrixField): 評価節点上の行列場

    Returns:
        Field: 全節点上の発散
    """
    weighted = phi.values * (op.quad_weights / op.grid.cell_volume)[
        :, None, None
    ]
    return Field(op.grid, -op.adjoint(weighted))


def _axis_stencil(
    grid: Grid, nodes: NDArray[np.int64], inset: int
) -> Tuple[NDArray, NDArray, NDArray]:
    """閉直方体の各節点について軸ごとの近傍と差分係数を求める."""
    n = grid.n
    h = grid.h
    index = _node_multi_index(grid, nodes)
    offset = index - grid.layers  # Ω 下端からの層番号
    cells = np.array(grid.shape) - 2 * grid.layers - 1
    lower = offset == inset
    upper = offset == (cells - inset)[None, :]

    stencil = np.empty((nodes.shape[0], n, 2), dtype=np.int64)
    coeff = np.zeros((nodes.shape[0], n, 3))
    trapezoid = np.full(nodes.shape[0], grid.cell_volume)
    for axis in range(n):
        step = np.zeros(n, dtype=np.int64)
        step[axis] = 1
        back = np.clip(index - step, 0, None)
        fwd = np.minimum(index + step, np.array(grid.shape) - 1)
        stencil[:, axis, 0] = np.ravel_multi_index(tuple(back.T), grid.shape)
        stencil[:, axis, 1] = np.ravel_multi_index(tuple(fwd.T), grid.shape)

        lo = lower[:, axis]
        hi = upper[:, axis]
        mid = ~(lo | hi)
        coeff[mid, axis] = (-0.5 / h, 0.0, 0.5 / h)
        coeff[lo, axis] = (0.0, -1.0 / h, 1.0 / h)
        coeff[hi, axis] = (-1.0 / h, 1.0 / h, 0.0)
        trapezoid[lo | hi] *= 0.5
    return stencil, coeff, trapezoid


def assemble_local_gradient(grid: Grid, inset_layers: int) -> LocalGradientOp:
    """局所参照問題の勾配作用素を組み立てる.

    Args:
        grid (Grid): 格子
        inset_layers (int): 局所領域を Ω から縮める層数
            (s スイープでは δ/h で Ω_{-δ}、δ スイープでは 0 で Ω)

    Returns:
        LocalGradientOp: 組み立てた作用素

    Raises:
        GridError: 局所領域に内部節点が無い場合
    """
    if inset_layers < 0 or inset_layers > grid.layers:
        raise GridError(
            f"inset_layers must lie in [0, {grid.layers}], got {inset_layers}"
        )
    nodes = np.flatnonzero(grid.closed_box_mask(inset_layers))
    if not np.any(grid.open_box_mask(inset_layers)):
        raise GridError("local domain has no interior nodes")
    stencil, coeff, trapezoid = _axis_stencil(grid, nodes, inset_layers)
    logger.debug(
        f"局所勾配を組み立て: inset={inset_layers}, M={nodes.shape[0]}"
    )
    return LocalGradientOp(
        grid=grid,
        inset_layers=inset_layers,
        nodes=nodes,
        stencil=stencil,
        coefficients=coeff,
        trapezoid=trapezoid,
    )


def dump_operator(op: AnyGradientOp, path: Union[str, Path]) -> Path:
    """作用素の (row, col, weight) トリプレットをテキストで書き出す.

    Args:
        op (AnyGradientOp): 勾配作用素
        path (Union[str, Path]): 出力先

    Returns:
        Path: 書き出したファイル
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coo = op.to_matrix().tocoo()
    table = np.column_stack([coo.row, coo.col, coo.data])
    np.savetxt(
        path,
        table,
        fmt=("%d", "%d", "%.17g"),
        header=f"rows={coo.shape[0]} cols={coo.shape[1]} nnz={coo.nnz}",
    )
    logger.info(f"作用素を書き出し: {path} (nnz={coo.nnz})")
    return path

"""計算格子.

直方体領域 Ω とその膨張 Ω_δ・収縮 Ω_{-δ} を一様格子で表現し、
二重カラー (非局所Dirichlet条件) 付きのベクトル場を扱うモジュール。

主な機能:
    - build_grid: Ω_δ を覆う一様格子と節点分類の生成
    - Field / MatrixField: 節点上のベクトル場・行列場
    - lp_norm: 節点求積による L^p ノルム
    - apply_collar_zero: 両カラー上の値をゼロにする
    - transfer_nodes: 同じ (box, h) の格子間の節点対応
"""

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import NDArray

from nlcontrol.constants.numerics import INTEGRALITY_TOL
from nlcontrol.core.exceptions import GridError

logger = logging.getLogger(__name__)

Box = Tuple[Tuple[float, float], ...]


class NodeLabel(IntEnum):
    """節点の分類."""

    EXTERIOR_COLLAR = 0  # Ω_δ \ Ω
    INTERIOR_COLLAR = 1  # Ω \ Ω_{-δ}
    FREE = 2  # Ω_{-δ}


@dataclass(frozen=True, eq=False)
class Grid:
    """Ω_δ を覆う一様直交格子.

    節点は軸ごとに lo - δ から hi + δ まで h 間隔で並び、C順で
    平坦化される。depth は各節点の ∂Ω からの (h 単位の) 層深さで、
    Ω の外では 0 以下となる。

    Attributes:
        n (int): 空間次元
        box (Box): Ω の軸ごとの範囲
        h (float): 格子幅
        delta (float): ホライズン
        shape (Tuple[int, ...]): 軸ごとの節点数
        layers (int): δ/h
        coords (NDArray): 節点座標 (N, n)
        depth (NDArray): 層深さ (N,)
        labels (NDArray): NodeLabel の配列 (N,)
    """

    n: int
    box: Box
    h: float
    delta: float
    shape: Tuple[int, ...]
    layers: int
    coords: NDArray[np.float64] = field(repr=False)
    depth: NDArray[np.int64] = field(repr=False)
    labels: NDArray[np.int8] = field(repr=False)

    @property
    def num_nodes(self) -> int:
        """全節点数."""
        return int(self.coords.shape[0])

    @property
    def cell_volume(self) -> float:
        """節点あたりの求積重み h^n."""
        return self.h**self.n

    @property
    def omega_mask(self) -> NDArray[np.bool_]:
        """Ω 内の節点."""
        return self.labels != NodeLabel.EXTERIOR_COLLAR

    @property
    def free_mask(self) -> NDArray[np.bool_]:
        """Ω_{-δ} 内の節点 (自由度)."""
        return self.labels == NodeLabel.FREE

    @property
    def omega_indices(self) -> NDArray[np.int64]:
        """Ω 内の節点番号 (同じ (box, h) の格子間で順序が一致する)."""
        return np.flatnonzero(self.omega_mask)

    def closed_box_mask(self, inset_layers: int) -> NDArray[np.bool_]:
        """Ω を inset_layers 層だけ縮めた閉直方体の節点."""
        return self.depth >= inset_layers

    def open_box_mask(self, inset_layers: int) -> NDArray[np.bool_]:
        """Ω を inset_layers 層だけ縮めた開直方体の節点."""
        return self.depth > inset_layers

    def mask_counts(self) -> dict:
        """分類ごとの節点数."""
        return {
            label.name.lower(): int(np.count_nonzero(self.labels == label))
            for label in NodeLabel
        }

    def zeros(self) -> "Field":
        """ゼロ場を返す."""
        return Field(self, np.zeros((self.num_nodes, self.n)))

    def restrict_to_omega(self, values: NDArray) -> NDArray:
        """節点配列を Ω 節点に制限する."""
        return np.asarray(values)[self.omega_indices]

    def extend_from_omega(self, values: NDArray) -> NDArray:
        """Ω 節点上の配列を全節点へゼロ拡張する."""
        values = np.asarray(values)
        out = np.zeros((self.num_nodes,) + values.shape[1:])
        out[self.omega_indices] = values
        return out


@dataclass(eq=False)
class Field:
    """節点上のベクトル場.

    Attributes:
        grid (Grid): 所属する格子
        values (NDArray): 値 (N, n)
    """

    grid: Grid
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        """形状を検証する."""
        self.values = np.asarray(self.values, dtype=float).reshape(
            self.grid.num_nodes, self.grid.n
        )

    def copy(self) -> "Field":
        """複製を返す."""
        return Field(self.grid, self.values.copy())


@dataclass(eq=False)
class MatrixField:
    """評価節点上の n×n 行列場.

    Attributes:
        grid (Grid): 所属する格子
        nodes (NDArray): 値を持つ節点番号 (M,)
        values (NDArray): 値 (M, n, n)
    """

    grid: Grid
    nodes: NDArray[np.int64]
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        """値が有限であることを検証する."""
        if not np.all(np.isfinite(self.values)):
            raise GridError("matrix field has non-finite entries")


def _integral_ratio(value: float, unit: float, what: str) -> int:
    """value/unit が整数であることを確認して返す."""
    ratio = value / unit
    layers = int(round(ratio))
    if abs(ratio - layers) > INTEGRALITY_TOL * max(1.0, abs(ratio)):
        raise GridError(
            f"{what} must be an integer multiple of h, got {ratio}"
        )
    return layers


def build_grid(box: Sequence[Sequence[float]], h: float, delta: float) -> Grid:
    """Ω_δ を覆う格子を生成する.

    節点 x は dist(x, ∂Ω) > δ のとき自由 (距離がちょうど δ の節点は
    内側カラー)。判定は節点の整数層番号で厳密に行う。

    Args:
        box (Sequence[Sequence[float]]): 軸ごとの (lo, hi)
        h (float): 格子幅 (> 0)
        delta (float): ホライズン (≥ h, δ/h は整数)

    Returns:
        Grid: 生成された格子

    Raises:
        GridError: δ < h、δ/h や辺長/h が整数でない、box が空の場合
    """
    box_t: Box = tuple((float(lo), float(hi)) for lo, hi in box)
    if not box_t or any(hi <= lo for lo, hi in box_t):
        raise GridError(f"box must be nonempty, got {box_t}")
    if h <= 0.0:
        raise GridError(f"h must be positive, got {h}")
    if delta < h * (1.0 - INTEGRALITY_TOL):
        raise GridError(
            f"delta={delta} < h={h}: no neighbours inside the horizon"
        )
    layers = _integral_ratio(delta, h, "delta")
    cells = [_integral_ratio(hi - lo, h, "box edge") for lo, hi in box_t]

    n = len(box_t)
    shape = tuple(c + 2 * layers + 1 for c in cells)
    index = np.indices(shape).reshape(n, -1).T  # (N, n)
    offset = index - layers  # Ω の下端からの層番号
    lows = np.array([lo for lo, _ in box_t])
    coords = lows - delta + index * h
    depth = np.min(
        np.minimum(offset, np.array(cells) - offset), axis=1
    ).astype(np.int64)

    labels = np.full(depth.shape, NodeLabel.EXTERIOR_COLLAR, dtype=np.int8)
    labels[depth > 0] = NodeLabel.INTERIOR_COLLAR
    labels[depth > layers] = NodeLabel.FREE

    grid = Grid(
        n=n,
        box=box_t,
        h=float(h),
        delta=float(delta),
        shape=shape,
        layers=layers,
        coords=coords,
        depth=depth,
        labels=labels,
    )
    logger.debug(f"格子を生成: shape={shape}, counts={grid.mask_counts()}")
    return grid


def _pointwise_norm(values: NDArray) -> NDArray:
    """ユークリッド / フロベニウスの点ごとのノルム."""
    flat = values.reshape(values.shape[0], -1)
    return np.linalg.norm(flat, axis=1)


def lp_norm(
    f: Union[Field, MatrixField],
    p: float,
    region: Optional[NDArray[np.bool_]] = None,
) -> float:
    """節点求積による L^p ノルムを返す.

    Args:
        f (Union[Field, MatrixField]): 対象の場
        p (float): 指数 (1 ≤ p ≤ ∞)
        region (Optional[NDArray[np.bool_]]): 全節点上の領域マスク

    Returns:
        float: (Σ |f|^p h^n)^{1/p}、p = ∞ では最大値
    """
    if p < 1.0:
        raise ValueError(f"p must be >= 1, got {p}")
    grid = f.grid
    if isinstance(f, MatrixField):
        values = f.values
        nodes = f.nodes
    else:
        values = f.values
        nodes = np.arange(grid.num_nodes)
    if region is not None:
        keep = np.asarray(region)[nodes]
        values = values[keep]
    if values.shape[0] == 0:
        return 0.0
    pointwise = _pointwise_norm(values)
    if np.isinf(p):
        return float(np.max(pointwise))
    return float(np.sum(pointwise**p) * grid.cell_volume) ** (1.0 / p)


def apply_collar_zero(f: Field) -> Field:
    """両カラー上の値をゼロにした場を返す (冪等)."""
    values = np.where(f.grid.free_mask[:, None], f.values, 0.0)
    return Field(f.grid, values)


def transfer_nodes(
    src: Grid, dst: Grid, nodes: NDArray[np.int64]
) -> NDArray[np.int64]:
    """src の節点番号を、同じ (box, h) を持つ dst の節点番号に写す.

    Raises:
        GridError: box か h が異なる、または dst に存在しない節点の場合
    """
    if src.box != dst.box or abs(src.h - dst.h) > INTEGRALITY_TOL * src.h:
        raise GridError("grids must share box and h to transfer nodes")
    index = np.stack(np.unravel_index(nodes, src.shape), axis=1)
    index = index - src.layers + dst.layers
    if np.any(index < 0) or np.any(index >= np.array(dst.shape)):
        raise GridError("node lies outside the destination grid")
    return np.ravel_multi_index(tuple(index.T), dst.shape)

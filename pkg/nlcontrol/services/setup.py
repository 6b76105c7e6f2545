"""問題の組み立て.

設定から得た仕様 (場・係数・制御問題) を特定の格子上の配列に
具体化するモジュール。同じ仕様から作った場は、(box, h) を共有する
格子どうしで Ω 上の値が一致する。

主な機能:
    - FieldSpec / make_field / field_gradient: 場とその解析的勾配
    - CoefficientSpec / ProblemSpec: 係数と問題全体の仕様
    - build_energy_params / build_control_problem: 格子上への具体化
    - bound_arrays: 箱制約の両端を節点ごとの配列にする
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import NDArray

from nlcontrol.core.exceptions import GridError
from nlcontrol.discretization.grid import Field, Grid
from nlcontrol.services.control.problem import ControlProblem
from nlcontrol.services.energy import (
    EnergyParams,
    coefficient_from_file,
    constant_coefficient,
    diagonal_coefficient,
    double_well,
)
from nlcontrol.utils.io import load_field

logger = logging.getLogger(__name__)

FIELD_KINDS = ("zero", "constant", "bump", "affine", "file")
COEFFICIENT_KINDS = ("constant", "diagonal", "file")
DENSITY_KINDS = ("plaplacian", "double-well")


@dataclass(frozen=True)
class FieldSpec:
    """節点上の場の仕様.

    Attributes:
        kind (str): zero / constant / bump / affine / file
        value (Tuple[float, ...]): constant の値、bump の振幅、affine の切片
        matrix (Tuple[Tuple[float, ...], ...]): affine の勾配行列
        support_inset (float): bump の台を Ω から縮める長さ
        path (Optional[str]): file の場合の .bin パス
    """

    kind: str = "zero"
    value: Tuple[float, ...] = ()
    matrix: Tuple[Tuple[float, ...], ...] = ()
    support_inset: float = 0.0
    path: Optional[str] = None


Bound = Union[Tuple[float, ...], FieldSpec]


@dataclass(frozen=True)
class CoefficientSpec:
    """係数 𝔸 の仕様.

    Attributes:
        kind (str): constant (スカラーまたは行列) / diagonal / file
        value (Tuple): 値
        path (Optional[str]): file の場合の .npy パス
    """

    kind: str = "constant"
    value: Tuple = (1.0,)
    path: Optional[str] = None


@dataclass(frozen=True)
class ProblemSpec:
    """エネルギーと制御問題の仕様.

    Attributes:
        p (float): エネルギーの指数
        coefficient (CoefficientSpec): 係数 𝔸
        mu (float): 楕円性定数
        density (str): plaplacian / double-well
        well_height (float): 二重井戸の高さ
        u_des (FieldSpec): 目標状態
        load (FieldSpec): 固定荷重 (状態求解と Γ 代理量で使用)
        weight (float): 罰則の重み Λ
        lam (float): 重みの下界 λ
        lower (Bound): 下限 𝔞 (成分ごとの定数、または場)
        upper (Bound): 上限 𝔟 (成分ごとの定数、または場)
        q (Optional[float]): 追跡項の指数
        r_list (Tuple[float, ...]): 制御誤差を測る L^r の指数
    """

    p: float = 2.0
    coefficient: CoefficientSpec = field(default_factory=CoefficientSpec)
    mu: float = 1.0
    density: str = "plaplacian"
    well_height: float = 1.0
    u_des: FieldSpec = field(default_factory=FieldSpec)
    load: FieldSpec = field(default_factory=FieldSpec)
    weight: float = 1e-2
    lam: float = 1e-2
    lower: Bound = (-10.0,)
    upper: Bound = (10.0,)
    q: Optional[float] = None
    r_list: Tuple[float, ...] = (4.0,)


def _component_vector(values: Sequence[float], n: int) -> NDArray:
    """長さ 1 なら n 成分に複製したベクトル."""
    vec = np.asarray(values, dtype=float).reshape(-1)
    if vec.size == 1:
        return np.full(n, float(vec[0]))
    if vec.size != n:
        raise GridError(f"expected 1 or {n} components, got {vec.size}")
    return vec


def _bump_box(grid: Grid, inset: float) -> NDArray:
    """bump の台 (軸ごとの [a, b])."""
    box = np.array(grid.box) + np.array([inset, -inset])
    if np.any(box[:, 1] <= box[:, 0]):
        raise GridError(f"bump support inset {inset} empties the domain")
    return box


def _bump_profile(grid: Grid, inset: float) -> Tuple[NDArray, NDArray]:
    """Π sin⁴(π t_j) とその各軸方向の偏微分 (N,), (N, n)."""
    box = _bump_box(grid, inset)
    width = box[:, 1] - box[:, 0]
    t = (grid.coords - box[:, 0]) / width
    inside = np.all((t > 0.0) & (t < 1.0), axis=1)
    sin = np.sin(np.pi * t)
    factors = np.where(inside[:, None], sin**4, 0.0)
    dfactors = np.where(
        inside[:, None],
        4.0 * sin**3 * np.cos(np.pi * t) * np.pi / width,
        0.0,
    )
    value = np.prod(factors, axis=1)
    grad = np.empty_like(factors)
    for axis in range(grid.n):
        others = np.prod(np.delete(factors, axis, axis=1), axis=1)
        grad[:, axis] = dfactors[:, axis] * others
    return value, grad


def make_field(grid: Grid, spec: FieldSpec) -> Field:
    """仕様から場を作る (Ω の外ではゼロ).

    Args:
        grid (Grid): 格子
        spec (FieldSpec): 場の仕様

    Returns:
        Field: 具体化した場

    Raises:
        GridError: 未知の種類、または成分数が合わない場合
    """
    n = grid.n
    values = np.zeros((grid.num_nodes, n))
    if spec.kind == "zero":
        pass
    elif spec.kind == "constant":
        values[:] = _component_vector(spec.value, n)
    elif spec.kind == "bump":
        profile, _ = _bump_profile(grid, spec.support_inset)
        values = profile[:, None] * _component_vector(spec.value or (1.0,), n)
    elif spec.kind == "affine":
        matrix = np.asarray(spec.matrix, dtype=float).reshape(n, n)
        offset = _component_vector(spec.value or (0.0,), n)
        values = grid.coords @ matrix.T + offset
    elif spec.kind == "file":
        if spec.path is None:
            raise GridError("file field needs a path")
        return load_field(spec.path, grid)
    else:
        raise GridError(
            f"unknown field kind {spec.kind!r}; expected one of {FIELD_KINDS}"
        )
    values[~grid.omega_mask] = 0.0
    return Field(grid, values)


def field_gradient(
    grid: Grid, spec: FieldSpec, nodes: NDArray[np.int64]
) -> NDArray[np.float64]:
    """解析的な勾配 ∇u を (M, n, n) で返す (成分, 軸).

    Raises:
        GridError: 解析的勾配を持たない種類の場合
    """
    n = grid.n
    if spec.kind in ("zero", "constant"):
        return np.zeros((nodes.shape[0], n, n))
    if spec.kind == "affine":
        matrix = np.asarray(spec.matrix, dtype=float).reshape(n, n)
        return np.broadcast_to(matrix, (nodes.shape[0], n, n)).copy()
    if spec.kind == "bump":
        _, grad = _bump_profile(grid, spec.support_inset)
        amplitude = _component_vector(spec.value or (1.0,), n)
        return amplitude[None, :, None] * grad[nodes][:, None, :]
    raise GridError(f"field kind {spec.kind!r} has no analytic gradient")


def build_energy_params(grid: Grid, spec: ProblemSpec) -> EnergyParams:
    """格子上のエネルギーパラメータを作る."""
    coeff = spec.coefficient
    if coeff.kind == "constant":
        value = np.asarray(coeff.value, dtype=float)
        matrix = (
            constant_coefficient(grid, float(value.reshape(-1)[0]))
            if value.size == 1
            else constant_coefficient(grid, value.reshape(grid.n, grid.n))
        )
    elif coeff.kind == "diagonal":
        matrix = diagonal_coefficient(
            grid, _component_vector(coeff.value, grid.n)
        )
    elif coeff.kind == "file":
        matrix = coefficient_from_file(grid, coeff.path or "")
    else:
        raise GridError(f"unknown coefficient kind {coeff.kind!r}")

    density = None
    if spec.density == "double-well":
        density = double_well(spec.p, spec.well_height)
    elif spec.density != "plaplacian":
        raise GridError(f"unknown density kind {spec.density!r}")
    return EnergyParams(
        p=spec.p, coefficient=matrix, mu=spec.mu, density=density
    )


def _bound_values(grid: Grid, bound: Bound) -> NDArray[np.float64]:
    """箱の一方の端を (N, n) の配列にする."""
    if isinstance(bound, FieldSpec):
        return make_field(grid, bound).values
    vec = _component_vector(bound, grid.n)
    return np.broadcast_to(vec, (grid.num_nodes, grid.n)).copy()


def bound_arrays(
    grid: Grid, spec: ProblemSpec
) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """箱 [𝔞, 𝔟] を節点ごとの配列 (N, n) の組で返す."""
    return _bound_values(grid, spec.lower), _bound_values(grid, spec.upper)


def build_control_problem(grid: Grid, spec: ProblemSpec) -> ControlProblem:
    """格子上の制御問題を作る."""
    lower, upper = bound_arrays(grid, spec)
    return ControlProblem(
        u_des=make_field(grid, spec.u_des),
        weight=np.full(grid.num_nodes, spec.weight),
        lam=spec.lam,
        lower=lower,
        upper=upper,
        p=spec.p,
        q=spec.q,
    )

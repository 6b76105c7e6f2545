"""制御問題の定義と被約汎関数.

箱型制約付きの追跡型コスト
    j(g) = Σ_Ω (1/q)|S(g) - u_des|^q h^n + Σ_Ω Λ|g|^{p'} h^n
と、随伴状態を用いたその勾配を評価するモジュール。

主な機能:
    - ControlProblem: 目標状態、重み Λ、箱 [𝔞, 𝔟]、追跡指数 q
    - project_box: 箱への射影 (成分ごとのクランプ)
    - StateMap: 設定された状態ソルバーによる解写像 S
    - reduced_cost / reduced_gradient: 被約汎関数とその L² 勾配
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.sparse import linalg as splinalg

from nlcontrol.constants.numerics import P_REGULARIZATION, REDUCED_STATE_TOL
from nlcontrol.core.exceptions import ControlSolverError
from nlcontrol.discretization.grid import Field, Grid
from nlcontrol.discretization.operators import AnyGradientOp
from nlcontrol.services.energy import (
    EnergyParams,
    eval_hessian_matrix,
    free_dofs,
)
from nlcontrol.services.state import SolveOptions, SolveReport
from nlcontrol.services.state.solver import FactorizedP2Solver, solve_state

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """箱型制約付き最適制御問題.

    Attributes:
        u_des (Field): 目標状態
        weight (NDArray): 節点ごとの重み Λ (N,)
        lam (float): 重みの下界 λ > 0
        lower (NDArray): 下限 𝔞 (N, n)
        upper (NDArray): 上限 𝔟 (N, n)
        p (float): エネルギーの指数 (罰則指数 p' = p/(p-1) を決める)
        q (Optional[float]): 追跡項の指数 (None のとき p)
        epsilon (float): 指数 < 2 のときの正則化
    """

    u_des: Field
    weight: NDArray[np.float64] = field(repr=False)
    lam: float
    lower: NDArray[np.float64] = field(repr=False)
    upper: NDArray[np.float64] = field(repr=False)
    p: float = 2.0
    q: Optional[float] = None
    epsilon: float = P_REGULARIZATION

    def __post_init__(self) -> None:
        """重みの下界と箱の整合性を検証する."""
        grid = self.u_des.grid
        shape = (grid.num_nodes, grid.n)
        weight = np.broadcast_to(
            np.asarray(self.weight, float), (grid.num_nodes,)
        ).copy()
        lower = np.broadcast_to(np.asarray(self.lower, float), shape).copy()
        upper = np.broadcast_to(np.asarray(self.upper, float), shape).copy()
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if self.lam <= 0.0:
            raise ControlSolverError(
                f"lambda must be positive, got {self.lam}"
            )
        mask = grid.omega_mask
        if np.any(weight[mask] < self.lam):
            node = int(np.flatnonzero(mask & (weight < self.lam))[0])
            raise ControlSolverError(
                f"weight {weight[node]} below lambda={self.lam} at node {node}"
            )
        bad = np.any(lower > upper, axis=1)
        if np.any(bad):
            node = int(np.argmax(bad))
            raise ControlSolverError(
                f"empty box: lower > upper at node {node}"
            )

    @property
    def grid(self) -> Grid:
        """問題の格子."""
        return self.u_des.grid

    @property
    def penalty_exponent(self) -> float:
        """p' = p / (p - 1)."""
        return self.p / (self.p - 1.0)

    @property
    def tracking_exponent(self) -> float:
        """追跡項の指数 q (既定は p)."""
        return self.p if self.q is None else self.q

    def critical_exponent(self, s: float) -> float:
        """p*_s = np / (n - sp) (sp ≥ n のときは無限大)."""
        n = self.grid.n
        if s * self.p >= n:
            return np.inf
        return n * self.p / (n - s * self.p)

    def check_growth(self, s: float) -> None:
        """追跡指数 q ≤ p*_s を確認する.

        Raises:
            ControlSolverError: q が臨界指数を超える場合
        """
        critical = self.critical_exponent(s)
        if self.tracking_exponent > critical:
            raise ControlSolverError(
                f"tracking exponent {self.tracking_exponent} exceeds "
                f"p*_s={critical:.6g}"
            )


def project_box(g: Field, lower: NDArray, upper: NDArray) -> Field:
    """成分ごとに [lower, upper] へ射影する (冪等かつ非拡大)."""
    return Field(g.grid, np.clip(g.values, lower, upper))


def _power_terms(
    values: NDArray, exponent: float, eps: float
) -> Tuple[NDArray, NDArray]:
    """節点ごとの |v|^r と その勾配 r|v|^{r-2}v (r < 2 では正則化)."""
    sq = np.sum(values * values, axis=1)
    if exponent == 2.0:
        return sq, 2.0 * values
    r = np.sqrt(sq + eps**2)
    value = r**exponent - eps**exponent
    grad = (exponent * r ** (exponent - 2.0))[:, None] * values
    return value, grad


def tracking_cost(u: Field, problem: ControlProblem) -> float:
    """Σ_Ω (1/q)|u - u_des|^q h^n."""
    q = problem.tracking_exponent
    diff = (u.values - problem.u_des.values)[problem.grid.omega_mask]
    value, _ = _power_terms(diff, q, problem.epsilon)
    return float(np.sum(value)) / q * problem.grid.cell_volume


def penalty_cost(g: Field, problem: ControlProblem) -> float:
    """Σ_Ω Λ|g|^{p'} h^n."""
    mask = problem.grid.omega_mask
    value, _ = _power_terms(
        g.values[mask], problem.penalty_exponent, problem.epsilon
    )
    return float(np.sum(problem.weight[mask] * value)) * (
        problem.grid.cell_volume
    )


def cost(u: Field, g: Field, problem: ControlProblem) -> float:
    """コスト 𝓕(u, g)."""
    return tracking_cost(u, problem) + penalty_cost(g, problem)


@dataclass(eq=False)
class StateMap:
    """解写像 S: g ↦ u.

    p = 2 の p-Laplacian は一度分解した系を直接解き (随伴も同じ分解を
    使う)、それ以外は Newton 仕上げ付きのエネルギー最小化を許容値
    1e-10 で解く。直前の状態を次の求解の初期値として使う。

    Attributes:
        op (AnyGradientOp): 勾配作用素
        params (EnergyParams): エネルギーのパラメータ
        options (SolveOptions): 非線形ソルバーのオプション
        solves (int): これまでの求解回数
        direct (Optional[FactorizedP2Solver]): p = 2 の分解済みソルバー
    """

    op: AnyGradientOp
    params: EnergyParams
    options: SolveOptions = field(
        default_factory=lambda: SolveOptions(
            tol=REDUCED_STATE_TOL, method="newton"
        )
    )
    solves: int = 0
    _last: Optional[Field] = field(default=None, repr=False)
    _cache: Dict[bytes, Tuple[Field, SolveReport]] = field(
        default_factory=dict, repr=False
    )
    direct: Optional[FactorizedP2Solver] = field(
        default=None, init=False, repr=False
    )

    def __post_init__(self) -> None:
        """p = 2 では系を分解し、ユーザー定義密度では L-BFGS を使う."""
        if self.params.p == 2.0 and self.params.is_plaplacian:
            self.direct = FactorizedP2Solver(self.op, self.params)
        if not self.params.is_plaplacian and self.options.method == "newton":
            self.options = SolveOptions(
                tol=self.options.tol,
                max_iter=self.options.max_iter,
                method="lbfgs",
            )

    def __call__(self, g: Field) -> Tuple[Field, SolveReport]:
        """状態を返す (同じ g に対しては記憶した結果)."""
        key = g.values.tobytes()
        if key not in self._cache:
            if self.direct is not None:
                u, report = self.direct(g)
            else:
                u, report = solve_state(
                    g,
                    self.op,
                    self.params,
                    init=self._last,
                    options=self.options,
                )
            self.solves += 1
            self._last = u
            self._cache.clear()
            self._cache[key] = (u, report)
        return self._cache[key]


def reduced_cost(g: Field, problem: ControlProblem, state: StateMap) -> float:
    """被約汎関数 j(g) = 𝓕(S(P g), P g).

    Args:
        g (Field): 制御 (箱の外なら射影される)
        problem (ControlProblem): 制御問題
        state (StateMap): 解写像

    Returns:
        float: j(g)
    """
    g = project_box(g, problem.lower, problem.upper)
    u, _ = state(g)
    return cost(u, g, problem)


def adjoint_state(
    u: Field, problem: ControlProblem, state: StateMap
) -> Field:
    """線形化状態方程式 (Dᵀ Φ'(Du) D) λ = ∂_u F を解く.

    Raises:
        ControlSolverError: 線形化系の求解に失敗した場合
    """
    op, params = state.op, state.params
    grid = u.grid
    q = problem.tracking_exponent
    mask = grid.omega_mask
    dF = np.zeros_like(u.values)
    _, grad = _power_terms(
        (u.values - problem.u_des.values)[mask], q, problem.epsilon
    )
    dF[mask] = grad / q
    dofs = free_dofs(op)
    rhs = grid.cell_volume * dF.reshape(-1)[dofs]

    flat = np.zeros(grid.num_nodes * grid.n)
    if np.any(rhs != 0.0):
        if state.direct is not None:
            solution = state.direct.solve_dofs(rhs)
        else:
            hessian = eval_hessian_matrix(u, op, params)
            solution = splinalg.spsolve(hessian.tocsc(), rhs)
        if not np.all(np.isfinite(solution)):
            raise ControlSolverError(
                "linearized state system is singular; "
                "check the regularization and the coefficient"
            )
        flat[dofs] = solution
    return Field(grid, flat.reshape(grid.num_nodes, grid.n))


def reduced_gradient(
    g: Field,
    problem: ControlProblem,
    state: StateMap,
) -> Field:
    """被約汎関数の L² 勾配 ∇j = λ + p'Λ|g|^{p'-2}g を返す.

    Args:
        g (Field): 箱内の制御
        problem (ControlProblem): 制御問題
        state (StateMap): 解写像 (p-Laplacian 密度)

    Returns:
        Field: Ω の外でゼロの勾配
    """
    u, _ = state(g)
    adjoint = adjoint_state(u, problem, state)
    mask = problem.grid.omega_mask
    values = adjoint.values.copy()
    _, penalty = _power_terms(
        g.values[mask], problem.penalty_exponent, problem.epsilon
    )
    values[mask] += problem.weight[mask, None] * penalty
    values[~mask] = 0.0
    return Field(g.grid, values)

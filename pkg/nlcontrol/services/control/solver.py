"""被約制御問題の射影勾配法.

主な機能:
    - ControlOptions / ControlSolveReport: オプションと実行記録
    - solve_control: Barzilai-Borwein 初期ステップと射影 Armijo 探索
    - solve_control_local: 局所参照問題に対する同じ反復
"""

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from nlcontrol.constants.numerics import (
    ARMIJO_C1,
    BACKTRACK_FACTOR,
    BB_STEP_BOUNDS,
    CONTROL_MAX_ITER,
    CONTROL_TOL,
    ENERGY_NOISE_FLOOR,
    MAX_BACKTRACKS,
)
from nlcontrol.core.exceptions import ControlSolverError, GridError
from nlcontrol.discretization.grid import Field
from nlcontrol.discretization.operators import AnyGradientOp, LocalGradientOp
from nlcontrol.services.control.problem import (
    ControlProblem,
    StateMap,
    cost,
    project_box,
    reduced_gradient,
)
from nlcontrol.services.energy import EnergyParams
from nlcontrol.services.state import SolveOptions
from nlcontrol.services.state.solver import LocalDomain, local_inset
from nlcontrol.utils.io import write_json, write_table

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ("iteration", "cost", "stationarity", "step")


@dataclass(frozen=True)
class ControlOptions:
    """制御ソルバーのオプション.

    Attributes:
        tol (float): 停留性の相対許容値
        max_iter (int): 最大反復回数
        step_bounds (Tuple[float, float]): BB ステップのクリップ範囲
        c1 (float): Armijo 条件の係数
        backtrack (float): 縮小率
        max_backtracks (int): 最大バックトラック回数
        init (Optional[Field]): 初期制御 (None のときゼロを射影)
        state_options (Optional[SolveOptions]): 状態ソルバーのオプション
    """

    tol: float = CONTROL_TOL
    max_iter: int = CONTROL_MAX_ITER
    step_bounds: Tuple[float, float] = BB_STEP_BOUNDS
    c1: float = ARMIJO_C1
    backtrack: float = BACKTRACK_FACTOR
    max_backtracks: int = MAX_BACKTRACKS
    init: Optional[Field] = None
    state_options: Optional[SolveOptions] = None


@dataclass
class ControlSolveReport:
    """制御ソルバーの結果.

    Attributes:
        status (str): "converged" / "max_iter" / "stalled"
        iterations (int): 外側反復の回数
        cost (float): 最終被約コスト
        stationarity (float): ‖g - P(g - ∇j)‖_{L²}
        scale (float): 停留性の尺度 max(1, ‖∇j(g0)‖)
        state_solves (int): 状態求解の回数
        wall_time (float): 経過時間 (秒)
        history (List[Tuple[int, float, float, float]]): 反復履歴

    "stalled" は許容値より上で探索が進めなくなった終了で、収束ではない。
    """

    status: str = "converged"
    iterations: int = 0
    cost: float = 0.0
    stationarity: float = 0.0
    scale: float = 1.0
    state_solves: int = 0
    wall_time: float = 0.0
    history: List[Tuple[int, float, float, float]] = field(
        default_factory=list
    )

    @property
    def converged(self) -> bool:
        """停留性が許容値以下で終了したか."""
        return self.status == "converged"

    def record(
        self, iteration: int, value: float, stationarity: float, step: float
    ) -> None:
        """履歴に一行追加し最終値を更新する."""
        self.history.append((iteration, value, stationarity, step))
        self.iterations = iteration
        self.cost = value
        self.stationarity = stationarity

    def to_dict(self) -> Dict[str, Any]:
        """履歴を除いた辞書表現."""
        data = asdict(self)
        data.pop("history")
        return data

    def write_json(self, path: Union[str, Path]) -> Path:
        """JSON として保存する."""
        return write_json(path, self.to_dict())

    def write_history_csv(self, path: Union[str, Path]) -> Path:
        """反復履歴を CSV として保存する."""
        rows = [dict(zip(HISTORY_COLUMNS, row)) for row in self.history]
        return write_table(path, rows, HISTORY_COLUMNS)


def _l2_inner(a: Field, b: Field) -> float:
    """節点求積による L² 内積."""
    return float(np.sum(a.values * b.values)) * a.grid.cell_volume


class _ReducedObjective:
    """j(g) と ∇j(g) をまとめて評価する."""

    def __init__(self, problem: ControlProblem, state: StateMap) -> None:
        """初期化."""
        self.problem = problem
        self.state = state

    def project(self, g: Field) -> Field:
        """箱への射影."""
        return project_box(g, self.problem.lower, self.problem.upper)

    def value(self, g: Field) -> Tuple[float, Field]:
        """(j(g), S(g))."""
        u, _ = self.state(g)
        return cost(u, g, self.problem), u

    def gradient(self, g: Field) -> Field:
        """∇j(g)."""
        return reduced_gradient(g, self.problem, self.state)

    def stationarity(self, g: Field, grad: Field) -> float:
        """‖g - P(g - ∇j)‖_{L²}."""
        trial = self.project(Field(g.grid, g.values - grad.values))
        diff = Field(g.grid, g.values - trial.values)
        return float(np.sqrt(_l2_inner(diff, diff)))


def _projected_search(
    objective: _ReducedObjective,
    g: Field,
    value: float,
    grad: Field,
    step: float,
    options: ControlOptions,
) -> Tuple[Field, float, Field, float, bool]:
    """射影経路上の Armijo バックトラック.

    j(P(g - α∇j)) ≤ j(g) - (c1/α)‖P(g - α∇j) - g‖² を満たす α を探す。

    Returns:
        Tuple: (g, j, S(g), α, 停滞したか)

    Raises:
        ControlSolverError: 最大回数で受理できない場合
    """
    floor = ENERGY_NOISE_FLOOR * max(1.0, abs(value))
    alpha = step
    for _ in range(options.max_backtracks + 1):
        trial = objective.project(
            Field(g.grid, g.values - alpha * grad.values)
        )
        diff = Field(g.grid, trial.values - g.values)
        decrease = options.c1 / alpha * _l2_inner(diff, diff)
        trial_value, u = objective.value(trial)
        if trial_value <= value - decrease:
            return trial, trial_value, u, alpha, False
        if decrease < floor:
            if trial_value <= value:
                return trial, trial_value, u, alpha, False
            return g, value, objective.state(g)[0], alpha, True
        alpha *= options.backtrack
    raise ControlSolverError(
        f"projected Armijo search failed after {options.max_backtracks} "
        f"backtracks (cost {value:.12g})"
    )


def _bb_step(
    g_old: Field, g_new: Field, grad_old: Field, grad_new: Field, bounds
) -> float:
    """Barzilai-Borwein ステップ sᵀs / sᵀy を範囲内にクリップする."""
    s = Field(g_old.grid, g_new.values - g_old.values)
    y = Field(g_old.grid, grad_new.values - grad_old.values)
    sy = _l2_inner(s, y)
    if sy <= 0.0:
        return bounds[1]
    return float(np.clip(_l2_inner(s, s) / sy, bounds[0], bounds[1]))


def solve_control(
    problem: ControlProblem,
    op: AnyGradientOp,
    params: EnergyParams,
    options: Optional[ControlOptions] = None,
) -> Tuple[Field, Field, ControlSolveReport]:
    """箱型制約付き被約問題を射影勾配法で解く.

    停留性 ‖g - P(g - ∇j)‖_{L²} ≤ tol·max(1, ‖∇j(g0)‖) で終了する。

    Args:
        problem (ControlProblem): 制御問題
        op (AnyGradientOp): 状態方程式の勾配作用素
        params (EnergyParams): 凸な p-Laplacian 密度のパラメータ
        options (Optional[ControlOptions]): ソルバーのオプション

    Returns:
        Tuple[Field, Field, ControlSolveReport]: (u, g, 実行記録)、u = S(g)

    Raises:
        ControlSolverError: 凸でない密度、または探索の失敗
    """
    if not params.is_plaplacian:
        raise ControlSolverError(
            "solve_control requires the convex p-Laplacian density; "
            "use nonconvex_control_scan for custom densities"
        )
    options = options or ControlOptions()
    started = time.perf_counter()
    state = (
        StateMap(op, params)
        if options.state_options is None
        else StateMap(op, params, options=options.state_options)
    )
    objective = _ReducedObjective(problem, state)

    g = objective.project(
        op.grid.zeros() if options.init is None else options.init
    )
    value, u = objective.value(g)
    grad = objective.gradient(g)
    scale = max(1.0, float(np.sqrt(_l2_inner(grad, grad))))
    tol = options.tol * scale
    stationarity = objective.stationarity(g, grad)

    report = ControlSolveReport(scale=scale)
    report.record(0, value, stationarity, 0.0)
    step = 1.0
    for iteration in range(1, options.max_iter + 1):
        if stationarity <= tol:
            report.status = "converged"
            break
        g_new, value_new, u_new, alpha, stalled = _projected_search(
            objective, g, value, grad, step, options
        )
        if stalled:
            report.status = "stalled"
            logger.warning(
                f"制御ソルバーが停滞: iter={iteration}, "
                f"stationarity={stationarity:.3e}, tol={tol:.3e}"
            )
            break
        grad_new = objective.gradient(g_new)
        step = _bb_step(g, g_new, grad, grad_new, options.step_bounds)
        g, value, u, grad = g_new, value_new, u_new, grad_new
        stationarity = objective.stationarity(g, grad)
        report.record(iteration, value, stationarity, alpha)
        logger.debug(
            f"control iter={iteration} j={value:.15g} "
            f"stat={stationarity:.3e} alpha={alpha:.3e}"
        )
    else:
        report.status = "converged" if stationarity <= tol else "max_iter"

    report.state_solves = state.solves
    report.wall_time = time.perf_counter() - started
    if report.status == "max_iter":
        logger.warning(
            f"制御ソルバーが最大反復に到達: stationarity={stationarity:.3e}, "
            f"tol={tol:.3e}"
        )
    logger.info(
        f"制御問題を求解: status={report.status}, iter={report.iterations}, "
        f"j={report.cost:.15g}, stationarity={report.stationarity:.3e}"
    )
    return u, g, report


def solve_control_local(
    problem: ControlProblem,
    op: LocalGradientOp,
    params: EnergyParams,
    domain: LocalDomain = LocalDomain.DEFLATED,
    options: Optional[ControlOptions] = None,
) -> Tuple[Field, Field, ControlSolveReport]:
    """局所参照問題を solve_control と同じ反復で解く.

    Raises:
        GridError: op の領域が domain と一致しない場合
    """
    expected = local_inset(op, domain)
    if op.inset_layers != expected:
        raise GridError(
            f"local operator inset {op.inset_layers} does not match "
            f"domain {LocalDomain(domain).value}"
        )
    return solve_control(problem, op, params, options)

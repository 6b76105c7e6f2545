"""非凸制約の制御候補走査.

非凸密度では状態が一意でないため、候補制御ごとに多始点で状態を求め
最良のコストを記録する。大域最適性は主張しない。
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

from nlcontrol.core.exceptions import ControlSolverError
from nlcontrol.discretization.grid import Field
from nlcontrol.discretization.operators import AnyGradientOp
from nlcontrol.services.control.problem import (
    ControlProblem,
    cost,
    project_box,
)
from nlcontrol.services.energy import EnergyParams
from nlcontrol.services.state import (
    MultistartResult,
    SolveOptions,
    multistart_state,
)

logger = logging.getLogger(__name__)


@dataclass
class ScanResult:
    """候補走査の結果.

    Attributes:
        best_index (int): 最良候補の番号
        costs (List[float]): 各候補の最良コスト
        spreads (List[float]): 各候補の状態エネルギーの広がり
        best_control (Field): 最良の制御 (射影済み)
        best_state (Field): その状態
        best_run (MultistartResult): 最良候補の多始点求解結果
    """

    best_index: int
    costs: List[float]
    spreads: List[float]
    best_control: Field
    best_state: Field
    best_run: MultistartResult


def nonconvex_control_scan(
    problem: ControlProblem,
    op: AnyGradientOp,
    params: EnergyParams,
    candidates: Sequence[Field],
    k: int,
    seed: int,
    options: Optional[SolveOptions] = None,
    threads: int = 1,
) -> ScanResult:
    """候補制御を多始点状態で評価し、最良の組を返す.

    Args:
        problem (ControlProblem): 制御問題
        op (AnyGradientOp): 勾配作用素
        params (EnergyParams): エネルギーのパラメータ (非凸でもよい)
        candidates (Sequence[Field]): 候補制御
        k (int): 候補ごとの始点数
        seed (int): 乱数シード (候補番号を加えて使う)
        options (Optional[SolveOptions]): 状態ソルバーのオプション
        threads (int): 多始点のスレッド数

    Returns:
        ScanResult: 最良の候補と全候補のコスト

    Raises:
        ControlSolverError: 候補が空の場合
    """
    if not candidates:
        raise ControlSolverError("nonconvex scan needs at least one candidate")
    costs: List[float] = []
    spreads: List[float] = []
    runs: List[MultistartResult] = []
    controls: List[Field] = []
    for index, candidate in enumerate(candidates):
        g = project_box(candidate, problem.lower, problem.upper)
        result = multistart_state(
            g, op, params, k, seed + index, options=options, threads=threads
        )
        costs.append(cost(result.best, g, problem))
        spreads.append(result.spread)
        runs.append(result)
        controls.append(g)
        logger.debug(
            f"候補 {index}: cost={costs[-1]:.12g}, spread={spreads[-1]:.3e}"
        )
    best = min(range(len(costs)), key=lambda i: (costs[i], i))
    logger.info(f"非凸走査: best={best}, cost={costs[best]:.12g}")
    return ScanResult(
        best_index=best,
        costs=costs,
        spreads=spreads,
        best_control=controls[best],
        best_state=runs[best].best,
        best_run=runs[best],
    )

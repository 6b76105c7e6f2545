"""多始点状態ソルバー.

非凸密度では一回の降下が大域最小に到達するとは限らないため、
シード付きの複数の初期値から solve_state を実行し最良の結果を選ぶ。

主な機能:
    - multistart_state: 並行多始点求解と最小エネルギーの選択
    - admissible_state_bound: 許容状態の有界性の診断
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from nlcontrol.core.exceptions import StateSolverError
from nlcontrol.discretization.grid import Field, lp_norm
from nlcontrol.discretization.operators import AnyGradientOp
from nlcontrol.services.energy import EnergyParams, eval_energy
from nlcontrol.services.state.report import SolveOptions, SolveReport
from nlcontrol.services.state.solver import solve_state

logger = logging.getLogger(__name__)


@dataclass
class MultistartResult:
    """多始点求解の結果.

    Attributes:
        best (Field): 最小エネルギーの状態
        best_index (int): best の始点番号
        states (List[Field]): 全始点の状態
        reports (List[SolveReport]): 全始点の実行記録
    """

    best: Field
    best_index: int
    states: List[Field]
    reports: List[SolveReport]

    @property
    def energies(self) -> List[float]:
        """各始点の最終エネルギー."""
        return [r.energy for r in self.reports]

    @property
    def spread(self) -> float:
        """最終エネルギーの最大と最小の差."""
        return float(max(self.energies) - min(self.energies))


@dataclass(frozen=True)
class AdmissibleBound:
    """許容状態の有界性の診断結果.

    Attributes:
        zero_energy (float): ゼロ場のエネルギー
        max_energy (float): 多始点結果の最大エネルギー
        max_norm (float): 多始点結果の最大 L^p ノルム
        holds (bool): 全ての結果がゼロ場以下のエネルギーか
    """

    zero_energy: float
    max_energy: float
    max_norm: float
    holds: bool


def initial_fields(
    op: AnyGradientOp, k: int, seed: int, scale: float = 1.0
) -> List[Field]:
    """ゼロ場と k-1 個のシード付き乱数場 (自由度以外ゼロ)."""
    grid = op.grid
    fields = [grid.zeros()]
    for child in np.random.SeedSequence(seed).spawn(k - 1):
        rng = np.random.default_rng(child)
        values = scale * rng.standard_normal((grid.num_nodes, grid.n))
        values[~op.free_mask] = 0.0
        fields.append(Field(grid, values))
    return fields


def multistart_state(
    g: Field,
    op: AnyGradientOp,
    params: EnergyParams,
    k: int,
    seed: int,
    options: Optional[SolveOptions] = None,
    init_scale: float = 1.0,
    threads: int = 1,
) -> MultistartResult:
    """複数の初期値から状態を求め、最小エネルギーの結果を返す.

    同じエネルギーの結果が複数ある場合は L² ノルムの小さい方、さらに
    始点番号の小さい方を選ぶ。

    Args:
        g (Field): 荷重
        op (AnyGradientOp): 勾配作用素
        params (EnergyParams): エネルギーのパラメータ
        k (int): 始点の数 (≥ 1)
        seed (int): 乱数シード
        options (Optional[SolveOptions]): ソルバーのオプション
        init_scale (float): 乱数初期値の振幅
        threads (int): 並行実行するスレッド数

    Returns:
        MultistartResult: 最良の状態と全始点の記録

    Raises:
        StateSolverError: k < 1 の場合、または各始点の求解失敗
    """
    if k < 1:
        raise StateSolverError(f"multistart needs k >= 1, got {k}")
    starts = initial_fields(op, k, seed, init_scale)

    def _run(init: Field) -> Tuple[Field, SolveReport]:
        return solve_state(g, op, params, init=init, options=options)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(_run, starts))

    states = [u for u, _ in results]
    reports = [r for _, r in results]
    keys = [
        (r.energy, lp_norm(u, 2.0), i)
        for i, (u, r) in enumerate(zip(states, reports))
    ]
    best_index = min(keys)[2]
    result = MultistartResult(
        best=states[best_index],
        best_index=best_index,
        states=states,
        reports=reports,
    )
    logger.info(
        f"多始点求解: k={k}, best={best_index}, "
        f"E={reports[best_index].energy:.15g}, spread={result.spread:.3e}"
    )
    return result


def admissible_state_bound(
    result: MultistartResult,
    g: Field,
    op: AnyGradientOp,
    params: EnergyParams,
) -> AdmissibleBound:
    """多始点結果がゼロ場のエネルギーを超えないことを確認する.

    許容状態は W_g(u) ≤ W_g(0) を満たすので、増大条件から ‖u‖ が
    一様に有界となる。ここではその前提を各結果について検証する。

    Args:
        result (MultistartResult): 多始点求解の結果
        g (Field): 荷重
        op (AnyGradientOp): 勾配作用素
        params (EnergyParams): エネルギーのパラメータ

    Returns:
        AdmissibleBound: 診断結果
    """
    zero = eval_energy(op.grid.zeros(), g, op, params).total
    max_energy = max(result.energies)
    max_norm = max(lp_norm(u, params.p) for u in result.states)
    slack = 1e-12 * max(1.0, abs(zero))
    bound = AdmissibleBound(
        zero_energy=zero,
        max_energy=max_energy,
        max_norm=max_norm,
        holds=max_energy <= zero + slack,
    )
    if not bound.holds:
        logger.warning(
            f"ゼロ場より高いエネルギーの状態: {max_energy:.12g} > {zero:.12g}"
        )
    return bound

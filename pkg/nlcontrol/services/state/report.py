"""状態ソルバーの実行記録."""

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

from nlcontrol.constants.numerics import (
    ARMIJO_C1,
    BACKTRACK_FACTOR,
    LBFGS_MEMORY,
    MAX_BACKTRACKS,
    STATE_MAX_ITER,
    STATE_TOL,
)
from nlcontrol.utils.io import write_json, write_table

HISTORY_COLUMNS = ("iteration", "energy", "variation_norm")


@dataclass(frozen=True)
class SolveOptions:
    """状態ソルバーのオプション.

    Attributes:
        tol (float): 第一変分 L² ノルムの相対許容値 (scale 倍される)
        max_iter (int): 最大反復回数
        method (str): "lbfgs" または "newton"
        memory (int): L-BFGS の記憶数
        c1 (float): Armijo 条件の係数
        backtrack (float): バックトラックの縮小率
        max_backtracks (int): バックトラックの最大回数
    """

    tol: float = STATE_TOL
    max_iter: int = STATE_MAX_ITER
    method: str = "lbfgs"
    memory: int = LBFGS_MEMORY
    c1: float = ARMIJO_C1
    backtrack: float = BACKTRACK_FACTOR
    max_backtracks: int = MAX_BACKTRACKS


@dataclass
class SolveReport:
    """状態ソルバーの結果.

    Attributes:
        method (str): 使用した手法
        status (str): "converged" / "max_iter" / "stalled"
        iterations (int): 反復回数
        energy (float): 最終エネルギー
        variation_norm (float): 最終第一変分の L² ノルム
        backtracks (int): バックトラックの総数
        wall_time (float): 経過時間 (秒)
        history (List[Tuple[int, float, float]]): (反復, エネルギー, 変分ノルム)
    """

    method: str
    status: str = "converged"
    iterations: int = 0
    energy: float = 0.0
    variation_norm: float = 0.0
    backtracks: int = 0
    wall_time: float = 0.0
    history: List[Tuple[int, float, float]] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        """収束したかどうか."""
        return self.status == "converged"

    def record(self, iteration: int, energy: float, norm: float) -> None:
        """履歴に一行追加し最終値を更新する."""
        self.history.append((iteration, energy, norm))
        self.iterations = iteration
        self.energy = energy
        self.variation_norm = norm

    def to_dict(self) -> Dict[str, Any]:
        """履歴を除いた辞書表現."""
        data = asdict(self)
        data.pop("history")
        return data

    def write_json(self, path: Union[str, Path]) -> Path:
        """JSON として保存する."""
        return write_json(path, self.to_dict())

    def write_history_csv(self, path: Union[str, Path]) -> Path:
        """収束履歴を CSV として保存する."""
        rows = [dict(zip(HISTORY_COLUMNS, row)) for row in self.history]
        return write_table(path, rows, HISTORY_COLUMNS)

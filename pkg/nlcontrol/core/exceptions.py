"""例外定義.

ライブラリ全体で送出される例外の階層を定義するモジュール。
CLIは ConfigValidationError を終了コード2、その他の NLControlError を
終了コード3に対応付けます。
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple


class NLControlError(Exception):
    """ライブラリ共通の基底例外."""


class KernelDomainError(NLControlError, ValueError):
    """γ(s) などの定義域外の引数."""


class SingularKernelError(NLControlError, ValueError):
    """原点でのカーネル評価."""


class QuadratureError(NLControlError):
    """適応求積が収束しなかった.

    Attributes:
        achieved (float): 達成された誤差推定値
        location (Optional[Tuple[int, ...]]): 失敗したセルのオフセット
    """

    def __init__(
        self,
        message: str,
        achieved: float,
        location: Optional[Tuple[int, ...]] = None,
    ) -> None:
        """初期化."""
        super().__init__(f"{message} (achieved error {achieved:.3e})")
        self.achieved = achieved
        self.location = location


class GridError(NLControlError, ValueError):
    """格子パラメータが不正."""


class DensityError(NLControlError):
    """エネルギー密度の評価に失敗した.

    Attributes:
        node (Optional[int]): 問題のあった節点番号
    """

    def __init__(self, message: str, node: Optional[int] = None) -> None:
        """初期化."""
        suffix = f" at node {node}" if node is not None else ""
        super().__init__(f"{message}{suffix}")
        self.node = node


class StateSolverError(NLControlError):
    """状態方程式ソルバーの失敗."""


class CGStagnationError(StateSolverError):
    """共役勾配法の停滞 (正定値性の喪失を示唆)."""


class LineSearchError(StateSolverError):
    """Armijo バックトラックの失敗."""


class ControlSolverError(NLControlError):
    """制御問題ソルバーの失敗."""


class EstimationError(NLControlError):
    """Poincaré 定数推定の反復が上限に達した."""


@dataclass(frozen=True)
class Violation:
    """設定検証の違反項目.

    Attributes:
        path (str): 違反したフィールドのパス (例: "control.lower")
        message (str): 違反内容
    """

    path: str
    message: str

    def __str__(self) -> str:
        """文字列表現."""
        return f"{self.path}: {self.message}"


class ConfigValidationError(NLControlError):
    """実験設定の検証エラー.

    Attributes:
        violations (List[Violation]): 検出された違反の一覧
    """

    def __init__(self, violations: List[Violation]) -> None:
        """初期化."""
        lines = "; ".join(str(v) for v in violations)
        super().__init__(f"invalid experiment config: {lines}")
        self.violations = violations

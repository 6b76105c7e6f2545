"""数値計算の定数定義.

このモジュールは、カーネル評価・求積・ソルバー全体で共有される
許容誤差や反復回数などの定数を定義します。
"""

from typing import Dict, Final, Tuple

# カットオフ関数の既定値
DEFAULT_PLATEAU_FRACTION: Final[float] = 0.5  # b0
DEFAULT_PLATEAU_VALUE: Final[float] = 1.0  # a0
DEFAULT_PROFILE: Final[str] = "quintic"
CUTOFF_PROFILES: Final[Tuple[str, ...]] = ("quintic", "septic", "smooth")

# 求積
MASS_QUAD_RTOL: Final[float] = 1e-10  # kernel_mass の相対誤差上限
NEAR_CELL_QUAD_RTOL: Final[float] = 1e-8  # 近接セルの適応求積
NEAR_FIELD_RADIUS_CELLS: Final[float] = 2.0  # 近接判定 (h 単位)
QUAD_LIMIT: Final[int] = 200

# 格子
INTEGRALITY_TOL: Final[float] = 1e-12  # δ/h の整数判定

# エネルギー
P_REGULARIZATION: Final[float] = 1e-10  # |A|_ε の ε

# 状態ソルバー
CG_RTOL: Final[float] = 1e-10
STATE_TOL: Final[float] = 1e-8
STATE_MAX_ITER: Final[int] = 5000
LBFGS_MEMORY: Final[int] = 10
ARMIJO_C1: Final[float] = 1e-4
BACKTRACK_FACTOR: Final[float] = 0.5
MAX_BACKTRACKS: Final[int] = 60
ENERGY_NOISE_FLOOR: Final[float] = 1e-13  # 相対エネルギー雑音
NEWTON_SWITCH_TOL: Final[float] = 1e-4
NEWTON_MAX_ITER: Final[int] = 50

# 制御ソルバー
CONTROL_TOL: Final[float] = 1e-6
CONTROL_MAX_ITER: Final[int] = 500
BB_STEP_BOUNDS: Final[Tuple[float, float]] = (1e-6, 1e2)
REDUCED_STATE_TOL: Final[float] = 1e-10

# 局所化
POINCARE_EIG_TOL: Final[float] = 1e-8
POINCARE_MAX_ITER: Final[int] = 500
POINCARE_ASCENT_STARTS: Final[int] = 10
POINCARE_SPREAD_LIMIT: Final[float] = 5.0  # 梯子全体の max / min の上限
TREND_REDUCTION: Final[float] = 0.5  # 最終値 ≤ ½ × 初期値
TREND_SLACK: Final[float] = 0.05  # 各ステップの許容増加率

# 出力
CSV_SIGNIFICANT_DIGITS: Final[int] = 17

# 実行結果の終了コード
EXIT_CODES: Dict[str, int] = {
    "success": 0,
    "validation": 2,
    "solver": 3,
}

"""定数パッケージ.

このパッケージは、数値計算とCLIで使用される定数を管理します。

主な定数:
    - 求積・ソルバーの許容誤差と反復回数
    - カットオフ関数の既定値
    - CLIの終了コード
"""

from nlcontrol.constants.numerics import (
    CUTOFF_PROFILES,
    DEFAULT_PLATEAU_FRACTION,
    DEFAULT_PLATEAU_VALUE,
    DEFAULT_PROFILE,
    EXIT_CODES,
)

__all__ = [
    "CUTOFF_PROFILES",
    "DEFAULT_PLATEAU_FRACTION",
    "DEFAULT_PLATEAU_VALUE",
    "DEFAULT_PROFILE",
    "EXIT_CODES",
]

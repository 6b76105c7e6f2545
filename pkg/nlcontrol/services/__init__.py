"""サービスパッケージ.

エネルギー評価、状態ソルバー、制御ソルバー、局所化の数値実験、
自己診断を提供します。各機能はサブパッケージから読み込みます。
"""

from nlcontrol.services.energy import (
    EnergyParams,
    EnergyValue,
    eval_energy,
    eval_first_variation,
    eval_Y,
)

__all__ = [
    "EnergyParams",
    "EnergyValue",
    "eval_Y",
    "eval_energy",
    "eval_first_variation",
]

"""局所化パッケージ.

このパッケージは、s → 1⁻ と δ → 0⁺ の極限で非局所問題が局所問題へ
近づく様子を調べるスイープと診断を提供します。

主な機能:
    - SweepConfig: スイープの設定
    - sweep / gamma_proxy / nonconvex_sweep: 梯子点ごとの求解と比較
    - operator_localization_probe: 作用素だけの収束
    - estimate_poincare / poincare_sweep / spread_passed: Poincaré 定数の推定
    - trend_verdict / sweep_verdicts / write_sweep_outputs: 傾向判定と出力

使用例:
    >>> config = SweepConfig(
    ...     variable="s",
    ...     ladder=(0.3, 0.5, 0.7, 0.9, 0.95),
    ...     box=((0.0, 1.0),),
    ...     h=1 / 128,
    ...     delta=0.25,
    ... )
    >>> records = sweep(config)
    >>> write_sweep_outputs(records, "out/sweep-s", "s")
"""

from nlcontrol.services.localization.config import (
    LadderPoint,
    LocalReference,
    SweepConfig,
    map_ladder,
)
from nlcontrol.services.localization.outputs import (
    TrendVerdict,
    sweep_verdicts,
    trend_verdict,
    write_sweep_outputs,
)
from nlcontrol.services.localization.poincare import (
    PoincareEstimate,
    PoincareRecord,
    constant_spread,
    estimate_poincare,
    poincare_sweep,
    spread_passed,
)
from nlcontrol.services.localization.probe import (
    ProbeRecord,
    default_probe_field,
    operator_localization_probe,
)
from nlcontrol.services.localization.sweep import (
    GammaRecord,
    NonconvexRecord,
    SweepRecord,
    gamma_proxy,
    nonconvex_sweep,
    sweep,
    weighted_lp,
)

__all__ = [
    "GammaRecord",
    "LadderPoint",
    "LocalReference",
    "NonconvexRecord",
    "PoincareEstimate",
    "PoincareRecord",
    "ProbeRecord",
    "SweepConfig",
    "SweepRecord",
    "TrendVerdict",
    "constant_spread",
    "default_probe_field",
    "estimate_poincare",
    "gamma_proxy",
    "map_ladder",
    "nonconvex_sweep",
    "operator_localization_probe",
    "poincare_sweep",
    "spread_passed",
    "sweep",
    "sweep_verdicts",
    "trend_verdict",
    "weighted_lp",
    "write_sweep_outputs",
]

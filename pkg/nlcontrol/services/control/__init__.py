"""制御ソルバーパッケージ.

このパッケージは、箱型制約付き最適制御問題の被約定式化を提供します。

主な機能:
    - ControlProblem / project_box: 問題定義と射影
    - reduced_cost / reduced_gradient: 被約汎関数と随伴勾配
    - solve_control / solve_control_local: 射影勾配法
    - nonconvex_control_scan: 非凸制約での候補走査
"""

from nlcontrol.services.control.problem import (
    ControlProblem,
    StateMap,
    adjoint_state,
    cost,
    penalty_cost,
    project_box,
    reduced_cost,
    reduced_gradient,
    tracking_cost,
)
from nlcontrol.services.control.scan import ScanResult, nonconvex_control_scan
from nlcontrol.services.control.solver import (
    ControlOptions,
    ControlSolveReport,
    solve_control,
    solve_control_local,
)

__all__ = [
    "ControlOptions",
    "ControlProblem",
    "ControlSolveReport",
    "ScanResult",
    "StateMap",
    "adjoint_state",
    "cost",
    "nonconvex_control_scan",
    "penalty_cost",
    "project_box",
    "reduced_cost",
    "reduced_gradient",
    "solve_control",
    "solve_control_local",
    "tracking_cost",
]

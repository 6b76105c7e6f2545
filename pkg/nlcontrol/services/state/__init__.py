"""状態ソルバーパッケージ.

このパッケージは、エネルギー最小化による状態方程式の求解を提供します。

主な機能:
    - solve_state_p2: p = 2 の共役勾配法
    - FactorizedP2Solver: p = 2 の分解済み直接ソルバー
    - solve_state: L-BFGS / Newton によるエネルギー最小化
    - solve_state_local: 局所参照問題の求解
    - multistart_state: 非凸密度向けの多始点求解

使用例:
    from nlcontrol.services.state import solve_state

    u, report = solve_state(g, op, params)
"""

from nlcontrol.services.state.multistart import (
    AdmissibleBound,
    MultistartResult,
    admissible_state_bound,
    multistart_state,
)
from nlcontrol.services.state.report import SolveOptions, SolveReport
from nlcontrol.services.state.solver import (
    FactorizedP2Solver,
    LocalDomain,
    local_inset,
    solve_state,
    solve_state_auto,
    solve_state_local,
    solve_state_p2,
)

__all__ = [
    "AdmissibleBound",
    "FactorizedP2Solver",
    "LocalDomain",
    "MultistartResult",
    "SolveOptions",
    "SolveReport",
    "admissible_state_bound",
    "local_inset",
    "multistart_state",
    "solve_state",
    "solve_state_auto",
    "solve_state_local",
    "solve_state_p2",
]

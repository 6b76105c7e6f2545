"""コアパッケージ.

例外階層と実行記録データベースの管理を提供します。
"""

from nlcontrol.core.database import (
    DatabaseManager,
    RunRecorder,
    finish_run,
    get_session,
    points_frame,
    record_run,
    record_sweep_points,
    runs_frame,
)
from nlcontrol.core.exceptions import (
    ConfigValidationError,
    NLControlError,
    Violation,
)

__all__ = [
    "ConfigValidationError",
    "DatabaseManager",
    "NLControlError",
    "RunRecorder",
    "Violation",
    "finish_run",
    "get_session",
    "points_frame",
    "record_run",
    "record_sweep_points",
    "runs_frame",
]

"""実行時設定.

このモジュールは出力先・結果データベース・ロギングの既定値を管理します。
環境変数 NLCONTROL_* で上書きできます。

設定項目:
    - 出力ディレクトリ
    - 結果データベースの接続設定
    - ロギング設定
"""

import os
from pathlib import Path
from typing import Any, Dict

# 出力設定
OUTPUT_DIR: Path = Path(os.environ.get("NLCONTROL_OUTPUT_DIR", "runs"))
FIELD_DIR_NAME: str = "fields"

# 結果データベース設定 (空文字列で記録しない)
DATABASE_URL: str = os.environ.get(
    "NLCONTROL_DATABASE_URL", "sqlite:///./nlcontrol-runs.db"
)
DB_CONNECT_ARGS: Dict[str, Any] = {
    "check_same_thread": False,
    "timeout": 30,  # 接続タイムアウト(秒)
}

# ロギング設定
LOG_LEVEL: str = os.environ.get("NLCONTROL_LOG_LEVEL", "INFO")
LOG_FILE_MAX_BYTES: int = 10_485_760  # 10MB
LOG_BACKUP_COUNT: int = 5

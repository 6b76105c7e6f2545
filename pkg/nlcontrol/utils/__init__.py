"""ユーティリティパッケージ.

ロギング設定とファイル入出力を提供します。
"""

from nlcontrol.utils.io import (
    load_field,
    read_json,
    read_table,
    save_field,
    write_json,
    write_manifest,
    write_table,
)
from nlcontrol.utils.logger import setup_logger

__all__ = [
    "load_field",
    "read_json",
    "read_table",
    "save_field",
    "setup_logger",
    "write_json",
    "write_manifest",
    "write_table",
]

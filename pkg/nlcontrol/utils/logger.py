"""ロギング設定.

このモジュールはパッケージ全体のロギング設定を提供します。
"""

import logging
import logging.handlers
import os
from pathlib import Path
from typing import Optional, Union

from nlcontrol.config.settings import LOG_BACKUP_COUNT, LOG_FILE_MAX_BYTES

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logger(
    name: str = "nlcontrol",
    log_level: Union[int, str] = logging.INFO,
    log_file: Optional[Union[str, Path]] = None,
    max_bytes: int = LOG_FILE_MAX_BYTES,
    backup_count: int = LOG_BACKUP_COUNT,
) -> logging.Logger:
    """ロガーを設定し、構成されたロガーインスタンスを返します.

    同じロガーに対して繰り返し呼んでもハンドラは重複しません。

    Args:
        name (str): ロガー名. デフォルトはパッケージのルート
        log_level (Union[int, str]): ロギングレベル. デフォルトはINFO
        log_file (Optional[Union[str, Path]]): ログファイルのパス.
            Noneの場合は標準エラー出力のみ
        max_bytes (int): ログファイルの最大サイズ(バイト). デフォルトは10MB
        backup_count (int): 保持するバックアップファイルの数. デフォルトは5

    Returns:
        logging.Logger: 構成されたロガーインスタンス
    """
    logger = logging.getLogger(name)
    logger.setLevel(log_level)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    # フォーマッタの設定
    formatter = logging.Formatter(LOG_FORMAT, datefmt="%Y-%m-%d %H:%M:%S")

    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(formatter)
    logger.addHandler(stream_handler)

    # ファイルへのログ出力が指定された場合
    if log_file:
        log_dir = Path(log_file).parent
        os.makedirs(log_dir, exist_ok=True)

        file_handler = logging.handlers.RotatingFileHandler(
            log_file,
            maxBytes=max_bytes,
            backupCount=backup_count,
            encoding="utf-8",
        )
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    logger.propagate = False
    return logger

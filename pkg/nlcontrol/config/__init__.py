"""設定パッケージ.

このパッケージは、実行時設定と実験設定ファイルの読み込み・検証を
管理します。

主な設定:
    - OUTPUT_DIR / DATABASE_URL / LOG_LEVEL: 実行時の既定値
    - ExperimentConfig / load_config / validate_config: 実験設定

Note:
    設定ファイルの文法は README.md に記載しています。
"""

from nlcontrol.config.settings import (
    DATABASE_URL,
    LOG_LEVEL,
    OUTPUT_DIR,
)

# experiment は discretization / services を経由して core を import し、
# core.database は config.settings を import するため、循環を避けて
# 遅延 import する。
_EXPERIMENT_NAMES = (
    "EXPERIMENT_KINDS",
    "ExperimentConfig",
    "config_hash",
    "load_config",
    "parse_config",
    "read_config",
    "validate_config",
    "validate_file",
)


def __getattr__(name):
    if name in _EXPERIMENT_NAMES:
        from nlcontrol.config import experiment

        return getattr(experiment, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

__all__ = [
    "DATABASE_URL",
    "EXPERIMENT_KINDS",
    "ExperimentConfig",
    "LOG_LEVEL",
    "OUTPUT_DIR",
    "config_hash",
    "load_config",
    "parse_config",
    "read_config",
    "validate_config",
    "validate_file",
]

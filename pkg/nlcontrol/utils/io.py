"""入出力ユーティリティ.

場のバイナリ保存、結果表 (CSV)、JSON、実行マニフェストを扱うモジュール。

主な機能:
    - save_field / load_field: リトルエンディアン float64 の .bin と JSON ヘッダ
    - write_table: 有効数字17桁の CSV
    - write_json / read_json: JSON の読み書き
    - host_info / write_manifest: psutil によるホスト情報とマニフェスト
"""

import json
import logging
import platform
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Union

import numpy as np
import pandas as pd
import psutil

from nlcontrol.constants.numerics import CSV_SIGNIFICANT_DIGITS
from nlcontrol.core.exceptions import GridError
from nlcontrol.discretization.grid import Field, Grid

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _to_builtin(value: Any) -> Any:
    """numpy の値を JSON で扱える型に変換する."""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def write_json(path: PathLike, data: Mapping[str, Any]) -> Path:
    """辞書を JSON として書き出す."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, ensure_ascii=False, default=_to_builtin)
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    """JSON を読み込む."""
    with open(Path(path), encoding="utf-8") as f:
        return json.load(f)


def write_table(
    path: PathLike,
    rows: Sequence[Mapping[str, Any]],
    columns: Sequence[str],
) -> Path:
    """行の列を CSV として書き出す.

    浮動小数点は有効数字17桁で書き出すので、同じ入力からは
    バイト単位で同一のファイルが得られる。

    Args:
        path (PathLike): 出力先
        rows (Sequence[Mapping[str, Any]]): 行データ
        columns (Sequence[str]): 列の順序

    Returns:
        Path: 書き出したファイル
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = pd.DataFrame(list(rows), columns=list(columns))
    table.to_csv(
        path, index=False, float_format=f"%.{CSV_SIGNIFICANT_DIGITS}g"
    )
    logger.debug(f"CSVを書き出し: {path} ({len(table)} 行)")
    return path


def read_table(path: PathLike) -> pd.DataFrame:
    """write_table で書いた CSV を読み込む."""
    return pd.read_csv(Path(path))


def field_header(grid: Grid) -> Dict[str, Any]:
    """場ファイルの JSON ヘッダ."""
    return {
        "dimension": grid.n,
        "shape": list(grid.shape),
        "box": [list(b) for b in grid.box],
        "h": grid.h,
        "delta": grid.delta,
        "mask_counts": grid.mask_counts(),
        "dtype": "<f8",
    }


def save_field(path: PathLike, f: Field) -> Path:
    """場を .bin (値) と .json (ヘッダ) の組で保存する.

    Args:
        path (PathLike): 拡張子 .bin の出力先
        f (Field): 保存する場

    Returns:
        Path: 値ファイルのパス
    """
    path = Path(path).with_suffix(".bin")
    path.parent.mkdir(parents=True, exist_ok=True)
    f.values.astype("<f8").tofile(path)
    write_json(path.with_suffix(".json"), field_header(f.grid))
    return path


def load_field(path: PathLike, grid: Grid) -> Field:
    """save_field で保存した場を読み込む.

    Raises:
        GridError: ヘッダが grid と一致しない場合
    """
    path = Path(path).with_suffix(".bin")
    header = read_json(path.with_suffix(".json"))
    expected = field_header(grid)
    for key in ("dimension", "shape", "h", "delta"):
        if header[key] != expected[key]:
            raise GridError(
                f"field {path} has {key}={header[key]}, "
                f"grid has {expected[key]}"
            )
    values = np.fromfile(path, dtype="<f8")
    return Field(grid, values.reshape(grid.num_nodes, grid.n))


def host_info() -> Dict[str, Any]:
    """実行環境の情報 (CPU 数、メモリ、プロセスのピーク RSS)."""
    process = psutil.Process()
    memory = process.memory_info()
    return {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "cpu_count": psutil.cpu_count(logical=True),
        "total_memory_bytes": psutil.virtual_memory().total,
        "rss_bytes": memory.rss,
        "peak_rss_bytes": getattr(memory, "peak_wset", memory.rss),
    }


def write_manifest(
    out_dir: PathLike,
    config: Mapping[str, Any],
    timings: Mapping[str, float],
    artifacts: List[str],
    extra: Union[Mapping[str, Any], None] = None,
) -> Path:
    """実行マニフェスト manifest.json を書き出す."""
    from nlcontrol import __version__

    manifest: Dict[str, Any] = {
        "version": __version__,
        "config": dict(config),
        "timings": dict(timings),
        "artifacts": list(artifacts),
        "host": host_info(),
    }
    if extra:
        manifest.update(extra)
    return write_json(Path(out_dir) / "manifest.json", manifest)

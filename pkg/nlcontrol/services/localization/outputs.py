"""スイープ結果の判定と出力.

主な機能:
    - trend_verdict: 最終値 ≤ ½ × 初期値 とほぼ単調な減少の判定
    - sweep_verdicts: 記録列の指標ごとの判定と合否
    - write_sweep_outputs: results.csv / summary.json / プロット用ファイル
"""

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from nlcontrol.constants.numerics import TREND_REDUCTION, TREND_SLACK
from nlcontrol.utils.io import write_json, write_table

logger = logging.getLogger(__name__)

# この値以下の誤差は梯子全体でゼロとみなす
ZERO_FLOOR = 1e-12


@dataclass(frozen=True)
class TrendVerdict:
    """1 指標分の傾向判定.

    Attributes:
        metric (str): 指標名
        first (float): 最初の有効値
        last (float): 最後の有効値
        ratio (float): last / first
        near_monotone (bool): 各ステップの増加が slack 以内か
        passed (bool): last ≤ reduction × first かつ near_monotone
        points (int): 判定に使った有効値の数
    """

    metric: str
    first: float
    last: float
    ratio: float
    near_monotone: bool
    passed: bool
    points: int

    def to_dict(self) -> Dict[str, Any]:
        """JSON 用の辞書 (非有限値は None)."""
        return {
            key: (None if isinstance(v, float) and not math.isfinite(v) else v)
            for key, v in asdict(self).items()
        }


def trend_verdict(
    metric: str,
    values: Sequence[float],
    reduction: float = TREND_REDUCTION,
    slack: float = TREND_SLACK,
    floor: float = ZERO_FLOOR,
) -> TrendVerdict:
    """梯子の順に並んだ値が極限に向かって減少しているか判定する.

    非有限値 (失敗した梯子点) は除く。全値が floor 以下なら合格、
    有効値が 2 つ未満なら不合格とする。

    Args:
        metric (str): 指標名
        values (Sequence[float]): 梯子の順の値
        reduction (float): 最終値 / 初期値 の上限
        slack (float): 1 ステップあたりの相対増加の許容量
        floor (float): ゼロとみなす値

    Returns:
        TrendVerdict: 判定結果
    """
    finite = [float(v) for v in values if math.isfinite(v)]
    if not finite:
        nan = math.nan
        return TrendVerdict(metric, nan, nan, nan, False, False, 0)
    first, last = finite[0], finite[-1]
    if max(abs(v) for v in finite) <= floor:
        return TrendVerdict(metric, first, last, 0.0, True, True, len(finite))
    near_monotone = all(
        b <= (1.0 + slack) * a + floor for a, b in zip(finite, finite[1:])
    )
    ratio = last / first if first > 0.0 else math.inf
    passed = (
        len(finite) >= 2
        and last <= reduction * first + floor
        and near_monotone
    )
    return TrendVerdict(
        metric, first, last, ratio, near_monotone, passed, len(finite)
    )


def sweep_verdicts(
    records: Sequence[Any], gate: Optional[Sequence[str]] = None
) -> Tuple[Dict[str, Dict[str, Any]], bool]:
    """記録列の全指標を判定し、gate の指標がすべて合格か返す.

    Args:
        records (Sequence[Any]): 梯子の順の記録 (metrics() を持つ)
        gate (Optional[Sequence[str]]): 合否に使う指標 (None のとき全指標)

    Returns:
        Tuple[Dict[str, Dict[str, Any]], bool]: 指標ごとの判定と合否
    """
    metrics = list(records[0].metrics().keys()) if records else []
    verdicts = {
        name: trend_verdict(
            name, [r.metrics()[name] for r in records]
        ).to_dict()
        for name in metrics
    }
    names = metrics if gate is None else list(gate)
    passed = bool(records) and all(
        verdicts[name]["passed"] for name in names if name in verdicts
    )
    return verdicts, passed


def write_sweep_outputs(
    records: Sequence[Any],
    out_dir: Union[str, Path],
    variable: str,
    trends: bool = True,
    extra: Optional[Dict[str, Any]] = None,
    gate: Optional[Sequence[str]] = None,
) -> Dict[str, Path]:
    """スイープ結果を書き出す.

    records は value / ok / error / metrics() / as_row() を持つ記録の列。
    results.csv に 1 行 1 梯子点、summary.json に傾向判定と失敗点、
    plots/<指標>.dat に (値, 指標) の 2 列を書く。

    Args:
        records (Sequence[Any]): 梯子の順の記録
        out_dir (Union[str, Path]): 出力ディレクトリ
        variable (str): スイープ変数 ("s" / "delta")
        trends (bool): 傾向判定を行うか (非凸スイープでは False)
        extra (Optional[Dict[str, Any]]): summary.json に加える項目
        gate (Optional[Sequence[str]]): passed に使う指標 (None のとき全指標)

    Returns:
        Dict[str, Path]: 書き出したファイル
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts: Dict[str, Path] = {}

    rows = [record.as_row() for record in records]
    columns: List[str] = list(rows[0].keys()) if rows else ["value"]
    artifacts["results"] = write_table(out_dir / "results.csv", rows, columns)

    metrics = list(records[0].metrics().keys()) if records else []
    values = [r.value for r in records]
    plots = out_dir / "plots"
    plots.mkdir(exist_ok=True)
    for name in metrics:
        series = np.array([[r.value, r.metrics()[name]] for r in records])
        path = plots / f"{name}.dat"
        np.savetxt(path, series, fmt="%.17g", header=f"{variable} {name}")
        artifacts[f"plot:{name}"] = path

    summary: Dict[str, Any] = {
        "variable": variable,
        "ladder": values,
        "points": len(records),
        "failed": [
            {"value": r.value, "error": r.error} for r in records if not r.ok
        ],
    }
    if trends:
        verdicts, passed = sweep_verdicts(records, gate)
        summary["trends"] = verdicts
        summary["passed"] = passed
    if extra:
        summary.update(extra)
    artifacts["summary"] = write_json(out_dir / "summary.json", summary)
    logger.info(
        f"スイープ結果を書き出し: {out_dir} "
        f"(points={len(records)}, failed={len(summary['failed'])})"
    )
    return artifacts

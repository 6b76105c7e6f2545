"""実行記録データベースの接続と操作の管理.

SQLAlchemyを使用して、CLI の実行とスイープ指標を記録するモジュール.
記録は補助的なもので、失敗しても実行結果には影響させない.
"""

import json
import logging
import math
from contextlib import contextmanager
from datetime import datetime, timezone
from typing import Dict, Generator, Iterable, Optional

import pandas as pd
from sqlalchemy import Engine, create_engine, select
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import Session, sessionmaker

from nlcontrol.config.settings import DATABASE_URL, DB_CONNECT_ARGS
from nlcontrol.models.models import Base, ExperimentRun, SweepPoint

logger = logging.getLogger(__name__)


class DatabaseManager:
    """データベース接続とセッション管理を行うクラス.

    接続 URL ごとに 1 つのインスタンス (とエンジン) を共有する.
    """

    _instances: Dict[str, "DatabaseManager"] = {}

    def __new__(cls, url: str = DATABASE_URL) -> "DatabaseManager":
        """URL ごとのインスタンスを返す."""
        if url not in cls._instances:
            cls._instances[url] = super().__new__(cls)
        return cls._instances[url]

    def __init__(self, url: str = DATABASE_URL) -> None:
        """データベースエンジンとセッションファクトリを初期化."""
        if getattr(self, "_engine", None) is not None:
            return
        connect_args = DB_CONNECT_ARGS if url.startswith("sqlite") else {}
        self.url = url
        self._engine: Optional[Engine] = create_engine(
            url, connect_args=connect_args, pool_pre_ping=True
        )
        self.SessionLocal = sessionmaker(
            autocommit=False, autoflush=False, bind=self._engine
        )
        # 起動時にテーブルを作成
        Base.metadata.create_all(bind=self._engine)
        logger.info(f"Database engine initialized: {url}")

    def close(self) -> None:
        """コネクションプールを破棄する."""
        if self._engine is not None:
            self._engine.dispose()
            self._engine = None
            type(self)._instances.pop(self.url, None)
            logger.info("Database connections closed successfully")


@contextmanager
def get_session(url: str = DATABASE_URL) -> Generator[Session, None, None]:
    """データベースセッションを取得する.

    ブロックが正常に終了すればコミットし、SQLAlchemyError では
    ロールバックして再送出する.

    Yields:
        Session: データベースセッション

    Raises:
        SQLAlchemyError: データベース操作でエラーが発生した場合
    """
    db = DatabaseManager(url).SessionLocal()
    try:
        yield db
        db.commit()
    except SQLAlchemyError as e:
        db.rollback()
        logger.error(f"Database error occurred: {str(e)}")
        raise
    finally:
        db.close()


def record_run(
    url: str,
    kind: str,
    seed: int,
    config_hash: str,
    config: Dict,
    out_dir: str,
) -> int:
    """実行の開始を記録し、ID を返す.

    Raises:
        SQLAlchemyError: データベース操作でエラーが発生した場合
    """
    with get_session(url) as db:
        run = ExperimentRun(
            kind=kind,
            seed=seed,
            config_hash=config_hash,
            config_json=json.dumps(config, sort_keys=True, default=str),
            out_dir=out_dir,
        )
        db.add(run)
        db.flush()
        return run.id


def record_sweep_points(url: str, run_id: int, records: Iterable) -> int:
    """スイープ記録 (value と metrics() を持つ) の指標を記録する.

    非有限の指標値 (失敗した梯子点) は NULL として格納する.

    Returns:
        int: 追加した行数
    """
    rows = [
        SweepPoint(
            run_id=run_id,
            value=float(record.value),
            metric=name,
            metric_value=float(value) if math.isfinite(value) else None,
        )
        for record in records
        for name, value in record.metrics().items()
    ]
    with get_session(url) as db:
        db.add_all(rows)
    return len(rows)


def finish_run(
    url: str, run_id: int, status: str, exit_code: int, wall_time: float
) -> None:
    """実行の終了を記録する."""
    with get_session(url) as db:
        run = db.get(ExperimentRun, run_id)
        if run is None:
            logger.warning(f"実行記録 {run_id} が見つかりません")
            return
        run.status = status
        run.exit_code = exit_code
        run.wall_time = wall_time
        run.finished_at = datetime.now(timezone.utc)


class RunRecorder:
    """CLI から使う実行記録.

    url が空なら何もしない. 書き込みの失敗は警告に留め、以後の記録を
    止める.
    """

    def __init__(self, url: Optional[str] = DATABASE_URL) -> None:
        """初期化."""
        self.url = url or ""
        self.run_id: Optional[int] = None

    @property
    def enabled(self) -> bool:
        """記録が有効か."""
        return bool(self.url)

    def start(
        self,
        kind: str,
        seed: int,
        config_hash: str,
        config: Dict,
        out_dir: str,
    ) -> Optional[int]:
        """実行の開始を記録する."""
        if not self.enabled:
            return None
        try:
            self.run_id = record_run(
                self.url, kind, seed, config_hash, config, out_dir
            )
        except SQLAlchemyError as e:
            logger.warning(f"実行記録の開始に失敗: {e}")
            self.run_id = None
        return self.run_id

    def add_points(self, records: Iterable) -> int:
        """スイープ指標を記録する."""
        if self.run_id is None:
            return 0
        try:
            return record_sweep_points(self.url, self.run_id, records)
        except SQLAlchemyError as e:
            logger.warning(f"スイープ指標の記録に失敗: {e}")
            return 0

    def finish(self, status: str, exit_code: int, wall_time: float) -> None:
        """実行の終了を記録する."""
        if self.run_id is None:
            return
        try:
            finish_run(self.url, self.run_id, status, exit_code, wall_time)
        except SQLAlchemyError as e:
            logger.warning(f"実行記録の終了に失敗: {e}")


RUN_COLUMNS = [
    "id",
    "kind",
    "seed",
    "status",
    "exit_code",
    "wall_time",
    "config_hash",
    "out_dir",
    "created_at",
]


def runs_frame(
    url: str, kind: Optional[str] = None, limit: int = 20
) -> pd.DataFrame:
    """新しい順の実行記録を DataFrame で返す."""
    query = select(ExperimentRun).order_by(ExperimentRun.id.desc())
    if kind:
        query = query.where(ExperimentRun.kind == kind)
    with get_session(url) as db:
        runs = db.scalars(query.limit(limit)).all()
        rows = [{c: getattr(run, c) for c in RUN_COLUMNS} for run in runs]
    return pd.DataFrame(rows, columns=RUN_COLUMNS)


def points_frame(url: str, run_id: int) -> pd.DataFrame:
    """1 回のスイープ実行の指標を (値 × 指標) の表で返す.

    失敗した梯子点の指標は NaN になる.
    """
    query = select(SweepPoint).where(SweepPoint.run_id == run_id)
    with get_session(url) as db:
        rows = [
            {"value": p.value, "metric": p.metric, "v": p.metric_value}
            for p in db.scalars(query)
        ]
    if not rows:
        return pd.DataFrame()
    frame = pd.DataFrame(rows)
    return frame.pivot_table(
        index="value", columns="metric", values="v", dropna=False
    )

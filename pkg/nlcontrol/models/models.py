"""実行記録のデータモデル定義.

SQLAlchemyを使用して、CLI の実行とスイープの指標を記録するモデルを
定義するモジュール。
"""

from datetime import datetime
from typing import List, Optional

from sqlalchemy import (
    DateTime,
    Float,
    ForeignKey,
    Index,
    Integer,
    String,
    Text,
)
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column, relationship
from sqlalchemy.sql import func


class Base(DeclarativeBase):
    """ベースモデル.

    全てのモデルクラスの基底クラス。
    """

    pass


class ExperimentRun(Base):
    """実行記録モデル.

    CLI の 1 回の実行を格納するモデル。

    Attributes:
        id (int): プライマリーキー
        kind (str): 実験の種類
        seed (int): 乱数シード
        config_hash (str): 設定の md5 署名
        config_json (str): 読み込んだ設定 (JSON)
        status (str): running / success / validation / solver
        exit_code (int, optional): 終了コード
        out_dir (str): 出力ディレクトリ
        wall_time (float, optional): 実行時間(秒)
        created_at (datetime): 開始日時
        finished_at (datetime, optional): 終了日時
    """

    __tablename__ = "experiment_runs"
    __table_args__ = (
        Index("ix_experiment_runs_config_hash", "config_hash"),
        Index("ix_experiment_runs_created_at", "created_at"),
    )

    id: Mapped[int] = mapped_column(
        Integer, primary_key=True, autoincrement=True
    )
    kind: Mapped[str] = mapped_column(String(32), nullable=False)
    seed: Mapped[int] = mapped_column(Integer, default=0, nullable=False)
    config_hash: Mapped[str] = mapped_column(String(32), nullable=False)
    config_json: Mapped[str] = mapped_column(Text, nullable=False)
    status: Mapped[str] = mapped_column(
        String(16), default="running", nullable=False
    )
    exit_code: Mapped[Optional[int]] = mapped_column(Integer, nullable=True)
    out_dir: Mapped[str] = mapped_column(String(1024), nullable=False)
    wall_time: Mapped[Optional[float]] = mapped_column(Float, nullable=True)
    created_at: Mapped[datetime] = mapped_column(
        DateTime(timezone=True), server_default=func.now(), nullable=False
    )
    finished_at: Mapped[Optional[datetime]] = mapped_column(
        DateTime(timezone=True), nullable=True
    )

    points: Mapped[List["SweepPoint"]] = relationship(
        back_populates="run", cascade="all, delete-orphan"
    )


class SweepPoint(Base):
    """スイープ指標モデル.

    梯子点 1 つ分の指標 1 つを格納するモデル。

    Attributes:
        id (int): プライマリーキー
        run_id (int): 実行記録の ID
        value (float): スイープ変数の値
        metric (str): 指標名
        metric_value (float, optional): 指標値 (失敗点は NULL)
    """

    __tablename__ = "sweep_points"
    __table_args__ = (Index("ix_sweep_points_run_metric", "run_id", "metric"),)

    id: Mapped[int] = mapped_column(
        Integer, primary_key=True, autoincrement=True
    )
    run_id: Mapped[int] = mapped_column(
        ForeignKey("experiment_runs.id"), nullable=False
    )
    value: Mapped[float] = mapped_column(Float, nullable=False)
    metric: Mapped[str] = mapped_column(String(64), nullable=False)
    metric_value: Mapped[Optional[float]] = mapped_column(
        Float, nullable=True
    )

    run: Mapped[ExperimentRun] = relationship(back_populates="points")

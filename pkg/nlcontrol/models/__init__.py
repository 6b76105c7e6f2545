"""モデルパッケージ.

実行記録を格納する SQLAlchemy モデルを提供します。
"""

from nlcontrol.models.models import Base, ExperimentRun, SweepPoint

__all__ = ["Base", "ExperimentRun", "SweepPoint"]

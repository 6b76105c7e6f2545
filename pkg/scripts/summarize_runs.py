"""実行記録の一覧スクリプト.

結果データベースに記録された実行と、スイープ実行の指標を表形式で
表示する。

使用法:
    python scripts/summarize_runs.py [--database-url URL] [--kind KIND]
        [--limit N] [--points RUN_ID]
"""

import os
import sys

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import argparse
import logging
from typing import Optional, Sequence

from nlcontrol.config.settings import DATABASE_URL
from nlcontrol.core.database import points_frame, runs_frame

# デバッグ設定
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """エントリポイント."""
    parser = argparse.ArgumentParser(description="List recorded runs.")
    parser.add_argument("--database-url", default=DATABASE_URL)
    parser.add_argument("--kind")
    parser.add_argument("--limit", type=int, default=20)
    parser.add_argument("--points", type=int, metavar="RUN_ID")
    args = parser.parse_args(argv)
    if not args.database_url:
        logger.error("結果データベースが設定されていません")
        return 2
    if args.points is not None:
        frame = points_frame(args.database_url, args.points)
    else:
        frame = runs_frame(args.database_url, args.kind, args.limit)
    sys.stdout.write(frame.to_string() + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())

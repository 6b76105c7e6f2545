"""非局所最適制御の数値実験ランチャー.

リポジトリのルートから `python app.py <kind> --config <path>` で
nlcontrol のコマンドラインを起動する。
"""

import sys

from nlcontrol.cli import main

if __name__ == "__main__":
    sys.exit(main())

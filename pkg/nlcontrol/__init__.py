"""非局所勾配を持つ最適制御の数値実験パッケージ.

Riesz 型分数勾配を有限ホライズンで打ち切った非局所勾配の離散化、
状態方程式と箱制約付き最適制御のソルバー、s → 1⁻ / δ → 0⁺ での
局所化の数値実験を提供します。

パッケージ構成:
    - discretization: カーネル、格子、勾配作用素
    - services: エネルギー、状態・制御ソルバー、局所化、自己診断
    - config: 実験設定の読み込みと検証
    - core / models: 例外と実行記録データベース
    - cli: コマンドライン
"""

__version__ = "0.1.0"

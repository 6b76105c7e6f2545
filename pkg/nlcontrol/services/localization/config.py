"""スイープの設定と梯子点の組み立て.

主な機能:
    - SweepConfig: スイープ変数・梯子・格子・カーネル方針・問題の仕様
    - LadderPoint / LocalReference: 梯子点ごとの作用素と局所参照問題
    - map_ladder: 梯子点の並列実行 (結果は梯子の順)
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple, TypeVar

from nlcontrol.constants.numerics import INTEGRALITY_TOL
from nlcontrol.core.exceptions import ConfigValidationError, Violation
from nlcontrol.discretization.grid import Grid, build_grid
from nlcontrol.discretization.kernel import CutoffSpec, KernelMode, KernelSpec
from nlcontrol.discretization.operators import (
    LocalGradientOp,
    NonlocalGradientOp,
    assemble_local_gradient,
    assemble_nl_gradient,
)
from nlcontrol.services.control import ControlOptions
from nlcontrol.services.setup import ProblemSpec
from nlcontrol.services.state.solver import LocalDomain

logger = logging.getLogger(__name__)

SWEEP_VARIABLES = ("s", "delta")

T = TypeVar("T")


@dataclass(frozen=True)
class LadderPoint:
    """梯子点 1 つ分の離散化.

    Attributes:
        value (float): スイープ変数の値
        grid (Grid): 格子 (δ スイープでは δ ごとにカラー幅が変わる)
        kernel (KernelSpec): カーネル仕様
        op (NonlocalGradientOp): 非局所勾配
    """

    value: float
    grid: Grid
    kernel: KernelSpec
    op: NonlocalGradientOp


@dataclass(frozen=True)
class LocalReference:
    """局所参照問題の離散化.

    Attributes:
        grid (Grid): 格子
        op (LocalGradientOp): 局所勾配
        domain (LocalDomain): Ω_{-δ} (s スイープ) または Ω (δ スイープ)
    """

    grid: Grid
    op: LocalGradientOp
    domain: LocalDomain


@dataclass(frozen=True)
class SweepConfig:
    """s → 1⁻ または δ → 0⁺ スイープの設定.

    s スイープでは a0 = 1 の固定ホライズンカーネルを使い、局所参照
    領域は Ω_{-δ}。δ スイープでは単位カーネルから再スケールし質量を
    n に揃え、局所参照領域は Ω とする。

    Attributes:
        variable (str): "s" または "delta"
        ladder (Tuple[float, ...]): スイープ変数の値の列
        box (Tuple[Tuple[float, float], ...]): 領域 Ω
        h (float): 格子幅
        s (float): δ スイープで固定する s
        delta (float): s スイープで固定する δ
        cutoff (CutoffSpec): カットオフ関数
        problem (ProblemSpec): エネルギーと制御問題
        control (ControlOptions): 制御ソルバーのオプション
        threads (int): 梯子点の並列数
        seed (int): 乱数シード
        multistart (int): 非凸スイープの始点数
    """

    variable: str
    ladder: Tuple[float, ...]
    box: Tuple[Tuple[float, float], ...]
    h: float
    s: float = 0.5
    delta: float = 0.25
    cutoff: CutoffSpec = field(default_factory=CutoffSpec)
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    control: ControlOptions = field(default_factory=ControlOptions)
    threads: int = 1
    seed: int = 0
    multistart: int = 8

    def __post_init__(self) -> None:
        """カーネル方針と梯子の整合性を検証する."""
        ladder = tuple(float(v) for v in self.ladder)
        object.__setattr__(self, "ladder", ladder)
        violations = self.violations()
        if violations:
            raise ConfigValidationError(violations)

    def violations(self) -> List[Violation]:
        """違反の一覧を返す (空なら妥当)."""
        found: List[Violation] = []
        if self.variable not in SWEEP_VARIABLES:
            found.append(
                Violation(
                    "sweep.variable",
                    f"expected one of {SWEEP_VARIABLES}, "
                    f"got {self.variable!r}",
                )
            )
            return found
        if not self.ladder:
            found.append(Violation("sweep.ladder", "ladder is empty"))
        if self.variable == "s":
            if self.cutoff.a0 != 1.0:
                found.append(
                    Violation(
                        "kernel.a0",
                        "s-sweeps require w_delta(0) = a0 = 1, "
                        f"got {self.cutoff.a0}",
                    )
                )
            for i, s in enumerate(self.ladder):
                if not 0.0 < s < 1.0:
                    found.append(
                        Violation(f"sweep.ladder[{i}]", f"s={s} not in (0,1)")
                    )
            found.extend(self._delta_violations("kernel.delta", self.delta))
        else:
            for i, delta in enumerate(self.ladder):
                path = f"sweep.ladder[{i}]"
                if not 0.0 < delta <= 1.0:
                    found.append(
                        Violation(path, f"delta={delta} not in (0, 1]")
                    )
                found.extend(self._delta_violations(path, delta))
        return found

    def _delta_violations(self, path: str, delta: float) -> List[Violation]:
        """δ/h が 2 以上の整数であることを確認する."""
        ratio = delta / self.h
        if abs(ratio - round(ratio)) > INTEGRALITY_TOL * max(1.0, ratio):
            return [Violation(path, f"delta/h = {ratio:.12g} is not integral")]
        if round(ratio) < 2:
            return [Violation(path, f"delta={delta} below the 2h floor")]
        return []

    @property
    def n(self) -> int:
        """空間次元."""
        return len(self.box)

    def kernel_at(self, value: float) -> KernelSpec:
        """梯子点のカーネル仕様."""
        if self.variable == "s":
            return KernelSpec(
                n=self.n,
                s=value,
                delta=self.delta,
                cutoff=self.cutoff,
                mode=KernelMode.FIXED,
            )
        return KernelSpec(
            n=self.n,
            s=self.s,
            delta=value,
            cutoff=self.cutoff,
            mode=KernelMode.RESCALED,
            mass_target=float(self.n),
        )

    def grid_at(self, value: float) -> Grid:
        """梯子点の格子."""
        delta = self.delta if self.variable == "s" else value
        return build_grid(self.box, self.h, delta)

    def point(self, value: float) -> LadderPoint:
        """梯子点の作用素を組み立てる."""
        grid = self.grid_at(value)
        kernel = self.kernel_at(value)
        op = assemble_nl_gradient(grid, kernel)
        return LadderPoint(value=value, grid=grid, kernel=kernel, op=op)

    def reference(self) -> LocalReference:
        """局所参照問題を組み立てる.

        s スイープでは δ 幅の格子上で Ω_{-δ}、δ スイープでは カラー 1 層の
        格子上で Ω を局所領域とする。
        """
        if self.variable == "s":
            grid = build_grid(self.box, self.h, self.delta)
            op = assemble_local_gradient(grid, grid.layers)
            domain = LocalDomain.DEFLATED
        else:
            grid = build_grid(self.box, self.h, self.h)
            op = assemble_local_gradient(grid, 0)
            domain = LocalDomain.FULL
        logger.debug(
            f"局所参照問題: domain={domain.value}, nodes={op.nodes.shape[0]}"
        )
        return LocalReference(grid=grid, op=op, domain=domain)


def map_ladder(
    func: Callable[[float], T], ladder: Sequence[float], threads: int = 1
) -> List[T]:
    """梯子点ごとに func を実行し、梯子の順で結果を返す."""
    if threads <= 1 or len(ladder) <= 1:
        return [func(value) for value in ladder]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, ladder))

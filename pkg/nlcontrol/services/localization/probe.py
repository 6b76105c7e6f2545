"""作用素の局所化プローブ.

滑らかな試験関数に対して非局所勾配と解析的勾配の差を梯子点ごとに
測り、ソルバーの影響を除いた作用素の収束を調べる。
"""

import logging
from dataclasses import dataclass
from typing import ClassVar, Dict, List, Optional, Tuple

import numpy as np

from nlcontrol.core.exceptions import NLControlError
from nlcontrol.discretization.kernel import normalize_mass
from nlcontrol.discretization.operators import assemble_nl_gradient
from nlcontrol.services.localization.config import SweepConfig, map_ladder
from nlcontrol.services.localization.sweep import NAN, weighted_lp
from nlcontrol.services.setup import FieldSpec, field_gradient, make_field

logger = logging.getLogger(__name__)


@dataclass
class ProbeRecord:
    """梯子点 1 つ分の作用素誤差.

    Attributes:
        value (float): スイープ変数の値
        operator_error (float): ‖D u - ∇u‖_{L^p} (局所領域上)
        error (Optional[str]): 失敗時の診断
    """

    METRICS: ClassVar[Tuple[str, ...]] = ("operator_error",)

    value: float
    operator_error: float = NAN
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        """指標が揃っているか."""
        return self.error is None

    def metrics(self) -> Dict[str, float]:
        """指標名と値."""
        return {"operator_error": self.operator_error}

    def as_row(self) -> Dict[str, object]:
        """CSV の 1 行."""
        return {
            "value": self.value,
            **self.metrics(),
            "error": self.error or "",
        }


def default_probe_field(config: SweepConfig) -> FieldSpec:
    """台が全梯子点の Ω_{-δ} に収まる sin⁴ バンプ."""
    inset = config.delta if config.variable == "s" else max(config.ladder)
    return FieldSpec(kind="bump", value=(1.0,), support_inset=inset)


def _probe_point(
    config: SweepConfig,
    u_test: FieldSpec,
    mass_normalized: bool,
    value: float,
) -> ProbeRecord:
    """梯子点 1 つ分の誤差."""
    grid = config.grid_at(value)
    kernel = config.kernel_at(value)
    if mass_normalized and kernel.mass_target is None:
        kernel = normalize_mass(kernel, float(grid.n))
    op = assemble_nl_gradient(grid, kernel)
    u = make_field(grid, u_test)

    full = np.zeros((grid.num_nodes, grid.n, grid.n))
    full[op.eval_nodes] = op.apply(u.values)
    if config.variable == "s":
        nodes = np.flatnonzero(grid.closed_box_mask(grid.layers))
    else:
        full[~grid.free_mask] = 0.0
        nodes = grid.omega_indices
    exact = field_gradient(grid, u_test, nodes)
    weights = np.full(nodes.shape[0], grid.cell_volume)
    error = weighted_lp(full[nodes] - exact, weights, config.problem.p)
    logger.debug(f"プローブ {value:g}: error={error:.6e}")
    return ProbeRecord(value=value, operator_error=error)


def operator_localization_probe(
    config: SweepConfig,
    u_test: Optional[FieldSpec] = None,
    mass_normalized: bool = False,
) -> List[ProbeRecord]:
    """梯子点ごとの ‖D u_test - ∇u_test‖_{L^p} を返す.

    s スイープでは閉じた Ω_{-δ} 上で、δ スイープでは χ_{Ω_{-δ}} を
    掛けた非局所勾配を Ω 上で比較する。

    Args:
        config (SweepConfig): スイープの設定
        u_test (Optional[FieldSpec]): 試験関数 (既定は sin⁴ バンプ)
        mass_normalized (bool): カーネル質量を n に揃えるか

    Returns:
        List[ProbeRecord]: 梯子点ごとの誤差
    """
    u_test = u_test or default_probe_field(config)

    def _run(value: float) -> ProbeRecord:
        try:
            return _probe_point(config, u_test, mass_normalized, value)
        except NLControlError as exc:
            logger.error(f"プローブ {value:g} に失敗: {exc}", exc_info=True)
            return ProbeRecord(
                value=value, error=f"{type(exc).__name__}: {exc}"
            )

    records = map_ladder(_run, config.ladder, config.threads)
    logger.info(
        "作用素プローブ: "
        + ", ".join(f"{r.value:g}:{r.operator_error:.3e}" for r in records)
    )
    return records
